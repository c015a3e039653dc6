"""BNF grammar parsing and codon-driven genotype-to-phenotype mapping.

A grammar is plain-text BNF: one rule per ``::=``, alternatives separated by
``|``, indented lines continuing the previous rule. Terminals are either
bracket tags (``[Sequence]``, ``[/Sequence]``, ...) or name fragments
(``Explore``, ``NeighbourObjects_``); non-terminals are ``<angle-bracketed>``.

Mapping walks a leftmost derivation. Expanding a rule with k > 1 alternatives
consumes the next codon and selects ``codon % len(eligible)`` among the
alternatives that still fit the depth budget; single-alternative rules consume
nothing. The genome wraps around when exhausted, up to ``max_wraps`` times,
after which the individual is invalid.

Depth convention: the start symbol sits at depth 1 and every symbol produced
by an expansion sits one level below its parent (terminals included). An
alternative is eligible at depth d iff ``d + min_completion_height(alt)``
stays within ``max_tree_depth``, where the height counts the expanded node
plus the minimal levels beneath it. max_tree_depth therefore acts as an
exclusive bound on node depth, and every mapped expression satisfies
``derivation_depth <= max_tree_depth`` with margin.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from random import Random

__all__ = [
    "GrammarError",
    "MappingError",
    "Genome",
    "Grammar",
    "PhenotypeExpr",
    "parse_grammar",
    "load_grammar",
    "load_builtin",
    "random_genome",
    "map_genotype",
    "CONTROL_TAGS",
    "ROLE_TAGS",
    "DUMMY_NODE",
]

CONTROL_TAGS = ("Sequence", "Selector", "Parallel")
ROLE_TAGS = ("PostCnd", "PreCnd", "Cnstr", "Act")
DUMMY_NODE = "DummyNode"

_NT_RE = re.compile(r"<[A-Za-z_][A-Za-z0-9_-]*>")
_TOKEN_RE = re.compile(r"\[/?[A-Za-z]+\]|[A-Za-z_][A-Za-z0-9_]*")
_INF = float("inf")


class GrammarError(ValueError):
    """Raised for malformed grammar text or dangling non-terminals."""


class MappingError(RuntimeError):
    """Raised when a genome cannot complete its derivation.

    Signals an invalid individual; callers assign minimum fitness rather
    than propagate.
    """


@dataclass(frozen=True)
class Genome:
    """Fixed-length sequence of unsigned integer codons."""

    codons: tuple[int, ...]
    codon_bits: int = 8

    def __post_init__(self):
        if len(self.codons) == 0:
            raise ValueError("genome must contain at least one codon")
        limit = 1 << self.codon_bits
        for c in self.codons:
            if not 0 <= c < limit:
                raise ValueError(f"codon {c} outside [0, {limit})")

    @property
    def length(self) -> int:
        return len(self.codons)


@dataclass(frozen=True)
class PhenotypeExpr:
    """Serialized behavior-tree expression plus mapping instrumentation."""

    text: str
    derivation_depth: int
    used_codons: int = 0
    wraps: int = 0


def _is_nt(symbol: str) -> bool:
    return symbol.startswith("<")


def _tokenize_alternative(text: str, lineno: int) -> tuple[str, ...]:
    """Split an alternative body into terminal and non-terminal symbols."""
    symbols: list[str] = []
    pos = 0
    for m in _NT_RE.finditer(text):
        chunk = text[pos : m.start()]
        symbols.extend(chunk.split())
        symbols.append(m.group())
        pos = m.end()
    symbols.extend(text[pos:].split())
    if not symbols:
        raise GrammarError(f"line {lineno}: empty alternative")
    for sym in symbols:
        if "<" in sym and not _is_nt(sym):
            raise GrammarError(f"line {lineno}: malformed symbol {sym!r}")
    return tuple(symbols)


class Grammar:
    """Parsed BNF grammar with precomputed derivation metadata."""

    def __init__(self, rules: dict[str, list[tuple[str, ...]]], start_symbol: str):
        self.rules = rules
        self.start_symbol = start_symbol
        self.terminal_tags = frozenset(
            tok
            for alts in rules.values()
            for alt in alts
            for sym in alt
            if not _is_nt(sym)
            for tok in _TOKEN_RE.findall(sym)
            if tok.startswith("[")
        )
        self._alt_heights = self._compute_heights()
        self._eligible_memo: dict[tuple[str, int], tuple[int, ...]] = {}
        self._vocab: frozenset[str] | None = None

    @property
    def rule_count(self) -> int:
        return len(self.rules)

    def _compute_heights(self) -> dict[str, list[float]]:
        """Minimal completion height of every alternative (fixpoint)."""
        nt_height: dict[str, float] = {nt: _INF for nt in self.rules}
        changed = True
        while changed:
            changed = False
            for nt, alts in self.rules.items():
                for alt in alts:
                    h = 1 + max(
                        nt_height[s] if _is_nt(s) else 1 for s in alt
                    )
                    if h < nt_height[nt]:
                        nt_height[nt] = h
                        changed = True
        self._nt_heights = nt_height
        return {
            nt: [
                1 + max(nt_height[s] if _is_nt(s) else 1 for s in alt)
                for alt in alts
            ]
            for nt, alts in self.rules.items()
        }

    def min_height(self, nonterminal: str) -> float:
        return self._nt_heights[nonterminal]

    def eligible_alternatives(self, nonterminal: str, depth: int, max_tree_depth: int) -> tuple[int, ...]:
        """Indices of alternatives whose minimal completion fits the budget."""
        budget = max_tree_depth - depth
        key = (nonterminal, budget)
        hit = self._eligible_memo.get(key)
        if hit is None:
            heights = self._alt_heights[nonterminal]
            hit = tuple(i for i, h in enumerate(heights) if h <= budget)
            self._eligible_memo[key] = hit
        return hit

    def behavior_vocabulary(self) -> frozenset[str]:
        """All leaf behavior names the grammar can derive, minus DummyNode.

        This is the denominator of diversity fitness: every condition or
        action identifier derivable inside a role tag pair
        (``[PostCnd]...[/PostCnd]``, ``[Act]...[/Act]``, ...), e.g.
        ``NeighbourObjects_Hub`` or ``Explore``.
        """
        if self._vocab is None:
            names: set[str] = set()
            for alts in self.rules.values():
                for alt in alts:
                    names.update(self._leaf_region_names(alt))
            names.discard(DUMMY_NODE)
            self._vocab = frozenset(names)
        return self._vocab

    def _leaf_region_names(self, alt: tuple[str, ...]) -> set[str]:
        """Expand name regions delimited by role tags within one alternative."""
        names: set[str] = set()
        parts: list[set[str]] | None = None  # None: outside any role region
        for sym in alt:
            if _is_nt(sym):
                if parts is not None:
                    lang = self._name_language(sym, ())
                    if lang is None:
                        parts = None  # structural NT: not a leaf region
                    else:
                        parts.append(lang)
                continue
            for tok in _TOKEN_RE.findall(sym):
                if tok.startswith("[/"):
                    if parts is not None and tok[2:-1] in ROLE_TAGS:
                        combos = {""}
                        for p in parts:
                            combos = {a + b for a in combos for b in p}
                        names.update(combos - {""})
                    parts = None
                elif tok.startswith("["):
                    parts = [] if tok[1:-1] in ROLE_TAGS else None
                elif parts is not None:
                    parts.append({tok})
        return names

    def _name_language(self, nonterminal: str, stack: tuple[str, ...]) -> set[str] | None:
        """Finite name language of a non-terminal, or None if structural."""
        if nonterminal in stack:
            return None
        result: set[str] = set()
        for alt in self.rules[nonterminal]:
            combos = {""}
            for sym in alt:
                if _is_nt(sym):
                    sub = self._name_language(sym, stack + (nonterminal,))
                    if sub is None:
                        return None
                    combos = {a + b for a in combos for b in sub}
                else:
                    if "[" in sym:
                        return None
                    combos = {a + sym for a in combos}
            result.update(combos)
        return result


def parse_grammar(text: str) -> Grammar:
    """Parse BNF text into a Grammar.

    Raises GrammarError with a line number on syntax problems and names the
    offending symbol for dangling non-terminal references.
    """
    headers: list[tuple[str, int, list[str]]] = []  # (name, lineno, body parts)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip()
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "::=" in line:
            head, _, body = line.partition("::=")
            head = head.strip()
            m = _NT_RE.fullmatch(head)
            if not m:
                raise GrammarError(f"line {lineno}: rule head {head!r} is not a <non-terminal>")
            if any(name == head for name, _, _ in headers):
                raise GrammarError(f"line {lineno}: duplicate rule for {head}")
            headers.append((head, lineno, [body]))
        else:
            if not headers:
                raise GrammarError(f"line {lineno}: continuation before any rule")
            headers[-1][2].append(stripped)

    if not headers:
        raise GrammarError("grammar contains no rules")

    rules: dict[str, list[tuple[str, ...]]] = {}
    for name, lineno, body_parts in headers:
        body = " ".join(body_parts)
        alts = [a.strip() for a in body.split("|")]
        rules[name] = [_tokenize_alternative(a, lineno) for a in alts]

    defined = set(rules)
    for name, alts in rules.items():
        for alt in alts:
            for sym in alt:
                if _is_nt(sym) and sym not in defined:
                    raise GrammarError(
                        f"undefined non-terminal {sym} referenced in rule {name}"
                    )

    return Grammar(rules, start_symbol=next(iter(rules)))


def load_grammar(path) -> Grammar:
    """Read and parse a grammar file from disk."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise GrammarError(f"cannot read grammar file {path}: {exc}") from exc
    return parse_grammar(text)


def load_builtin(name: str) -> Grammar:
    """Load one of the shipped grammars: 'ppa' or 'nominal'."""
    ref = resources.files("swarmlab.grammars").joinpath(f"{name}.bnf")
    try:
        text = ref.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise GrammarError(f"no builtin grammar named {name!r}") from exc
    return parse_grammar(text)


def random_genome(length: int, rng: Random, codon_bits: int = 8) -> Genome:
    """Uniform random genome of exactly `length` codons."""
    if length <= 0:
        raise ValueError("genome length must be positive")
    limit = 1 << codon_bits
    return Genome(tuple(rng.randrange(limit) for _ in range(length)), codon_bits)


def map_genotype(
    genome: Genome,
    grammar: Grammar,
    max_tree_depth: int,
    max_wraps: int = 3,
) -> PhenotypeExpr:
    """Deterministic leftmost genotype-to-phenotype mapping.

    Raises MappingError when the derivation cannot complete (depth budget
    dead-end or codon supply exhausted after `max_wraps` wraps).
    """
    codons = genome.codons
    n = len(codons)
    rules = grammar.rules
    eligible = grammar.eligible_alternatives
    idx = 0
    wraps = 0
    used = 0
    deepest = 1
    out: list[str] = []
    stack: list[tuple[str, int]] = [(grammar.start_symbol, 1)]
    while stack:
        sym, depth = stack.pop()
        if not sym.startswith("<"):
            out.append(sym)
            continue
        alts = rules[sym]
        elig = eligible(sym, depth, max_tree_depth)
        if not elig:
            raise MappingError(
                f"no alternative of {sym} fits within depth {max_tree_depth} at depth {depth}"
            )
        if len(alts) > 1:
            if idx >= n:
                idx = 0
                wraps += 1
                if wraps > max_wraps:
                    raise MappingError(
                        f"codon supply exhausted after {max_wraps} wraps"
                    )
            choice = alts[elig[codons[idx] % len(elig)]]
            idx += 1
            used += 1
        else:
            choice = alts[0]
        child_depth = depth + 1
        if child_depth > deepest:
            deepest = child_depth
        for s in reversed(choice):
            stack.append((s, child_depth))
    return PhenotypeExpr("".join(out), deepest, used, wraps)
