"""Independent derivation checker used as the mapping oracle.

Re-derives expressions from grammar rules by memoized descent over token
spans, sharing no code with the production mapper. Reports the minimal
derivation-tree depth (start symbol at depth 1, terminals occupying a level)
or infinity when the text is not derivable.
"""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"\[/?[A-Za-z]+\]|[A-Za-z_][A-Za-z0-9_]*")
INF = float("inf")


def tokenize(text: str) -> list[str]:
    tokens = []
    pos = 0
    for m in _TOKEN_RE.finditer(text):
        if m.start() != pos:
            raise ValueError(f"unexpected characters at {pos}: {text[pos:m.start()]!r}")
        tokens.append(m.group())
        pos = m.end()
    if pos != len(text):
        raise ValueError(f"unexpected trailing characters: {text[pos:]!r}")
    return tokens


class DerivationChecker:
    """Min-depth derivability over a parsed Grammar's public rule table."""

    def __init__(self, grammar):
        self.rules = grammar.rules
        self.start = grammar.start_symbol
        self._lit_tokens: dict[str, tuple[str, ...]] = {}
        self._name_lang: dict[str, dict[str, float] | None] = {}
        for nt in self.rules:
            self._name_lang[nt] = self._build_name_language(nt, ())

    # ---------------------------------------------------------- name rules

    def _build_name_language(self, nt, stack):
        """dict name -> min height for purely name-producing rules, else None."""
        if nt in stack:
            return None
        result: dict[str, float] = {}
        for alt in self.rules[nt]:
            combos = {"": 0.0}
            ok = True
            for sym in alt:
                if sym.startswith("<"):
                    sub = self._build_name_language(sym, stack + (nt,))
                    if sub is None:
                        ok = False
                        break
                    combos = {
                        prefix + name: max(h, sub_h)
                        for prefix, h in combos.items()
                        for name, sub_h in sub.items()
                    }
                else:
                    if "[" in sym:
                        ok = False
                        break
                    combos = {prefix + sym: max(h, 1.0) for prefix, h in combos.items()}
            if not ok:
                continue
            for name, maxh in combos.items():
                height = 1.0 + maxh
                if name not in result or height < result[name]:
                    result[name] = height
        if not result:
            return None
        # a rule mixing tag and name alternatives is not a pure name rule
        for alt in self.rules[nt]:
            for sym in alt:
                if not sym.startswith("<") and "[" in sym:
                    return None
        return result

    def _literal_tokens(self, sym):
        if sym not in self._lit_tokens:
            self._lit_tokens[sym] = tuple(tokenize(sym))
        return self._lit_tokens[sym]

    # ----------------------------------------------------------- derivation

    def min_depth(self, text: str) -> float:
        tokens = tokenize(text)
        self._tokens = tokens
        self._memo: dict[tuple[str, int], dict[int, float]] = {}
        self._active: set[tuple[str, int]] = set()
        spans = self._spans(self.start, 0)
        return spans.get(len(tokens), INF)

    def derivable(self, text: str, max_depth: int) -> bool:
        return self.min_depth(text) <= max_depth

    def _spans(self, nt: str, i: int) -> dict[int, float]:
        key = (nt, i)
        if key in self._memo and key not in self._active:
            return self._memo[key]
        if key in self._active:
            return self._memo.setdefault(key, {})
        self._active.add(key)
        self._memo.setdefault(key, {})
        while True:  # grow-the-seed iteration tolerates left recursion
            new = self._compute_spans(nt, i)
            if new == self._memo[key]:
                break
            self._memo[key] = new
        self._active.discard(key)
        return self._memo[key]

    def _compute_spans(self, nt: str, i: int) -> dict[int, float]:
        tokens = self._tokens
        result: dict[int, float] = dict(self._memo.get((nt, i), {}))
        for alt in self.rules[nt]:
            states = {i: 0.0}  # cursor -> max child height so far
            for sym in alt:
                if not states:
                    break
                new_states: dict[int, float] = {}
                if sym.startswith("<"):
                    lang = self._name_lang.get(sym)
                    if lang is not None:
                        for cursor, h in states.items():
                            if cursor < len(tokens):
                                sub_h = lang.get(tokens[cursor])
                                if sub_h is not None:
                                    hh = max(h, sub_h)
                                    if cursor + 1 not in new_states or hh < new_states[cursor + 1]:
                                        new_states[cursor + 1] = hh
                    else:
                        for cursor, h in states.items():
                            for end, sub_h in self._spans(sym, cursor).items():
                                hh = max(h, sub_h)
                                if end not in new_states or hh < new_states[end]:
                                    new_states[end] = hh
                else:
                    lits = self._literal_tokens(sym)
                    for cursor, h in states.items():
                        end = cursor + len(lits)
                        if tuple(tokens[cursor:end]) == lits:
                            hh = max(h, 1.0)
                            if end not in new_states or hh < new_states[end]:
                                new_states[end] = hh
                states = new_states
            for end, maxh in states.items():
                height = 1.0 + maxh
                if end not in result or height < result[end]:
                    result[end] = height
        return result
