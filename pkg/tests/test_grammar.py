import re
from random import Random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracle_bnf import DerivationChecker
from swarmlab.grammar import (
    Genome,
    GrammarError,
    MappingError,
    map_genotype,
    parse_grammar,
    random_genome,
)

MAX_DEPTH = 10


# ------------------------------------------------------------ parse_grammar

def test_shipped_grammar_rule_count(ppa_grammar):
    assert ppa_grammar.rule_count == 20
    assert ppa_grammar.start_symbol == "<root>"


def test_shipped_grammar_tags(ppa_grammar):
    tags = ppa_grammar.terminal_tags
    for t in ("[Sequence]", "[/Sequence]", "[Selector]", "[/Selector]",
              "[PostCnd]", "[/PostCnd]", "[PreCnd]", "[/PreCnd]",
              "[Cnstr]", "[/Cnstr]", "[Act]", "[/Act]"):
        assert t in tags


def test_minimal_grammar():
    g = parse_grammar("<a> ::= x")
    assert g.rule_count == 1
    assert g.rules["<a>"] == [("x",)]


def test_dangling_nonterminal_rejected():
    with pytest.raises(GrammarError, match=r"<b>"):
        parse_grammar("<a> ::= <b>")


def test_syntax_error_reports_line():
    with pytest.raises(GrammarError, match=r"line 3"):
        parse_grammar("<a> ::= x\n\nnot a rule, no open rule either ::= |")
    with pytest.raises(GrammarError, match=r"line 1"):
        parse_grammar("junk before any rule")


def test_empty_alternative_rejected():
    with pytest.raises(GrammarError, match=r"empty alternative"):
        parse_grammar("<a> ::= x |")


def test_duplicate_rule_rejected():
    with pytest.raises(GrammarError, match=r"duplicate"):
        parse_grammar("<a> ::= x\n<a> ::= y")


def test_line_continuations_join_alternatives():
    g = parse_grammar("<a> ::= x | y\n    | z")
    assert len(g.rules["<a>"]) == 3


def test_behavior_vocabulary_matches_exhaustive_enumeration(ppa_grammar):
    # Oracle: expand the four leaf productions' object arguments by hand.
    objects = ["Hub", "Sites", "Food", "Debris"]
    static, movable = ["Hub", "Sites"], ["Food", "Debris"]
    expected = set()
    expected |= {f"NeighbourObjects_{o}" for o in objects}
    expected |= {f"AlreadyCarrying_{o}" for o in movable}
    expected |= {f"IsVisitedBefore_{o}" for o in static}
    expected |= {f"IsDropable_{o}" for o in static}
    expected |= {f"IsCarryable_{o}" for o in movable}
    expected |= {f"IsCarrying_{o}" for o in movable}
    expected |= {"CanMove"}
    expected |= {f"MoveAway_{o}" for o in static}
    expected |= {f"MoveTowards_{o}" for o in objects}
    expected |= {f"SingleCarry_{o}" for o in movable}
    expected |= {f"Drop_{o}" for o in movable}
    expected |= {"Explore"}
    assert ppa_grammar.behavior_vocabulary() == frozenset(expected)


def test_nominal_grammar_shares_vocabulary(ppa_grammar, nominal_grammar):
    assert nominal_grammar.behavior_vocabulary() == ppa_grammar.behavior_vocabulary()


# ------------------------------------------------------------ random_genome

def test_random_genome_length_and_range():
    g = random_genome(100, Random(7))
    assert g.length == 100
    assert all(0 <= c < 256 for c in g.codons)


def test_random_genome_minimal():
    assert random_genome(1, Random(0)).length == 1


def test_random_genome_deterministic():
    assert random_genome(50, Random(123)) == random_genome(50, Random(123))


def test_random_genome_zero_length_rejected():
    with pytest.raises(ValueError):
        random_genome(0, Random(0))


def test_genome_codon_range_enforced():
    with pytest.raises(ValueError):
        Genome((256,))
    with pytest.raises(ValueError):
        Genome((-1,))


# ------------------------------------------------------------- map_genotype

def test_modulo_selection():
    g = parse_grammar("<a> ::= x | y")
    assert map_genotype(Genome((3,)), g, MAX_DEPTH).text == "y"
    assert map_genotype(Genome((2,)), g, MAX_DEPTH).text == "x"


def test_single_alternative_consumes_no_codon():
    g = parse_grammar("<a> ::= x")
    expr = map_genotype(Genome((9,)), g, MAX_DEPTH)
    assert expr.text == "x"
    assert expr.used_codons == 0


def test_mapping_deterministic(ppa_grammar):
    genome = random_genome(100, Random(42))
    a = map_genotype(genome, ppa_grammar, MAX_DEPTH)
    b = map_genotype(genome, ppa_grammar, MAX_DEPTH)
    assert a == b


def test_seed42_genome_reparses_under_oracle(ppa_grammar):
    checker = DerivationChecker(ppa_grammar)
    expr = map_genotype(random_genome(100, Random(42)), ppa_grammar, MAX_DEPTH)
    depth = checker.min_depth(expr.text)
    assert depth <= MAX_DEPTH
    assert expr.derivation_depth <= MAX_DEPTH


def test_depth_instrumentation_within_bound(ppa_grammar):
    for seed in range(50):
        expr = map_genotype(random_genome(100, Random(seed)), ppa_grammar, MAX_DEPTH)
        assert expr.derivation_depth <= MAX_DEPTH


def test_tag_balance(ppa_grammar):
    opener = re.compile(r"\[(?!/)(\w+)\]")
    closer = re.compile(r"\[/(\w+)\]")
    for seed in range(25):
        text = map_genotype(random_genome(100, Random(seed)), ppa_grammar, MAX_DEPTH).text
        stack = []
        for m in re.finditer(r"\[/?\w+\]", text):
            tag = m.group()
            if closer.fullmatch(tag):
                assert stack and stack[-1] == tag[2:-1], f"unbalanced at {m.start()} in {text}"
                stack.pop()
            elif opener.fullmatch(tag):
                stack.append(tag[1:-1])
        assert not stack


def test_wrapping_reuses_codons(ppa_grammar):
    # a short genome must wrap to complete a full derivation
    genome = Genome((7, 130, 9, 55))
    expr = map_genotype(genome, ppa_grammar, MAX_DEPTH)
    assert expr.wraps >= 1
    assert expr.used_codons > genome.length
    assert DerivationChecker(ppa_grammar).min_depth(expr.text) <= MAX_DEPTH


def test_too_short_genome_exhausts_wraps(ppa_grammar):
    with pytest.raises(MappingError, match="wraps"):
        map_genotype(Genome((7, 130, 9)), ppa_grammar, MAX_DEPTH)


def test_wrap_limit_raises_mapping_error():
    # every expansion consumes a codon and recursion never ends within the
    # wrap budget when the depth budget is effectively unbounded
    g = parse_grammar("<a> ::= <a><a> | x")
    with pytest.raises(MappingError, match="wraps"):
        map_genotype(Genome((0,)), g, max_tree_depth=10_000, max_wraps=3)


def test_depth_budget_dead_end_raises():
    g = parse_grammar("<a> ::= <b>\n<b> ::= <c>\n<c> ::= x")
    with pytest.raises(MappingError, match="depth"):
        map_genotype(Genome((0,)), g, max_tree_depth=2)


def test_depth_restriction_prefers_shallow_alternatives():
    # with a tight budget only the terminal alternative fits, whatever the codon
    g = parse_grammar("<a> ::= <a><a> | x")
    expr = map_genotype(Genome((0, 0, 0)), g, max_tree_depth=3)
    assert expr.text == "x"
    # codon 0 would have chosen the recursive alternative given room
    roomy = map_genotype(Genome((0, 1, 1, 1)), g, max_tree_depth=4)
    assert roomy.text == "xx"


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_property_mapping_valid_and_bounded(seed):
    from swarmlab.grammar import load_builtin

    grammar = load_builtin("ppa")
    expr = map_genotype(random_genome(100, Random(seed)), grammar, MAX_DEPTH)
    assert expr.derivation_depth <= MAX_DEPTH
    assert "<" not in expr.text  # no unexpanded non-terminals


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(5, 200))
def test_property_any_length_genome_maps_or_fails_cleanly(seed, length):
    from swarmlab.grammar import load_builtin

    grammar = load_builtin("ppa")
    genome = random_genome(length, Random(seed))
    try:
        expr = map_genotype(genome, grammar, MAX_DEPTH)
    except MappingError:
        return  # invalid individual is an acceptable, signalled outcome
    assert expr.derivation_depth <= MAX_DEPTH
