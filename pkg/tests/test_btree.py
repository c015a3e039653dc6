import itertools
from random import Random

import pytest

from swarmlab.btree import (
    BTNode,
    BTreeError,
    TickStatus,
    TreeEvaluationError,
    action,
    blend_agents,
    build_tree,
    condition,
    count_ppa_subtrees,
    make_ppa,
    parallel,
    selector,
    sequence,
    serialize,
    tick,
    unique_behavior_nodes,
)

S, F, R = TickStatus.SUCCESS, TickStatus.FAILURE, TickStatus.RUNNING

FIG1A = ("[Selector][PostCnd]AlreadyCarrying_Food[/PostCnd]"
         "[Sequence][PreCnd]IsCarryable_Food[/PreCnd]"
         "[Act]SingleCarry_Food[/Act][/Sequence][/Selector]")


class StubWorld:
    """Scriptable predicate/action provider for engine tests."""

    def __init__(self, conditions=None, actions=None, default_action=S):
        self.conditions = conditions or {}
        self.actions = actions or {}
        self.default_action = default_action
        self.evaluated = []
        self.executed = []

    def eval_condition(self, name, agent):
        self.evaluated.append(name)
        if name == "DummyNode":
            return True
        if name not in self.conditions:
            raise TreeEvaluationError(f"unknown condition {name!r}")
        value = self.conditions[name]
        return value() if callable(value) else value

    def execute_action(self, name, agent, rng, trace=None):
        self.executed.append(name)
        return self.actions.get(name, self.default_action)


# -------------------------------------------------------------- build_tree

def test_build_tree_direct_nesting():
    text = ("[Selector][PostCnd]DummyNode[/PostCnd]"
            "[Sequence][Act]Explore[/Act][/Sequence][/Selector]")
    root = build_tree(text)
    assert root.kind == "Selector"
    post, seq = root.children
    assert (post.kind, post.tag_role, post.name) == ("Condition", "PostCnd", "DummyNode")
    assert seq.kind == "Sequence"
    assert (seq.children[0].kind, seq.children[0].name) == ("Action", "Explore")


def test_build_tree_fig1a_shape():
    root = build_tree(FIG1A)
    assert root.kind == "Selector"
    left, right = root.children
    assert left.name == "AlreadyCarrying_Food" and left.tag_role == "PostCnd"
    assert right.kind == "Sequence"
    pre, act = right.children
    assert pre.name == "IsCarryable_Food" and pre.tag_role == "PreCnd"
    assert act.name == "SingleCarry_Food" and act.kind == "Action"


def test_build_tree_missing_closer():
    with pytest.raises(BTreeError, match="never closed"):
        build_tree("[Sequence][Act]x[/Act]")


def test_build_tree_mismatched_closer_position():
    with pytest.raises(BTreeError, match="position"):
        build_tree("[Sequence][Act]x[/Act][/Selector]")


def test_build_tree_name_outside_tag():
    with pytest.raises(BTreeError):
        build_tree("[Sequence]stray[Act]x[/Act][/Sequence]")


def test_build_tree_empty_control():
    with pytest.raises(BTreeError, match="no children"):
        build_tree("[Sequence][/Sequence]")


def test_serialize_roundtrip(ppa_grammar):
    from swarmlab.grammar import map_genotype, random_genome

    for seed in range(30):
        expr = map_genotype(random_genome(100, Random(seed)), ppa_grammar, 10)
        assert serialize(build_tree(expr)) == expr.text


def test_serialize_parallel_roundtrip():
    tree = parallel(build_tree(FIG1A), sequence(action("Explore")))
    text = serialize(tree)
    rebuilt = build_tree(text)
    assert rebuilt.kind == "Parallel"
    assert serialize(rebuilt) == text


# ---------------------------------------------------------------- make_ppa

def test_make_ppa_fig1a():
    tree = make_ppa(
        [condition("AlreadyCarrying_Food")],
        [condition("IsCarryable_Food")],
        [],
        action("SingleCarry_Food"),
    )
    assert serialize(tree) == FIG1A


def test_make_ppa_degenerate():
    tree = make_ppa([], [], [], action("Explore"))
    assert tree.kind == "Selector"
    assert tree.children[0].name == "DummyNode"
    assert tree.children[0].tag_role == "PostCnd"
    body = tree.children[1]
    assert body.kind == "Sequence"
    assert [c.name for c in body.children] == ["Explore"]


def test_make_ppa_canonical_order():
    tree = make_ppa([condition("P")], [condition("Q")], [condition("C")],
                    action("A"))
    left, right = tree.children
    assert left.name == "P" and left.tag_role == "PostCnd"
    assert [c.name for c in right.children] == ["Q", "C", "A"]
    assert [c.tag_role for c in right.children] == ["PreCnd", "Cnstr", "Act"]


def test_make_ppa_requires_action():
    with pytest.raises(BTreeError):
        make_ppa([], [], [], condition("NotAnAction"))


# -------------------------------------------------------------------- tick

def test_tick_postcondition_short_circuit():
    world = StubWorld(conditions={"AlreadyCarrying_Food": True,
                                  "IsCarryable_Food": True})
    status, trace = tick(build_tree(FIG1A), None, world)
    assert status is S
    assert world.executed == []  # action never ran
    assert trace.postcondition_successes == 1
    assert trace.root_selector_successes == 1


def test_tick_action_runs_when_goal_unmet():
    world = StubWorld(conditions={"AlreadyCarrying_Food": False,
                                  "IsCarryable_Food": True})
    status, trace = tick(build_tree(FIG1A), None, world)
    assert status is S
    assert world.executed == ["SingleCarry_Food"]


def test_tick_constraint_failure_counted():
    tree = make_ppa([condition("P")], [], [condition("C")], action("A"))
    world = StubWorld(conditions={"P": False, "C": False})
    status, trace = tick(tree, None, world)
    assert status is F
    assert trace.constraint_failures == 1
    assert trace.root_selector_successes == 0


def test_tick_dummy_postcondition_not_rewarded():
    tree = make_ppa([], [], [], action("A"))
    world = StubWorld(actions={"A": F})
    status, trace = tick(tree, None, world)
    assert status is S  # DummyNode always succeeds
    assert trace.postcondition_successes == 0


def test_tick_unknown_name_raises():
    world = StubWorld()
    with pytest.raises(TreeEvaluationError, match="Mystery"):
        tick(sequence(condition("Mystery")), None, world)


@pytest.mark.parametrize("kind,statuses,expected", [
    ("Sequence", (S, S), S),
    ("Sequence", (S, F), F),
    ("Sequence", (F, S), F),
    ("Sequence", (F, F), F),
    ("Sequence", (R, S), R),
    ("Sequence", (S, R), R),
    ("Selector", (S, S), S),
    ("Selector", (S, F), S),
    ("Selector", (F, S), S),
    ("Selector", (F, F), F),
    ("Selector", (R, F), R),
    ("Selector", (F, R), R),
])
def test_status_algebra_two_level(kind, statuses, expected):
    world = StubWorld(actions={f"a{i}": s for i, s in enumerate(statuses)})
    node = BTNode(kind, children=[action(f"a{i}") for i in range(len(statuses))])
    status, _ = tick(node, None, world)
    assert status is expected


def test_sequence_short_circuits_on_failure():
    world = StubWorld(actions={"a": F, "b": S})
    tick(sequence(action("a"), action("b")), None, world)
    assert world.executed == ["a"]


def test_selector_short_circuits_on_success():
    world = StubWorld(actions={"a": S, "b": S})
    tick(selector(action("a"), action("b")), None, world)
    assert world.executed == ["a"]


def test_running_propagates_immediately():
    world = StubWorld(actions={"a": R, "b": S})
    status, _ = tick(sequence(action("a"), action("b")), None, world)
    assert status is R
    assert world.executed == ["a"]


@pytest.mark.parametrize("statuses,threshold,expected", [
    ((S, F, F), 1, S),
    ((F, F, F), 1, F),
    ((R, F, F), 1, R),
    ((S, S, F), 3, F),
    ((S, S, S), 3, S),
])
def test_parallel_policies(statuses, threshold, expected):
    world = StubWorld(actions={f"a{i}": s for i, s in enumerate(statuses)})
    node = parallel(*[action(f"a{i}") for i in range(len(statuses))],
                    success_threshold=threshold)
    status, _ = tick(node, None, world)
    assert status is expected
    assert world.executed == [f"a{i}" for i in range(len(statuses))]  # no short-circuit


def test_parallel_ticks_all_children_each_tick():
    world = StubWorld(actions={"a": S, "b": F, "c": S})
    node = parallel(action("a"), action("b"), action("c"))
    tick(node, None, world)
    assert world.executed == ["a", "b", "c"]


def test_tick_does_not_mutate_topology():
    tree = build_tree(FIG1A)
    before = serialize(tree)
    world = StubWorld(conditions={"AlreadyCarrying_Food": False,
                                  "IsCarryable_Food": True})
    for _ in range(5):
        tick(tree, None, world)
    assert serialize(tree) == before


def test_short_circuit_property_randomized():
    rng = Random(99)
    names = [f"c{i}" for i in range(6)]
    for _ in range(200):
        post = [condition(rng.choice(names)) for _ in range(rng.randint(0, 2))]
        pre = [condition(rng.choice(names)) for _ in range(rng.randint(0, 2))]
        cons = [condition(rng.choice(names)) for _ in range(rng.randint(0, 2))]
        tree = make_ppa(post, pre, cons, action("act"))
        truth = {n: rng.random() < 0.5 for n in names}
        world = StubWorld(conditions=truth)
        status, trace = tick(tree, None, world)
        post_holds = bool(post) and all(truth[c.name] for c in post)
        if post_holds:
            assert "act" not in world.executed
        if not post:
            # DummyNode short-circuits the whole PPA
            assert status is S and world.executed == []


# ----------------------------------------------------------------- analysis

def test_count_ppa_fig1a():
    assert count_ppa_subtrees(build_tree(FIG1A)) == 1


def test_count_ppa_degenerate():
    assert count_ppa_subtrees(make_ppa([], [], [], action("Explore"))) == 1


def test_count_ppa_additive():
    two = sequence(build_tree(FIG1A), build_tree(FIG1A))
    assert count_ppa_subtrees(two) == 2


def test_count_ppa_nested_postcondition():
    inner = make_ppa([condition("P")], [], [], action("A"))
    outer = BTNode("Selector", children=[inner, sequence(action("B"))])
    assert count_ppa_subtrees(outer) == 2


def test_count_ppa_ignores_non_ppa_selectors():
    plain = selector(action("A"), action("B"))
    assert count_ppa_subtrees(plain) == 0


def test_unique_behavior_nodes_set_semantics():
    tree = sequence(action("Explore"), action("Explore"),
                    action("MoveTowards_Sites"))
    assert unique_behavior_nodes(tree) == 2


def test_unique_behavior_nodes_single_leaf():
    assert unique_behavior_nodes(sequence(action("Explore"))) == 1


def test_unique_behavior_nodes_fig1a():
    assert unique_behavior_nodes(build_tree(FIG1A)) == 3


def test_analysis_invariant_under_parallel_permutation():
    subtrees = [build_tree(FIG1A), make_ppa([], [], [], action("Explore")),
                make_ppa([condition("X")], [], [], action("MoveAway_Hub"))]
    # 7 distinct leaves: Fig-1a's three, DummyNode, Explore, X, MoveAway_Hub
    for perm in itertools.permutations(subtrees):
        node = parallel(*perm)
        assert count_ppa_subtrees(node) == 3
        assert unique_behavior_nodes(node) == 7


# ------------------------------------------------------------- blend_agents

def test_blend_singleton():
    t = build_tree(FIG1A)
    blended = blend_agents([t], Random(0))
    assert blended.kind == "Parallel"
    assert blended.children == [t]
    assert blended.success_threshold == 1


def test_blend_deterministic_permutation():
    trees = [make_ppa([], [], [], action(f"A{i}")) for i in range(3)]
    a = blend_agents(list(trees), Random(5))
    b = blend_agents(list(trees), Random(5))
    assert [id(c) for c in a.children] == [id(c) for c in b.children]
    assert sorted(map(id, a.children)) == sorted(map(id, trees))


def test_blend_fifty_trees():
    trees = [make_ppa([], [], [], action(f"A{i}")) for i in range(50)]
    blended = blend_agents(trees, Random(1))
    assert blended.kind == "Parallel"
    assert len(blended.children) == 50


def test_blend_empty_rejected():
    with pytest.raises(BTreeError):
        blend_agents([], Random(0))
