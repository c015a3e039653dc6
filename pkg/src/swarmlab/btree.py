"""Behavior-tree model, PPA construction, tick engine, and tree analysis.

Trees serialize to the same tag expression the grammar mapper emits, e.g.
``[Selector][PostCnd]DummyNode[/PostCnd][Sequence][Act]Explore[/Act][/Sequence][/Selector]``
so evolved programs can be archived and reloaded verbatim.

The tick engine dispatches leaves to the owning world: conditions through
``world.eval_condition(name, agent)`` and actions through
``world.execute_action(name, agent, rng, trace)``. A tick never mutates tree
topology; only world/agent state changes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from random import Random

from .grammar import DUMMY_NODE, PhenotypeExpr

__all__ = [
    "TickStatus",
    "TickTrace",
    "BTNode",
    "BTreeError",
    "TreeEvaluationError",
    "sequence",
    "selector",
    "parallel",
    "condition",
    "action",
    "build_tree",
    "serialize",
    "make_ppa",
    "tick",
    "count_ppa_subtrees",
    "unique_behavior_nodes",
    "blend_agents",
    "iter_nodes",
    "leaf_names",
]

SELECTOR = "Selector"
SEQUENCE = "Sequence"
PARALLEL = "Parallel"
CONDITION = "Condition"
ACTION = "Action"

_CONTROL_KINDS = (SELECTOR, SEQUENCE, PARALLEL)
_ROLE_FOR_KIND = {"PostCnd": CONDITION, "PreCnd": CONDITION, "Cnstr": CONDITION, "Act": ACTION}


class TickStatus(Enum):
    SUCCESS = "Success"
    FAILURE = "Failure"
    RUNNING = "Running"


class BTreeError(ValueError):
    """Malformed tree expression or invalid node construction."""


class TreeEvaluationError(RuntimeError):
    """Unknown condition/action name: grammar and behavior registry disagree."""


@dataclass
class TickTrace:
    """Per-tick event counts feeding the feedback and intrinsic fitness types.

    actions_executed counts pickup, carry-step, and goal-consistent drop
    events; each qualifying node contributes at most once per tick.
    """

    postcondition_successes: int = 0
    constraint_failures: int = 0
    root_selector_successes: int = 0
    actions_executed: int = 0


class BTNode:
    """Tree node: Selector/Sequence/Parallel control or Condition/Action leaf."""

    __slots__ = ("kind", "tag_role", "name", "children", "success_threshold")

    def __init__(self, kind, tag_role=None, name=None, children=(), success_threshold=1):
        if kind in (CONDITION, ACTION):
            if children:
                raise BTreeError(f"{kind} nodes are leaves")
            if not name:
                raise BTreeError(f"{kind} node needs a name")
        elif kind in _CONTROL_KINDS:
            if not children:
                raise BTreeError(f"{kind} node needs at least one child")
        else:
            raise BTreeError(f"unknown node kind {kind!r}")
        self.kind = kind
        self.tag_role = tag_role
        self.name = name
        self.children = list(children)
        self.success_threshold = success_threshold

    def __repr__(self):
        if self.kind in (CONDITION, ACTION):
            return f"{self.kind}({self.name})"
        return f"{self.kind}({', '.join(map(repr, self.children))})"


def sequence(*children) -> BTNode:
    return BTNode(SEQUENCE, children=children)


def selector(*children) -> BTNode:
    return BTNode(SELECTOR, children=children)


def parallel(*children, success_threshold: int = 1) -> BTNode:
    return BTNode(PARALLEL, children=children, success_threshold=success_threshold)


def condition(name: str, role: str = "PreCnd") -> BTNode:
    if role not in ("PostCnd", "PreCnd", "Cnstr"):
        raise BTreeError(f"condition role must be PostCnd/PreCnd/Cnstr, got {role!r}")
    return BTNode(CONDITION, tag_role=role, name=name)


def action(name: str) -> BTNode:
    return BTNode(ACTION, tag_role="Act", name=name)


_EXPR_TOKEN_RE = re.compile(r"\[/?[A-Za-z]+\]|[A-Za-z_][A-Za-z0-9_]*|\s+|.")


def build_tree(expr) -> BTNode:
    """Deserialize a tag expression (PhenotypeExpr or str) into a tree."""
    text = expr.text if isinstance(expr, PhenotypeExpr) else expr
    # (position, children) frames; the sentinel frame collects the root
    stack: list[tuple[str | None, int, list[BTNode]]] = [(None, 0, [])]
    pending_role: str | None = None
    pending_pos = 0
    pending_name: str | None = None

    for m in _EXPR_TOKEN_RE.finditer(text):
        tok = m.group()
        pos = m.start()
        if tok.isspace():
            continue
        if tok.startswith("[/"):
            tag = tok[2:-1]
            if pending_role is not None:
                if tag != pending_role or pending_name is None:
                    raise BTreeError(f"position {pending_pos}: unterminated [{pending_role}]")
                kind = _ROLE_FOR_KIND[pending_role]
                if kind is CONDITION:
                    node = BTNode(CONDITION, tag_role=pending_role, name=pending_name)
                else:
                    node = BTNode(ACTION, tag_role="Act", name=pending_name)
                stack[-1][2].append(node)
                pending_role = pending_name = None
                continue
            if tag not in _CONTROL_KINDS:
                raise BTreeError(f"position {pos}: unexpected closing tag {tok}")
            open_kind, open_pos, children = stack.pop()
            if open_kind != tag:
                raise BTreeError(f"position {pos}: {tok} does not close [{open_kind}]")
            if not children:
                raise BTreeError(f"position {open_pos}: [{tag}] has no children")
            stack[-1][2].append(BTNode(tag, children=children))
        elif tok.startswith("["):
            tag = tok[1:-1]
            if pending_role is not None:
                raise BTreeError(f"position {pos}: tag inside [{pending_role}]")
            if tag in _CONTROL_KINDS:
                stack.append((tag, pos, []))
            elif tag in _ROLE_FOR_KIND:
                pending_role = tag
                pending_pos = pos
                pending_name = None
            else:
                raise BTreeError(f"position {pos}: unknown tag {tok}")
        elif tok[0].isalpha() or tok[0] == "_":
            if pending_role is None or pending_name is not None:
                raise BTreeError(f"position {pos}: name {tok!r} outside a leaf tag")
            pending_name = tok
        else:
            raise BTreeError(f"position {pos}: unexpected character {tok!r}")

    if pending_role is not None:
        raise BTreeError(f"position {pending_pos}: unterminated [{pending_role}]")
    if len(stack) != 1:
        open_kind, open_pos, _ = stack[-1]
        raise BTreeError(f"position {open_pos}: [{open_kind}] never closed")
    roots = stack[0][2]
    if len(roots) != 1:
        raise BTreeError(f"expression must have exactly one root, found {len(roots)}")
    return roots[0]


def serialize(node: BTNode) -> str:
    """Inverse of build_tree on valid trees."""
    if node.kind == CONDITION:
        role = node.tag_role or "PreCnd"
        return f"[{role}]{node.name}[/{role}]"
    if node.kind == ACTION:
        return f"[Act]{node.name}[/Act]"
    inner = "".join(serialize(c) for c in node.children)
    return f"[{node.kind}]{inner}[/{node.kind}]"


def _retag(node: BTNode, role: str) -> BTNode:
    if node.kind != CONDITION:
        raise BTreeError(f"expected a Condition node, got {node.kind}")
    return BTNode(CONDITION, tag_role=role, name=node.name)


def make_ppa(postconditions, preconditions, constraints, action_node: BTNode) -> BTNode:
    """Canonical PPA: Selector(postconditions, Sequence(pre..., cnstr..., act)).

    An empty postcondition list is replaced by the always-true DummyNode.
    """
    if action_node.kind != ACTION:
        raise BTreeError("make_ppa needs an Action node")
    posts = [_retag(c, "PostCnd") for c in postconditions]
    if not posts:
        post_branch = BTNode(CONDITION, tag_role="PostCnd", name=DUMMY_NODE)
    elif len(posts) == 1:
        post_branch = posts[0]
    else:
        post_branch = BTNode(SEQUENCE, children=posts)
    body = [_retag(c, "PreCnd") for c in preconditions]
    body += [_retag(c, "Cnstr") for c in constraints]
    body.append(action_node)
    return BTNode(SELECTOR, children=[post_branch, BTNode(SEQUENCE, children=body)])


def _tick_node(node, agent, world, rng, trace):
    kind = node.kind
    if kind == CONDITION:
        held = world.eval_condition(node.name, agent)
        if held:
            if node.tag_role == "PostCnd" and node.name != DUMMY_NODE:
                trace.postcondition_successes += 1
            return TickStatus.SUCCESS
        if node.tag_role == "Cnstr":
            trace.constraint_failures += 1
        return TickStatus.FAILURE
    if kind == ACTION:
        return world.execute_action(node.name, agent, rng, trace)
    if kind == SEQUENCE:
        for child in node.children:
            status = _tick_node(child, agent, world, rng, trace)
            if status is not TickStatus.SUCCESS:
                return status
        return TickStatus.SUCCESS
    if kind == SELECTOR:
        for child in node.children:
            status = _tick_node(child, agent, world, rng, trace)
            if status is not TickStatus.FAILURE:
                return status
        return TickStatus.FAILURE
    # Parallel: every child runs each tick, no short-circuit
    successes = 0
    running = False
    for child in node.children:
        status = _tick_node(child, agent, world, rng, trace)
        if status is TickStatus.SUCCESS:
            successes += 1
        elif status is TickStatus.RUNNING:
            running = True
    if successes >= node.success_threshold:
        return TickStatus.SUCCESS
    return TickStatus.RUNNING if running else TickStatus.FAILURE


def tick(root: BTNode, agent, world, rng: Random | None = None) -> tuple[TickStatus, TickTrace]:
    """Evaluate one tick of the tree, returning status and event trace."""
    trace = TickTrace()
    status = _tick_node(root, agent, world, rng, trace)
    if status is TickStatus.SUCCESS:
        trace.root_selector_successes = 1
    return status, trace


def iter_nodes(root: BTNode):
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(node.children)


def leaf_names(root: BTNode) -> list[str]:
    return [n.name for n in iter_nodes(root) if n.kind in (CONDITION, ACTION)]


def _is_condition_branch(node: BTNode) -> bool:
    if node.kind == CONDITION:
        return True
    if _is_ppa(node):
        return True
    return node.kind == SEQUENCE and all(c.kind == CONDITION for c in node.children)


def _is_ppa(node: BTNode) -> bool:
    if node.kind != SELECTOR or len(node.children) != 2:
        return False
    left, right = node.children
    return (
        _is_condition_branch(left)
        and right.kind == SEQUENCE
        and bool(right.children)
        and right.children[-1].kind == ACTION
    )


def count_ppa_subtrees(root: BTNode) -> int:
    """Selector nodes matching the postcondition/precondition-action shape."""
    return sum(1 for n in iter_nodes(root) if _is_ppa(n))


def unique_behavior_nodes(root: BTNode) -> int:
    """Distinct leaf identifiers (behavior name with its object argument)."""
    return len(set(leaf_names(root)))


def blend_agents(trees, rng: Random) -> BTNode:
    """Parallel root over the given trees in an rng-shuffled order."""
    trees = list(trees)
    if not trees:
        raise BTreeError("blend_agents needs at least one tree")
    rng.shuffle(trees)
    return BTNode(PARALLEL, children=trees, success_threshold=1)
