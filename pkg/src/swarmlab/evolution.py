"""Distributed online grammatical evolution: sense/act/update plus fitness.

Each learning step runs four phases over all alive agents in id order:
tick, fitness update, sense (gene exchange with neighbors), act (genetic
operators once the pool exceeds the storage threshold), and update (adopt
the best offspring when it strictly beats the incumbent score).

Everything is driven by one explicit Random stream per trial, so a step is
a pure function of (world, members, params, rng state).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from random import Random

from . import btree
from .btree import BTNode, TickTrace, build_tree, leaf_names
from .grammar import Genome, Grammar, MappingError, PhenotypeExpr, map_genotype
from .world import Agent, World

__all__ = [
    "FITNESS_MODES",
    "MODE_DIVERSITY",
    "MODE_EXPLORATION",
    "MODE_PROSPECTIVE",
    "MODE_TASK_SPECIFIC",
    "MODE_BT_FEEDBACK",
    "EvolutionParams",
    "FitnessRecord",
    "GenePool",
    "Candidate",
    "EvolvingAgent",
    "sense",
    "act",
    "update",
    "best_candidate",
    "crossover",
    "mutate",
    "diversity_fitness",
    "exploration_fitness",
    "bt_feedback",
    "overall_fitness",
    "ablation_fitness",
    "learning_step",
    "tick_step",
]

MODE_DIVERSITY = "Diversity"
MODE_EXPLORATION = "Exploration"
MODE_PROSPECTIVE = "Prospective"
MODE_TASK_SPECIFIC = "TaskSpecific"
MODE_BT_FEEDBACK = "BTFeedback"
FITNESS_MODES = (
    MODE_DIVERSITY,
    MODE_EXPLORATION,
    MODE_PROSPECTIVE,
    MODE_TASK_SPECIFIC,
    MODE_BT_FEEDBACK,
)

BETR_MODES = frozenset({MODE_DIVERSITY, MODE_EXPLORATION, MODE_BT_FEEDBACK})
ADHOC_MODES = frozenset(
    {MODE_DIVERSITY, MODE_EXPLORATION, MODE_PROSPECTIVE, MODE_TASK_SPECIFIC}
)


@dataclass(frozen=True)
class EvolutionParams:
    storage_threshold: int = 7
    interaction_prob: float = 0.85
    mutation_prob: float = 0.01  # per codon
    crossover_prob: float = 0.9
    max_tree_depth: int = 10
    population: int = 100
    learning_steps: int = 12000
    beta: float = 0.9
    fitness_mode: frozenset[str] = BETR_MODES
    genome_length: int = 100
    codon_bits: int = 8
    max_wraps: int = 3
    truncation_fraction: float = 0.5
    max_genome_length: int = 200
    exploration_cap: int | None = None  # optional E_t cap, off by default

    def validate(self):
        for name in ("interaction_prob", "mutation_prob", "crossover_prob",
                     "truncation_fraction"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if self.storage_threshold < 1:
            raise ValueError("storage_threshold must be >= 1")
        if self.population < 1 or self.genome_length < 1 or self.learning_steps < 0:
            raise ValueError("population/genome_length/learning_steps out of range")
        unknown = set(self.fitness_mode) - set(FITNESS_MODES)
        if unknown:
            raise ValueError(f"unknown fitness modes: {sorted(unknown)}")
        if not self.fitness_mode:
            raise ValueError("fitness_mode must not be empty")


@dataclass
class FitnessRecord:
    overall: float = 0.0  # exponentially blended A_t
    diversity: float = 0.0
    exploration: int = 0
    bt_feedback: int = 0
    prospective: int = 0  # accumulated intrinsic events
    task_specific: float = 0.0


class GenePool:
    """Stored (genome, donor fitness) pairs gathered during sense phases."""

    def __init__(self, maxlen: int | None = None):
        self.entries: list[tuple[Genome, float]] = []
        self.maxlen = maxlen

    def add(self, genome: Genome, donor_fitness: float):
        if self.maxlen is not None and len(self.entries) >= self.maxlen:
            self.entries.pop(0)
        self.entries.append((genome, donor_fitness))

    def clear(self):
        self.entries.clear()

    def __len__(self):
        return len(self.entries)


@dataclass
class Candidate:
    """Offspring awaiting adoption; invalid mappings carry -inf score."""

    genome: Genome
    expr: PhenotypeExpr | None
    diversity: float
    score: float


class EvolvingAgent(Agent):
    """Agent body plus controller, gene pool, and fitness record."""

    __slots__ = ("genome", "expr", "tree", "pool", "fitness")

    def __init__(self, agent_id, position, genome: Genome, expr: PhenotypeExpr,
                 tree: BTNode, diversity: float):
        super().__init__(agent_id, position)
        self.genome = genome
        self.expr = expr
        self.tree = tree
        self.pool = GenePool()
        self.fitness = FitnessRecord(diversity=diversity, exploration=1)


# ------------------------------------------------------------ fitness types

def diversity_fitness(tree: BTNode, grammar: Grammar) -> float:
    """Unique behavior leaves over the grammar's whole behavior vocabulary."""
    vocab = grammar.behavior_vocabulary()
    if not vocab:
        return 0.0
    present = set(leaf_names(tree)) & vocab
    return len(present) / len(vocab)


_LEAF_NAME_RE = re.compile(r"(?<=\])[A-Za-z_][A-Za-z0-9_]*(?=\[)")


def _diversity_from_text(text: str, vocab: frozenset[str]) -> float:
    if not vocab:
        return 0.0
    names = set(_LEAF_NAME_RE.findall(text))
    return len(names & vocab) / len(vocab)


def exploration_fitness(agent: Agent) -> int:
    """Count of unique world cells the agent has visited."""
    return len(agent.visited)


def bt_feedback(trace: TickTrace) -> int:
    """Postcondition success +1, constraint failure -2, root success +1."""
    return (
        trace.postcondition_successes
        - 2 * trace.constraint_failures
        + trace.root_selector_successes
    )


def overall_fitness(prev: float, diversity: float, exploration: float,
                    feedback: float, beta: float) -> float:
    """Exponential blend: beta * previous + (D + E_t + B_t)."""
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    return beta * prev + (diversity + exploration + feedback)


def ablation_fitness(modes, *, diversity: float = 0.0, exploration: float = 0.0,
                     feedback: float = 0.0, intrinsic_events: float = 0.0,
                     performance: float = 0.0, population: int = 0) -> float:
    """Per-step fitness increment for an ablation mode set.

    Every mode contributes additively and the caller blends the result
    through the same exponential recursion, keeping conditions comparable.
    """
    modes = set(modes)
    unknown = modes - set(FITNESS_MODES)
    if unknown:
        raise ValueError(f"unknown fitness modes: {sorted(unknown)}")
    if not modes:
        raise ValueError("mode set must not be empty")
    total = 0.0
    if MODE_DIVERSITY in modes:
        total += diversity
    if MODE_EXPLORATION in modes:
        total += exploration
    if MODE_BT_FEEDBACK in modes:
        total += feedback
    if MODE_PROSPECTIVE in modes:
        total += intrinsic_events
    if MODE_TASK_SPECIFIC in modes:
        total += performance * population
    return total


def record_step_fitness(member: EvolvingAgent, trace: TickTrace, world: World,
                        params: EvolutionParams):
    """Fold one tick's outcomes into the agent's fitness record.

    The blended exploration term is the count of world cells newly visited
    this step: the temporally sparse novelty reward the exponential blend
    exists to smooth. FitnessRecord.exploration still reports the lifetime
    unique-cell count.
    """
    rec = member.fitness
    previous_level = rec.exploration
    rec.exploration = exploration_fitness(member)
    newly_visited = rec.exploration - previous_level
    rec.bt_feedback = bt_feedback(trace)
    rec.prospective += trace.actions_executed
    if params.exploration_cap is not None:
        newly_visited = min(newly_visited, params.exploration_cap)
    performance = 0.0
    if MODE_TASK_SPECIFIC in params.fitness_mode:
        rec.task_specific = world.task_performance() * params.population
        performance = world.task_performance()
    increment = ablation_fitness(
        params.fitness_mode,
        diversity=rec.diversity,
        exploration=newly_visited,
        feedback=rec.bt_feedback,
        intrinsic_events=trace.actions_executed,
        performance=performance,
        population=params.population,
    )
    rec.overall = params.beta * rec.overall + increment


# -------------------------------------------------------- genetic operators

def crossover(parent1: Genome, parent2: Genome, params: EvolutionParams,
              rng: Random) -> tuple[Genome, Genome]:
    """Variable one-point crossover with independent cut points.

    Offspring lengths may differ from the parents'; they are capped at
    params.max_genome_length by tail truncation.
    """
    c1, c2 = parent1.codons, parent2.codons
    if len(c1) < 2 or len(c2) < 2 or rng.random() >= params.crossover_prob:
        return parent1, parent2
    cut1 = rng.randint(1, len(c1) - 1)
    cut2 = rng.randint(1, len(c2) - 1)
    cap = params.max_genome_length
    child1 = (c1[:cut1] + c2[cut2:])[:cap]
    child2 = (c2[:cut2] + c1[cut1:])[:cap]
    bits = parent1.codon_bits
    return Genome(child1, bits), Genome(child2, bits)


def mutate(genome: Genome, params: EvolutionParams, rng: Random) -> Genome:
    """Each codon independently replaced by a fresh uniform value."""
    p = params.mutation_prob
    if p <= 0.0:
        return genome
    limit = 1 << genome.codon_bits
    codons = list(genome.codons)
    changed = False
    for i in range(len(codons)):
        if rng.random() < p:
            codons[i] = rng.randrange(limit)
            changed = True
    if not changed:
        return genome
    return Genome(tuple(codons), genome.codon_bits)


# -------------------------------------------------------------- sense phase

def sense(agent: EvolvingAgent, world: World, params: EvolutionParams,
          rng: Random) -> GenePool:
    """Collect nearby agents' genomes, each offered with interaction_prob."""
    if not agent.alive:
        return agent.pool
    for neighbor in world.neighbors_of(agent):
        if rng.random() < params.interaction_prob:
            agent.pool.add(neighbor.genome, neighbor.fitness.overall)
    return agent.pool


# ---------------------------------------------------------------- act phase

def act(agent: EvolvingAgent, params: EvolutionParams, grammar: Grammar,
        rng: Random) -> list[Candidate] | None:
    """Run selection, crossover, and mutation once the pool is large enough.

    Selection keeps the top fraction of the pool by stored donor fitness;
    one uniformly chosen pair of survivors is crossed over and mutated,
    yielding two offspring candidates. Returns None when the pool has not
    exceeded the storage threshold. The pool is cleared afterwards.
    """
    if len(agent.pool) <= params.storage_threshold:
        return None
    entries = list(agent.pool.entries)
    entries.append((agent.genome, agent.fitness.overall))  # own genome eligible
    entries.sort(key=lambda e: e[1], reverse=True)
    keep = max(2, math.ceil(len(entries) * params.truncation_fraction))
    survivors = entries[:keep]
    i = rng.randrange(len(survivors))
    j = rng.randrange(len(survivors) - 1)
    if j >= i:
        j += 1
    (g1, f1), (g2, f2) = survivors[i], survivors[j]
    donor_estimate = (f1 + f2) / 2.0

    vocab = grammar.behavior_vocabulary()
    candidates: list[Candidate] = []
    for child in crossover(g1, g2, params, rng):
        child = mutate(child, params, rng)
        try:
            expr = map_genotype(child, grammar, params.max_tree_depth,
                                params.max_wraps)
        except MappingError:
            candidates.append(Candidate(child, None, 0.0, float("-inf")))
            continue
        div = _diversity_from_text(expr.text, vocab)
        candidates.append(Candidate(child, expr, div, div + donor_estimate))
    agent.pool.clear()
    return candidates


# ------------------------------------------------------------- update phase

def best_candidate(candidates: list[Candidate]) -> Candidate:
    """Argmax by score; ties keep the earliest candidate."""
    best = candidates[0]
    for c in candidates[1:]:
        if c.score > best.score:
            best = c
    return best


def update(agent: EvolvingAgent, candidates: list[Candidate] | None) -> bool:
    """Adopt the best candidate iff it strictly beats the incumbent score.

    The incumbent competes with its own diversity plus blended fitness, the
    same additive scale the candidates carry. Returns True on adoption.
    """
    if not candidates:
        return False
    best = best_candidate(candidates)
    if best.expr is None:
        return False
    incumbent_score = agent.fitness.diversity + agent.fitness.overall
    if best.score <= incumbent_score:
        return False
    agent.genome = best.genome
    agent.expr = best.expr
    agent.tree = build_tree(best.expr)
    agent.fitness.diversity = best.diversity
    return True


# ------------------------------------------------------------- step drivers

def learning_step(world: World, members: list[EvolvingAgent],
                  params: EvolutionParams, grammar: Grammar, rng: Random):
    """One full learning step: tick, fitness, sense, act, update."""
    world.rebuild_agent_index()
    for m in members:
        if not m.alive:
            continue
        _, trace = btree.tick(m.tree, m, world, rng)
        record_step_fitness(m, trace, world, params)
    for m in members:
        if m.alive:
            sense(m, world, params, rng)
    produced: list[tuple[EvolvingAgent, list[Candidate] | None]] = []
    for m in members:
        if m.alive:
            produced.append((m, act(m, params, grammar, rng)))
    for m, candidates in produced:
        update(m, candidates)


def tick_step(world: World, members: list[EvolvingAgent], rng: Random):
    """One test-mode step: controllers stay frozen, only ticks run."""
    for m in members:
        if m.alive:
            btree.tick(m.tree, m, world, rng)
