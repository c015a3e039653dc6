"""Trial orchestration: learning/test runs, fixed populations, sweeps.

Trials are embarrassingly parallel; per-trial seeds derive from a master seed
through SplitMix64 so a sweep is reproducible for any worker count. A trial
is a pure function of its TrialSpec.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from random import Random

import numpy as np

from . import evolution
from .btree import BTNode, blend_agents, build_tree, count_ppa_subtrees, serialize
from .evolution import (
    ADHOC_MODES,
    BETR_MODES,
    MODE_DIVERSITY,
    MODE_EXPLORATION,
    EvolutionParams,
    EvolvingAgent,
    learning_step,
    tick_step,
)
from .grammar import Grammar, load_builtin, load_grammar, map_genotype, random_genome
from .world import Agent, WorldConfig, WorldError, init_world

__all__ = [
    "LEARNING",
    "TEST",
    "SUCCESS_THRESHOLD",
    "VARIANTS",
    "FITNESS_LABELS",
    "BETR_CONDITION",
    "ConditionSpec",
    "parse_condition",
    "TrialSpec",
    "TrialResult",
    "ArchiveEntry",
    "Archive",
    "run_learning",
    "run_test",
    "build_homogeneous",
    "build_top_n",
    "build_blended",
    "condition_matrix",
    "ppa_histogram",
    "derive_seed",
    "SERIES_COLUMNS",
    "SWEEP_COLUMNS",
]

LEARNING = "Learning"
TEST = "Test"
SUCCESS_THRESHOLD = 0.8

# variant label -> (primitive style, grammar name)
VARIANTS = {
    "PB": ("nominal", "nominal"),
    "BeTr-PB": ("ppa", "nominal"),
    "BeTr-PB+PPA-grammar": ("ppa", "ppa"),
}

FITNESS_LABELS = {
    "D": frozenset({MODE_DIVERSITY}),
    "D+E": frozenset({MODE_DIVERSITY, MODE_EXPLORATION}),
    "D+E+adhoc": ADHOC_MODES,
    "D+E+BT": BETR_MODES,
}

BETR_CONDITION = "BeTr-PB+PPA-grammar:D+E+BT"

SERIES_COLUMNS = ("step", "mean_fitness", "max_fitness", "performance", "alive")
SWEEP_COLUMNS = ("task", "condition", "seed", "step", "performance",
                 "mean_fitness", "alive")


@dataclass(frozen=True)
class ConditionSpec:
    """Ablation cell: primitive-behavior variant x grammar x fitness modes."""

    label: str
    primitives: str  # "ppa" | "nominal"
    grammar: str  # "ppa" | "nominal"
    fitness: frozenset[str]


def parse_condition(label: str) -> ConditionSpec:
    variant, sep, fitness = label.partition(":")
    if not sep:
        fitness = "D+E+BT"
    if variant not in VARIANTS:
        raise ValueError(
            f"unknown condition variant {variant!r}; known: {sorted(VARIANTS)}"
        )
    if fitness not in FITNESS_LABELS:
        raise ValueError(
            f"unknown fitness label {fitness!r}; known: {sorted(FITNESS_LABELS)}"
        )
    primitives, grammar = VARIANTS[variant]
    return ConditionSpec(f"{variant}:{fitness}", primitives, grammar,
                         FITNESS_LABELS[fitness])


@dataclass(frozen=True)
class TrialSpec:
    task: str
    mode: str = LEARNING
    params: EvolutionParams = field(default_factory=EvolutionParams)
    world: WorldConfig = field(default_factory=WorldConfig)
    seed: int = 0
    condition: str = BETR_CONDITION
    test_steps: int | None = None  # None: same as learning_steps
    grammar_path: str | None = None  # None: the condition's builtin grammar

    def validate(self):
        if self.mode not in (LEARNING, TEST):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.params.validate()
        parse_condition(self.condition)


@dataclass
class TrialResult:
    task: str
    condition: str
    seed: int
    final_performance: float
    success: bool
    series: list[tuple[int, float, float, float, int]]
    ppa_histogram: dict[int, int]

    @classmethod
    def from_series(cls, task, condition, seed, series, histogram=None):
        perf = series[-1][3] if series else 0.0
        return cls(task, condition, seed, perf, perf > SUCCESS_THRESHOLD,
                   series, histogram or {})


@dataclass
class ArchiveEntry:
    agent_id: int
    tree_text: str
    fitness: float
    diversity: float
    genome: tuple[int, ...]


class Archive:
    """Final population: serialized trees plus a JSON manifest of fitness."""

    def __init__(self, entries: list[ArchiveEntry], meta: dict | None = None):
        self.entries = entries
        self.meta = meta or {}

    def __len__(self):
        return len(self.entries)

    def save(self, path):
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        manifest = {
            "meta": self.meta,
            "agents": [
                {
                    "id": e.agent_id,
                    "tree": f"agent_{e.agent_id:03d}.bt",
                    "fitness": e.fitness,
                    "diversity": e.diversity,
                    "genome": list(e.genome),
                }
                for e in self.entries
            ],
        }
        for e in self.entries:
            (path / f"agent_{e.agent_id:03d}.bt").write_text(
                e.tree_text + "\n", encoding="utf-8"
            )
        (path / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
        entries = []
        for rec in manifest["agents"]:
            text = (path / rec["tree"]).read_text(encoding="utf-8").strip()
            entries.append(
                ArchiveEntry(rec["id"], text, rec["fitness"],
                             rec.get("diversity", 0.0),
                             tuple(rec.get("genome", ())))
            )
        return cls(entries, manifest.get("meta", {}))


_GRAMMAR_CACHE: dict[str, Grammar] = {}


def condition_grammar(name: str) -> Grammar:
    if name not in _GRAMMAR_CACHE:
        _GRAMMAR_CACHE[name] = load_builtin(name)
    return _GRAMMAR_CACHE[name]


def derive_seed(master: int, *indices: int) -> int:
    """SplitMix64-derived child seed; stable across platforms and workers."""
    mask = (1 << 64) - 1
    x = (master ^ 0x9E3779B97F4A7C15) & mask
    for idx in indices:
        x = (x + 0x9E3779B97F4A7C15 * (idx + 1)) & mask
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        x = z ^ (z >> 31)
    return x


# ------------------------------------------------------------ learning runs

def _make_members(spec: TrialSpec, grammar: Grammar, rng: Random):
    params = spec.params
    cond = parse_condition(spec.condition)
    world_cfg = replace(
        spec.world,
        object_count=(spec.world.object_count
                      if spec.world.object_count is not None
                      else params.population),
        ppa_primitives=cond.primitives == "ppa",
    )

    def factory(agent_id, position):
        genome = random_genome(params.genome_length, rng, params.codon_bits)
        expr = map_genotype(genome, grammar, params.max_tree_depth,
                            params.max_wraps)
        tree = build_tree(expr)
        diversity = evolution.diversity_fitness(tree, grammar)
        return EvolvingAgent(agent_id, position, genome, expr, tree, diversity)

    world = init_world(world_cfg, spec.task, rng, params.population, factory)
    return world, world.agents


def run_learning(spec: TrialSpec) -> tuple[TrialResult, Archive]:
    """Run one learning trial and archive its final population."""
    spec.validate()
    if spec.mode != LEARNING:
        raise ValueError("run_learning needs a Learning-mode spec")
    cond = parse_condition(spec.condition)
    params = replace(spec.params, fitness_mode=cond.fitness)
    spec = replace(spec, params=params)
    if spec.grammar_path is not None:
        grammar = load_grammar(spec.grammar_path)
    else:
        grammar = condition_grammar(cond.grammar)
    rng = Random(spec.seed)
    world, members = _make_members(spec, grammar, rng)

    series = []
    for step in range(1, params.learning_steps + 1):
        learning_step(world, members, params, grammar, rng)
        series.append(_series_row(step, world, members))

    histogram = dict(Counter(count_ppa_subtrees(m.tree) for m in members))
    result = TrialResult.from_series(spec.task, spec.condition, spec.seed,
                                     series, histogram)
    entries = [
        ArchiveEntry(m.id, serialize(m.tree), m.fitness.overall,
                     m.fitness.diversity, m.genome.codons)
        for m in members
    ]
    meta = {
        "task": spec.task,
        "condition": spec.condition,
        "seed": spec.seed,
        "population": params.population,
        "learning_steps": params.learning_steps,
        "final_performance": result.final_performance,
    }
    return result, Archive(entries, meta)


def _series_row(step, world, members):
    alive = 0
    total = 0.0
    best = float("-inf")
    for m in members:
        if m.alive:
            alive += 1
            f = m.fitness.overall
            total += f
            if f > best:
                best = f
    mean = total / alive if alive else 0.0
    if alive == 0:
        best = 0.0
    return (step, mean, best, world.task_performance(), alive)


# ---------------------------------------------------------------- test runs

class FixedAgent(Agent):
    """Static controller carrier for test simulations."""

    __slots__ = ("tree",)

    def __init__(self, agent_id, position):
        super().__init__(agent_id, position)
        self.tree = None


def run_test(archive, spec: TrialSpec) -> TrialResult:
    """Replay frozen controllers in a re-randomized world (no evolution)."""
    spec.validate()
    if isinstance(archive, Archive):
        if not len(archive):
            raise ValueError("archive is empty")
        trees = [build_tree(e.tree_text) for e in archive.entries]
    else:
        trees = list(archive)
        if not trees:
            raise ValueError("population is empty")
    if len(trees) != spec.params.population:
        raise ValueError(
            f"population size mismatch: archive has {len(trees)}, "
            f"spec wants {spec.params.population}"
        )
    cond = parse_condition(spec.condition)
    rng = Random(spec.seed)
    world_cfg = replace(
        spec.world,
        object_count=(spec.world.object_count
                      if spec.world.object_count is not None
                      else spec.params.population),
        ppa_primitives=cond.primitives == "ppa",
    )
    world = init_world(world_cfg, spec.task, rng, spec.params.population,
                       FixedAgent)
    for agent, tree in zip(world.agents, trees):
        agent.tree = tree

    steps = spec.test_steps if spec.test_steps is not None else spec.params.learning_steps
    series = []
    for step in range(1, steps + 1):
        tick_step(world, world.agents, rng)
        alive = sum(1 for a in world.agents if a.alive)
        series.append((step, 0.0, 0.0, world.task_performance(), alive))
    return TrialResult.from_series(spec.task, spec.condition, spec.seed, series)


# ------------------------------------------------------- fixed populations

def _ranked_entries(archive: Archive) -> list[ArchiveEntry]:
    if not len(archive):
        raise ValueError("archive is empty")
    return sorted(archive.entries, key=lambda e: (-e.fitness, e.agent_id))


def build_homogeneous(archive: Archive, population: int | None = None) -> list[BTNode]:
    """Clone the fittest agent's tree across the whole population."""
    best = _ranked_entries(archive)[0]
    n = population if population is not None else len(archive)
    tree = build_tree(best.tree_text)
    return [tree] * n


def _top_fraction(archive: Archive, n: float) -> list[BTNode]:
    if not 0.0 < n <= 1.0:
        raise ValueError(f"top fraction must lie in (0, 1], got {n}")
    ranked = _ranked_entries(archive)
    k = math.ceil(len(ranked) * n)
    return [build_tree(e.tree_text) for e in ranked[:k]]


def build_top_n(archive: Archive, n: float, population: int | None = None) -> list[BTNode]:
    """Clone the top n fraction round-robin to the full population size."""
    top = _top_fraction(archive, n)
    size = population if population is not None else len(archive)
    return [top[i % len(top)] for i in range(size)]


def build_blended(archive: Archive, n: float, rng: Random,
                  population: int | None = None) -> list[BTNode]:
    """Give every agent a parallel blend of the top-n trees, order shuffled
    independently per agent."""
    top = _top_fraction(archive, n)
    size = population if population is not None else len(archive)
    return [blend_agents(top, rng) for _ in range(size)]


# ------------------------------------------------------------------ sweeps

def _learning_worker(spec: TrialSpec):
    return run_learning(spec)


def condition_matrix(tasks, conditions, seeds, params: EvolutionParams,
                     world_config: WorldConfig | None = None,
                     workers: int = 1, keep_archives: bool = False):
    """Run the full (task x condition x seed) grid of learning trials.

    Returns (results, summary) where summary holds per-(task, condition)
    box statistics of final performance, Tukey convention.
    """
    tasks = list(tasks)
    conditions = list(conditions)
    seeds = list(seeds)
    if not tasks or not conditions or not seeds:
        raise ValueError("tasks, conditions, and seeds must all be non-empty")
    world_config = world_config or WorldConfig()
    specs = [
        TrialSpec(task=task, mode=LEARNING, params=params, world=world_config,
                  seed=seed, condition=cond)
        for task in tasks
        for cond in conditions
        for seed in seeds
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_learning_worker, specs))
    else:
        outcomes = [run_learning(s) for s in specs]
    results = [r for r, _ in outcomes]
    archives = [a for _, a in outcomes] if keep_archives else None

    summary = {}
    for task in tasks:
        for cond in conditions:
            finals = [r.final_performance for r in results
                      if r.task == task and r.condition == cond]
            summary[f"{task}/{cond}"] = box_stats(finals)
            summary[f"{task}/{cond}"]["success_rate"] = (
                sum(1 for r in results
                    if r.task == task and r.condition == cond and r.success)
                / len(finals)
            )
    return (results, summary, archives) if keep_archives else (results, summary)


def box_stats(values) -> dict:
    """Tukey box statistics (1.5 IQR whiskers)."""
    arr = np.asarray(sorted(values), dtype=float)
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = arr[(arr >= lo_fence) & (arr <= hi_fence)]
    whisk_lo = float(inside.min()) if inside.size else float(arr.min())
    whisk_hi = float(inside.max()) if inside.size else float(arr.max())
    return {
        "n": int(arr.size),
        "min": float(arr.min()),
        "whisker_low": whisk_lo,
        "q1": float(q1),
        "median": float(med),
        "q3": float(q3),
        "whisker_high": whisk_hi,
        "max": float(arr.max()),
    }


def ppa_histogram(archives) -> dict[int, int]:
    """Distribution of PPA-subtree counts over distinct evolved programs."""
    archives = list(archives)
    if not archives:
        raise ValueError("need at least one archive")
    distinct: set[str] = set()
    for archive in archives:
        for e in archive.entries:
            distinct.add(e.tree_text)
    return dict(Counter(count_ppa_subtrees(build_tree(t)) for t in distinct))
