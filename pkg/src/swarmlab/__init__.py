"""Grammatical-evolution laboratory for behavior-tree swarms on a grid world."""

__version__ = "0.1.0"

from .btree import (
    BTNode,
    TickStatus,
    TickTrace,
    blend_agents,
    build_tree,
    count_ppa_subtrees,
    make_ppa,
    serialize,
    tick,
    unique_behavior_nodes,
)
from .evolution import EvolutionParams, EvolvingAgent, FitnessRecord
from .grammar import (
    Genome,
    Grammar,
    GrammarError,
    MappingError,
    PhenotypeExpr,
    load_builtin,
    load_grammar,
    map_genotype,
    parse_grammar,
    random_genome,
)
from .world import Task, World, WorldConfig, init_world

__all__ = [
    "__version__",
    "BTNode",
    "TickStatus",
    "TickTrace",
    "blend_agents",
    "build_tree",
    "count_ppa_subtrees",
    "make_ppa",
    "serialize",
    "tick",
    "unique_behavior_nodes",
    "EvolutionParams",
    "EvolvingAgent",
    "FitnessRecord",
    "Genome",
    "Grammar",
    "GrammarError",
    "MappingError",
    "PhenotypeExpr",
    "load_builtin",
    "load_grammar",
    "map_genotype",
    "parse_grammar",
    "random_genome",
    "Task",
    "World",
    "WorldConfig",
    "init_world",
]
