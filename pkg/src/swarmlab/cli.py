"""Command-line entry point: learn, test, sweep, inspect, plotdata.

Every run writes a manifest capturing the fully resolved configuration and
tool version; rerunning from a manifest reproduces the output files
byte-for-byte. Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path
from random import Random

from . import __version__
from .btree import build_tree, count_ppa_subtrees, unique_behavior_nodes
from .evolution import EvolutionParams
from .experiments import (
    Archive,
    BETR_CONDITION,
    FITNESS_LABELS,
    LEARNING,
    SERIES_COLUMNS,
    SWEEP_COLUMNS,
    TEST,
    TrialSpec,
    VARIANTS,
    build_blended,
    build_homogeneous,
    build_top_n,
    condition_matrix,
    derive_seed,
    parse_condition,
    run_learning,
    run_test,
)
from .world import FORAGING, NEST_MAINTENANCE, TASKS, WorldConfig

__all__ = ["main"]


class ConfigError(Exception):
    """Bad configuration, file, or flag; exits with code 1."""


# Table-1 defaults; the desk preset is the acceptance-suite scale.
PRESETS = {
    "default": {},
    "desk": {"evolution.population": "50", "evolution.learning_steps": "3000"},
    "paper": {"evolution.population": "100", "evolution.learning_steps": "12000"},
}

_EVOLUTION_FIELDS = {
    "storage_threshold": int,
    "interaction_prob": float,
    "mutation_prob": float,
    "crossover_prob": float,
    "max_tree_depth": int,
    "population": int,
    "learning_steps": int,
    "beta": float,
    "genome_length": int,
    "codon_bits": int,
    "max_wraps": int,
    "truncation_fraction": float,
    "max_genome_length": int,
}

_WORLD_FIELDS = {
    "grid_half_extent": int,
    "hub_radius": float,
    "site_radius": float,
    "site_distance": float,
    "boundary_radius": float,
    "agent_speed": int,
    "perception_range": int,
}


def load_config(path: str | None, overrides: list[str], preset: str) -> dict:
    """Resolve defaults <- preset <- config file <- --override flags."""
    values: dict[str, str] = {}
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
    values.update(PRESETS[preset])
    if path is not None:
        cfg_path = Path(path)
        if not cfg_path.exists():
            raise ConfigError(f"config file not found: {cfg_path}")
        parser = configparser.ConfigParser()
        try:
            parser.read(cfg_path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config {cfg_path}: {exc}") from exc
        for section in parser.sections():
            for key, val in parser.items(section):
                values[f"{section}.{key}"] = val
    for item in overrides:
        key, sep, val = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        values[key.strip()] = val.strip()
    return values


def _typed(values: dict, fields: dict, section: str) -> dict:
    out = {}
    for key, cast in fields.items():
        raw = values.get(f"{section}.{key}")
        if raw is None:
            continue
        try:
            out[key] = cast(raw)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: {exc}") from exc
    return out


def params_from_config(values: dict) -> EvolutionParams:
    try:
        params = EvolutionParams(**_typed(values, _EVOLUTION_FIELDS, "evolution"))
        params.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return params


def world_from_config(values: dict) -> WorldConfig:
    try:
        return WorldConfig(**_typed(values, _WORLD_FIELDS, "world"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _resolved_config(params: EvolutionParams, world: WorldConfig, run: dict) -> dict:
    evo = asdict(params)
    evo["fitness_mode"] = sorted(params.fitness_mode)
    return {"evolution": evo, "world": asdict(world), "run": run}


def _write_manifest(out_dir: Path, command: str, config: dict):
    manifest = {"tool": "swarmlab", "version": __version__,
                "command": command, "config": config}
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_manifest(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"manifest not found: {p}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse manifest {p}: {exc}") from exc


def _params_from_manifest(manifest: dict) -> tuple[EvolutionParams, WorldConfig, dict]:
    cfg = manifest.get("config", {})
    evo = dict(cfg.get("evolution", {}))
    evo["fitness_mode"] = frozenset(evo.get("fitness_mode", []))
    world = cfg.get("world", {})
    world = {k: v for k, v in world.items()}
    world.pop("object_count", None)
    world.pop("obstacles", None)
    world.pop("traps", None)
    world.pop("ppa_primitives", None)
    try:
        params = EvolutionParams(**evo)
        params.validate()
        wcfg = WorldConfig(**world)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad manifest config: {exc}") from exc
    return params, wcfg, dict(cfg.get("run", {}))


def write_series_csv(path: Path, series):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(SERIES_COLUMNS) + "\n")
        for step, mean_f, max_f, perf, alive in series:
            fh.write(f"{step},{mean_f:.6f},{max_f:.6f},{perf:.6f},{alive}\n")


def write_sweep_csv(path: Path, results):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for r in results:
            for step, mean_f, _max_f, perf, alive in r.series:
                fh.write(f"{r.task},{r.condition},{r.seed},{step},"
                         f"{perf:.6f},{mean_f:.6f},{alive}\n")


def _render_tree(node, prefix="", is_last=True) -> list[str]:
    if node.kind in ("Condition", "Action"):
        label = f"[{node.tag_role or node.kind}] {node.name}"
    else:
        label = f"[{node.kind}]"
    connector = "" if prefix == "" and is_last else ("`- " if is_last else "|- ")
    lines = [prefix + connector + label]
    child_prefix = prefix + ("   " if is_last else "|  ") if connector else ""
    for i, child in enumerate(node.children):
        lines.extend(_render_tree(child, child_prefix, i == len(node.children) - 1))
    return lines


# ------------------------------------------------------------- subcommands

def _cmd_learn(args) -> int:
    if args.from_manifest:
        manifest = _load_manifest(args.from_manifest)
        params, world, run = _params_from_manifest(manifest)
        task = run.get("task", FORAGING)
        condition = run.get("condition", BETR_CONDITION)
        seed = int(run.get("seed", 0))
        grammar_path = run.get("grammar")
    else:
        values = load_config(args.config, args.override, args.preset)
        params = params_from_config(values)
        world = world_from_config(values)
        task = args.task or values.get("run.task", FORAGING)
        condition = args.condition or values.get("run.condition", BETR_CONDITION)
        seed = args.seed if args.seed is not None else int(values.get("run.seed", 0))
        grammar_path = args.grammar or values.get("run.grammar")
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; known: {list(TASKS)}")
    try:
        parse_condition(condition)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if grammar_path is not None and not Path(grammar_path).exists():
        raise ConfigError(f"grammar file not found: {grammar_path}")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = TrialSpec(task=task, mode=LEARNING, params=params, world=world,
                     seed=seed, condition=condition, grammar_path=grammar_path)
    result, archive = run_learning(spec)
    write_series_csv(out_dir / "series.csv", result.series)
    archive.save(out_dir / "archive")
    run_cfg = {"task": task, "condition": condition, "seed": seed,
               "grammar": grammar_path}
    _write_manifest(out_dir, "learn", _resolved_config(spec.params, world, run_cfg))
    print(f"final_performance={result.final_performance:.6f} "
          f"success={result.success} archive={out_dir / 'archive'}")
    return 0


def _cmd_test(args) -> int:
    values = load_config(args.config, args.override, args.preset)
    params = params_from_config(values)
    world = world_from_config(values)
    archive = Archive.load(args.archive)
    task = args.task or archive.meta.get("task", FORAGING)
    condition = args.condition or archive.meta.get("condition", BETR_CONDITION)
    seed = args.seed if args.seed is not None else 0
    population = archive.meta.get("population", len(archive))
    params = replace(params, population=population)

    rng = Random(derive_seed(seed, 97))
    if args.population_type == "archive":
        trees = [build_tree(e.tree_text) for e in archive.entries]
    elif args.population_type == "homogeneous":
        trees = build_homogeneous(archive, population)
    elif args.population_type == "top":
        trees = build_top_n(archive, args.fraction, population)
    else:
        trees = build_blended(archive, args.fraction, rng, population)

    spec = TrialSpec(task=task, mode=TEST, params=params, world=world,
                     seed=seed, condition=condition, test_steps=args.steps)
    result = run_test(trees, spec)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_series_csv(out_dir / "test_series.csv", result.series)
    record = {
        "task": task,
        "condition": condition,
        "population_type": args.population_type,
        "fraction": args.fraction,
        "archive": str(args.archive),
        "archive_seed": archive.meta.get("seed"),
        "test_seed": seed,
        "final_performance": result.final_performance,
        "success": result.success,
    }
    (out_dir / "test_result.json").write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    run_cfg = {"task": task, "condition": condition, "seed": seed,
               "population_type": args.population_type, "fraction": args.fraction}
    _write_manifest(out_dir, "test", _resolved_config(params, world, run_cfg))
    print(f"final_performance={result.final_performance:.6f} success={result.success}")
    return 0


def _cmd_sweep(args) -> int:
    values = load_config(args.config, args.override, args.preset)
    params = params_from_config(values)
    world = world_from_config(values)
    tasks = args.task or values.get("run.tasks", FORAGING)
    if isinstance(tasks, str):
        tasks = [t.strip() for t in tasks.split(",") if t.strip()]
    for t in tasks:
        if t not in TASKS:
            raise ConfigError(f"unknown task {t!r}; known: {list(TASKS)}")
    conditions = args.condition or values.get(
        "run.conditions",
        "PB:D+E+adhoc,BeTr-PB:D+E+adhoc," + BETR_CONDITION,
    )
    if isinstance(conditions, str):
        conditions = [c.strip() for c in conditions.split(",") if c.strip()]
    for c in conditions:
        try:
            parse_condition(c)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    master = args.seed if args.seed is not None else int(values.get("run.seed", 0))
    trials = args.trials if args.trials is not None else int(values.get("run.trials", 8))
    if trials < 1:
        raise ConfigError("--trials must be >= 1")
    seeds = [derive_seed(master, i) for i in range(trials)]

    results, summary = condition_matrix(tasks, conditions, seeds, params, world,
                                        workers=args.workers)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(out_dir / "results.csv", results)
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    run_cfg = {"tasks": tasks, "conditions": conditions, "seed": master,
               "trials": trials, "workers": args.workers}
    _write_manifest(out_dir, "sweep", _resolved_config(params, world, run_cfg))
    for key, stats in sorted(summary.items()):
        print(f"{key}: median={stats['median']:.4f} "
              f"success_rate={stats['success_rate']:.3f}")
    return 0


def _cmd_inspect(args) -> int:
    path = Path(args.tree)
    if not path.exists():
        raise ConfigError(f"tree file not found: {path}")
    text = path.read_text(encoding="utf-8").strip()
    tree = build_tree(text)
    for line in _render_tree(tree):
        print(line)
    print(f"PPA subtrees: {count_ppa_subtrees(tree)}")
    print(f"Unique behaviors: {unique_behavior_nodes(tree)}")
    return 0


def _cmd_plotdata(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.kind in ("fig2a", "fig2b"):
        if not args.results:
            raise ConfigError(f"--results is required for {args.kind}")
        results_path = Path(args.results)
        if not results_path.exists():
            raise ConfigError(f"results file not found: {results_path}")
        task = FORAGING if args.kind == "fig2a" else NEST_MAINTENANCE
        finals: dict[tuple[str, str], float] = {}
        with open(results_path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            if header != list(SWEEP_COLUMNS):
                raise ConfigError(f"unexpected results schema: {header}")
            for line in fh:
                row = line.rstrip("\n").split(",")
                if row[0] != task:
                    continue
                finals[(row[1], row[2])] = float(row[4])  # last step wins
        out_path = out_dir / f"{args.kind}.csv"
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write("condition,seed,final_performance\n")
            for (cond, seed), perf in sorted(finals.items()):
                fh.write(f"{cond},{seed},{perf:.6f}\n")
        print(out_path)
    else:  # fig3
        if not args.tests:
            raise ConfigError("--tests is required for fig3")
        rows = []
        for path in sorted(Path().glob(args.tests)):
            rec = json.loads(Path(path).read_text(encoding="utf-8"))
            rows.append(rec)
        if not rows:
            raise ConfigError(f"no test_result.json files match {args.tests!r}")
        out_path = out_dir / "fig3.csv"
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write("task,population_type,fraction,archive_seed,test_seed,"
                     "final_performance\n")
            for rec in rows:
                fh.write(
                    f"{rec['task']},{rec['population_type']},"
                    f"{rec['fraction']},{rec['archive_seed']},"
                    f"{rec['test_seed']},{rec['final_performance']:.6f}\n"
                )
        print(out_path)
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmlab",
        description="Evolve PPA behavior-tree swarms and reproduce the "
                    "learning/fixed-population experiments.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key-value .cfg file")
        p.add_argument("--preset", default="default",
                       choices=sorted(PRESETS), help="parameter preset")
        p.add_argument("--override", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="config override")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out", help="output directory")

    p_learn = sub.add_parser("learn", help="run one learning trial")
    common(p_learn)
    p_learn.add_argument("--task", choices=TASKS)
    p_learn.add_argument("--condition", help="variant:fitness label")
    p_learn.add_argument("--grammar", help="custom .bnf grammar file")
    p_learn.add_argument("--from-manifest", help="rerun a recorded trial")
    p_learn.set_defaults(func=_cmd_learn)

    p_test = sub.add_parser("test", help="replay an archive without evolution")
    common(p_test)
    p_test.add_argument("--archive", required=True, help="archive directory")
    p_test.add_argument("--task", choices=TASKS)
    p_test.add_argument("--condition")
    p_test.add_argument("--population-type", default="archive",
                        choices=("archive", "homogeneous", "top", "blend"))
    p_test.add_argument("--fraction", type=float, default=0.5,
                        help="top fraction for top/blend populations")
    p_test.add_argument("--steps", type=int, default=None,
                        help="test duration (default: learning_steps)")
    p_test.set_defaults(func=_cmd_test)

    p_sweep = sub.add_parser("sweep", help="run a condition matrix")
    common(p_sweep)
    p_sweep.add_argument("--task", action="append",
                         help="repeatable; default Foraging")
    p_sweep.add_argument("--condition", action="append",
                         help="repeatable; default the three Fig-2 arms")
    p_sweep.add_argument("--trials", type=int, default=None,
                         help="seeds per condition")
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_inspect = sub.add_parser("inspect", help="pretty-print a serialized tree")
    p_inspect.add_argument("tree", help="path to a .bt file")
    p_inspect.set_defaults(func=_cmd_inspect)

    p_plot = sub.add_parser("plotdata", help="emit per-figure data files")
    p_plot.add_argument("--kind", required=True,
                        choices=("fig2a", "fig2b", "fig3"))
    p_plot.add_argument("--results", help="sweep results.csv (fig2a/fig2b)")
    p_plot.add_argument("--tests", help="glob of test_result.json files (fig3)")
    p_plot.add_argument("--out", default="out")
    p_plot.set_defaults(func=_cmd_plotdata)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"swarmlab: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures map to exit code 2
        print(f"swarmlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
