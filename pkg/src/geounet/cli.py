"""Command-line entry point: ``geounet <subcommand> [options]``.

Exit codes: 0 success, 1 a checked property failed or an input file is
missing/unreadable, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

__all__ = ["main", "build_parser"]


def _globals(suppress: bool) -> argparse.ArgumentParser:
    # Sub-commands re-declare the global flags without defaults so a value
    # given before the sub-command name is not overwritten.
    dflt = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=dflt(0), help="base random seed")
    common.add_argument("--out", type=Path, default=dflt(Path(".")), help="output directory")
    common.add_argument("--config", type=Path, default=dflt(None), help="JSON file of option overrides")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _globals(suppress=True)
    p = argparse.ArgumentParser(prog="geounet", description="Geometric graph U-Net toolkit", parents=[_globals(False)])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    c = sub.add_parser("chains", parents=[common], help="k-chain discrimination table (CSV)")
    c.add_argument("--k", type=int, default=4)
    c.add_argument("--seeds", type=int, default=10)
    c.add_argument("--epochs", type=int, default=200)
    c.add_argument("--workers", type=int, default=1)

    e = sub.add_parser("equivariance", parents=[common], help="symmetry and gradient property suite (JSON)")
    e.add_argument("--motions", type=int, default=20)
    e.add_argument("--grad-points", type=int, default=20)

    x = sub.add_parser("expressivity", parents=[common], help="pooling expressivity census (JSON)")
    x.add_argument("--trials", type=int, default=1000, help="distinguishable pairs to check")
    x.add_argument("--pool-kind", choices=("sparse", "point"), default="sparse")
    x.add_argument("--k", type=int, default=4)

    co = sub.add_parser("coarsen", parents=[common], help="structural coarsening of a CA trace (JSON)")
    co.add_argument("file", type=Path)
    co.add_argument("--levels", type=int, default=3)
    co.add_argument("--pool-kind", choices=("sparse", "point"), default="sparse")
    co.add_argument("--ratio", type=float, default=0.6)

    t = sub.add_parser("train-synthetic", parents=[common], help="U-Net vs flat baseline on motif data (CSV)")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--seeds", type=int, default=3)
    t.add_argument("--pool-kind", choices=("sparse", "point"), default="sparse")
    return p


def _overrides(args) -> dict:
    if args.config is None:
        return {}
    try:
        blob = json.loads(args.config.read_text())
    except FileNotFoundError:
        raise _Fail(f"config file not found: {args.config}")
    except json.JSONDecodeError as exc:
        raise _Fail(f"config file is not valid JSON: {exc}")
    if not isinstance(blob, dict):
        raise _Fail("config file must hold a JSON object")
    return blob


class _Fail(Exception):
    pass


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _cmd_chains(args, extra) -> int:
    from .chains import config_echo, default_grid, run_table

    opts = {"seeds": args.seeds, "epochs": args.epochs, "seed_base": args.seed, **extra}
    k = opts.pop("k", args.k)
    configs = default_grid(k, **opts)
    text, rows = run_table(configs, workers=args.workers)
    _write(args.out, "table.csv", text)
    _write(args.out, "config.json", config_echo(rows))
    print(text, end="")
    return 0


def _cmd_equivariance(args, extra) -> int:
    from .properties import equivariance_suite, gradient_check

    eq = equivariance_suite(args.seed, extra.get("motions", args.motions))
    gr = gradient_check(args.seed, extra.get("grad_points", args.grad_points))
    gr = {k: v for k, v in gr.items() if k != "probes"}
    report = {"equivariance": eq, "gradients": gr, "passed": eq["passed"] and gr["passed"]}
    _write(args.out, "equivariance.json", json.dumps(report, indent=2))
    print(json.dumps(report, indent=2))
    return 0 if report["passed"] else 1


def _cmd_expressivity(args, extra) -> int:
    from .gwl import demonstrate_increase, empirical_maintains

    census = empirical_maintains(extra.get("pool_kind", args.pool_kind), extra.get("trials", args.trials), args.seed)
    demo = demonstrate_increase(extra.get("k", args.k))
    report = {"maintains": census, "increase": demo, "violations": census["violation_count"]}
    report["passed"] = census["violation_count"] == 0 or census["pool_kind"] != "sparse"
    _write(args.out, "expressivity.json", json.dumps(report, indent=2))
    print(json.dumps({k: v for k, v in report.items() if k != "maintains"} | {"checked": census["checked"]}, indent=2))
    return 0 if report["passed"] else 1


def _cmd_coarsen(args, extra) -> int:
    from .protein import build_residue_graph, coarsen_hierarchy, hierarchy_to_json, parse_ca_structure

    try:
        text = args.file.read_text()
    except FileNotFoundError:
        raise _Fail(f"file not found: {args.file}")
    except OSError as exc:
        raise _Fail(f"cannot read {args.file}: {exc}")
    try:
        g = build_residue_graph(parse_ca_structure(text))
    except ValueError as exc:
        raise _Fail(f"{args.file}: {exc}")
    levels = coarsen_hierarchy(
        g, extra.get("levels", args.levels), extra.get("pool_kind", args.pool_kind), extra.get("ratio", args.ratio)
    )
    out = _write(args.out, f"{args.file.stem}.hierarchy.json", hierarchy_to_json(levels))
    sizes = [lvl["graph"].num_nodes for lvl in levels if "graph" in lvl]
    print(json.dumps({"input_nodes": g.num_nodes, "level_sizes": sizes, "output": str(out)}))
    return 0


def _cmd_train_synthetic(args, extra) -> int:
    from .synthetic import SyntheticConfig, compare_models

    fields = {f.name for f in dataclasses.fields(SyntheticConfig)}
    unknown = set(extra) - fields
    if unknown:
        raise _Fail(f"unknown config keys: {sorted(unknown)}")
    opts = {"epochs": args.epochs, "pool_kind": args.pool_kind,
            "seeds": tuple(range(args.seed, args.seed + args.seeds)), **extra}
    if "seeds" in extra:
        opts["seeds"] = tuple(extra["seeds"])
    cfg = SyntheticConfig(**opts)
    res = compare_models(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "synthetic.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "unet", "flat"])
        for s, a, b in zip(cfg.seeds, res.unet_accuracy, res.flat_accuracy):
            w.writerow([s, f"{a:.1f}", f"{b:.1f}"])
    _write(args.out, "synthetic.json", json.dumps({"config": dataclasses.asdict(cfg), **res.to_dict()}, indent=2))
    print(json.dumps(res.to_dict()))
    return 0


COMMANDS = {
    "chains": _cmd_chains,
    "equivariance": _cmd_equivariance,
    "expressivity": _cmd_expressivity,
    "coarsen": _cmd_coarsen,
    "train-synthetic": _cmd_train_synthetic,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, _overrides(args))
    except _Fail as exc:
        print(f"geounet: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
