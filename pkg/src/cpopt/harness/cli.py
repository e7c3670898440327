"""Command-line entry point.

    cpopt generate --config exp.toml --seed 7 --out out/
    cpopt select   --config exp.toml --seed 7 -M 3
    cpopt allocate --config exp.toml --seed 7 -M 3
    cpopt fuse     --config exp.toml --seed 7
    cpopt sweep    --config exp.toml --out results/ [--which selection allocation]
    cpopt verify

Exit codes: 0 success, 1 a verify oracle failed, 2 bad arguments or config,
3 a module raised while computing.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import replace

from cpopt.allocator import allocation_metrics
from cpopt.channel import LINK_CSV_FIELDS, LinkState, link_report, mw_to_dbm
from cpopt.harness import experiments as ex
from cpopt.harness.config import ConfigError, ExperimentConfig, load_config
from cpopt.harness.verify import run_all

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment config (defaults built in)")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", help="output directory (stdout if omitted, except for sweep)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    p = argparse.ArgumentParser(prog="cpopt", description="Cooperative-perception helper selection and "
                                                          "C-V2X resource allocation experiments.")
    sub = p.add_subparsers(dest="verb", required=True)
    g = sub.add_parser("generate", parents=[common], help="write seeded scenarios as JSON")
    g.add_argument("--count", type=int, default=1)
    for verb, text in (("select", "select helpers for one scenario"),
                       ("allocate", "allocate power/RBs to the selected helpers"),
                       ("fuse", "fusion metrics for one scenario")):
        s = sub.add_parser(verb, parents=[common], help=text)
        s.add_argument("--rep", type=int, default=0, help="replication index of the scenario")
        if verb != "fuse":
            s.add_argument("-M", type=int, default=3, help="number of helpers")
    sw = sub.add_parser("sweep", parents=[common], help="run the experiment campaign")
    sw.add_argument("--which", nargs="+", choices=tuple(ex.SWEEPS), default=list(ex.SWEEPS))
    sw.add_argument("--replications", type=int)
    sw.add_argument("--workers", type=int)
    sub.add_parser("verify", parents=[common], help="run the oracle suites")
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "replications", None):
        cfg = replace(cfg, replications=args.replications)
    if getattr(args, "workers", None):
        cfg = replace(cfg, workers=args.workers)
    return cfg


def _rows_out(rows: list[dict], fields, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rows, indent=1) + "\n"
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _emit(text: str, args, name: str):
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, name)
        with open(path, "w") as fh:
            fh.write(text)
        print(path)
    else:
        sys.stdout.write(text)


SELECTION_FIELDS = ("seed", "strategy", "M", "mask", "f1", "f2", "f3", "ratio", "dual_bound", "iterations")
ALLOCATION_FIELDS = ("seed", "M", "w_T", "P_T", "strategy", "objective_ratio", "objective_sum", "throughput",
                     "energy", "iterations_outer", "iterations_inner")
FUSION_FIELDS = ("strategy", "delta_profile", "mean_iou", "recall", "f1")


def cmd_generate(args, cfg):
    from cpopt.rng import replication_seed
    from cpopt.scenario import generate_scenario

    scenarios = [generate_scenario(cfg.scenario, replication_seed(cfg.seed, r)).to_dict()
                 for r in range(args.count)]
    _emit(json.dumps(scenarios, indent=1) + "\n", args, "scenarios.json")
    return EXIT_OK


def cmd_select(args, cfg):
    from cpopt.objective import assemble_qcqp
    from cpopt.selector import dual_bound

    inst = ex._instance(cfg, args.rep)
    rows = []
    for strategy in cfg.selection.strategies:
        mask, res = ex.choose_mask(cfg, inst, args.M, strategy)
        m = ex.selection_metrics(inst, mask)
        row = {"seed": inst.seed, "strategy": strategy, "M": args.M, "mask": "".join(str(int(b)) for b in mask),
               "f1": m["f1"], "f2": m["f2"], "f3": m["f3"], "ratio": m["objective"], "dual_bound": "",
               "iterations": ""}
        if res is not None:
            form = assemble_qcqp(inst.agg, inst.scenario.camera, res.ratio, inst.weights, args.M)
            row["dual_bound"] = dual_bound(form, steps=100).bound
            row["iterations"] = res.iterations
        rows.append(row)
    _emit(_rows_out(rows, SELECTION_FIELDS, args.format), args, f"select.{args.format}")
    return EXIT_OK


def cmd_allocate(args, cfg):
    from cpopt.channel import rb_pool

    inst = ex._instance(cfg, args.rep)
    mask = ex.select_baseline(inst.scenario, args.M, "proximity")
    d = ex.helper_distances(inst.scenario, mask)
    rows, links = [], []
    for strategy in cfg.allocation.strategies:
        alloc, info = ex._allocate(cfg, cfg.comm, d, strategy, inst.seed)
        m = allocation_metrics(cfg.comm, d, alloc, cfg.allocation.erf_mode)
        rows.append({"seed": inst.seed, "M": args.M, "w_T": rb_pool(cfg.comm), "P_T": cfg.comm.P_T,
                     "strategy": strategy, **m, **info})
        if strategy == "proposed":
            links = link_report(cfg.comm, [LinkState(float(di), float(mw_to_dbm(p)), float(w))
                                           for di, p, w in zip(d, alloc.P, alloc.w)], args.M)
    _emit(_rows_out(rows, ALLOCATION_FIELDS, args.format), args, f"allocate.{args.format}")
    if links and args.out:
        _emit(_rows_out(links, LINK_CSV_FIELDS, args.format), args, f"links.{args.format}")
    return EXIT_OK


def cmd_fuse(args, cfg):
    recs = ex.fusion_replication(cfg, args.rep)
    rows = [{"strategy": r["strategy"], "delta_profile": " ".join(f"{x:.6g}" for x in r["delta_er"]),
             **r["metrics"]} for r in recs]
    _emit(_rows_out(rows, FUSION_FIELDS, args.format), args, f"fuse.{args.format}")
    return EXIT_OK


def cmd_sweep(args, cfg):
    out = args.out or cfg.output_dir
    for name in args.which:
        t0 = time.perf_counter()
        result = ex.SWEEPS[name](cfg)
        for path in ex.write_result(result, out, args.format):
            print(path)
        print(f"{name}: {len(result.table)} rows, {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args, cfg):
    checks = run_all(cfg.seed)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


COMMANDS = {"generate": cmd_generate, "select": cmd_select, "allocate": cmd_allocate, "fuse": cmd_fuse,
            "sweep": cmd_sweep, "verify": cmd_verify}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _config(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"cpopt: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.verb](args, cfg)
    except Exception as exc:
        print(f"cpopt: {args.verb} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
