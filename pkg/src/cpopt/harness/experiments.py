"""Seeded experiment campaigns: selection, allocation and fusion sweeps.

Every replication is a pure function of ``(config, replication index)``.
Results are kept per replication (the audit trail) and reduced into a
long-format :class:`ResultTable` with an order-independent merge, so serial
and parallel runs give identical tables.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from cpopt.allocator import (
    allocate_baseline,
    allocation_metrics,
    dinkelbach_allocate,
    maximize_sum_form,
)
from cpopt.channel import CommConfig, link_errors
from cpopt.fusion import FixtureModel, detection_scores, fixture_arrays, fuse_frames, generate_fixture, simulate_drops
from cpopt.harness.config import ExperimentConfig
from cpopt.objective import TimeAggregates, assemble_qcqp, composite_value, resolve_weights
from cpopt.rng import replication_seed
from cpopt.scenario import Scenario, generate_scenario
from cpopt.selector import dinkelbach_select, dual_bound, select_baseline

MIN_LINK_DISTANCE = 1.0  # m


class ReplicationError(RuntimeError):
    def __init__(self, rep: int, seed: int, exc: Exception):
        super().__init__(f"replication {rep} (scenario seed {seed}): {type(exc).__name__}: {exc}")
        self.rep, self.seed = rep, seed


@dataclass(frozen=True)
class ResultRow:
    sweep: str
    sweep_value: float
    strategy: str
    metric: str
    mean: float
    std: float
    count: int


CSV_FIELDS = ("sweep", "sweep_value", "strategy", "metric", "mean", "std", "count")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


class ResultTable:
    """Long-format summary, one row per (sweep, sweep_value, strategy, metric)."""

    def __init__(self, rows):
        self.rows: list[ResultRow] = list(rows)
        self._index = {(r.sweep, r.sweep_value, r.strategy, r.metric): r for r in self.rows}
        if len(self._index) != len(self.rows):
            raise ValueError("duplicate (sweep, sweep_value, strategy, metric) rows")

    def __len__(self):
        return len(self.rows)

    def get(self, sweep, sweep_value, strategy, metric) -> ResultRow:
        return self._index[(sweep, sweep_value, strategy, metric)]

    def mean(self, sweep, sweep_value, strategy, metric) -> float:
        return self.get(sweep, sweep_value, strategy, metric).mean

    def sweep_values(self, sweep) -> list:
        out = []
        for r in self.rows:
            if r.sweep == sweep and r.sweep_value not in out:
                out.append(r.sweep_value)
        return out

    def strategies(self) -> list[str]:
        out = []
        for r in self.rows:
            if r.strategy not in out:
                out.append(r.strategy)
        return out

    @classmethod
    def from_records(cls, records) -> "ResultTable":
        """Reduce per-replication records. Sums use ``math.fsum`` (exactly
        rounded), so the result does not depend on record order; the row
        order follows first appearance in replication order."""
        groups: dict[tuple, list[tuple[int, float]]] = {}
        order: list[tuple] = []
        for rec in sorted(records, key=lambda r: r["rep"]):
            for metric, value in rec["metrics"].items():
                key = (rec["sweep"], rec["sweep_value"], rec["strategy"], metric)
                if key not in groups:
                    groups[key] = []
                    order.append(key)
                groups[key].append((rec["rep"], float(value)))
        rows = []
        for key in order:
            vals = [v for _, v in groups[key]]
            n = len(vals)
            mean = math.fsum(vals) / n
            std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1)) if n > 1 else 0.0
            rows.append(ResultRow(*key, mean, std, n))
        return cls(rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, f)) for f in CSV_FIELDS])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps([{f: getattr(r, f) for f in CSV_FIELDS} for r in self.rows], indent=1)

    def to_gnuplot(self) -> str:
        """One data block per (sweep, metric), separated by two blank lines
        (select with ``index``). Columns: sweep value, then mean and std per
        strategy."""
        strategies = self.strategies()
        blocks = []
        seen = []
        for r in self.rows:
            if (r.sweep, r.metric) not in seen:
                seen.append((r.sweep, r.metric))
        for sweep, metric in seen:
            head = ["# " + f"{sweep} {metric}", "# value " + " ".join(f"{s}_mean {s}_std" for s in strategies)]
            lines = []
            for v in self.sweep_values(sweep):
                cells = [_fmt(v)]
                for s in strategies:
                    row = self._index.get((sweep, v, s, metric))
                    cells += [_fmt(row.mean), _fmt(row.std)] if row else ["NaN", "NaN"]
                lines.append(" ".join(cells))
            blocks.append("\n".join(head + lines))
        return "\n\n\n".join(blocks) + "\n"


# -- shared pieces ---------------------------------------------------------


def helper_distances(scenario: Scenario, mask) -> np.ndarray:
    """Interval-averaged ego-helper distance of the selected helpers."""
    traj = scenario.trajectories()
    rel = np.abs(traj[1:] - traj[0]).mean(axis=1)
    return np.maximum(rel[np.flatnonzero(np.asarray(mask))], MIN_LINK_DISTANCE)


def with_rb_pool(comm: CommConfig, w_T: float) -> CommConfig:
    """Config whose pool ``theta*W_subCh*(1-CBR)`` equals ``w_T`` (via theta)."""
    return replace(comm, theta=w_T / (comm.W_subCh * (1.0 - comm.CBR)))


@dataclass(frozen=True)
class _Instance:
    rep: int
    seed: int
    scenario: Scenario
    agg: TimeAggregates
    weights: tuple


def _instance(cfg: ExperimentConfig, rep: int) -> _Instance:
    seed = replication_seed(cfg.seed, rep)
    sc = generate_scenario(cfg.scenario, seed)
    agg = TimeAggregates.from_scenario(sc, cfg.scenario.effective_r_max)
    return _Instance(rep, seed, sc, agg, resolve_weights(cfg.weights, agg, sc.camera))


def choose_mask(cfg: ExperimentConfig, inst: _Instance, M: int, strategy: str):
    if strategy == "proposed":
        res = dinkelbach_select(inst.agg, inst.scenario.camera, M, cfg.selection.epsilon, cfg.selection.k_max,
                                inst.weights)
        return res.mask, res
    return select_baseline(inst.scenario, M, strategy, inst.seed), None


def selection_metrics(inst: _Instance, mask) -> dict:
    s = np.asarray(mask, dtype=float)
    agg, cam = inst.agg, inst.scenario.camera
    n_t = inst.scenario.n_steps + 1
    k = s.sum()
    loc = float(s @ agg.xbar) / n_t
    vr = float(s @ agg.Rbar) / n_t
    return {
        "objective": composite_value(agg, cam, s, inst.weights),
        "f1": float(s @ agg.xbar),
        "f2": 1.0 / float(s @ agg.Rbar),
        "f3": cam.er / cam.zu * float(s @ agg.vterm),
        "total_location": loc,
        "avg_location": loc / k,
        "total_visual_range": vr,
        "avg_visual_range": vr / k,
        "avg_velocity": float(s @ inst.scenario.velocities) / k,
        "n_selected": float(k),
    }


def _record(inst, sweep, value, strategy, metrics, **extra) -> dict:
    rec = {"rep": inst.rep, "seed": inst.seed, "sweep": sweep, "sweep_value": value, "strategy": strategy,
           "metrics": {k: float(v) for k, v in metrics.items()}}
    rec.update(extra)
    return rec


class _Guarded:
    """Picklable wrapper that attaches the scenario seed to any error."""

    def __init__(self, name: str):
        self.name = name

    def __call__(self, args):
        cfg, rep = args
        try:
            return _REPLICATIONS[self.name](cfg, rep)
        except Exception as exc:
            raise ReplicationError(rep, replication_seed(cfg.seed, rep), exc) from exc


# -- selection -------------------------------------------------------------


def selection_replication(cfg: ExperimentConfig, rep: int) -> list[dict]:
    inst = _instance(cfg, rep)
    out = []
    for M in cfg.selection.M_values:
        for strategy in cfg.selection.strategies:
            mask, res = choose_mask(cfg, inst, M, strategy)
            metrics = selection_metrics(inst, mask)
            extra = {"mask": [int(b) for b in mask]}
            if res is not None:
                metrics["iterations"] = res.iterations
                extra["ratio"] = res.ratio
                if cfg.selection.dual_steps > 0:
                    form = assemble_qcqp(inst.agg, inst.scenario.camera, res.ratio, inst.weights, M)
                    extra["dual_bound"] = dual_bound(form, steps=cfg.selection.dual_steps).bound
            out.append(_record(inst, "M", M, strategy, metrics, **extra))
    return out


# -- allocation ------------------------------------------------------------


def _allocate(cfg: ExperimentConfig, comm: CommConfig, d, strategy: str, seed: int):
    a = cfg.allocation
    if strategy == "proposed":
        if a.form == "sum":
            alloc, trace = maximize_sum_form(comm, d, j_max=a.j_max, gap_tol=a.gap_tol, erf_mode=a.erf_mode)
        else:
            alloc, trace = dinkelbach_allocate(comm, d, a.epsilon, a.k_max, a.j_max, a.gap_tol, a.erf_mode)
        return alloc, {"iterations_outer": trace.iterations_outer, "iterations_inner": trace.iterations_inner}
    return allocate_baseline(comm, len(d), strategy, seed), {}


def allocation_points(cfg: ExperimentConfig):
    """``(sweep, value, comm config, M)`` for every point of the three ladders."""
    a = cfg.allocation
    for w_T in a.wT_values:
        yield "w_T", w_T, with_rb_pool(cfg.comm, w_T), a.M
    for P_T in a.PT_values:
        yield "P_T", P_T, replace(cfg.comm, P_T=P_T), a.M
    for M in a.M_values:
        yield "M_alloc", M, cfg.comm, M


def allocation_replication(cfg: ExperimentConfig, rep: int) -> list[dict]:
    inst = _instance(cfg, rep)
    out = []
    for sweep, value, comm, M in allocation_points(cfg):
        # exactly M links: the selection optimum may use fewer than M helpers
        d = helper_distances(inst.scenario, select_baseline(inst.scenario, M, "proximity"))
        for strategy in cfg.allocation.strategies:
            alloc, info = _allocate(cfg, comm, d, strategy, inst.seed)
            metrics = allocation_metrics(comm, d, alloc, cfg.allocation.erf_mode)
            metrics.update(info)
            out.append(_record(inst, sweep, value, strategy, metrics, distances=d.tolist(), P=alloc.P.tolist(),
                               w=alloc.w.tolist()))
    return out


# -- fusion ----------------------------------------------------------------


def fusion_replication(cfg: ExperimentConfig, rep: int) -> list[dict]:
    inst = _instance(cfg, rep)
    f = cfg.fusion
    sc = inst.scenario
    model = FixtureModel(f.n_objects, f.iou_max, f.decay, f.jitter, cfg.scenario.effective_r_max)
    records = generate_fixture(sc, model, inst.seed)
    ids = [sc.ego.id] + [h.id for h in sc.helpers]
    table = fixture_arrays(records, ids, f.n_objects)
    out = []
    for strategy in f.strategies:
        mask = choose_mask(cfg, inst, f.M, strategy)[0]
        sel = np.flatnonzero(mask)
        d = helper_distances(sc, mask)
        # contention is among the helpers actually transmitting
        _, _, delta = link_errors(cfg.comm, d, cfg.comm.P_tx_default, sel.size)
        survive = simulate_drops(delta, f.n_frames, inst.seed)
        fused = fuse_frames(table[0], table[1 + sel], survive)
        recall, f1 = detection_scores(fused, f.threshold)
        metrics = {
            "mean_iou": float(fused.mean()),
            "recall": float(np.mean(recall)),
            "f1": float(np.mean(f1)),
            "mean_delta_er": float(np.mean(delta)),
            "survival_rate": float(survive.mean()),
        }
        out.append(_record(inst, "fusion", f.M, strategy, metrics, mask=[int(b) for b in mask],
                           delta_er=np.asarray(delta).tolist()))
    return out


# -- drivers ---------------------------------------------------------------

_REPLICATIONS = {"selection": selection_replication, "allocation": allocation_replication,
                 "fusion": fusion_replication}
_SELECTION = _Guarded("selection")
_ALLOCATION = _Guarded("allocation")
_FUSION = _Guarded("fusion")


def _run_replications(cfg: ExperimentConfig, runner) -> list[dict]:
    jobs = [(cfg, rep) for rep in range(cfg.replications)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            chunks = list(ex.map(runner, jobs))
    else:
        chunks = [runner(j) for j in jobs]
    return [rec for chunk in chunks for rec in chunk]


@dataclass
class SweepResult:
    name: str
    table: ResultTable
    records: list[dict]


def run_selection_sweep(cfg: ExperimentConfig) -> SweepResult:
    recs = _run_replications(cfg, _SELECTION)
    return SweepResult("selection", ResultTable.from_records(recs), recs)


def run_allocation_sweep(cfg: ExperimentConfig) -> SweepResult:
    recs = _run_replications(cfg, _ALLOCATION)
    return SweepResult("allocation", ResultTable.from_records(recs), recs)


def run_fusion_experiment(cfg: ExperimentConfig) -> SweepResult:
    recs = _run_replications(cfg, _FUSION)
    return SweepResult("fusion", ResultTable.from_records(recs), recs)


SWEEPS = {"selection": run_selection_sweep, "allocation": run_allocation_sweep, "fusion": run_fusion_experiment}


def run_campaign(cfg: ExperimentConfig, which=("selection", "allocation", "fusion")) -> dict[str, SweepResult]:
    return {name: SWEEPS[name](cfg) for name in which}


def write_result(result: SweepResult, out_dir, fmt: str = "csv") -> list[str]:
    """Summary table (csv or json), gnuplot data and the per-replication
    audit trail. Returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    summary = os.path.join(out_dir, f"{result.name}.{fmt}")
    with open(summary, "w") as fh:
        fh.write(result.table.to_csv() if fmt == "csv" else result.table.to_json())
    paths.append(summary)
    dat = os.path.join(out_dir, f"{result.name}.dat")
    with open(dat, "w") as fh:
        fh.write(result.table.to_gnuplot())
    paths.append(dat)
    audit = os.path.join(out_dir, f"{result.name}_replications.json")
    with open(audit, "w") as fh:
        json.dump(result.records, fh, indent=1)
        fh.write("\n")
    paths.append(audit)
    return paths
