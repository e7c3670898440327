"""Experiment configuration, read from a TOML file.

Schema (all keys optional; defaults shown in the dataclasses below)::

    seed = 2024
    replications = 100
    weights = "normalized"        # "unit", "normalized" or [w1, w2, w3]
    output_dir = "results"
    workers = 1

    [scenario]                    # ScenarioConfig fields
    n_helpers = 10
    rho = 0.01
    [scenario.velocity]           # mu, sigma, v_min, v_max
    [scenario.camera]             # e, r, u, z, Q, phi

    [comm]                        # CommConfig fields (gamma, L0, P_T, ...)

    [selection]
    M_values = [1, 2, 3, 4, 5]
    strategies = ["proposed", "random", "proximity", "min_velocity"]

    [allocation]
    M = 5                         # helpers used on the w_T and P_T ladders
    M_values = [2, 3, 4, 5, 6, 8, 10]
    wT_values = [20, 40, 60, 80, 100]
    PT_values = [100, 200, 500, 1000, 2000]   # mW
    strategies = ["proposed", "uniform", "random"]

    [fusion]
    M = 3
    n_frames = 2000
    strategies = ["proposed", "random", "proximity"]
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace

from cpopt.channel import CommConfig
from cpopt.scenario import ScenarioConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SELECTION_STRATEGIES = ("proposed", "random", "proximity", "min_velocity")
ALLOCATION_STRATEGIES = ("proposed", "uniform", "random")
FUSION_STRATEGIES = ("proposed", "random", "proximity", "min_velocity")


class ConfigError(ValueError):
    pass


def _check_strategies(names, allowed, section):
    bad = [s for s in names if s not in allowed]
    if bad or not names:
        raise ConfigError(f"[{section}] strategies {list(names)} invalid; choose from {allowed}")


def _nonempty(values, name):
    if len(values) == 0:
        raise ConfigError(f"{name} must not be empty")


@dataclass(frozen=True)
class SelectionSettings:
    M_values: tuple[int, ...] = (1, 2, 3, 4, 5)
    strategies: tuple[str, ...] = SELECTION_STRATEGIES
    epsilon: float = 1e-8
    k_max: int = 50
    dual_steps: int = 0  # >0 also records a dual bound per proposed run


@dataclass(frozen=True)
class AllocationSettings:
    M: int = 5
    M_values: tuple[int, ...] = (2, 3, 4, 5, 6, 8, 10)
    wT_values: tuple[float, ...] = (20.0, 40.0, 60.0, 80.0, 100.0)
    PT_values: tuple[float, ...] = (100.0, 200.0, 500.0, 1000.0, 2000.0)
    strategies: tuple[str, ...] = ALLOCATION_STRATEGIES
    epsilon: float = 1e-6
    k_max: int = 30
    j_max: int = 500
    gap_tol: float = 1e-6
    erf_mode: str = "exact"
    form: str = "ratio"  # objective driven by "proposed": global ratio or per-vehicle sum


@dataclass(frozen=True)
class FusionSettings:
    M: int = 3
    n_frames: int = 2000
    strategies: tuple[str, ...] = ("proposed", "random", "proximity")
    threshold: float = 0.5
    n_objects: int = 30
    iou_max: float = 0.9
    decay: float = 150.0
    jitter: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    comm: CommConfig = field(default_factory=CommConfig)
    selection: SelectionSettings = field(default_factory=SelectionSettings)
    allocation: AllocationSettings = field(default_factory=AllocationSettings)
    fusion: FusionSettings = field(default_factory=FusionSettings)
    seed: int = 2024
    replications: int = 100
    weights: object = "normalized"
    output_dir: str = "results"
    workers: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        n = self.scenario.n_helpers
        sel, alloc, fus = self.selection, self.allocation, self.fusion
        for name, vals in (("selection.M_values", sel.M_values), ("allocation.M_values", alloc.M_values),
                           ("allocation.wT_values", alloc.wT_values), ("allocation.PT_values", alloc.PT_values)):
            _nonempty(vals, name)
        for name, vals in (("selection.M_values", sel.M_values), ("allocation.M_values", alloc.M_values),
                           ("allocation.M", (alloc.M,)), ("fusion.M", (fus.M,))):
            if any(not 1 <= m <= n for m in vals):
                raise ConfigError(f"{name} must lie in 1..n_helpers={n}")
        _check_strategies(sel.strategies, SELECTION_STRATEGIES, "selection")
        _check_strategies(alloc.strategies, ALLOCATION_STRATEGIES, "allocation")
        _check_strategies(fus.strategies, FUSION_STRATEGIES, "fusion")
        if alloc.erf_mode not in ("exact", "taylor"):
            raise ConfigError("allocation.erf_mode must be 'exact' or 'taylor'")
        if alloc.form not in ("ratio", "sum"):
            raise ConfigError("allocation.form must be 'ratio' or 'sum'")
        if fus.n_frames < 1:
            raise ConfigError("fusion.n_frames must be >= 1")

    def with_replications(self, n: int) -> "ExperimentConfig":
        return replace(self, replications=n)


def _section(cls, d: dict, name: str):
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    try:
        kw = {}
        if "scenario" in d:
            kw["scenario"] = ScenarioConfig.from_dict(d.pop("scenario"))
        if "comm" in d:
            kw["comm"] = CommConfig.from_dict(d.pop("comm"))
        for key, cls in (("selection", SelectionSettings), ("allocation", AllocationSettings),
                         ("fusion", FusionSettings)):
            if key in d:
                kw[key] = _section(cls, d.pop(key), key)
        top = {f.name for f in fields(ExperimentConfig)}
        extra = set(d) - top
        if extra:
            raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
        kw.update(d)
        if isinstance(kw.get("weights"), list):
            kw["weights"] = tuple(float(x) for x in kw["weights"])
        return ExperimentConfig(**kw)
    except TypeError as exc:  # bad field names inside nested dataclasses
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)
