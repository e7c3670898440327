"""Power / resource-block allocation for the selected helpers.

The global ratio ``N(x)/D(x)`` (total throughput over total energy) is driven
by Dinkelbach's method; each parametric subproblem ``N - eta*D`` is solved with
Frank-Wolfe over ``{P >= P_min, sum P <= P_T} x {w >= 0, sum w = w_T}``.
Powers are in mW, RB shares are real-valued.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from cpopt.channel import (
    CommConfig,
    DeadLinkError,
    TWO_OVER_SQRT_PI,
    collision_prob,
    erf_series,
    path_loss,
    rb_pool,
)
from cpopt.rng import stream

_LN10 = math.log(10.0)
_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)
MW_PER_W = 1000.0

STRATEGIES = ("uniform", "random")


class InfeasibleBudgetError(ValueError):
    pass


class AllocationConvergenceError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class Allocation:
    P: np.ndarray  # mW
    w: np.ndarray  # RBs

    def __post_init__(self):
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float))
        if self.P.shape != self.w.shape:
            raise ValueError("P and w must have the same length")

    @property
    def M(self) -> int:
        return self.P.size

    def is_feasible(self, config: CommConfig, rtol: float = 1e-9) -> bool:
        M = self.M
        p_min, w_T = config.power_floor(M), rb_pool(config)
        return bool(
            np.all(self.P >= p_min * (1 - rtol))
            and self.P.sum() <= config.P_T * (1 + rtol)
            and np.all(self.w >= -rtol * w_T)
            and abs(self.w.sum() - w_T) <= rtol * max(1.0, w_T)
        )

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.P, self.w])

    @classmethod
    def from_vector(cls, x) -> "Allocation":
        x = np.asarray(x, dtype=float)
        m = x.size // 2
        return cls(x[:m], x[m:])


@dataclass(frozen=True)
class FwStep:
    j: int
    objective: float
    fw_gap: float
    step: float


@dataclass(frozen=True)
class OuterStep:
    k: int
    eta: float
    F: float
    inner_iterations: int


@dataclass
class FwTrace:
    inner: list[FwStep] = field(default_factory=list)
    outer: list[OuterStep] = field(default_factory=list)

    @property
    def iterations_inner(self) -> int:
        return len(self.inner)

    @property
    def iterations_outer(self) -> int:
        return len(self.outer)


# -- error model and its derivative in P ----------------------------------


def _errors(config: CommConfig, d: np.ndarray, P: np.ndarray, erf_mode: str):
    """Total error per link and its derivative with respect to P (mW)."""
    M = d.size
    dcol = collision_prob(rb_pool(config), M)
    scale = config.sigma_sh * math.sqrt(2.0)
    Q = (10.0 * np.log10(P) - path_loss(config, d) - config.sh_mean - config.P_SEN) / scale
    dQ = 10.0 / (_LN10 * P * scale)
    if erf_mode == "exact":
        dsen = 0.5 * special.erfc(Q)
        ddsen = -_INV_SQRT_PI * np.exp(-Q * Q) * dQ
    elif erf_mode == "taylor":
        raw = 0.5 * (1.0 - erf_series(Q, 0))
        dsen = np.clip(raw, 0.0, 1.0)
        ddsen = np.where((raw > 0.0) & (raw < 1.0), -_INV_SQRT_PI * dQ, 0.0)
    else:
        raise ValueError(f"unknown erf mode {erf_mode!r}")
    der = dcol * dsen
    if np.any(der >= 1.0):
        raise DeadLinkError("a link has total error 1")
    return der, dcol * ddsen


def ratio_parts(config: CommConfig, d, alloc: Allocation, erf_mode: str = "exact", grad: bool = False):
    """Total throughput ``N`` [bit/s] and energy ``D`` [J] (optionally with
    gradients w.r.t. ``(P, w)``)."""
    d = np.asarray(d, dtype=float)
    P, w = alloc.P, alloc.w
    der, dder = _errors(config, d, P, erf_mode)
    ok = 1.0 - der
    N = config.R_ch * float(np.sum(w * ok))
    D = config.T / MW_PER_W * float(np.sum(P / ok))
    if not grad:
        return N, D
    dN = np.concatenate([-config.R_ch * w * dder, config.R_ch * ok])
    dD = np.concatenate([config.T / MW_PER_W * (1.0 / ok + P * dder / ok**2), np.zeros_like(w)])
    return N, D, dN, dD


def sum_form(config: CommConfig, d, alloc: Allocation, erf_mode: str = "exact", grad: bool = False):
    """Per-vehicle efficiency sum ``sum R_ch w_i (1-delta_i)^2 / (P_i T)``."""
    d = np.asarray(d, dtype=float)
    P, w = alloc.P, alloc.w
    der, dder = _errors(config, d, P, erf_mode)
    ok = 1.0 - der
    c = config.R_ch * MW_PER_W / config.T
    val = float(np.sum(c * w * ok**2 / P))
    if not grad:
        return val
    gP = c * w * (-2.0 * ok * dder / P - ok**2 / P**2)
    gw = c * ok**2 / P
    return val, np.concatenate([gP, gw])


def alloc_objective(config: CommConfig, distances, alloc: Allocation, erf_mode: str = "exact",
                    form: str = "ratio") -> float:
    if form == "ratio":
        N, D = ratio_parts(config, distances, alloc, erf_mode)
        return N / D
    if form == "sum":
        return sum_form(config, distances, alloc, erf_mode)
    raise ValueError(f"unknown objective form {form!r}")


def subproblem(config: CommConfig, distances, alloc: Allocation, eta: float, erf_mode: str = "exact"):
    """``N - eta*D`` and its gradient."""
    N, D, dN, dD = ratio_parts(config, distances, alloc, erf_mode, grad=True)
    return N - eta * D, dN - eta * dD


# -- linear minimisation oracle -------------------------------------------


def fw_linear_oracle(gradient_P, gradient_w, config: CommConfig) -> Allocation:
    """Vertex minimising ``<psi, g>`` over the feasible product set.

    RBs: all of ``w_T`` on the smallest gradient entry. Powers: floors
    everywhere, plus the whole slack ``P_T - M*P_min`` on the smallest entry
    when that entry is negative. Ties go to the lowest index.
    """
    gP = np.asarray(gradient_P, dtype=float)
    gw = np.asarray(gradient_w, dtype=float)
    if not (np.all(np.isfinite(gP)) and np.all(np.isfinite(gw))):
        raise ValueError("gradients must be finite")
    M = gP.size
    p_min = config.power_floor(M)
    slack = config.P_T - M * p_min
    if slack < 0:
        raise InfeasibleBudgetError(f"M*P_min = {M * p_min} exceeds P_T = {config.P_T}")
    P = np.full(M, p_min)
    j = int(np.argmin(gP))
    if gP[j] < 0:
        P[j] += slack
    w = np.zeros(M)
    w[int(np.argmin(gw))] = rb_pool(config)
    return Allocation(P, w)


# -- Frank-Wolfe ----------------------------------------------------------


def uniform_allocation(config: CommConfig, M: int) -> Allocation:
    return Allocation(np.full(M, config.P_T / M), np.full(M, rb_pool(config) / M))


def _vertex(g: np.ndarray, M: int, p_min: float, slack: float, w_T: float) -> np.ndarray:
    """Vector form of :func:`fw_linear_oracle` for a maximisation gradient."""
    out = np.zeros(2 * M)
    out[:M] = p_min
    j = int(np.argmax(g[:M]))
    if g[j] > 0:
        out[j] += slack
    out[M + int(np.argmax(g[M:]))] = w_T
    return out


def conditional_gradient(fun, config: CommConfig, x0: Allocation, j_max: int = 500, gap_tol: float = 1e-6,
                         scale: float = 1.0):
    """Maximise ``fun(x) -> (value, gradient)`` over the allocation polytope
    with 2/(j+2) steps.

    Besides the iterates, every oracle vertex is scored as a candidate and the
    best point seen is returned. Stops once the Frank-Wolfe gap of the
    iterate, or of a vertex that became the incumbent, is at most
    ``gap_tol * scale``.
    """
    M = x0.M
    p_min = config.power_floor(M)
    slack = config.P_T - M * p_min
    if slack < 0:
        raise InfeasibleBudgetError(f"M*P_min = {M * p_min} exceeds P_T = {config.P_T}")
    w_T = rb_pool(config)
    x = x0.as_vector()
    best_x, best_val = x, -math.inf
    steps: list[FwStep] = []
    tol = gap_tol * scale
    seen_vertex = None
    for j in range(j_max):
        val, g = fun(x)
        if val > best_val:
            best_val, best_x = val, x
        psi = _vertex(g, M, p_min, slack, w_T)
        gap = float((psi - x) @ g)
        m = 2.0 / (j + 2.0)
        steps.append(FwStep(j, val, gap, m))
        if gap <= tol:
            break
        if seen_vertex is None or not np.array_equal(psi, seen_vertex):
            seen_vertex = psi
            pval, pg = fun(psi)
            if pval > best_val:
                best_val, best_x = pval, psi
                if float((_vertex(pg, M, p_min, slack, w_T) - psi) @ pg) <= tol:
                    break
        x = x + m * (psi - x)
    return Allocation.from_vector(best_x), best_val, steps


class _Links:
    """Per-instance constants of the error model, for fast repeated calls."""

    def __init__(self, config: CommConfig, d, erf_mode: str):
        d = np.asarray(d, dtype=float)
        self.M = d.size
        self.dcol = collision_prob(rb_pool(config), self.M)
        self.offset = path_loss(config, d) + config.sh_mean + config.P_SEN
        self.scale = config.sigma_sh * math.sqrt(2.0)
        if erf_mode not in ("exact", "taylor"):
            raise ValueError(f"unknown erf mode {erf_mode!r}")
        self.exact = erf_mode == "exact"
        self.R = config.R_ch
        self.TW = config.T / MW_PER_W

    def errors(self, P):
        Q = (10.0 * np.log10(P) - self.offset) / self.scale
        dQ = 10.0 / (_LN10 * self.scale) / P
        if self.exact:
            dsen = 0.5 * special.erfc(Q)
            ddsen = -_INV_SQRT_PI * np.exp(-Q * Q) * dQ
        else:
            raw = 0.5 * (1.0 - TWO_OVER_SQRT_PI * Q)
            dsen = np.clip(raw, 0.0, 1.0)
            ddsen = np.where((raw > 0.0) & (raw < 1.0), -_INV_SQRT_PI * dQ, 0.0)
        der = self.dcol * dsen
        if np.any(der >= 1.0):
            raise DeadLinkError("a link has total error 1")
        return der, self.dcol * ddsen

    def subproblem(self, x, eta):
        M = self.M
        P, w = x[:M], x[M:]
        der, dder = self.errors(P)
        ok = 1.0 - der
        N = self.R * float(w @ ok)
        D = self.TW * float(np.sum(P / ok))
        g = np.empty(2 * M)
        g[:M] = -self.R * w * dder - eta * self.TW * (1.0 / ok + P * dder / ok**2)
        g[M:] = self.R * ok
        return N - eta * D, g


def frank_wolfe(config: CommConfig, distances, eta: float, x0: Allocation | None = None, j_max: int = 500,
                gap_tol: float = 1e-6, erf_mode: str = "exact"):
    """Maximise ``N - eta*D`` for fixed ``eta``; gaps are relative to
    ``R_ch * w_T``."""
    d = np.asarray(distances, dtype=float)
    x0 = uniform_allocation(config, d.size) if x0 is None else x0
    scale = config.R_ch * rb_pool(config)
    links = _Links(config, d, erf_mode)
    alloc, _, steps = conditional_gradient(lambda x: links.subproblem(x, eta), config, x0, j_max, gap_tol, scale)
    return alloc, FwTrace(inner=steps)


def maximize_sum_form(config: CommConfig, distances, x0: Allocation | None = None, j_max: int = 500,
                      gap_tol: float = 1e-6, erf_mode: str = "exact"):
    """Direct Frank-Wolfe on the per-vehicle sum objective."""
    d = np.asarray(distances, dtype=float)
    x0 = uniform_allocation(config, d.size) if x0 is None else x0
    scale = config.R_ch * rb_pool(config) * MW_PER_W / (config.T * config.P_T)
    alloc, _, steps = conditional_gradient(
        lambda x: sum_form(config, d, Allocation.from_vector(x), erf_mode, grad=True), config, x0, j_max, gap_tol,
        scale)
    return alloc, FwTrace(inner=steps)


def dinkelbach_allocate(config: CommConfig, distances, epsilon: float = 1e-6, k_max: int = 30,
                        j_max: int = 500, gap_tol: float = 1e-6, erf_mode: str = "exact",
                        x0: Allocation | None = None):
    """Maximise total throughput per unit energy.

    ``F(eta_k)`` is reported relative to ``R_ch * w_T`` and evaluated as
    ``D * (N/D - eta_k)`` at the subproblem solution. Each subproblem is warm
    started at the previous solution, whose value is exactly zero, so
    ``F >= 0`` and ``eta`` never decreases.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    d = np.asarray(distances, dtype=float)
    x = uniform_allocation(config, d.size) if x0 is None else x0
    scale = config.R_ch * rb_pool(config)
    N, D = ratio_parts(config, d, x, erf_mode)
    eta = N / D
    trace = FwTrace()
    for k in range(2, k_max + 2):
        cand, inner = frank_wolfe(config, d, eta, x, j_max, gap_tol, erf_mode)
        trace.inner.extend(inner.inner)
        N, D = ratio_parts(config, d, cand, erf_mode)
        if N / D < eta:
            # rounding-level loss: keep the incumbent
            cand, N, D = x, *ratio_parts(config, d, x, erf_mode)
        F = D * (N / D - eta) / scale
        trace.outer.append(OuterStep(k, eta, F, len(inner.inner)))
        x = cand
        if F < epsilon:
            return x, trace
        eta = N / D
    raise AllocationConvergenceError(f"Dinkelbach/Frank-Wolfe did not converge in {k_max} outer steps", trace)


# -- baselines and reporting ----------------------------------------------


def allocate_baseline(config: CommConfig, M: int, strategy: str, seed: int = 0) -> Allocation:
    w_T = rb_pool(config)
    if strategy == "uniform":
        return uniform_allocation(config, M)
    if strategy == "random":
        rng = stream(seed, "baseline-allocation", M)
        p_min = config.power_floor(M)
        slack = config.P_T - M * p_min
        if slack < 0:
            raise InfeasibleBudgetError(f"M*P_min = {M * p_min} exceeds P_T = {config.P_T}")
        P = p_min + slack * rng.dirichlet(np.ones(M))
        w = w_T * rng.dirichlet(np.ones(M))
        return Allocation(P, w)
    raise ValueError(f"unknown allocation strategy {strategy!r}; expected one of {STRATEGIES}")


def round_rbs(w, w_T: float) -> np.ndarray:
    """Largest-remainder rounding of real RB shares to ``floor(w_T)`` blocks."""
    w = np.asarray(w, dtype=float)
    total = int(math.floor(w_T + 1e-9))
    if not w.sum() > 0:
        raise ValueError("RB shares must have a positive sum")
    scaled = w * total / w.sum()
    base = np.floor(scaled).astype(int)
    rest = total - int(base.sum())
    order = np.argsort(-(scaled - base), kind="stable")
    base[order[:rest]] += 1
    return base


def allocation_metrics(config: CommConfig, distances, alloc: Allocation, erf_mode: str = "exact") -> dict:
    N, D = ratio_parts(config, distances, alloc, erf_mode)
    rounded = Allocation(alloc.P, round_rbs(alloc.w, rb_pool(config)).astype(float))
    Nr, Dr = ratio_parts(config, distances, rounded, erf_mode)
    return {
        "throughput": N,
        "energy": D,
        "objective_ratio": N / D,
        "objective_sum": sum_form(config, distances, alloc, erf_mode),
        "objective_ratio_rounded": Nr / Dr,
    }
