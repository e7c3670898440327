"""Helper selection: Dinkelbach iterations over an exact enumerative inner
solver, a Lagrangian-dual lower bound, and the baseline strategies."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from cpopt.objective import (
    UNIT_WEIGHTS,
    QcqpForm,
    TimeAggregates,
    Weights,
    assemble_qcqp,
    ratio_terms,
)
from cpopt.rng import stream
from cpopt.scenario import CameraConstants, Scenario

N_CAP = 25
_TABLE_MAX_N = 16
_CHUNK_BITS = 16

STRATEGIES = ("random", "proximity", "min_velocity")


class TooManyHelpersError(ValueError):
    pass


class DinkelbachError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class DinkelbachStep:
    k: int
    eta: float
    F: float
    mask: tuple[int, ...]


@dataclass
class SelectionResult:
    mask: np.ndarray
    ratio: float
    trace: list[DinkelbachStep] = field(default_factory=list)
    epsilon: float = 1e-8

    @property
    def iterations(self) -> int:
        return len(self.trace)


@dataclass(frozen=True)
class DualCertificate:
    lam: np.ndarray
    bound: float
    feasible_gap: float


def _bits(codes: np.ndarray, n: int) -> np.ndarray:
    # s_0 is the most significant bit, so ascending codes are lexicographic masks
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts) & 1).astype(float)


@functools.lru_cache(maxsize=32)
def mask_table(n: int) -> np.ndarray:
    """All 2**n masks in lexicographic order (read-only)."""
    table = _bits(np.arange(1 << n, dtype=np.int64), n)
    table.flags.writeable = False
    return table


def _mask_chunks(n: int, M: int):
    """Yield (masks, popcount-filtered) blocks of feasible non-empty masks in
    lexicographic order."""
    if n <= _TABLE_MAX_N:
        table = mask_table(n)
        pc = table.sum(axis=1)
        yield table[(pc >= 1) & (pc <= M)]
        return
    step = 1 << _CHUNK_BITS
    for start in range(0, 1 << n, step):
        block = _bits(np.arange(start, min(start + step, 1 << n), dtype=np.int64), n)
        pc = block.sum(axis=1)
        keep = (pc >= 1) & (pc <= M)
        if keep.any():
            yield block[keep]


def _lex_argmin(values: np.ndarray) -> int:
    # np.argmin returns the first minimiser, i.e. the lexicographically smallest
    return int(np.argmin(values))


def solve_subproblem_exact(form: QcqpForm, M: int, n_cap: int = N_CAP):
    """Exact minimum of the quadratic form over masks with 1 <= |s| <= M.

    Returns ``(mask, value)``; ties go to the lexicographically smallest mask.
    """
    n = form.n
    if n > n_cap:
        raise TooManyHelpersError(
            f"N={n} exceeds the enumeration cap {n_cap}; use a heuristic selector instead")
    if M < 1:
        raise ValueError("M must be >= 1")
    best_val, best_mask = math.inf, None
    for masks in _mask_chunks(n, min(M, n)):
        vals = form.values(masks)
        j = _lex_argmin(vals)
        # chunks arrive in lexicographic order, so strict < keeps the earlier mask
        if vals[j] < best_val:
            best_val, best_mask = float(vals[j]), masks[j].copy()
    return best_mask.astype(int), best_val


def proximity_mask(n: int, M: int) -> np.ndarray:
    s = np.zeros(n, dtype=int)
    s[: min(M, n)] = 1
    return s


def dinkelbach_select(agg: TimeAggregates, camera: CameraConstants, M: int, epsilon: float = 1e-8,
                      k_max: int = 50, weights: Weights = UNIT_WEIGHTS) -> SelectionResult:
    """Minimise ``G(s)/D(s)`` over masks with ``1 <= |s| <= M``.

    Starts from the ratio of the M nearest helpers (helpers are sorted by
    position) and stops once ``|F(eta_k)| < epsilon``. ``F`` is evaluated as
    ``D(s_k) * (G(s_k)/D(s_k) - eta_k)`` so a repeated mask gives exactly 0.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    if M < 1:
        raise ValueError("M must be >= 1")
    n = agg.n
    start = proximity_mask(n, M)
    G, D = ratio_terms(agg, camera, start[None, :].astype(float), weights)
    eta = float(G[0] / D[0])
    if not np.isfinite(eta):
        eta = 0.0
    trace: list[DinkelbachStep] = []
    for k in range(2, k_max + 2):
        form = assemble_qcqp(agg, camera, eta, weights, M)
        s, _ = solve_subproblem_exact(form, M)
        G, D = ratio_terms(agg, camera, s[None, :].astype(float), weights)
        ratio = float(G[0] / D[0])
        F = float(D[0] * (ratio - eta))
        trace.append(DinkelbachStep(k, eta, F, tuple(int(b) for b in s)))
        if abs(F) < epsilon:
            return SelectionResult(s, ratio, trace, epsilon)
        eta = ratio
    raise DinkelbachError(f"Dinkelbach did not converge in {k_max} iterations", trace)


# -- Lagrangian dual -------------------------------------------------------

_PINV_RTOL = 1e-10
_RANGE_RTOL = 1e-8


def _dual_pieces(form: QcqpForm, lam: np.ndarray):
    """``P(lam), q(lam), r(lam)`` with lam = (binarity_1..N, cardinality)."""
    n = form.n
    lam_bin, lam_card = lam[:n], lam[n]
    P = form.P0 + np.diag(lam_bin)
    q = form.q0 - lam_bin + lam_card * np.ones(n)
    r = form.h0 - lam_card * form.max_selected
    return P, q, r


def dual_value(form: QcqpForm, lam) -> tuple[float, np.ndarray | None]:
    """``g(lam)`` and the inner minimiser (``None`` on the -inf branch)."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (form.n + 1,):
        raise ValueError(f"lambda must have length N+1 = {form.n + 1}")
    if np.any(lam < 0):
        raise ValueError("lambda must be non-negative")
    P, q, r = _dual_pieces(form, lam)
    evals, evecs = np.linalg.eigh(P)
    smax = float(np.max(np.abs(evals), initial=0.0))
    tol = _PINV_RTOL * smax
    if evals[0] < -tol:
        return -math.inf, None
    inv = np.where(np.abs(evals) > tol, 1.0 / np.where(np.abs(evals) > tol, evals, 1.0), 0.0)
    P_pinv = (evecs * inv) @ evecs.T
    qn = float(np.linalg.norm(q))
    if np.linalg.norm(P @ (P_pinv @ q) - q) > _RANGE_RTOL * qn:
        return -math.inf, None
    s_star = -0.5 * P_pinv @ q
    return float(r - 0.25 * q @ P_pinv @ q), s_star


def default_lambda(form: QcqpForm) -> np.ndarray:
    """Smallest uniform binarity multiplier that makes ``P(lam)`` PSD, plus a
    1e-6 relative margin."""
    lmin = float(np.linalg.eigvalsh(form.P0)[0])
    scale = max(1.0, float(np.max(np.abs(form.P0), initial=0.0)))
    shift = max(0.0, -lmin) + 1e-6 * scale
    lam = np.zeros(form.n + 1)
    lam[: form.n] = shift
    return lam


def dual_bound(form: QcqpForm, lambda0=None, steps: int = 200, primal_value: float | None = None,
               step0: float | None = None) -> DualCertificate:
    """Projected supergradient ascent on ``g``; returns the best bound seen.

    Steps are ``step0/sqrt(k)`` along the normalised supergradient. Iterates
    that land outside ``dom g`` are pulled back by raising the binarity
    multipliers by the eigenvalue deficit.
    """
    lam = default_lambda(form) if lambda0 is None else np.asarray(lambda0, dtype=float).copy()
    if np.any(lam < 0):
        raise ValueError("lambda0 must be non-negative")
    n = form.n
    if step0 is None:
        step0 = max(1.0, float(np.max(np.abs(form.P0), initial=0.0)))
    best_val, s_star = dual_value(form, lam)
    best_lam = lam.copy()
    for k in range(1, steps + 1):
        if s_star is None:
            P, _, _ = _dual_pieces(form, lam)
            lmin = float(np.linalg.eigvalsh(P)[0])
            lam[:n] += max(0.0, -lmin) + 1e-6 * step0
        else:
            grad = np.concatenate([s_star**2 - s_star, [s_star.sum() - form.max_selected]])
            gn = float(np.linalg.norm(grad))
            if gn == 0.0:
                break
            lam = np.maximum(lam + step0 / math.sqrt(k) * grad / gn, 0.0)
        val, s_star = dual_value(form, lam)
        if val > best_val:
            best_val, best_lam = val, lam.copy()
    if primal_value is None and n <= N_CAP:
        primal_value = solve_subproblem_exact(form, form.max_selected)[1]
    gap = math.nan if primal_value is None else primal_value - best_val
    return DualCertificate(best_lam, best_val, gap)


# -- baselines -------------------------------------------------------------


def select_baseline(scenario: Scenario, M: int, strategy: str, seed: int = 0) -> np.ndarray:
    n = scenario.n
    m = min(M, n)
    s = np.zeros(n, dtype=int)
    if strategy == "random":
        s[stream(seed, "baseline-random", M).choice(n, size=m, replace=False)] = 1
    elif strategy == "proximity":
        s[np.argsort(scenario.x0 - scenario.ego.x0, kind="stable")[:m]] = 1
    elif strategy == "min_velocity":
        s[np.argsort(scenario.velocities, kind="stable")[:m]] = 1
    else:
        raise ValueError(f"unknown selection strategy {strategy!r}; expected one of {STRATEGIES}")
    return s
