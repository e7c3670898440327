"""Oracle suites behind ``cpopt verify``.

Each check recomputes a library result by an independent route (brute force,
quadrature, Monte Carlo, finite differences, grid search) and reports
pass/fail. Sizes are kept small so the whole suite runs in seconds.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from cpopt.allocator import Allocation, dinkelbach_allocate, ratio_parts
from cpopt.channel import (
    CommConfig,
    collision_prob,
    collision_prob_mc,
    erf,
    erf_series,
    erf_series_remainder_bound,
    path_loss,
    rb_pool,
)
from cpopt.objective import TimeAggregates, assemble_qcqp, composite_G_D, normalized_weights
from cpopt.rng import replication_seed, stream
from cpopt.scenario import ScenarioConfig, generate_scenario
from cpopt.selector import dinkelbach_select, dual_bound, mask_table, solve_subproblem_exact


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))


def _instances(n_helpers: int, count: int, seed: int):
    cfg = ScenarioConfig(n_helpers=n_helpers)
    for rep in range(count):
        sc = generate_scenario(cfg, replication_seed(seed, rep))
        agg = TimeAggregates.from_scenario(sc, cfg.effective_r_max)
        yield sc, agg, normalized_weights(agg, sc.camera)


def check_selection(seed: int, count: int = 20, n: int = 8) -> Check:
    worst = 0.0
    for sc, agg, w in _instances(n, count, seed):
        for M in range(1, n + 1):
            best = math.inf
            for k in range(1, M + 1):
                for combo in itertools.combinations(range(n), k):
                    s = np.zeros(n)
                    s[list(combo)] = 1
                    G, D = composite_G_D(agg, sc.camera, s, w)
                    best = min(best, G / D)
            res = dinkelbach_select(agg, sc.camera, M, weights=w)
            worst = max(worst, abs(res.ratio - best) / abs(best))
            if worst > 1e-9:
                return Check("selection_vs_bruteforce", False, f"M={M}: {res.ratio} vs {best}")
    return Check("selection_vs_bruteforce", True, f"{count} scenarios, max rel diff {worst:.2e}")


def check_qcqp(seed: int, count: int = 5, n: int = 10) -> Check:
    worst = 0.0
    rng = stream(seed, "verify-eta")
    for sc, agg, w in _instances(n, count, seed):
        eta = float(rng.uniform(0.5, 5.0))
        form = assemble_qcqp(agg, sc.camera, eta, w)
        masks = mask_table(n)[1:]
        for s in masks[:: max(1, len(masks) // 200)]:
            G, D = composite_G_D(agg, sc.camera, s, w)
            direct = G - eta * D
            worst = max(worst, abs(form.value(s) - direct) / max(1.0, abs(direct)))
    return Check("qcqp_fidelity", worst <= 1e-9, f"max rel diff {worst:.2e}")


def check_dual(seed: int, count: int = 20, n: int = 6) -> Check:
    bad = 0
    for sc, agg, w in _instances(n, count, seed):
        M = 3
        form = assemble_qcqp(agg, sc.camera, 2.0, w, M)
        primal = solve_subproblem_exact(form, M)[1]
        cert = dual_bound(form, steps=50, primal_value=primal)
        bad += int(cert.bound > primal + 1e-9 * max(1.0, abs(primal)))
    return Check("dual_soundness", bad == 0, f"{bad} violations in {count}")


def check_collision(seed: int, trials: int = 200_000) -> Check:
    p = collision_prob(50, 5)
    closed = 1 - 0.98**4
    mc = collision_prob_mc(50, 5, trials, stream(seed, "verify-collision"))
    sigma = math.sqrt(p * (1 - p) / trials)
    ok = abs(p - closed) <= 1e-12 and abs(mc - p) <= 3 * sigma
    return Check("collision_prob", ok, f"closed {p:.6f}, MC {mc:.6f} (3sigma {3 * sigma:.1e})")


def check_erf() -> Check:
    worst = 0.0
    for q in np.linspace(-4, 4, 81):
        ref = 2 / math.sqrt(math.pi) * integrate.quad(lambda t: math.exp(-t * t), 0, q, epsabs=1e-14)[0]
        worst = max(worst, abs(float(erf(q)) - ref))
    return Check("erf_vs_quadrature", worst <= 1e-10, f"max abs diff {worst:.1e}")


def check_taylor() -> Check:
    Q = np.linspace(-1, 1, 201)
    ok = all(np.all(np.abs(erf(Q) - erf_series(Q, k)) <= erf_series_remainder_bound(Q, k) + 1e-15)
             for k in range(6))
    return Check("taylor_remainder", ok, "orders 0..5 on |Q| <= 1")


def grid_oracle(config: CommConfig, d, n: int = 200) -> float:
    """Best N/D over an n x n grid of (P1, P2) inside the power budget times
    an n-point grid of w1 (w2 = w_T - w1)."""
    p_min, w_T = config.power_floor(2), rb_pool(config)
    ps = np.linspace(p_min, config.P_T - p_min, n)
    P1, P2 = np.meshgrid(ps, ps, indexing="ij")
    ok = P1 + P2 <= config.P_T * (1 + 1e-12)
    P1, P2 = P1[ok], P2[ok]
    best = -math.inf
    for w1 in np.linspace(0.0, w_T, n):
        w2 = w_T - w1
        for lo in range(0, P1.size, 20000):
            sl = slice(lo, lo + 20000)
            vals = _ratio_vec(config, d, P1[sl], P2[sl], w1, w2)
            best = max(best, float(vals.max()))
    return best


def _ratio_vec(config: CommConfig, d, P1, P2, w1, w2):
    # written out from the link budget, independent of the allocator code
    dcol = collision_prob(rb_pool(config), 2)
    s = config.sigma_sh * math.sqrt(2.0)
    out_n = np.zeros_like(P1)
    out_d = np.zeros_like(P1)
    for P, dist, w in ((P1, d[0], w1), (P2, d[1], w2)):
        Q = (10 * np.log10(P) - path_loss(config, dist) - config.sh_mean - config.P_SEN) / s
        ok = 1 - dcol * 0.5 * special.erfc(Q)
        out_n += config.R_ch * w * ok
        out_d += config.T / 1000.0 * P / ok
    return out_n / out_d


def check_allocation(seed: int, count: int = 3, n: int = 100) -> Check:
    config = CommConfig()
    rng = stream(seed, "verify-alloc")
    worst = 0.0
    for _ in range(count):
        d = np.sort(rng.uniform(20, 400, size=2))
        alloc, _ = dinkelbach_allocate(config, d)
        N, D = ratio_parts(config, d, alloc)
        ref = grid_oracle(config, d, n)
        worst = max(worst, abs(N / D - ref) / ref)
    return Check("allocation_vs_grid", worst <= 0.01, f"max rel diff {worst:.2e} ({n}-point grids)")


def _margin(config: CommConfig, d, P):
    return (10 * np.log10(P) - path_loss(config, d) - config.sh_mean - config.P_SEN) / (config.sigma_sh * math.sqrt(2))


def fd_oracle_terms(config: CommConfig, d, x, upper=None):
    """Per-link throughput deficit ``R*w_i*delta_i``, the same deficit up to
    a P-independent offset, and energy ``T*P_i/(1-delta_i)``, written from
    the link budget.

    Both N and D are sums of per-link terms, so a partial derivative only
    needs its own link's term; differencing the totals would drown the
    P-sensitivity in the ``R*w_T`` offset and the other links. The sensing
    error uses ``erfc(Q)/2`` where Q >= 0 and ``1 - erfc(-Q)/2`` (offset
    dropped) where Q < 0, so its variation keeps full precision on both
    tails. ``upper`` fixes that branch per link so +-h points agree.
    """
    M = len(d)
    P, w = x[:M], x[M:]
    dcol = collision_prob(rb_pool(config), M)
    Q = _margin(config, d, P)
    upper = Q >= 0 if upper is None else upper
    varying = np.where(upper, 0.5 * special.erfc(Q), -0.5 * special.erfc(-Q))
    delta = dcol * np.where(upper, varying, 1.0 + varying)
    return config.R_ch * w * delta, config.R_ch * w * dcol * varying, config.T / 1000.0 * P / (1 - delta)


def check_gradients(seed: int, count: int = 20, h: float = 1e-5) -> Check:
    config = CommConfig()
    rng = stream(seed, "verify-grad")
    worst = 0.0
    for _ in range(count):
        M = int(rng.integers(2, 6))
        d = np.sort(rng.uniform(20, 400, size=M))
        p_min = config.power_floor(M)
        x = np.concatenate([p_min + (config.P_T - M * p_min) * rng.dirichlet(np.ones(M)),
                            rb_pool(config) * rng.dirichlet(np.ones(M))])
        _, _, dN, dD = ratio_parts(config, d, Allocation.from_vector(x), grad=True)
        for i in range(2 * M):
            link = i % M
            e = np.zeros(2 * M)
            e[i] = h * max(1.0, abs(x[i]))
            upper = _margin(config, d, x[:M]) >= 0
            Fp, Vp, Dp = fd_oracle_terms(config, d, x + e, upper)
            Fm, Vm, Dm = fd_oracle_terms(config, d, x - e, upper)
            if i >= M:
                fd_N = config.R_ch - (Fp[link] - Fm[link]) / (2 * e[i])
            else:
                fd_N = -(Vp[link] - Vm[link]) / (2 * e[i])
            fd_D = (Dp[link] - Dm[link]) / (2 * e[i])
            for fd, an in ((fd_N, dN[i]), (fd_D, dD[i])):
                if an != 0.0 or fd != 0.0:
                    worst = max(worst, abs(fd - an) / max(abs(an), abs(fd)))
    return Check("gradients_vs_fd", worst <= 1e-5, f"max rel diff {worst:.1e}")


def run_all(seed: int = 0) -> list[Check]:
    return [
        check_selection(seed),
        check_qcqp(seed),
        check_dual(seed),
        check_collision(seed),
        check_erf(),
        check_taylor(),
        check_gradients(seed),
        check_allocation(seed),
    ]
