"""Closed-form C-V2X sidelink error model.

Link budgets are in dB/dBm; energy is accounted in joules from milliwatt
transmit powers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

SQRT2 = math.sqrt(2.0)
TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)


class PoolExhaustedError(ValueError):
    pass


class DeadLinkError(ValueError):
    pass


@dataclass(frozen=True)
class CommConfig:
    theta: float = 10.0  # transmissions per selection window
    W_subCh: float = 5.0
    CBR: float = 0.2
    gamma: float = 2.5
    L0: float = 47.86  # dB, free space at 1 m, 5.9 GHz
    sigma_sh: float = 3.0  # dB
    sh_mean: float = 0.0  # dB
    P_SEN: float = -90.4  # dBm
    R_ch: float = 1.0e5  # bits/s per RB
    T: float = 0.1  # s
    P_T: float = 500.0  # mW, total budget
    P_min: float | None = None  # mW; None -> max(1e-3*P_T, P_T/(100*M))
    P_tx_default: float = 23.0  # dBm, fixed power when no allocation is run

    def __post_init__(self):
        if not 0.0 <= self.CBR < 1.0:
            raise ValueError("CBR must lie in [0, 1)")
        if not 2.0 <= self.gamma <= 4.0:
            raise ValueError("gamma must lie in [2, 4]")
        if not self.sigma_sh > 0:
            raise ValueError("sigma_sh must be > 0")
        if self.theta < 1 or self.W_subCh < 1:
            raise ValueError("theta and W_subCh must be >= 1")
        if not self.P_T > 0:
            raise ValueError("P_T must be > 0")
        if self.P_min is not None and not self.P_min > 0:
            raise ValueError("P_min must be > 0")

    def power_floor(self, M: int) -> float:
        if self.P_min is not None:
            return self.P_min
        return max(1e-3 * self.P_T, self.P_T / (100.0 * M))

    @classmethod
    def from_dict(cls, d: dict) -> "CommConfig":
        return cls(**d)


@dataclass(frozen=True)
class LinkState:
    d: float  # m
    P_tx: float  # dBm
    w: float = 0.0

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError("distance must be > 0")
        if self.w < 0:
            raise ValueError("RB count must be >= 0")


def mw_to_dbm(p_mw):
    return 10.0 * np.log10(p_mw)


def dbm_to_watts(p_dbm):
    return 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)


def rb_pool(config: CommConfig) -> float:
    return config.theta * config.W_subCh * (1.0 - config.CBR)


def collision_prob(w_T: float, M: int) -> float:
    if w_T < 1:
        raise PoolExhaustedError(f"RB pool exhausted (w_T={w_T} < 1)")
    if M < 1:
        raise ValueError("M must be >= 1")
    return 1.0 - (1.0 - 1.0 / w_T) ** (M - 1)


def path_loss(config: CommConfig, d):
    return 10.0 * config.gamma * np.log10(d) + config.L0


def sensing_margin(config: CommConfig, d, P_tx_dbm):
    """Normalised margin ``Q`` inside the erf (dimensionless)."""
    return (P_tx_dbm - path_loss(config, d) - config.sh_mean - config.P_SEN) / (config.sigma_sh * SQRT2)


def erf(x):
    return special.erf(x)


def sensing_error(config: CommConfig, link: LinkState) -> float:
    """Probability that the received power falls below ``P_SEN``."""
    Q = sensing_margin(config, link.d, link.P_tx)
    # erfc keeps precision in the far tail where 1 - erf cancels
    return float(0.5 * special.erfc(Q))


def erf_series(Q, order: int):
    """Maclaurin series of erf truncated after the ``order``-th term."""
    if order < 0:
        raise ValueError("order must be >= 0")
    Q = np.asarray(Q, dtype=float)
    total = np.zeros_like(Q)
    for n in range(order + 1):
        total = total + (-1) ** n * Q ** (2 * n + 1) / (math.factorial(n) * (2 * n + 1))
    return TWO_OVER_SQRT_PI * total


def erf_series_remainder_bound(Q, order: int):
    """Alternating-series bound on ``|erf(Q) - erf_series(Q, order)|``."""
    m = order + 1
    return TWO_OVER_SQRT_PI * np.abs(Q) ** (2 * m + 1) / (math.factorial(m) * (2 * m + 1))


def sensing_error_taylor(config: CommConfig, link: LinkState, order: int = 0) -> float:
    Q = sensing_margin(config, link.d, link.P_tx)
    return float(np.clip(0.5 * (1.0 - erf_series(Q, order)), 0.0, 1.0))


def total_error(delta_col: float, delta_sen: float) -> float:
    for name, v in (("delta_col", delta_col), ("delta_sen", delta_sen)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1]")
    return delta_col * delta_sen


def throughput(config: CommConfig, link: LinkState, delta_er: float) -> float:
    return config.R_ch * link.w * (1.0 - delta_er)


def energy(config: CommConfig, link: LinkState, delta_er: float) -> float:
    """Joules per interval, inflated for retransmitted bits."""
    if delta_er >= 1.0:
        raise DeadLinkError("total error of 1: nothing gets through")
    return float(dbm_to_watts(link.P_tx)) * config.T / (1.0 - delta_er)


def link_errors(config: CommConfig, d, P_tx_dbm, M: int, w_T: float | None = None, erf_mode: str = "exact"):
    """Vectorised ``(delta_col, delta_sen, delta_er)`` for several links."""
    w_T = rb_pool(config) if w_T is None else w_T
    dcol = collision_prob(w_T, M)
    Q = sensing_margin(config, np.asarray(d, dtype=float), np.asarray(P_tx_dbm, dtype=float))
    if erf_mode == "exact":
        dsen = 0.5 * special.erfc(Q)
    elif erf_mode == "taylor":
        dsen = np.clip(0.5 * (1.0 - erf_series(Q, 0)), 0.0, 1.0)
    else:
        raise ValueError(f"unknown erf mode {erf_mode!r}")
    return dcol, dsen, dcol * dsen


def sensing_error_mc(config: CommConfig, link: LinkState, n: int, rng: np.random.Generator) -> float:
    """Monte-Carlo below-threshold rate with per-packet shadowing draws."""
    sh = rng.normal(config.sh_mean, config.sigma_sh, size=n)
    p_rx = link.P_tx - 10.0 * config.gamma * math.log10(link.d) - config.L0 - sh
    return float(np.mean(p_rx < config.P_SEN))


def collision_prob_mc(w_T: int, M: int, trials: int, rng: np.random.Generator) -> float:
    """Fraction of trials in which vehicle 0's uniformly drawn RB is also
    drawn by one of the other ``M-1`` vehicles."""
    w = int(w_T)
    if M == 1:
        return 0.0
    picks = rng.integers(0, w, size=(trials, M))
    return float(np.mean(np.any(picks[:, 1:] == picks[:, :1], axis=1)))


LINK_CSV_FIELDS = ("d", "P_tx", "w", "delta_col", "delta_sen", "delta_er", "throughput", "energy")


def link_report(config: CommConfig, links, M: int, w_T: float | None = None) -> list[dict]:
    w_T = rb_pool(config) if w_T is None else w_T
    rows = []
    for link in links:
        dcol = collision_prob(w_T, M)
        dsen = sensing_error(config, link)
        der = total_error(dcol, dsen)
        rows.append(dict(d=link.d, P_tx=link.P_tx, w=link.w, delta_col=dcol, delta_sen=dsen, delta_er=der,
                         throughput=throughput(config, link, der), energy=energy(config, link, der)))
    return rows
