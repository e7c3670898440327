"""Helper-selection criteria and their common-denominator (fractional) form.

The composite objective ``w1*f1 + w2*f2 + w3*f3`` is written as ``G(s)/D(s)``
with ``D(s) = zu * Rbar.s``:

    G(s) = zu*w1*(s.xbar)(Rbar.s) + w2*zu + er*w3*(s.vterm)(Rbar.s)

so that ``G - eta*D`` is a quadratic form in the binary selection vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from cpopt.scenario import DEFAULT_R_MAX, CameraConstants, Scenario, visual_ranges

Weights = tuple[float, float, float]
UNIT_WEIGHTS: Weights = (1.0, 1.0, 1.0)


class EmptySelectionError(ValueError):
    """Raised where the visual-range term would divide by zero."""


@dataclass(frozen=True)
class SelectionMask:
    bits: tuple[int, ...]
    M: int

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("mask entries must be 0 or 1")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if sum(self.bits) > self.M:
            raise ValueError(f"mask selects {sum(self.bits)} > M={self.M} helpers")

    @property
    def array(self) -> np.ndarray:
        return np.array(self.bits, dtype=float)

    @property
    def selected(self) -> list[int]:
        return [i for i, b in enumerate(self.bits) if b]


def as_bits(mask) -> np.ndarray:
    if isinstance(mask, SelectionMask):
        return mask.array
    return np.asarray(mask, dtype=float)


@dataclass(frozen=True)
class TimeAggregates:
    """Per-helper sums over the time grid.

    xbar[i]  = sum_t (x_it - x_0t)
    Rbar[i]  = sum_t R_it
    vterm[i] = sum_t v_i
    """

    xbar: np.ndarray
    Rbar: np.ndarray
    vterm: np.ndarray

    def __post_init__(self):
        for name in ("xbar", "Rbar", "vterm"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.xbar.shape
        if self.Rbar.shape != n or self.vterm.shape != n or len(n) != 1:
            raise ValueError("aggregate vectors must be 1-D and equally long")
        if np.any(self.Rbar <= 0):
            bad = np.flatnonzero(self.Rbar <= 0).tolist()
            raise ValueError(f"helpers {bad} have non-positive time-summed visual range")

    @property
    def n(self) -> int:
        return self.xbar.size

    @classmethod
    def from_scenario(cls, scenario: Scenario, r_max: float = DEFAULT_R_MAX) -> "TimeAggregates":
        traj = scenario.trajectories()
        xbar = (traj[1:] - traj[0]).sum(axis=1)
        Rbar = visual_ranges(scenario, r_max).sum(axis=1)
        vterm = scenario.velocities * (scenario.n_steps + 1)
        return cls(xbar, Rbar, vterm)


def f1_location(scenario: Scenario, mask) -> float:
    traj = scenario.trajectories()
    return float(as_bits(mask) @ (traj[1:] - traj[0]).sum(axis=1))


def f2_visual_range(scenario: Scenario, mask, r_max: float = DEFAULT_R_MAX) -> float:
    total = float(as_bits(mask) @ visual_ranges(scenario, r_max).sum(axis=1))
    if not total > 0:
        raise EmptySelectionError("visual-range term needs a non-empty selection with positive range")
    return 1.0 / total


def blur_per_step(v, camera: CameraConstants, mode: str = "parallel") -> np.ndarray:
    """Blur contribution of one helper at one grid point."""
    v = np.asarray(v, dtype=float)
    e, r, u, z = camera.e, camera.r, camera.u, camera.z
    if mode == "parallel":
        return v * e * r / (z * u)
    if mode == "general":
        den = v * e * u * np.sin(camera.phi) + z * u
        if np.any(den <= 0):
            raise ValueError("motion-blur denominator must be positive")
        return v * e * (r * np.cos(camera.phi) - u * camera.Q * np.sin(camera.phi)) / den
    raise ValueError(f"unknown blur mode {mode!r}")


def f3_motion_blur(scenario: Scenario, mask, mode: str = "parallel") -> float:
    per_step = blur_per_step(scenario.velocities, scenario.camera, mode)
    return float(as_bits(mask) @ per_step) * (scenario.n_steps + 1)


def composite_value(agg: TimeAggregates, camera: CameraConstants, mask, weights: Weights = UNIT_WEIGHTS) -> float:
    """``w1*f1 + w2*f2 + w3*f3`` evaluated term by term from the aggregates."""
    s = as_bits(mask)
    w1, w2, w3 = weights
    rs = float(s @ agg.Rbar)
    if not rs > 0:
        raise EmptySelectionError("empty selection")
    return w1 * float(s @ agg.xbar) + w2 / rs + w3 * camera.er / camera.zu * float(s @ agg.vterm)


def composite_G_D(agg: TimeAggregates, camera: CameraConstants, mask, weights: Weights = UNIT_WEIGHTS):
    """Numerator and denominator of the fractional objective for one mask."""
    s = as_bits(mask)
    G, D = ratio_terms(agg, camera, s[None, :], weights)
    if not D[0] > 0:
        raise EmptySelectionError("D(s) = 0: empty selection")
    return float(G[0]), float(D[0])


def ratio_terms(agg: TimeAggregates, camera: CameraConstants, masks: np.ndarray, weights: Weights = UNIT_WEIGHTS):
    """Vectorised ``(G, D)`` for a stack of masks (rows)."""
    w1, w2, w3 = weights
    zu, er = camera.zu, camera.er
    rs = masks @ agg.Rbar
    G = zu * w1 * (masks @ agg.xbar) * rs + w2 * zu + er * w3 * (masks @ agg.vterm) * rs
    D = zu * rs
    return G, D


def normalized_weights(agg: TimeAggregates, camera: CameraConstants) -> Weights:
    """Scale each criterion by its value when every helper is selected.

    f1 and f3 then lie in [0, 1] and f2 is ``sum(Rbar) / Rbar.s >= 1``.
    """
    f1_all = float(np.sum(np.abs(agg.xbar)))
    f2_all = 1.0 / float(np.sum(agg.Rbar))
    f3_all = camera.er / camera.zu * float(np.sum(agg.vterm))
    return (1.0 / f1_all if f1_all > 0 else 1.0, 1.0 / f2_all, 1.0 / f3_all if f3_all > 0 else 1.0)


def resolve_weights(spec, agg: TimeAggregates, camera: CameraConstants) -> Weights:
    if spec is None or spec == "unit":
        return UNIT_WEIGHTS
    if spec == "normalized":
        return normalized_weights(agg, camera)
    w = tuple(float(x) for x in spec)
    if len(w) != 3:
        raise ValueError("weights must be 'unit', 'normalized' or three numbers")
    return w


@dataclass(frozen=True)
class QcqpForm:
    """``min s'P0 s + q0's + h0`` s.t. cardinality and binarity constraints."""

    P0: np.ndarray
    q0: np.ndarray
    h0: float
    max_selected: int

    def __post_init__(self):
        P0 = np.asarray(self.P0, dtype=float)
        q0 = np.asarray(self.q0, dtype=float)
        object.__setattr__(self, "P0", P0)
        object.__setattr__(self, "q0", q0)
        n = q0.size
        if P0.shape != (n, n):
            raise ValueError("P0 must be N x N with N = len(q0)")
        if np.max(np.abs(P0 - P0.T), initial=0.0) >= 1e-12 * max(1.0, np.max(np.abs(P0), initial=0.0)):
            raise ValueError("P0 must be symmetric")

    @property
    def n(self) -> int:
        return self.q0.size

    def value(self, s) -> float:
        s = as_bits(s)
        return float(s @ self.P0 @ s + self.q0 @ s + self.h0)

    def values(self, masks: np.ndarray) -> np.ndarray:
        return np.einsum("ki,ij,kj->k", masks, self.P0, masks) + masks @ self.q0 + self.h0

    def constraints(self) -> list[tuple[np.ndarray, np.ndarray, float]]:
        """``(P_i, q_i, h_i)`` with ``s'P_i s + q_i's + h_i <= 0``.

        Cardinality first, then one ``s_i^2 - s_i <= 0`` per coordinate (the
        box relaxation of ``s_i in {0, 1}``).
        """
        n = self.n
        out = [(np.zeros((n, n)), np.ones(n), -float(self.max_selected))]
        for i in range(n):
            P = np.zeros((n, n))
            P[i, i] = 1.0
            q = np.zeros(n)
            q[i] = -1.0
            out.append((P, q, 0.0))
        return out

    def to_json(self) -> str:
        return json.dumps({"P0": self.P0.tolist(), "q0": self.q0.tolist(), "h0": self.h0,
                           "max_selected": self.max_selected})


def assemble_qcqp(agg: TimeAggregates, camera: CameraConstants, eta: float, weights: Weights = UNIT_WEIGHTS,
                  max_selected: int | None = None) -> QcqpForm:
    """Quadratic form of ``G(s) - eta*D(s)``."""
    if not np.isfinite(eta):
        raise ValueError("eta must be finite")
    w1, w2, w3 = weights
    zu, er = camera.zu, camera.er
    a = zu * w1 * agg.xbar + er * w3 * agg.vterm
    outer = np.outer(a, agg.Rbar)
    P0 = 0.5 * (outer + outer.T)
    q0 = -eta * zu * agg.Rbar
    return QcqpForm(P0, q0, w2 * zu, agg.n if max_selected is None else int(max_selected))


def binarity_residual(s: Sequence[float]) -> float:
    """``s'Is - 1's``; zero for binary vectors, negative inside (0, 1)."""
    s = np.asarray(s, dtype=float)
    return float(s @ s - s.sum())
