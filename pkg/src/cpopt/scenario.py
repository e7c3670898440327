"""Highway scenarios: PPP vehicle arrivals, truncated-Gaussian speeds and
constant-velocity kinematics over the cooperative-perception interval."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from cpopt.rng import stream

DEFAULT_R_MAX = 150.0


@dataclass(frozen=True)
class Vehicle:
    id: int
    x0: float
    y0: float
    v: float

    def __post_init__(self):
        if self.x0 < 0:
            raise ValueError(f"vehicle {self.id}: x0 must be >= 0, got {self.x0}")


@dataclass(frozen=True)
class CameraConstants:
    """Pinhole camera used for the motion-blur criterion.

    ``r`` and ``u`` only ever appear as ``r/u`` (focal length in pixels) next
    to ``z``, so any consistent length unit works.
    """

    e: float = 0.01  # exposure time [s]
    r: float = 0.008  # focal length [m]
    u: float = 1e-5  # CCD pixel size [m]
    z: float = 20.0  # perpendicular distance to object [m]
    Q: float = 0.0  # object start position [px]
    phi: float = 0.0  # motion direction vs. image plane [rad]

    def __post_init__(self):
        for name in ("e", "r", "u", "z"):
            if not getattr(self, name) > 0:
                raise ValueError(f"camera.{name} must be > 0")
        if self.Q < 0:
            raise ValueError("camera.Q must be >= 0")
        if not 0.0 <= self.phi <= math.pi / 2:
            raise ValueError("camera.phi must lie in [0, pi/2]")

    @property
    def zu(self) -> float:
        return self.z * self.u

    @property
    def er(self) -> float:
        return self.e * self.r


@dataclass(frozen=True)
class ArrivalModel:
    rho: float  # vehicles per meter
    span: tuple[float, float] = (0.0, 1000.0)

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        a, b = self.span
        if b < a:
            raise ValueError("span must satisfy b >= a")

    @property
    def mean_count(self) -> float:
        a, b = self.span
        return self.rho * (b - a)


@dataclass(frozen=True)
class VelocityModel:
    mu: float = 30.0
    sigma: float = 5.0
    v_min: float = 20.0
    v_max: float = 40.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be < v_max")

    @property
    def alpha(self) -> float:
        return (self.v_min - self.mu) / self.sigma

    @property
    def beta(self) -> float:
        return (self.v_max - self.mu) / self.sigma


def _as_rng(seed, name: str) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return stream(int(seed), name)


def sample_positions(model: ArrivalModel, seed) -> np.ndarray:
    """PPP arrivals on ``model.span`` as cumulative exponential gaps.

    The sequence is cut at the first arrival beyond ``b``; an empty array is a
    valid outcome.
    """
    rng = _as_rng(seed, "positions")
    a, b = model.span
    out = []
    x = a
    # draw gaps in blocks to avoid a python-level draw per vehicle
    block = max(8, int(2 * model.mean_count) + 8)
    while True:
        gaps = rng.exponential(1.0 / model.rho, size=block)
        xs = x + np.cumsum(gaps)
        inside = xs[xs <= b]
        out.append(inside)
        if inside.size < block:
            break
        x = xs[-1]
    return np.concatenate(out)


def sample_arrivals(rho: float, n: int, seed, start: float = 0.0) -> np.ndarray:
    """First ``n`` PPP arrivals after ``start`` (no upper cut)."""
    rng = _as_rng(seed, "positions")
    return start + np.cumsum(rng.exponential(1.0 / rho, size=n))


def sample_velocity(model: VelocityModel, seed, size=None):
    """Truncated-normal speed(s) by inverse-CDF sampling (scipy ``truncnorm``)."""
    rng = _as_rng(seed, "velocities")
    draws = stats.truncnorm.rvs(
        model.alpha, model.beta, loc=model.mu, scale=model.sigma, size=size, random_state=rng
    )
    # guard the ulp-level overshoot of the ppf at the bounds
    draws = np.clip(draws, model.v_min, model.v_max)
    return float(draws) if size is None else draws


def position_at(vehicle: Vehicle, t: float) -> float:
    if t < 0:
        raise ValueError("t must be >= 0")
    return vehicle.x0 + vehicle.v * t


@dataclass(frozen=True)
class Scenario:
    ego: Vehicle
    helpers: tuple[Vehicle, ...]
    horizon_T: float
    dt: float
    camera: CameraConstants = field(default_factory=CameraConstants)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "helpers", tuple(self.helpers))
        if not self.horizon_T > 0 or not self.dt > 0:
            raise ValueError("horizon_T and dt must be > 0")
        steps = self.horizon_T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("horizon_T / dt must be a whole number of steps")
        xs = [h.x0 for h in self.helpers]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("helper positions must be strictly increasing")
        if xs and xs[0] <= self.ego.x0:
            raise ValueError("helpers must start ahead of the ego vehicle")

    @property
    def n(self) -> int:
        return len(self.helpers)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon_T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def velocities(self) -> np.ndarray:
        return np.array([h.v for h in self.helpers])

    @property
    def x0(self) -> np.ndarray:
        return np.array([h.x0 for h in self.helpers])

    def trajectories(self) -> np.ndarray:
        """(N+1) x n_t positions; row 0 is the ego."""
        x0 = np.concatenate([[self.ego.x0], self.x0])
        v = np.concatenate([[self.ego.v], self.velocities])
        return x0[:, None] + v[:, None] * self.times[None, :]

    def to_dict(self) -> dict:
        return {
            "ego": asdict(self.ego),
            "helpers": [asdict(h) for h in self.helpers],
            "horizon_T": self.horizon_T,
            "dt": self.dt,
            "camera": asdict(self.camera),
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            ego=Vehicle(**d["ego"]),
            helpers=tuple(Vehicle(**h) for h in d["helpers"]),
            horizon_T=float(d["horizon_T"]),
            dt=float(d["dt"]),
            camera=CameraConstants(**d["camera"]),
            seed=int(d["seed"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))


def relative_gap(scenario: Scenario, i: int, t: float) -> float:
    """Gap from helper ``i`` to helper ``i+1`` at time ``t`` (can go negative
    after an overtake)."""
    if not 0 <= i < scenario.n - 1:
        raise IndexError(f"helper index {i} out of range for N={scenario.n}")
    a, b = scenario.helpers[i], scenario.helpers[i + 1]
    return t * (b.v - a.v) + (b.x0 - a.x0)


def visual_ranges(scenario: Scenario, r_max: float = DEFAULT_R_MAX) -> np.ndarray:
    """N x n_t visual range of each helper on the time grid.

    The range of a vehicle is the distance to the nearest vehicle strictly
    ahead of it; this is ``x_{i+1,t} - x_{i,t}`` while the order holds. A
    vehicle with nobody ahead sees ``r_max``.
    """
    traj = scenario.trajectories()
    pos = traj[1:]  # helpers
    diff = traj[None, :, :] - pos[:, None, :]  # [i, j, t] = x_j - x_i
    ahead = np.where(diff > 0, diff, np.inf)
    nearest = ahead.min(axis=1)
    return np.where(np.isfinite(nearest), nearest, r_max)


def count_overtakes(scenario: Scenario) -> int:
    """Number of adjacent-pair order changes at the end of the interval."""
    traj = scenario.trajectories()
    final = traj[:, -1]
    order = np.argsort(final, kind="stable")
    # inversions relative to the t=0 ordering 0..N
    inv = 0
    for a in range(len(order)):
        inv += int(np.sum(order[a + 1:] < order[a]))
    return inv


@dataclass(frozen=True)
class ScenarioConfig:
    n_helpers: int = 10
    rho: float = 0.01
    velocity: VelocityModel = field(default_factory=VelocityModel)
    horizon_T: float = 5.0
    dt: float = 0.1
    camera: CameraConstants = field(default_factory=CameraConstants)
    r_max: float = DEFAULT_R_MAX
    road_length: float = 2000.0

    def __post_init__(self):
        if self.n_helpers < 1:
            raise ValueError("n_helpers must be >= 1")

    @property
    def effective_r_max(self) -> float:
        return min(self.r_max, self.road_length)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "velocity" in d:
            d["velocity"] = VelocityModel(**d["velocity"])
        if "camera" in d:
            d["camera"] = CameraConstants(**d["camera"])
        return cls(**d)


def generate_scenario(config: ScenarioConfig, seed: int) -> Scenario:
    """Ego at the origin followed by the first ``n_helpers`` PPP arrivals."""
    pos = sample_arrivals(config.rho, config.n_helpers, stream(seed, "positions"))
    v = sample_velocity(config.velocity, stream(seed, "velocities"), size=config.n_helpers + 1)
    ego = Vehicle(0, 0.0, 0.0, float(v[0]))
    helpers = tuple(Vehicle(i + 1, float(x), 0.0, float(vi)) for i, (x, vi) in enumerate(zip(pos, v[1:])))
    return Scenario(ego, helpers, config.horizon_T, config.dt, config.camera, seed)


def scenario_from_arrays(x0: Sequence[float], v: Sequence[float], ego_v: float = 0.0, horizon_T: float = 1.0,
                         dt: float = 0.5, camera: CameraConstants | None = None) -> Scenario:
    """Convenience constructor from raw helper positions/speeds."""
    helpers = tuple(Vehicle(i + 1, float(x), 0.0, float(vi)) for i, (x, vi) in enumerate(zip(x0, v)))
    return Scenario(Vehicle(0, 0.0, 0.0, float(ego_v)), helpers, horizon_T, dt, camera or CameraConstants())
