"""Late fusion by the per-object max-IoU rule, with packet drops driven by the
per-helper channel error.

Detection quality comes from synthetic fixtures: the vision stack itself is
not modelled.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from cpopt.rng import stream
from cpopt.scenario import DEFAULT_R_MAX, Scenario, visual_ranges

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class DetectionRecord:
    vehicle_id: int
    object_id: int
    iou: float
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.iou <= 1.0:
            raise ValueError(f"iou must lie in [0, 1], got {self.iou}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class FusionOutcome:
    object_ids: tuple[int, ...]
    fused_iou: np.ndarray
    recall: float
    f1: float
    surviving_helpers: frozenset

    @property
    def mean_iou(self) -> float:
        return float(self.fused_iou.mean()) if self.fused_iou.size else 0.0


def detection_scores(fused_iou, threshold: float = DEFAULT_THRESHOLD):
    """``(recall, f1)`` from per-object fused IoUs.

    An object counts as a true positive when its IoU reaches ``threshold``
    and as a false positive when it was detected (IoU > 0) below it; recall is
    taken over all objects. Works row-wise on a (frames, objects) array.
    """
    iou = np.asarray(fused_iou, dtype=float)
    n = iou.shape[-1]
    tp = np.sum(iou >= threshold, axis=-1)
    fp = np.sum((iou > 0) & (iou < threshold), axis=-1)
    recall = tp / n if n else np.zeros_like(tp, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        f1 = np.where(tp > 0, 2 * precision * recall / np.where(tp > 0, precision + recall, 1.0), 0.0)
    return recall, f1


def _iou_table(records: Iterable[DetectionRecord], index: Mapping[int, int]) -> np.ndarray:
    out = np.zeros(len(index))
    for r in records:
        j = index[r.object_id]
        out[j] = max(out[j], r.iou)
    return out


def fuse_max_iou(ego: Sequence[DetectionRecord], helpers: Mapping[int, Sequence[DetectionRecord]], survivors,
                 threshold: float = DEFAULT_THRESHOLD, object_ids: Sequence[int] | None = None) -> FusionOutcome:
    """Per object, the best IoU over the ego and the helpers that got through.

    The object set is ``object_ids`` if given, otherwise every object seen by
    anyone (surviving or not); a vehicle with no record for an object
    contributes 0.
    """
    survivors = frozenset(survivors)
    unknown = survivors - set(helpers)
    if unknown:
        raise KeyError(f"survivors {sorted(unknown)} have no detection records")
    if object_ids is None:
        ids = {r.object_id for r in ego}
        for recs in helpers.values():
            ids.update(r.object_id for r in recs)
        object_ids = sorted(ids)
    object_ids = tuple(int(o) for o in object_ids)
    index = {o: j for j, o in enumerate(object_ids)}
    fused = _iou_table(ego, index)
    for h in sorted(survivors):
        fused = np.maximum(fused, _iou_table(helpers[h], index))
    recall, f1 = detection_scores(fused, threshold)
    return FusionOutcome(object_ids, fused, float(recall), float(f1), survivors)


def simulate_drops(delta_er, n_frames: int, seed: int) -> np.ndarray:
    """Boolean (n_frames, H) survival table; helper h gets through a frame
    with probability ``1 - delta_er[h]``.

    One uniform draw per (frame, helper) is compared against delta, so runs
    with the same seed are coupled: raising any delta only removes survivors.
    """
    delta = np.atleast_1d(np.asarray(delta_er, dtype=float))
    if np.any((delta < 0) | (delta > 1)):
        raise ValueError("delta_er must lie in [0, 1]")
    if n_frames < 0:
        raise ValueError("n_frames must be >= 0")
    u = stream(seed, "packet-drops").random((n_frames, delta.size))
    return u >= delta


def survivor_sets(survive: np.ndarray, helper_ids: Sequence[int]) -> list[frozenset]:
    ids = np.asarray(helper_ids)
    return [frozenset(ids[row].tolist()) for row in survive]


def fuse_frames(ego_iou, helper_iou, survive) -> np.ndarray:
    """Vectorised max rule: (frames, objects) fused IoU from ego (objects,),
    helpers (H, objects) and a (frames, H) survival table."""
    ego_iou = np.asarray(ego_iou, dtype=float)
    helper_iou = np.asarray(helper_iou, dtype=float).reshape(-1, ego_iou.size)
    survive = np.asarray(survive, dtype=bool)
    if helper_iou.shape[0] == 0:
        return np.broadcast_to(ego_iou, (survive.shape[0], ego_iou.size)).copy()
    best = np.max(np.where(survive[:, :, None], helper_iou[None, :, :], 0.0), axis=1)
    return np.maximum(best, ego_iou[None, :])


# -- fixtures --------------------------------------------------------------


@dataclass(frozen=True)
class FixtureModel:
    """Synthetic detector: an object is seen by a vehicle if it lies ahead of
    it within its visual range (the next vehicle occludes the rest); quality
    decays with the observer-object distance."""

    n_objects: int = 30
    iou_max: float = 0.9
    decay: float = 150.0  # m
    jitter: float = 0.1  # relative std of the IoU noise
    r_max: float = DEFAULT_R_MAX

    def __post_init__(self):
        if self.n_objects < 1:
            raise ValueError("n_objects must be >= 1")
        if not 0 < self.iou_max <= 1:
            raise ValueError("iou_max must lie in (0, 1]")
        if not self.decay > 0:
            raise ValueError("decay must be > 0")


def generate_fixture(scenario: Scenario, model: FixtureModel, seed: int) -> list[DetectionRecord]:
    """Detection records of the ego (id 0) and every helper for objects spread
    uniformly over the corridor from the ego to ``r_max`` past the last
    helper, using t=0 positions."""
    rng = stream(seed, "fixture")
    x = np.concatenate([[scenario.ego.x0], scenario.x0])
    ranges = np.concatenate([[x[1] - x[0] if x.size > 1 else model.r_max],
                             visual_ranges(scenario, model.r_max)[:, 0]])
    end = x[-1] + model.r_max
    objects = np.sort(rng.uniform(x[0], end, size=model.n_objects))
    gap = objects[None, :] - x[:, None]  # [vehicle, object]
    seen = (gap > 0) & (gap <= ranges[:, None])
    base = model.iou_max * np.exp(-np.maximum(gap, 0.0) / model.decay)
    noisy = np.clip(base * (1.0 + model.jitter * rng.standard_normal(gap.shape)), 0.0, 1.0)
    conf = np.clip(noisy + 0.05 * rng.standard_normal(gap.shape), 0.0, 1.0)
    vehicle_ids = [scenario.ego.id] + [h.id for h in scenario.helpers]
    out = []
    for a, vid in enumerate(vehicle_ids):
        for j in np.flatnonzero(seen[a]):
            out.append(DetectionRecord(int(vid), int(j), float(noisy[a, j]), float(conf[a, j])))
    return out


def fixture_arrays(records: Sequence[DetectionRecord], vehicle_ids: Sequence[int], n_objects: int) -> np.ndarray:
    """(len(vehicle_ids), n_objects) IoU table; missing detections are 0."""
    row = {v: i for i, v in enumerate(vehicle_ids)}
    out = np.zeros((len(vehicle_ids), n_objects))
    for r in records:
        i = row.get(r.vehicle_id)
        if i is not None:
            out[i, r.object_id] = max(out[i, r.object_id], r.iou)
    return out


def records_to_json(records: Sequence[DetectionRecord]) -> str:
    return json.dumps([asdict(r) for r in records])


def records_from_json(text: str) -> list[DetectionRecord]:
    return [DetectionRecord(**d) for d in json.loads(text)]


def group_by_vehicle(records: Iterable[DetectionRecord]) -> dict[int, list[DetectionRecord]]:
    out: dict[int, list[DetectionRecord]] = {}
    for r in records:
        out.setdefault(r.vehicle_id, []).append(r)
    return out
