"""3D multi-object tracking: 2D motion association with ID lift to 3D.

Detections are flattened to plan-view boxes, associated frame to frame by a
constant-velocity Kalman filter plus Hungarian matching on center distance,
and the resulting IDs are attached back onto the full 3D boxes through a
Euclidean gate.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .detect import Detection
from .geometry import ObjectClass, OrientedBox3D

GATE_COST = 1.0e9  # cost assigned to pairs outside the association gate
MIN_BOX2D_EXTENT = 0.05


class TrackState(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"


@dataclass
class Box2D:
    x: float
    y: float
    w: float
    l: float

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0):
            raise ValueError("2D box dims must be positive")


@dataclass
class Track2D:
    box: Box2D
    id: int
    state: TrackState
    mean: np.ndarray  # (6,) x, y, w, l, vx, vy
    cov: np.ndarray  # (6, 6)
    hits: int
    misses: int


@dataclass
class Track3D:
    box: OrientedBox3D
    cls: ObjectClass
    id: int  # -1 = no track within the gate


@dataclass
class TrackerConfig:
    d_o: float = 2.0  # m, lift gate
    gate_assoc: float = 3.0  # m, association gate
    n_init: int = 3
    max_age: int = 5
    process_noise: float = 0.1
    measurement_noise: float = 0.1
    lift: str = "first"  # or "nearest"

    def __post_init__(self):
        if self.d_o <= 0:
            raise ValueError("d_o must be positive")
        if self.n_init < 1 or self.max_age < 1:
            raise ValueError("n_init and max_age must be >= 1")
        if self.lift not in ("first", "nearest"):
            raise ValueError(f"unknown lift mode {self.lift!r}")


# Constant-velocity model over (x, y, w, l, vx, vy); dt is one frame.
_F = np.eye(6)
_F[0, 4] = 1.0
_F[1, 5] = 1.0
_H = np.zeros((4, 6))
_H[:4, :4] = np.eye(4)


def _initial_covariance(cfg: TrackerConfig) -> np.ndarray:
    r = cfg.measurement_noise
    return np.diag([r * r, r * r, r * r, r * r, 100.0 * r * r, 100.0 * r * r])


def _process_noise(cfg: TrackerConfig) -> np.ndarray:
    q = cfg.process_noise
    # Dims are modeled static: tiny process noise only.
    return np.diag([0.25 * q * q, 0.25 * q * q, 0.01 * q * q, 0.01 * q * q, q * q, q * q])


class Tracker2D:
    """Single-owner association state; one instance per frame stream."""

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.tracks: list[Track2D] = []
        self.next_id = 0
        self.last_t: float | None = None
        self.last_assignment_cost = 0.0  # summed matched center distance

    def _predict_all(self):
        q = _process_noise(self.config)
        for tr in self.tracks:
            tr.mean = _F @ tr.mean
            tr.cov = _F @ tr.cov @ _F.T + q
            tr.box = _mean_to_box(tr.mean)

    def _update(self, tr: Track2D, det: Box2D):
        r = self.config.measurement_noise
        z = np.array([det.x, det.y, det.w, det.l])
        s = _H @ tr.cov @ _H.T + np.eye(4) * (r * r)
        k = tr.cov @ _H.T @ np.linalg.inv(s)
        tr.mean = tr.mean + k @ (z - _H @ tr.mean)
        tr.cov = (np.eye(6) - k @ _H) @ tr.cov
        tr.cov = 0.5 * (tr.cov + tr.cov.T)
        tr.box = _mean_to_box(tr.mean)

    def _spawn(self, det: Box2D):
        mean = np.array([det.x, det.y, det.w, det.l, 0.0, 0.0])
        state = TrackState.CONFIRMED if self.config.n_init <= 1 else TrackState.TENTATIVE
        self.tracks.append(
            Track2D(
                box=det,
                id=self.next_id,
                state=state,
                mean=mean,
                cov=_initial_covariance(self.config),
                hits=1,
                misses=0,
            )
        )
        self.next_id += 1

    def associate(self, dets: list[Box2D]) -> list[Track2D]:
        """Predict, match, update, and manage the track lifecycle.

        Returns immutable snapshots of all live tracks, in creation order.
        """
        self._predict_all()
        n_t, n_d = len(self.tracks), len(dets)
        matched_t, matched_d = set(), set()
        self.last_assignment_cost = 0.0
        if n_t and n_d:
            dist = np.empty((n_t, n_d))
            for i, tr in enumerate(self.tracks):
                for j, det in enumerate(dets):
                    dist[i, j] = math.hypot(tr.mean[0] - det.x, tr.mean[1] - det.y)
            cost = np.where(dist <= self.config.gate_assoc, dist, GATE_COST)
            rows, cols = linear_sum_assignment(cost)
            for i, j in zip(rows, cols):
                if dist[i, j] <= self.config.gate_assoc:
                    matched_t.add(i)
                    matched_d.add(j)
                    self.last_assignment_cost += dist[i, j]
                    self._update(self.tracks[i], dets[j])
        for i, tr in enumerate(self.tracks):
            if i in matched_t:
                tr.hits += 1
                tr.misses = 0
                if tr.state is TrackState.TENTATIVE and tr.hits >= self.config.n_init:
                    tr.state = TrackState.CONFIRMED
            else:
                tr.misses += 1
                tr.hits = 0
        self.tracks = [tr for tr in self.tracks if tr.misses < self.config.max_age]
        for j, det in enumerate(dets):
            if j not in matched_d:
                self._spawn(det)
        return [
            replace(tr, mean=tr.mean.copy(), cov=tr.cov.copy()) for tr in self.tracks
        ]


def _mean_to_box(mean: np.ndarray) -> Box2D:
    return Box2D(
        float(mean[0]),
        float(mean[1]),
        max(float(mean[2]), MIN_BOX2D_EXTENT),
        max(float(mean[3]), MIN_BOX2D_EXTENT),
    )


def project_to_2d(dets: list[Detection]) -> list[Box2D]:
    """Drop z, h, theta, and class; order and length preserved."""
    return [Box2D(d.box.x, d.box.y, d.box.w, d.box.l) for d in dets]


def lift_to_3d(
    dets: list[Detection],
    tracks2d: list[Track2D],
    d_o: float,
    mode: str = "first",
) -> list[Track3D]:
    """Attach 2D track IDs to 3D detections through a plan-distance gate.

    "first" takes the first track in list order strictly inside d_o;
    "nearest" the closest one inside the gate. Unmatched detections carry -1.
    """
    if d_o <= 0:
        raise ValueError("d_o must be positive")
    out = []
    for det in dets:
        chosen = -1
        best = math.inf
        for tr in tracks2d:
            dist = math.hypot(det.box.x - tr.box.x, det.box.y - tr.box.y)
            if dist < d_o:
                if mode == "first":
                    chosen = tr.id
                    break
                if dist < best:
                    best = dist
                    chosen = tr.id
        out.append(Track3D(box=det.box, cls=det.cls, id=chosen))
    return out


def track_frame(tracker: Tracker2D, dets: list[Detection], t: float | None = None) -> list[Track3D]:
    """One tracking step: project to 2D, associate, lift IDs back to 3D."""
    if t is not None:
        if tracker.last_t is not None and t <= tracker.last_t:
            raise ValueError(f"out-of-order timestamp {t} after {tracker.last_t}")
        tracker.last_t = t
    tracks2d = tracker.associate(project_to_2d(dets))
    return lift_to_3d(dets, tracks2d, tracker.config.d_o, tracker.config.lift)
