"""Oriented 3D detection: pluggable backends plus box-encoding/loss math.

Two detector backends share one output type: a ground-truth oracle with
configurable corruption, and a voxel-clustering baseline. The residual
encoding and the localization / classification / direction losses are
standalone functions usable without either backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .geometry import ObjectClass, OrientedBox3D, normalize_angle
from .preproc import GeofenceBounds
from .scene import AgentState

# Footprint threshold separating vehicles from pedestrians in the cluster
# backend, matching the onboard size split.
CLUSTER_VEHICLE_FOOTPRINT = 2.5  # m
MIN_CLUSTER_EXTENT = 0.05  # m, keeps degenerate clusters within box invariants


@dataclass
class Detection:
    box: OrientedBox3D
    cls: ObjectClass
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass
class DetectorNoise:
    """Corruption model for the oracle backend."""

    sigma_pos: float = 0.0  # m, per axis
    sigma_dim: float = 0.0  # m, per axis
    sigma_theta: float = 0.0  # rad
    p_miss: float = 0.0
    fp_rate: float = 0.0  # expected clutter boxes per frame

    def __post_init__(self):
        if not 0.0 <= self.p_miss <= 1.0:
            raise ValueError("p_miss must be in [0, 1]")
        if self.fp_rate < 0:
            raise ValueError("fp_rate must be nonnegative")


@dataclass
class ClusterParams:
    voxel: float = 0.3  # m
    min_points: int = 10
    ground_z: float = -4.74  # m, ground height in H-Coor

    def __post_init__(self):
        if self.voxel <= 0:
            raise ValueError("voxel must be positive")
        if self.min_points < 1:
            raise ValueError("min_points must be >= 1")


@dataclass
class BoxResiduals:
    """Normalized offsets / log-ratios of a target box against an anchor."""

    dx: float
    dy: float
    dz: float
    dw: float
    dl: float
    dh: float
    dtheta: float

    def __post_init__(self):
        if not -1.0 <= self.dtheta <= 1.0:
            raise ValueError(f"dtheta {self.dtheta} outside [-1, 1]")

    def as_tuple(self) -> tuple[float, ...]:
        return (self.dx, self.dy, self.dz, self.dw, self.dl, self.dh, self.dtheta)


@dataclass
class LossWeights:
    beta_loc: float = 2.0
    beta_cls: float = 1.0
    beta_dir: float = 0.2
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        for name in ("beta_loc", "beta_cls", "beta_dir", "alpha", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def _clutter_box(rng: np.random.Generator, bounds: GeofenceBounds) -> Detection:
    w = rng.uniform(0.4, 2.6)
    l = rng.uniform(0.4, 12.0)
    h = rng.uniform(1.3, 4.5)
    box = OrientedBox3D(
        rng.uniform(bounds.x_min, bounds.x_max),
        rng.uniform(bounds.y_min, bounds.y_max),
        rng.uniform(bounds.z_min, bounds.z_max),
        w, l, h,
        rng.uniform(-math.pi, math.pi),
    )
    cls = ObjectClass.VEHICLE if max(w, l) >= CLUSTER_VEHICLE_FOOTPRINT else ObjectClass.PEDESTRIAN
    return Detection(box=box, cls=cls, score=float(rng.uniform(0.0, 1.0)))


def detect_oracle(
    agents: list[AgentState],
    noise: DetectorNoise,
    seed,
    bounds: GeofenceBounds | None = None,
) -> list[Detection]:
    """Ground-truth detector: drop, perturb, and add Poisson clutter.

    Deterministic under `seed`. With all-zero noise the survivors equal the
    agent boxes exactly.
    """
    rng = np.random.default_rng(seed)
    if bounds is None:
        bounds = GeofenceBounds()
    dets = []
    for agent in agents:
        if noise.p_miss > 0 and rng.random() < noise.p_miss:
            continue
        c = agent.center.copy()
        dims = np.array(agent.dims, dtype=float)
        theta = agent.heading
        if noise.sigma_pos > 0:
            c = c + rng.normal(0.0, noise.sigma_pos, 3)
        if noise.sigma_dim > 0:
            dims = np.maximum(dims + rng.normal(0.0, noise.sigma_dim, 3), MIN_CLUSTER_EXTENT)
        if noise.sigma_theta > 0:
            theta = theta + rng.normal(0.0, noise.sigma_theta)
        box = OrientedBox3D(c[0], c[1], c[2], dims[0], dims[1], dims[2], theta)
        dets.append(Detection(box=box, cls=agent.cls, score=1.0))
    for _ in range(int(rng.poisson(noise.fp_rate))):
        dets.append(_clutter_box(rng, bounds))
    return dets


def _voxel_components(vox: np.ndarray) -> np.ndarray:
    """26-connected component label per input voxel coordinate row."""
    vox = vox - vox.min(axis=0)
    if np.any(vox.max(axis=0) >= (1 << 20)):
        raise ValueError(
            "voxel grid spans over 2^20 cells per axis; geofence the frame "
            "or use a larger voxel size"
        )
    keys = vox[:, 0].astype(np.int64) + (vox[:, 1].astype(np.int64) << 21) + (
        vox[:, 2].astype(np.int64) << 42
    )
    uniq, inverse = np.unique(keys, return_inverse=True)
    n = len(uniq)
    rows, cols = [], []
    offsets = [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
        if (dx, dy, dz) > (0, 0, 0)  # half the neighborhood; graph is undirected
    ]
    for dx, dy, dz in offsets:
        nk = uniq + dx + (np.int64(dy) << 21) + (np.int64(dz) << 42)
        pos = np.searchsorted(uniq, nk)
        ok = (pos < n) & (uniq[np.minimum(pos, n - 1)] == nk)
        rows.append(np.flatnonzero(ok))
        cols.append(pos[ok])
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
    else:
        r = c = np.empty(0, dtype=int)
    graph = sparse.coo_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return labels[inverse]


def detect_cluster(frame_h, params: ClusterParams) -> list[Detection]:
    """Voxel connected-component detector over a leveled (H-Coor) frame."""
    xyz = frame_h.xyz
    keep = xyz[:, 2] > params.ground_z + 0.2
    pts = xyz[keep]
    if len(pts) == 0:
        return []
    vox = np.floor(pts / params.voxel).astype(np.int64)
    labels = _voxel_components(vox)
    dets = []
    for lbl in np.unique(labels):
        member = pts[labels == lbl]
        if len(member) < params.min_points:
            continue
        centroid = member.mean(axis=0)
        xy = member[:, :2] - centroid[:2]
        cov = xy.T @ xy / len(xy)
        evals, evecs = np.linalg.eigh(cov)
        major = evecs[:, int(np.argmax(evals))]
        theta = normalize_angle(math.atan2(major[1], major[0]))
        along = xy @ major
        across = xy @ np.array([-major[1], major[0]])
        l = max(float(along.max() - along.min()), MIN_CLUSTER_EXTENT)
        w = max(float(across.max() - across.min()), MIN_CLUSTER_EXTENT)
        h = max(float(member[:, 2].max() - member[:, 2].min()), MIN_CLUSTER_EXTENT)
        cls = (
            ObjectClass.VEHICLE
            if max(w, l) >= CLUSTER_VEHICLE_FOOTPRINT
            else ObjectClass.PEDESTRIAN
        )
        box = OrientedBox3D(*centroid, w, l, h, theta)
        dets.append(Detection(box=box, cls=cls, score=min(1.0, len(member) / 100.0)))
    return dets


# ---------------------------------------------------------------------------
# Residual encoding and losses.
# ---------------------------------------------------------------------------

def encode_box_residuals(gt: OrientedBox3D, anchor: OrientedBox3D) -> BoxResiduals:
    """Planar offsets over the anchor footprint diagonal, log dim ratios,
    and the sine of the heading difference."""
    if not (gt.w > 0 and gt.l > 0 and gt.h > 0):
        raise ValueError("ground-truth dims must be positive")
    d_a = anchor.footprint_diagonal
    return BoxResiduals(
        dx=(gt.x - anchor.x) / d_a,
        dy=(gt.y - anchor.y) / d_a,
        dz=(gt.z - anchor.z) / anchor.h,
        dw=math.log(gt.w / anchor.w),
        dl=math.log(gt.l / anchor.l),
        dh=math.log(gt.h / anchor.h),
        dtheta=math.sin(gt.theta - anchor.theta),
    )


def decode_box_residuals(
    r: BoxResiduals, anchor: OrientedBox3D, dir_flipped: bool = False
) -> OrientedBox3D:
    """Invert the residual encoding; adds pi when the direction bit is set."""
    if abs(r.dtheta) > 1.0:
        raise ValueError(f"dtheta {r.dtheta} outside [-1, 1]")
    d_a = anchor.footprint_diagonal
    theta = anchor.theta + math.asin(r.dtheta)
    if dir_flipped:
        theta += math.pi
    return OrientedBox3D(
        x=anchor.x + r.dx * d_a,
        y=anchor.y + r.dy * d_a,
        z=anchor.z + r.dz * anchor.h,
        w=anchor.w * math.exp(r.dw),
        l=anchor.l * math.exp(r.dl),
        h=anchor.h * math.exp(r.dh),
        theta=theta,
    )


def direction_flipped(gt_theta: float, anchor_theta: float) -> bool:
    """Direction bit: set when the headings disagree by more than a quarter turn."""
    return math.cos(gt_theta - anchor_theta) < 0.0


def smooth_l1(x: float) -> float:
    ax = abs(x)
    return 0.5 * x * x if ax < 1.0 else ax - 0.5


def localization_loss(r: BoxResiduals, target: BoxResiduals) -> float:
    """Sum of smooth-L1 over the seven residual-component differences."""
    return sum(smooth_l1(a - b) for a, b in zip(r.as_tuple(), target.as_tuple()))


def focal_loss(p: float, weights: LossWeights = LossWeights()) -> float:
    """-alpha * (1 - p)^gamma * log(p) for a class probability p in (0, 1]."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p {p} outside (0, 1]")
    return -weights.alpha * (1.0 - p) ** weights.gamma * math.log(p)


def direction_loss(logit_pos: float, logit_neg: float, flipped: bool) -> float:
    """Two-class softmax cross-entropy against the flip label."""
    m = max(logit_pos, logit_neg)
    lse = m + math.log(math.exp(logit_pos - m) + math.exp(logit_neg - m))
    return lse - (logit_neg if flipped else logit_pos)


def total_loss(
    loc: float, cls: float, dir: float, n_pos: int, weights: LossWeights = LossWeights()
) -> float:
    """(beta_loc*loc + beta_cls*cls + beta_dir*dir) / n_pos."""
    if n_pos < 1:
        raise ValueError("n_pos must be >= 1")
    return (weights.beta_loc * loc + weights.beta_cls * cls + weights.beta_dir * dir) / n_pos
