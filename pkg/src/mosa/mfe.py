"""Motion feature extraction for subject-object pairs.

Four per-frame attributes are computed from box trajectories: center
distance, approach velocity, sliding-window subject/object IoU and the
cosine between the two displacement vectors. Attributes that cannot be
computed (first frame of a track, stationary objects) are reported as 0 with a
cleared validity flag, and the MLP sees the flags alongside the values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .nn.core import Module, Parameter, ShapeError, require_cache
from .nn.layers import MLP
from .scene_model import BoundingBox, PairTrack

EPS_MOTION = 1e-6
Point = Tuple[float, float]


@dataclass(frozen=True)
class MotionConfig:
    window: int = 5
    frame_interval: float = 1.0
    normalize_by_diagonal: bool = True
    include_validity: bool = True
    hidden: int = 64

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError("motion window K must be >= 1")
        if not self.frame_interval > 0:
            raise ValueError("frame interval must be positive")

    @property
    def input_dim(self) -> int:
        return 8 if self.include_validity else 4


@dataclass(frozen=True)
class MotionAttributes:
    distance: float = 0.0
    velocity: float = 0.0
    window_iou: float = 0.0
    direction_cosine: float = 0.0
    distance_valid: bool = False
    velocity_valid: bool = False
    iou_valid: bool = False
    cosine_valid: bool = False

    def values(self) -> np.ndarray:
        return np.array([self.distance, self.velocity, self.window_iou, self.direction_cosine])

    def validity(self) -> np.ndarray:
        return np.array(
            [self.distance_valid, self.velocity_valid, self.iou_valid, self.cosine_valid], dtype=float
        )

    def as_vector(self, include_validity: bool = True) -> np.ndarray:
        if include_validity:
            return np.concatenate([self.values(), self.validity()])
        return self.values()


def center(box: BoundingBox) -> Point:
    return ((box.x1 + box.x2) / 2.0, (box.y1 + box.y2) / 2.0)


def pair_distance(c_i: Point, c_j: Point) -> float:
    return math.hypot(c_i[0] - c_j[0], c_i[1] - c_j[1])


def approach_velocity(d_t: float, d_prev: float, dt: float) -> float:
    """Rate of change of pair distance; negative when the pair closes in."""
    if not dt > 0:
        raise ValueError("frame interval must be positive")
    return (d_t - d_prev) / dt


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def window_mean_iou(track: PairTrack, t: int, window: int) -> Tuple[float, bool]:
    """Mean subject/object IoU over frames ``t-1 .. t-window`` present in the track.

    The window is truncated to the frames that exist; with none available the
    result is ``(0.0, False)``.
    """
    if t not in track.entries:
        raise KeyError(f"frame {t} not in track {track.track_id}")
    ious = []
    for k in range(1, window + 1):
        entry = track.entries.get(t - k)
        if entry is not None:
            ious.append(box_iou(entry[0].box, entry[1].box))
    if not ious:
        return 0.0, False
    return float(np.mean(ious)), True


def direction_consistency(
    c_i_t: Point, c_i_prev: Point, c_j_t: Point, c_j_prev: Point, eps: float = EPS_MOTION
) -> Tuple[float, bool]:
    di = (c_i_t[0] - c_i_prev[0], c_i_t[1] - c_i_prev[1])
    dj = (c_j_t[0] - c_j_prev[0], c_j_t[1] - c_j_prev[1])
    ni = math.hypot(*di)
    nj = math.hypot(*dj)
    if ni < eps or nj < eps:
        return 0.0, False
    cos = (di[0] * dj[0] + di[1] * dj[1]) / (ni * nj)
    return max(-1.0, min(1.0, cos)), True


def compute_motion_attributes(
    track: PairTrack,
    t: int,
    cfg: MotionConfig = MotionConfig(),
    frame_size: Optional[Tuple[float, float]] = None,
) -> MotionAttributes:
    """All four attributes for track frame ``t``.

    Distances (and displacements for the zero-motion guard) are divided by the
    frame diagonal when ``cfg.normalize_by_diagonal``; ``frame_size`` is then
    required. Velocity and cosine use the latest earlier track frame, with the
    time step scaled by the frame gap.
    """
    if t not in track.entries:
        raise KeyError(f"frame {t} not in track {track.track_id}")
    scale = 1.0
    if cfg.normalize_by_diagonal:
        if frame_size is None:
            raise ValueError("frame_size is required for diagonal normalization")
        scale = 1.0 / math.hypot(*frame_size)

    def scaled_center(box: BoundingBox) -> Point:
        cx, cy = center(box)
        return (cx * scale, cy * scale)

    subj, obj = track.entries[t]
    ci, cj = scaled_center(subj.box), scaled_center(obj.box)
    d = pair_distance(ci, cj)
    iou, iou_ok = window_mean_iou(track, t, cfg.window)

    prev = track.previous_frame(t)
    if prev is None:
        return MotionAttributes(d, 0.0, iou, 0.0, True, False, iou_ok, False)
    psubj, pobj = track.entries[prev]
    ci_prev, cj_prev = scaled_center(psubj.box), scaled_center(pobj.box)
    v = approach_velocity(d, pair_distance(ci_prev, cj_prev), cfg.frame_interval * (t - prev))
    cos, cos_ok = direction_consistency(ci, ci_prev, cj, cj_prev)
    return MotionAttributes(d, v, iou, cos, True, True, iou_ok, cos_ok)


def track_motion_matrix(
    track: PairTrack, cfg: MotionConfig, frame_size: Optional[Tuple[float, float]] = None
) -> np.ndarray:
    """``(len(track), input_dim)`` MLP inputs in ascending frame order."""
    return np.stack(
        [compute_motion_attributes(track, t, cfg, frame_size).as_vector(cfg.include_validity) for t in track.frames]
    )


class MotionEmbedder(Module):
    """MLP lifting motion attribute vectors to the model width.

    The four attribute values are standardized with fixed (non-trainable)
    shift/scale before the MLP; invalid attributes stay exactly zero. Call
    :meth:`fit_standardization` on training inputs; the defaults are identity.
    """

    def __init__(self, cfg: MotionConfig, dim: int, rng: np.random.Generator):
        self.input_dim = cfg.input_dim
        self.include_validity = cfg.include_validity
        self.shift = Parameter(np.zeros(4), trainable=False)
        self.scale = Parameter(np.ones(4), trainable=False)
        self.mlp = MLP([cfg.input_dim, cfg.hidden, dim], rng)

    def fit_standardization(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float).reshape(-1, self.input_dim)
        vals = x[:, :4]
        valid = x[:, 4:] > 0.5 if self.include_validity else np.ones_like(vals, dtype=bool)
        for j in range(4):
            col = vals[valid[:, j], j]
            if col.size:
                self.shift.value[j] = col.mean()
                std = col.std()
                self.scale.value[j] = std if std > 1e-8 else 1.0

    def _standardize(self, x: np.ndarray):
        z = x.copy()
        factor = 1.0 / self.scale.value
        if self.include_validity:
            mask = x[..., 4:]
            z[..., :4] = (x[..., :4] - self.shift.value) * factor * mask
            return z, factor * mask
        z[..., :4] = (x[..., :4] - self.shift.value) * factor
        return z, np.broadcast_to(factor, x[..., :4].shape)

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim:
            raise ShapeError(f"motion input width {x.shape[-1]} != {self.input_dim}")
        z, jac = self._standardize(x)
        y, c = self.mlp.forward(z)
        return y, (c, jac)

    def backward(self, grad_y, cache):
        """Gradient with respect to the raw attribute values (flags held fixed)."""
        require_cache(cache)
        c, jac = cache
        g = self.mlp.backward(grad_y, c)
        g = g.copy()
        g[..., :4] *= jac
        if self.include_validity:
            g[..., 4:] = 0.0
        return g


def motion_embed(attrs: MotionAttributes | Sequence[MotionAttributes], embedder: MotionEmbedder, include_validity: bool = True) -> np.ndarray:
    if isinstance(attrs, MotionAttributes):
        x = attrs.as_vector(include_validity)
    else:
        x = np.stack([a.as_vector(include_validity) for a in attrs])
    return embedder.forward(x)[0]
