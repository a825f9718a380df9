"""Deterministic synthetic videos whose relations are defined by motion.

Each video holds one person and a few objects. Every person-object pair
follows one motion regime for the whole clip, and the regime is the pair's
predicate:

* ``approaching``: center distance shrinks linearly
* ``receding``: center distance grows linearly
* ``carried``: object rides along with a moving person (fixed offset)
* ``static_near``: object rests close to a resting person

Object categories are drawn independently of the regime and visual features
are category prototypes, so appearance carries no information about the
label. ``carried`` needs a moving person and ``static_near`` a resting one;
``approaching``/``receding`` are realized either way (object moves toward or
away from a resting person, or a moving person walks toward or away from a
resting object).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .metrics import GroundTruthGraph, GTTriple
from .relation_net import EmbeddingMatrix
from .scene_model import BoundingBox, Detection, Frame, RelationVocabulary, Video

REGIMES = ("approaching", "receding", "carried", "static_near")
_NEEDS_MOVING = {"carried"}
_NEEDS_RESTING = {"static_near"}


class InfeasibleConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    num_videos: int = 60
    frames: int = 8
    frame_size: Tuple[float, float] = (640.0, 480.0)
    num_object_categories: int = 5
    objects_per_video: int = 3
    regimes: Tuple[str, ...] = REGIMES
    # number of pair tracks per regime
    track_counts: Tuple[int, ...] = (45, 45, 45, 45)
    box_jitter: float = 0.0
    feature_noise: float = 0.0
    visual_dim: int = 32
    embedding_dim: int = 64
    embedding_mode: str = "orthogonal"
    speed: Tuple[float, float] = (0.012, 0.03)
    # shared across splits: category appearance and predicate embeddings
    appearance_seed: int = 0
    embedding_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "frame_size", tuple(float(x) for x in self.frame_size))
        object.__setattr__(self, "regimes", tuple(self.regimes))
        object.__setattr__(self, "track_counts", tuple(int(n) for n in self.track_counts))
        object.__setattr__(self, "speed", tuple(float(x) for x in self.speed))
        if self.frames < 2:
            raise ValueError("synthetic videos need at least two frames")
        if self.num_videos < 1 or self.objects_per_video < 1:
            raise ValueError("need at least one video and one object slot")
        if any(r not in REGIMES for r in self.regimes) or len(set(self.regimes)) != len(self.regimes):
            raise ValueError(f"regimes must be distinct names from {REGIMES}")
        if len(self.track_counts) != len(self.regimes):
            raise ValueError("one track count per regime required")
        if any(n < 1 for n in self.track_counts):
            raise ValueError("track counts must be positive")
        if self.num_object_categories < self.objects_per_video:
            raise ValueError("need at least as many object categories as object slots")
        if self.box_jitter < 0 or self.feature_noise < 0:
            raise ValueError("noise levels must be non-negative")
        if self.embedding_mode not in ("orthogonal", "gaussian"):
            raise ValueError(f"unknown embedding mode {self.embedding_mode!r}")

    @property
    def budget(self) -> int:
        return self.num_videos * self.objects_per_video


def long_tail_config(seed: int = 0, num_videos: int = 80, tail_fraction: float = 0.05, **overrides) -> SynthConfig:
    """Preset with one tail predicate (the last regime) at ``tail_fraction`` of pairs."""
    slots = overrides.get("objects_per_video", 3)
    total = num_videos * slots
    tail = max(1, round(tail_fraction * total))
    head = total - tail
    n_head = len(REGIMES) - 1
    counts = [head // n_head + (1 if i < head % n_head else 0) for i in range(n_head)] + [tail]
    order = ("approaching", "carried", "static_near", "receding")
    return SynthConfig(seed=seed, num_videos=num_videos, regimes=order, track_counts=tuple(counts), **overrides)


@dataclass
class SynthSample:
    videos: List[Video]
    gt: GroundTruthGraph
    vocab: RelationVocabulary
    embeddings: EmbeddingMatrix
    track_labels: Dict[Tuple[str, int], int] = field(default_factory=dict)
    track_counts: Tuple[int, ...] = ()


def synth_embeddings(vocab: RelationVocabulary, dim: int, seed: int = 0, mode: str = "orthogonal") -> EmbeddingMatrix:
    """Seeded stand-in for frozen predicate text embeddings."""
    nr = vocab.num_predicates
    rng = np.random.default_rng(seed)
    if mode == "orthogonal":
        if nr > dim:
            raise ValueError(f"cannot build {nr} orthogonal rows in {dim} dimensions")
        q, r = np.linalg.qr(rng.normal(size=(dim, nr)))
        q = q * np.sign(np.diag(r))
        return EmbeddingMatrix(q.T.copy(), source="synthetic")
    if mode == "gaussian":
        return EmbeddingMatrix(rng.normal(size=(nr, dim)), source="synthetic")
    raise ValueError(f"unknown embedding mode {mode!r}")


def _assign_slots(cfg: SynthConfig, rng: np.random.Generator) -> Tuple[List[bool], List[List[int]]]:
    """Person motion flag per video and regime indices per video."""
    n, s = cfg.num_videos, cfg.objects_per_video
    if sum(cfg.track_counts) > cfg.budget:
        raise InfeasibleConfigError(
            f"{sum(cfg.track_counts)} tracks requested but only {cfg.budget} pair slots "
            f"({n} videos x {s} objects)"
        )
    moving_only = [i for i, r in enumerate(cfg.regimes) if r in _NEEDS_MOVING]
    resting_only = [i for i, r in enumerate(cfg.regimes) if r in _NEEDS_RESTING]
    n_moving = sum(cfg.track_counts[i] for i in moving_only)
    n_resting = sum(cfg.track_counts[i] for i in resting_only)
    v_moving, v_resting = math.ceil(n_moving / s), math.ceil(n_resting / s)
    if v_moving + v_resting > n:
        raise InfeasibleConfigError(
            f"{n_moving} moving-person and {n_resting} resting-person tracks need "
            f"{v_moving + v_resting} videos, only {n} available"
        )
    order = rng.permutation(n)
    moving = [False] * n
    for v in order[:v_moving]:
        moving[v] = True
    free = list(order[v_moving + v_resting :])
    for v in free:
        moving[v] = bool(rng.random() < 0.5)

    slots: List[List[int]] = [[] for _ in range(n)]

    def fill(videos, labels):
        it = iter(labels)
        for v in videos:
            while len(slots[v]) < s:
                lab = next(it, None)
                if lab is None:
                    return
                slots[v].append(lab)

    fill(order[:v_moving], [i for i in moving_only for _ in range(cfg.track_counts[i])])
    fill(order[v_moving : v_moving + v_resting], [i for i in resting_only for _ in range(cfg.track_counts[i])])
    either = [i for i, r in enumerate(cfg.regimes) if i not in moving_only and i not in resting_only]
    labels = [i for i in either for _ in range(cfg.track_counts[i])]
    rng.shuffle(labels)
    open_slots = [v for v in range(n) for _ in range(s - len(slots[v]))]
    pick = rng.permutation(len(open_slots))[: len(labels)]
    for lab, j in zip(labels, sorted(pick)):
        slots[open_slots[j]].append(lab)
    for v in range(n):
        rng.shuffle(slots[v])
    return moving, slots


def _box(cx: float, cy: float, w: float, h: float) -> Tuple[float, float, float, float]:
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def _unit(rng: np.random.Generator) -> np.ndarray:
    a = rng.uniform(0, 2 * np.pi)
    return np.array([np.cos(a), np.sin(a)])


def _object_path(regime: str, person: np.ndarray, moving: bool, u_hat: np.ndarray, step: float,
                 rng: np.random.Generator, diag: float) -> np.ndarray:
    t_count = person.shape[0]
    mid = (t_count - 1) / 2.0
    tt = np.arange(t_count)[:, None]
    if regime in ("carried", "static_near"):
        offset = rng.uniform(0.03, 0.07) * diag * _unit(rng)
        return person + offset if regime == "carried" else np.repeat((person[0] + offset)[None], t_count, 0)
    sign = -1.0 if regime == "approaching" else 1.0
    m = max(rng.uniform(0.13, 0.3) * diag, step * mid + 0.02 * diag)
    if not moving:
        direction = _unit(rng)
        r = m + sign * step * (tt - mid)
        return person + r * direction
    # resting object ahead of (approaching) or behind (receding) a walking person
    anchor = person.mean(axis=0)
    return np.repeat((anchor - sign * m * u_hat)[None], t_count, 0)


def synth_video(cfg: SynthConfig) -> SynthSample:
    rng = np.random.default_rng(cfg.seed)
    w, h = cfg.frame_size
    diag = math.hypot(w, h)
    n_cat = cfg.num_object_categories + 1
    prototypes = np.random.default_rng(cfg.appearance_seed).normal(size=(n_cat, cfg.visual_dim))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)
    moving, slots = _assign_slots(cfg, rng)

    videos: List[Video] = []
    gt = GroundTruthGraph()
    track_labels: Dict[Tuple[str, int], int] = {}
    realized = [0] * len(cfg.regimes)
    triple_counts = [0] * len(cfg.regimes)
    mid = (cfg.frames - 1) / 2.0
    tt = np.arange(cfg.frames)[:, None]

    for v in range(cfg.num_videos):
        vid = f"synth_{cfg.seed}_{v:04d}"
        pw, ph = 0.12 * w * rng.uniform(0.9, 1.1), 0.3 * h * rng.uniform(0.9, 1.1)
        step = rng.uniform(*cfg.speed) * diag
        u_hat = _unit(rng)
        if moving[v]:
            start = np.array([w / 2, h / 2]) + rng.uniform(-0.1, 0.1, size=2) * np.array([w, h])
            person = start + step * (tt - mid) * u_hat
        else:
            start = np.array([rng.uniform(0.35, 0.65) * w, rng.uniform(0.4, 0.6) * h])
            person = np.repeat(start[None], cfg.frames, 0)
        cats = rng.choice(np.arange(1, n_cat), size=len(slots[v]), replace=False)
        objects = []
        for slot, (lab, cat) in enumerate(zip(slots[v], cats)):
            path = _object_path(cfg.regimes[lab], person, moving[v], u_hat, step, rng, diag)
            ow, oh = 0.07 * w * rng.uniform(0.8, 1.2), 0.07 * h * rng.uniform(0.8, 1.2)
            objects.append((slot + 1, int(cat), lab, path, ow, oh))
            realized[lab] += 1

        frames = []
        for t in range(cfg.frames):
            dets = []
            person_box = _jitter(_box(*person[t], pw, ph), cfg.box_jitter, rng)
            dets.append(Detection(t, 0, 0, person_box, 1.0, _feature(prototypes[0], cfg.feature_noise, rng)))
            key = (vid, t)
            gt.objects[key] = [(0, person_box)]
            for iid, cat, lab, path, ow, oh in objects:
                box = _jitter(_box(*path[t], ow, oh), cfg.box_jitter, rng)
                dets.append(Detection(t, iid, cat, box, 1.0, _feature(prototypes[cat], cfg.feature_noise, rng)))
                gt.add(key, GTTriple(0, person_box, lab, cat, box))
                gt.objects[key].append((cat, box))
                triple_counts[lab] += 1
            frames.append(Frame(t, w, h, dets))
        for iid, cat, lab, *_ in objects:
            track_labels[(vid, cat)] = lab
        videos.append(Video(vid, frames))

    vocab = RelationVocabulary(
        predicate_names=cfg.regimes,
        frequencies=tuple(max(2, n) for n in triple_counts),
        object_category_names=("person",) + tuple(f"object_{i}" for i in range(1, n_cat)),
        person_category=0,
    )
    emb = synth_embeddings(vocab, cfg.embedding_dim, cfg.embedding_seed, cfg.embedding_mode)
    return SynthSample(videos, gt, vocab, emb, track_labels, tuple(realized))


def _jitter(coords, sigma: float, rng: np.random.Generator) -> BoundingBox:
    x1, y1, x2, y2 = coords
    if sigma > 0:
        x1, y1, x2, y2 = np.array(coords) + rng.normal(0.0, sigma, size=4)
        x2 = max(x2, x1 + 1.0)
        y2 = max(y2, y1 + 1.0)
    return BoundingBox(float(x1), float(y1), float(x2), float(y2))


def _feature(proto: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma > 0:
        return proto + rng.normal(0.0, sigma, size=proto.shape)
    return proto.copy()


def regime_rule(velocity: float, velocity_valid: bool, cosine_valid: bool, tol: float = 1e-9) -> str:
    """Hand-written classifier on motion attributes for an interior frame."""
    if velocity_valid and velocity < -tol:
        return "approaching"
    if velocity_valid and velocity > tol:
        return "receding"
    if cosine_valid:
        return "carried"
    return "static_near"
