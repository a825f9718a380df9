"""Scene graph evaluation: triple ranking, matching, R@K and mR@K.

Rankings are per frame. *With constraint* keeps only the best predicate of
each subject-object pair; *no constraint* ranks every (pair, predicate)
combination. Recall is computed per frame and averaged over frames that
have at least one ground-truth triple; mean recall averages per-predicate
recalls, each taken over the frames where that predicate occurs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .mfe import box_iou
from .scene_model import BoundingBox, SceneGraphTriple

TASKS = ("predcls", "sgcls", "sgdet")
MODES = ("with", "no")
FrameKey = Tuple[str, int]


class TaskMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class GTTriple:
    subject_category: int
    subject_box: BoundingBox
    predicate: int
    object_category: int
    object_box: BoundingBox


@dataclass
class GroundTruthGraph:
    """Ground-truth triples per (video id, frame index).

    ``objects`` optionally lists every annotated (category, box) of a frame,
    related or not; it is only used to validate PREDCLS/SGCLS inputs.
    """

    frames: Dict[FrameKey, List[GTTriple]] = field(default_factory=dict)
    objects: Dict[FrameKey, List[Tuple[int, BoundingBox]]] = field(default_factory=dict)

    def add(self, key: FrameKey, triple: GTTriple) -> None:
        self.frames.setdefault(key, []).append(triple)

    def num_triples(self) -> int:
        return sum(len(v) for v in self.frames.values())

    def predicate_counts(self, num_predicates: int) -> List[int]:
        counts = [0] * num_predicates
        for triples in self.frames.values():
            for t in triples:
                counts[t.predicate] += 1
        return counts


@dataclass(frozen=True)
class EvalConfig:
    ks: Tuple[int, ...] = (10, 20, 50)
    mode: str = "with"
    task: str = "predcls"
    iou_threshold: float = 0.5

    def __post_init__(self) -> None:
        ks = tuple(int(k) for k in self.ks)
        object.__setattr__(self, "ks", ks)
        if not ks or any(k < 1 for k in ks) or list(ks) != sorted(set(ks)):
            raise ValueError(f"K values must be positive and strictly ascending: {ks}")
        if self.mode not in MODES:
            raise ValueError(f"constraint mode must be one of {MODES}")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("IoU threshold must be in (0, 1]")


@dataclass
class PairPrediction:
    """Scores for one subject-object pair in one frame."""

    pair_id: int
    subject_category: int
    subject_box: BoundingBox
    object_category: int
    object_box: BoundingBox
    predicate_scores: np.ndarray
    subject_score: float = 1.0
    object_score: float = 1.0

    def __post_init__(self) -> None:
        self.predicate_scores = np.asarray(self.predicate_scores, dtype=float)
        if self.predicate_scores.ndim != 1 or not np.all(np.isfinite(self.predicate_scores)):
            raise ValueError("predicate scores must be a finite vector")


def _composite(pair: PairPrediction, task: str) -> np.ndarray:
    if task == "predcls":
        return pair.predicate_scores
    return pair.predicate_scores * pair.subject_score * pair.object_score


def rank_triples(
    pairs: Sequence[PairPrediction], mode: str = "with", task: str = "predcls", frame_index: int = 0
) -> List[SceneGraphTriple]:
    """Candidate triples of one frame in descending score order.

    Ties are broken by predicate index, then pair id.
    """
    if mode not in MODES:
        raise ValueError(f"unknown constraint mode {mode!r}")
    cands = []
    for pair in pairs:
        scores = _composite(pair, task)
        preds = [int(np.argmax(scores))] if mode == "with" else range(len(scores))
        for r in preds:
            cands.append((-float(scores[r]), r, pair.pair_id, pair))
    cands.sort(key=lambda c: c[:3])
    return [
        SceneGraphTriple(
            frame_index, p.subject_category, p.subject_box, r, p.object_category, p.object_box, -neg
        )
        for neg, r, _, p in cands
    ]


def _same_box(a: BoundingBox, b: BoundingBox, tol: float = 1e-6) -> bool:
    return (
        abs(a.x1 - b.x1) <= tol and abs(a.y1 - b.y1) <= tol and abs(a.x2 - b.x2) <= tol and abs(a.y2 - b.y2) <= tol
    )


def match_triple(pred: SceneGraphTriple, gt: GTTriple, task: str = "predcls", iou_threshold: float = 0.5) -> bool:
    if (pred.subject_category, pred.predicate, pred.object_category) != (
        gt.subject_category,
        gt.predicate,
        gt.object_category,
    ):
        return False
    if task == "sgdet":
        return box_iou(pred.subject_box, gt.subject_box) >= iou_threshold and (
            box_iou(pred.object_box, gt.object_box) >= iou_threshold
        )
    return _same_box(pred.subject_box, gt.subject_box) and _same_box(pred.object_box, gt.object_box)


def frame_hits(
    ranked: Sequence[SceneGraphTriple], gts: Sequence[GTTriple], k: int, task: str = "predcls", iou_threshold: float = 0.5
) -> List[bool]:
    """Which ground-truth triples the top ``k`` predictions recover.

    Predictions are visited in rank order; each claims the first unmatched
    ground-truth triple it matches.
    """
    hit = [False] * len(gts)
    for pred in ranked[:k]:
        for j, gt in enumerate(gts):
            if not hit[j] and match_triple(pred, gt, task, iou_threshold):
                hit[j] = True
                break
    return hit


def _all_hits(ranked_by_frame, gt: GroundTruthGraph, k: int, task: str, thr: float):
    for key, gts in gt.frames.items():
        if gts:
            yield key, gts, frame_hits(ranked_by_frame.get(key, []), gts, k, task, thr)


def recall_at_k(
    ranked_by_frame: Mapping[Hashable, Sequence[SceneGraphTriple]],
    gt: GroundTruthGraph,
    k: int,
    task: str = "predcls",
    iou_threshold: float = 0.5,
) -> float:
    recalls = [sum(h) / len(h) for _, _, h in _all_hits(ranked_by_frame, gt, k, task, iou_threshold)]
    return float(np.mean(recalls)) if recalls else 0.0


def per_class_recall_at_k(
    ranked_by_frame: Mapping[Hashable, Sequence[SceneGraphTriple]],
    gt: GroundTruthGraph,
    k: int,
    task: str = "predcls",
    iou_threshold: float = 0.5,
) -> Dict[int, float]:
    per_class: Dict[int, List[float]] = {}
    for _, gts, hits in _all_hits(ranked_by_frame, gt, k, task, iou_threshold):
        classes = sorted({g.predicate for g in gts})
        for c in classes:
            idx = [j for j, g in enumerate(gts) if g.predicate == c]
            per_class.setdefault(c, []).append(sum(hits[j] for j in idx) / len(idx))
    return {c: float(np.mean(v)) for c, v in sorted(per_class.items())}


def mean_recall_at_k(
    ranked_by_frame: Mapping[Hashable, Sequence[SceneGraphTriple]],
    gt: GroundTruthGraph,
    k: int,
    task: str = "predcls",
    iou_threshold: float = 0.5,
) -> float:
    per_class = per_class_recall_at_k(ranked_by_frame, gt, k, task, iou_threshold)
    return float(np.mean(list(per_class.values()))) if per_class else 0.0


def _check_task_inputs(predictions: Mapping[FrameKey, Sequence[PairPrediction]], gt: GroundTruthGraph, task: str) -> None:
    if task == "sgdet":
        return
    for key, pairs in predictions.items():
        objects = gt.objects.get(key)
        if not objects:
            continue
        for pair in pairs:
            for cat, box in ((pair.subject_category, pair.subject_box), (pair.object_category, pair.object_box)):
                ok = any(
                    _same_box(box, gbox) and (task != "predcls" or cat == gcat) for gcat, gbox in objects
                )
                if not ok:
                    raise TaskMismatchError(
                        f"{task}: frame {key} has a prediction box/category not among the ground-truth objects"
                    )


def rank_all(
    predictions: Mapping[FrameKey, Sequence[PairPrediction]], mode: str, task: str
) -> Dict[FrameKey, List[SceneGraphTriple]]:
    return {key: rank_triples(pairs, mode, task, key[1]) for key, pairs in predictions.items()}


def evaluate(
    predictions: Mapping[FrameKey, Sequence[PairPrediction]],
    gt: GroundTruthGraph,
    cfg: EvalConfig = EvalConfig(),
    predicate_names: Optional[Sequence[str]] = None,
) -> dict:
    """R@K and mR@K for every configured K, as a JSON-ready report."""
    _check_task_inputs(predictions, gt, cfg.task)
    ranked = rank_all(predictions, cfg.mode, cfg.task)

    def name(c: int) -> str:
        return predicate_names[c] if predicate_names is not None else str(c)

    recall, mean_recall, per_class = {}, {}, {}
    for k in cfg.ks:
        recall[str(k)] = recall_at_k(ranked, gt, k, cfg.task, cfg.iou_threshold)
        pc = per_class_recall_at_k(ranked, gt, k, cfg.task, cfg.iou_threshold)
        mean_recall[str(k)] = float(np.mean(list(pc.values()))) if pc else 0.0
        per_class[str(k)] = {name(c): v for c, v in pc.items()}
    return {
        "task": cfg.task,
        "mode": cfg.mode,
        "recall": recall,
        "mean_recall": mean_recall,
        "per_class_recall": per_class,
        "frame_count": sum(1 for v in gt.frames.values() if v),
    }


REPORT_SCHEMA = {
    "type": "object",
    "required": ["task", "mode", "recall", "mean_recall", "per_class_recall", "frame_count"],
    "properties": {
        "task": {"enum": list(TASKS)},
        "mode": {"enum": list(MODES)},
        "recall": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1}},
        "mean_recall": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1}},
        "per_class_recall": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "frame_count": {"type": "integer", "minimum": 0},
    },
}
