"""Training loop, target assignment and inference to pair predictions."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .losses import LossConfig, category_weights, object_loss, relation_loss, total_loss
from .metrics import FrameKey, GroundTruthGraph, PairPrediction, match_triple
from .mfe import box_iou
from .nn.layers import softmax_rows
from .nn.optim import make_optimizer
from .relation_net import Batch, EmbeddingMatrix, RelationNet, VideoData, collate, prepare_video
from .scene_model import RelationVocabulary, Video

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    """Raised when the loss or parameters stop being finite."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    # plain SGD at 1e-2 under-trains the default synthetic set in 30 epochs
    lr: float = 1e-1
    batch_videos: int = 4
    optimizer: str = "sgd"
    seed: int = 0
    time_limit: Optional[float] = None


@dataclass
class TrainHistory:
    epoch_loss: List[float] = field(default_factory=list)
    epoch_rel_loss: List[float] = field(default_factory=list)
    epoch_obj_loss: List[float] = field(default_factory=list)
    seconds: float = 0.0


def assign_targets(batch: Batch, gt: GroundTruthGraph, num_predicates: int, iou_threshold: float = 0.5) -> np.ndarray:
    """Multi-hot predicate targets for every pair item of a batch.

    An item takes the predicate of each ground-truth triple in its frame
    whose categories agree and whose boxes overlap the item's boxes with IoU
    at least ``iou_threshold``.
    """
    y = np.zeros((batch.num_items, num_predicates))
    for i, item in enumerate(batch.items):
        for g in gt.frames.get((item.video_id, item.frame_index), ()):
            if g.subject_category != item.subject.category_id or g.object_category != item.object.category_id:
                continue
            if box_iou(item.subject.box, g.subject_box) >= iou_threshold and box_iou(item.object.box, g.object_box) >= iou_threshold:
                y[i, g.predicate] = 1.0
    return y


def train(
    net: RelationNet,
    videos: Sequence[Video],
    gt: GroundTruthGraph,
    vocab: RelationVocabulary,
    Z: Optional[EmbeddingMatrix],
    train_cfg: TrainConfig = TrainConfig(),
    loss_cfg: LossConfig = LossConfig(),
    task: str = "predcls",
    on_epoch=None,
) -> TrainHistory:
    """Mini-batch training over whole videos; deterministic for a fixed seed."""
    rng = np.random.default_rng(train_cfg.seed)
    data: List[VideoData] = [prepare_video(v, net.cfg) for v in videos]
    data = [d for d in data if d.items or d.detections]
    if net.cfg.use_mfe and data:
        net.motion_embedder.fit_standardization(np.concatenate([d.motion for d in data]))
    alpha = category_weights(vocab.frequencies) if loss_cfg.weighting else None
    if alpha is not None:
        log.info("category weights: %s", np.round(alpha, 4).tolist())
    use_obj = loss_cfg.object_loss_enabled(task)
    params = net.parameters()
    opt = make_optimizer(train_cfg.optimizer, params, train_cfg.lr)
    nr = net.cfg.num_predicates
    targets = {}
    history = TrainHistory()
    start = time.perf_counter()
    bs = max(1, train_cfg.batch_videos)

    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(data))
        tot = rel_sum = obj_sum = 0.0
        steps = 0
        for s in range(0, len(order), bs):
            idx = tuple(int(i) for i in order[s : s + bs])
            batch = collate([data[i] for i in idx])
            if idx not in targets:
                targets[idx] = assign_targets(batch, gt, nr)
            out = net.forward(batch, Z)
            l_rel, g_scores = relation_loss(out.probabilities, targets[idx], alpha, loss_cfg.gamma, loss_cfg.weight_mode)
            g_obj = None
            l_obj = 0.0
            if use_obj and len(batch.detections):
                l_obj, g_obj = object_loss(out.object_logits, batch.det_labels)
            loss = total_loss(l_obj, l_rel)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch + 1}")
            net.backward(g_scores, g_obj)
            opt.step()
            tot += loss
            rel_sum += l_rel
            obj_sum += l_obj
            steps += 1
        if not params.all_finite():
            raise NumericError(f"non-finite parameters after epoch {epoch + 1}")
        steps = max(steps, 1)
        history.epoch_loss.append(tot / steps)
        history.epoch_rel_loss.append(rel_sum / steps)
        history.epoch_obj_loss.append(obj_sum / steps)
        log.info("epoch %d loss %.6f (rel %.6f obj %.6f)", epoch + 1, tot / steps, rel_sum / steps, obj_sum / steps)
        if on_epoch is not None:
            on_epoch(epoch, history)
        if train_cfg.time_limit is not None and time.perf_counter() - start > train_cfg.time_limit:
            log.warning("time limit reached after %d epochs", epoch + 1)
            break
    history.seconds = time.perf_counter() - start
    return history


def predict(
    net: RelationNet,
    videos: Sequence[Video],
    Z: Optional[EmbeddingMatrix],
    task: str = "predcls",
    batch_videos: int = 8,
) -> Dict[FrameKey, List[PairPrediction]]:
    """Pair predictions per (video id, frame index).

    PREDCLS keeps the ingested categories; SGCLS and SGDET label both
    members of a pair with the object head's argmax and its probability.
    """
    result: Dict[FrameKey, List[PairPrediction]] = {}
    for v in videos:
        for f in v.frames:
            result[(v.video_id, f.frame_index)] = []
    data = [prepare_video(v, net.cfg) for v in videos]
    for s in range(0, len(data), batch_videos):
        batch = collate(data[s : s + batch_videos])
        out = net.forward(batch, Z)
        net._cache = None
        if task != "predcls" and len(batch.detections):
            probs = softmax_rows(out.object_logits)
            labels = probs.argmax(axis=1)
            conf = probs.max(axis=1)
        for i, item in enumerate(batch.items):
            if task == "predcls":
                sc, ss, oc, os_ = item.subject.category_id, 1.0, item.object.category_id, 1.0
            else:
                si, oi = batch.item_subj_det[i], batch.item_obj_det[i]
                sc, ss, oc, os_ = int(labels[si]), float(conf[si]), int(labels[oi]), float(conf[oi])
            result[(item.video_id, item.frame_index)].append(
                PairPrediction(
                    pair_id=item.track_id,
                    subject_category=sc,
                    subject_box=item.subject.box,
                    object_category=oc,
                    object_box=item.object.box,
                    predicate_scores=out.probabilities[i].copy(),
                    subject_score=ss,
                    object_score=os_,
                )
            )
    return result
