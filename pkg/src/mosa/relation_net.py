"""The motion-guided relation network.

Per video the network runs::

    pairs -> pair features -> spatial encoder (per frame)
          -> motion MLP -> motion/spatial interaction -> residual join
          -> per-track sequences -> temporal decoder
          -> dot products with the predicate embedding matrix -> sigmoid

Inputs that do not depend on parameters (pair bookkeeping, geometry, motion
attributes, padding layouts) are computed once by :func:`prepare_video` and
reused across epochs; :func:`collate` merges several prepared videos into one
batch so each layer runs once per optimizer step.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .mfe import MotionConfig, MotionEmbedder, box_iou, center, compute_motion_attributes
from .nn.attention import MultiHeadAttention
from .nn.core import BackwardError, Module, Parameter, ShapeError, require_cache
from .nn.layers import MLP, FeedForward, LayerNorm, Linear, sigmoid
from .nn.transformer import TransformerDecoder, TransformerEncoder
from .scene_model import (
    BoundingBox,
    Detection,
    PairTrack,
    RelationVocabulary,
    Video,
    link_tracks,
    union_box,
)

GEOMETRY_DIM = 10


@dataclass(frozen=True)
class NetConfig:
    dim: int = 64
    heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    ffn_hidden: int = 128
    rel_hidden: int = 128
    category_dim: int = 16
    visual_dim: int = 32
    num_object_categories: int = 6
    num_predicates: int = 4
    person_category: int = 0
    nonlinearity: str = "relu"
    dropout: float = 0.0
    use_mfe: bool = True
    use_mim: bool = True
    use_asm: bool = True
    asm_cosine: bool = False
    mim_scope: str = "pair"
    track_keying: str = "category"
    require_visual: bool = False
    motion: MotionConfig = field(default_factory=MotionConfig)

    def __post_init__(self) -> None:
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads:
            raise ValueError(f"model dim {self.dim} must be a positive multiple of heads {self.heads}")
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ValueError("layer counts must be positive")
        if self.use_mim and not self.use_mfe:
            raise ValueError("motion interaction requires motion features (use_mim implies use_mfe)")
        if self.mim_scope not in ("pair", "frame"):
            raise ValueError(f"unknown mim scope {self.mim_scope!r}")
        if self.nonlinearity != "relu":
            raise ValueError("only the rectifier nonlinearity is implemented")
        if self.dropout != 0.0:
            raise ValueError("dropout is not implemented; keep it at 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NetConfig":
        data = dict(data)
        if isinstance(data.get("motion"), dict):
            data["motion"] = MotionConfig(**data["motion"])
        return cls(**data)

    def ablate(self, *names: str) -> "NetConfig":
        """Copy with components switched off: any of ``mfe``, ``mim``, ``asm``."""
        cfg = self
        for name in names:
            if name == "mfe":
                cfg = replace(cfg, use_mfe=False, use_mim=False)
            elif name == "mim":
                cfg = replace(cfg, use_mim=False)
            elif name == "asm":
                cfg = replace(cfg, use_asm=False)
            else:
                raise ValueError(f"unknown ablation {name!r}")
        return cfg


@dataclass
class EmbeddingMatrix:
    """Frozen predicate text embeddings, one row per predicate."""

    Z: np.ndarray
    source: str = "ingested"

    def __post_init__(self) -> None:
        self.Z = np.asarray(self.Z, dtype=np.float64)
        if self.Z.ndim != 2 or not np.all(np.isfinite(self.Z)):
            raise ValueError("embedding matrix must be a finite 2-d array")

    @property
    def num_predicates(self) -> int:
        return self.Z.shape[0]

    @property
    def dim(self) -> int:
        return self.Z.shape[1]

    def check(self, vocab: RelationVocabulary) -> None:
        if self.num_predicates != vocab.num_predicates:
            raise ValueError(f"embedding rows {self.num_predicates} != {vocab.num_predicates} predicates")


@dataclass
class PairFeature:
    f_rel: np.ndarray
    f_clip: np.ndarray
    f_pair: np.ndarray


@dataclass
class RelationPrediction:
    video_id: str
    track_id: int
    frame_index: int
    scores: np.ndarray
    probabilities: np.ndarray


# ---------------------------------------------------------------------------
# parameter-free preparation


def geometry_vector(subject: BoundingBox, obj: BoundingBox, frame_size: Tuple[float, float]) -> np.ndarray:
    """Normalized centers and sizes of both boxes, their IoU and union area (10 scalars)."""
    w, h = frame_size
    sx, sy = center(subject)
    ox, oy = center(obj)
    u = union_box(subject, obj)
    return np.array(
        [
            sx / w,
            sy / h,
            subject.width / w,
            subject.height / h,
            ox / w,
            oy / h,
            obj.width / w,
            obj.height / h,
            box_iou(subject, obj),
            u.area / (w * h),
        ]
    )


@dataclass
class PairItem:
    """Bookkeeping for one (track, frame) pair occurrence."""

    video_id: str
    track_id: int
    frame_index: int
    subject: Detection
    object: Detection


@dataclass
class VideoData:
    """Parameter-independent arrays for one video (local indices)."""

    video_id: str
    items: List[PairItem]
    tracks: List[PairTrack]
    detections: List[Detection]
    subj_feat: np.ndarray
    obj_feat: np.ndarray
    union_feat: np.ndarray
    geometry: np.ndarray
    subj_cat: np.ndarray
    obj_cat: np.ndarray
    motion: np.ndarray
    item_frame: np.ndarray
    item_slot: np.ndarray
    item_track: np.ndarray
    item_step: np.ndarray
    item_offset: np.ndarray
    item_subj_det: np.ndarray
    item_obj_det: np.ndarray
    det_feat: np.ndarray
    det_labels: np.ndarray
    num_frames: int
    duplicates_dropped: int = 0


def _feature(det: Detection, dim: int, required: bool) -> np.ndarray:
    if det.visual_feature is None:
        if required:
            raise ValueError(f"detection {det.instance_id} in frame {det.frame_index} lacks a visual feature")
        return np.zeros(dim)
    if det.visual_feature.shape != (dim,):
        raise ShapeError(f"visual feature width {det.visual_feature.shape[0]} != {dim}")
    return det.visual_feature


def prepare_video(video: Video, cfg: NetConfig) -> VideoData:
    frames = {f.frame_index: f for f in video.frames}
    link = link_tracks(video.detections_by_frame(), cfg.person_category, cfg.track_keying)
    tracks = link.tracks
    dv = cfg.visual_dim

    det_index: Dict[int, int] = {}
    detections: List[Detection] = []

    def det_id(det: Detection) -> int:
        key = id(det)
        if key not in det_index:
            det.validate(cfg.num_object_categories)
            det_index[key] = len(detections)
            detections.append(det)
        return det_index[key]

    frame_order = {fi: n for n, fi in enumerate(sorted(frames))}
    slots: Dict[int, int] = {}
    rows = []
    for track in tracks:
        first = track.frames[0]
        for step, t in enumerate(track.frames):
            subj, obj = track.entries[t]
            frame = frames[t]
            attrs = compute_motion_attributes(track, t, cfg.motion, frame.size)
            union = frame.union_features.get((subj.instance_id, obj.instance_id))
            sf = _feature(subj, dv, cfg.require_visual)
            of = _feature(obj, dv, cfg.require_visual)
            if union is None:
                union = 0.5 * (sf + of)
            slot = slots.get(t, 0)
            slots[t] = slot + 1
            rows.append(
                (
                    PairItem(video.video_id, track.track_id, t, subj, obj),
                    sf,
                    of,
                    np.asarray(union, dtype=float),
                    geometry_vector(subj.box, obj.box, frame.size),
                    subj.category_id,
                    obj.category_id,
                    attrs.as_vector(cfg.motion.include_validity),
                    frame_order[t],
                    slot,
                    track.track_id,
                    step,
                    t - first,
                    det_id(subj),
                    det_id(obj),
                )
            )
    # every detection feeds the object head, paired or not
    for f in video.frames:
        for det in f.detections:
            det_id(det)

    p = len(rows)
    md = cfg.motion.input_dim

    def col(i, dtype=float, width=None):
        if p == 0:
            return np.zeros((0, width) if width else (0,), dtype=dtype)
        return np.array([r[i] for r in rows], dtype=dtype)

    return VideoData(
        video_id=video.video_id,
        items=[r[0] for r in rows],
        tracks=tracks,
        detections=detections,
        subj_feat=col(1, width=dv),
        obj_feat=col(2, width=dv),
        union_feat=col(3, width=dv),
        geometry=col(4, width=GEOMETRY_DIM),
        subj_cat=col(5, int),
        obj_cat=col(6, int),
        motion=col(7, width=md),
        item_frame=col(8, int),
        item_slot=col(9, int),
        item_track=col(10, int),
        item_step=col(11, int),
        item_offset=col(12, float),
        item_subj_det=col(13, int),
        item_obj_det=col(14, int),
        det_feat=np.array([_feature(d, dv, cfg.require_visual) for d in detections]).reshape(len(detections), dv),
        det_labels=np.array([d.category_id for d in detections], dtype=int),
        num_frames=len(frames),
        duplicates_dropped=link.duplicates_dropped,
    )


@dataclass
class Batch:
    items: List[PairItem]
    detections: List[Detection]
    subj_feat: np.ndarray
    obj_feat: np.ndarray
    union_feat: np.ndarray
    geometry: np.ndarray
    subj_cat: np.ndarray
    obj_cat: np.ndarray
    motion: np.ndarray
    item_frame: np.ndarray
    item_slot: np.ndarray
    item_track: np.ndarray
    item_step: np.ndarray
    item_subj_det: np.ndarray
    item_obj_det: np.ndarray
    det_feat: np.ndarray
    det_labels: np.ndarray
    frame_shape: Tuple[int, int]
    frame_mask: np.ndarray
    track_shape: Tuple[int, int]
    track_mask: np.ndarray
    track_positions: np.ndarray

    @property
    def num_items(self) -> int:
        return len(self.items)


def collate(videos: Sequence[VideoData]) -> Batch:
    frame_off = track_off = det_off = 0
    cols: Dict[str, list] = {k: [] for k in (
        "subj_feat", "obj_feat", "union_feat", "geometry", "subj_cat", "obj_cat", "motion",
        "item_frame", "item_slot", "item_track", "item_step", "item_offset", "item_subj_det",
        "item_obj_det", "det_feat", "det_labels",
    )}
    items: List[PairItem] = []
    detections: List[Detection] = []
    for v in videos:
        items.extend(v.items)
        detections.extend(v.detections)
        for k in cols:
            arr = getattr(v, k)
            if k == "item_frame":
                arr = arr + frame_off
            elif k == "item_track":
                arr = arr + track_off
            elif k in ("item_subj_det", "item_obj_det"):
                arr = arr + det_off
            cols[k].append(arr)
        frame_off += v.num_frames
        track_off += len(v.tracks)
        det_off += len(v.detections)
    out = {k: np.concatenate(vs) if vs else np.zeros(0) for k, vs in cols.items()}
    dv = videos[0].det_feat.shape[1] if videos else 0
    if out["det_feat"].ndim == 1:
        out["det_feat"] = out["det_feat"].reshape(0, dv)

    n_frames = max(frame_off, 1)
    n_slots = int(out["item_slot"].max()) + 1 if len(items) else 1
    frame_mask = np.zeros((n_frames, n_slots), dtype=bool)
    frame_mask[out["item_frame"], out["item_slot"]] = True
    n_tracks = max(track_off, 1)
    n_steps = int(out["item_step"].max()) + 1 if len(items) else 1
    track_mask = np.zeros((n_tracks, n_steps), dtype=bool)
    track_mask[out["item_track"], out["item_step"]] = True
    positions = np.zeros((n_tracks, n_steps))
    positions[out["item_track"], out["item_step"]] = out["item_offset"]
    # padded frames/tracks without any real key would attend uniformly; keep one key open
    frame_mask_attn = frame_mask.copy()
    frame_mask_attn[~frame_mask_attn.any(axis=1), 0] = True
    track_mask_attn = track_mask.copy()
    track_mask_attn[~track_mask_attn.any(axis=1), 0] = True

    return Batch(
        items=items,
        detections=detections,
        subj_feat=out["subj_feat"],
        obj_feat=out["obj_feat"],
        union_feat=out["union_feat"],
        geometry=out["geometry"],
        subj_cat=out["subj_cat"].astype(int),
        obj_cat=out["obj_cat"].astype(int),
        motion=out["motion"],
        item_frame=out["item_frame"].astype(int),
        item_slot=out["item_slot"].astype(int),
        item_track=out["item_track"].astype(int),
        item_step=out["item_step"].astype(int),
        item_subj_det=out["item_subj_det"].astype(int),
        item_obj_det=out["item_obj_det"].astype(int),
        det_feat=out["det_feat"],
        det_labels=out["det_labels"].astype(int),
        frame_shape=(n_frames, n_slots),
        frame_mask=frame_mask_attn,
        track_shape=(n_tracks, n_steps),
        track_mask=track_mask_attn,
        track_positions=positions,
    )


# ---------------------------------------------------------------------------
# differentiable blocks


class MotionInteraction(Module):
    """Cross-attention block: motion features query the spatial features.

    ``h = LN(q + Attn(q, kv, kv))``, ``out = LN(h + FFN(h))``.
    """

    def __init__(self, dim: int, heads: int, hidden: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm1 = LayerNorm(dim)
        self.ffn = FeedForward(dim, hidden, rng)
        self.norm2 = LayerNorm(dim)

    def forward(self, motion, spatial, key_mask=None):
        a, ca = self.attn.forward(motion, spatial, spatial, key_mask)
        h, c1 = self.norm1.forward(motion + a)
        f, cf = self.ffn.forward(h)
        y, c2 = self.norm2.forward(h + f)
        return y, (ca, c1, cf, c2)

    def backward(self, grad_y, cache):
        """Return gradients for (motion, spatial)."""
        require_cache(cache)
        ca, c1, cf, c2 = cache
        g = self.norm2.backward(grad_y, c2)
        g = g + self.ffn.backward(g, cf)
        g = self.norm1.backward(g, c1)
        gq, gk, gv = self.attn.backward(g, ca)
        return g + gq, gk + gv


def residual_join(f_spatial: np.ndarray, f_mim: np.ndarray) -> np.ndarray:
    f_spatial = np.asarray(f_spatial, dtype=float)
    f_mim = np.asarray(f_mim, dtype=float)
    if f_spatial.shape != f_mim.shape:
        raise ShapeError(f"residual join of {f_spatial.shape} and {f_mim.shape}")
    return f_spatial + f_mim


def asm_scores(f_temporal: np.ndarray, Z: EmbeddingMatrix | np.ndarray, cosine: bool = False) -> np.ndarray:
    """Matching scores ``F @ Z.T`` (optionally on L2-normalized rows)."""
    z = Z.Z if isinstance(Z, EmbeddingMatrix) else np.asarray(Z, dtype=float)
    f = np.asarray(f_temporal, dtype=float)
    if f.shape[-1] != z.shape[1]:
        raise ShapeError(f"feature width {f.shape[-1]} != embedding width {z.shape[1]}")
    if cosine:
        f = f / np.maximum(np.linalg.norm(f, axis=-1, keepdims=True), 1e-12)
        z = z / np.maximum(np.linalg.norm(z, axis=-1, keepdims=True), 1e-12)
    return f @ z.T


def predict_probabilities(scores: np.ndarray) -> np.ndarray:
    return sigmoid(scores)


def build_trajectory(track: PairTrack, joint: Dict[int, np.ndarray]) -> np.ndarray:
    """Stack per-frame joint features of a track in ascending frame order."""
    return np.stack([np.asarray(joint[t], dtype=float) for t in track.frames])


@dataclass
class ForwardOutput:
    batch: Batch
    scores: np.ndarray
    probabilities: np.ndarray
    object_logits: np.ndarray

    def predictions(self) -> List[RelationPrediction]:
        return [
            RelationPrediction(it.video_id, it.track_id, it.frame_index, self.scores[i], self.probabilities[i])
            for i, it in enumerate(self.batch.items)
        ]


class RelationNet(Module):
    """All learnable parts of the pipeline in one parameter tree."""

    def __init__(self, cfg: NetConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d, dv, e = cfg.dim, cfg.visual_dim, cfg.category_dim
        self.category_embedding = Parameter(rng.normal(0.0, 0.1, size=(cfg.num_object_categories, e)))
        self.rel_mlp = MLP([2 * dv + GEOMETRY_DIM + 2 * e, cfg.rel_hidden, d], rng)
        self.pair_proj = Linear(d + dv, d, rng)
        self.spatial_encoder = TransformerEncoder(d, cfg.heads, cfg.encoder_layers, cfg.ffn_hidden, rng)
        if cfg.use_mfe:
            self.motion_embedder = MotionEmbedder(cfg.motion, d, rng)
            if cfg.use_mim:
                self.mim = MotionInteraction(d, cfg.heads, cfg.ffn_hidden, rng)
            else:
                self.concat_fuse = Linear(2 * d, d, rng)
        self.temporal_decoder = TransformerDecoder(d, cfg.heads, cfg.decoder_layers, cfg.ffn_hidden, rng)
        if not cfg.use_asm:
            self.classifier = Linear(d, cfg.num_predicates, rng)
        self.object_head = Linear(dv, cfg.num_object_categories, rng)
        self._cache = None

    # -- individual stages -------------------------------------------------

    def assemble_pair_features(self, batch: Batch):
        emb = self.category_embedding.value
        rel_in = np.concatenate(
            [batch.subj_feat, batch.obj_feat, batch.geometry, emb[batch.subj_cat], emb[batch.obj_cat]], axis=1
        )
        f_rel, c_rel = self.rel_mlp.forward(rel_in)
        f_pair, c_pair = self.pair_proj.forward(np.concatenate([f_rel, batch.union_feat], axis=1))
        return f_rel, f_pair, (c_rel, c_pair)

    def _assemble_backward(self, g_pair, batch: Batch, cache) -> None:
        c_rel, c_pair = cache
        d, dv, e = self.cfg.dim, self.cfg.visual_dim, self.cfg.category_dim
        g_cat = self.pair_proj.backward(g_pair, c_pair)
        g_rel_in = self.rel_mlp.backward(g_cat[:, :d], c_rel)
        off = 2 * dv + GEOMETRY_DIM
        np.add.at(self.category_embedding.grad, batch.subj_cat, g_rel_in[:, off : off + e])
        np.add.at(self.category_embedding.grad, batch.obj_cat, g_rel_in[:, off + e :])

    def _scatter(self, rows: np.ndarray, shape, idx_a, idx_b) -> np.ndarray:
        out = np.zeros(shape + (rows.shape[1],))
        out[idx_a, idx_b] = rows
        return out

    # -- full pass ----------------------------------------------------------

    def forward(self, batch: Batch, Z: Optional[EmbeddingMatrix] = None) -> ForwardOutput:
        cfg = self.cfg
        d = cfg.dim
        nr = cfg.num_predicates
        cache: Dict[str, object] = {"batch": batch}
        obj_logits, cache["obj"] = self.object_head.forward(batch.det_feat)
        if batch.num_items == 0:
            self._cache = cache
            empty = np.zeros((0, nr))
            return ForwardOutput(batch, empty, empty.copy(), obj_logits)
        if cfg.use_asm:
            if Z is None:
                raise ValueError("an embedding matrix is required when ASM is enabled")
            if Z.Z.shape != (nr, d):
                raise ShapeError(f"embedding matrix {Z.Z.shape} != ({nr}, {d})")

        _, f_pair, cache["pair"] = self.assemble_pair_features(batch)
        fa, fb = batch.item_frame, batch.item_slot
        x = self._scatter(f_pair, batch.frame_shape, fa, fb)
        enc, cache["enc"] = self.spatial_encoder.forward(x, batch.frame_mask)
        f_spatial = enc[fa, fb]

        if cfg.use_mfe:
            f_motion, cache["motion"] = self.motion_embedder.forward(batch.motion)
            if cfg.use_mim:
                if cfg.mim_scope == "pair":
                    f_mim, cache["mim"] = self.mim.forward(f_motion[:, None, :], f_spatial[:, None, :])
                    f_mim = f_mim[:, 0, :]
                else:
                    q = self._scatter(f_motion, batch.frame_shape, fa, fb)
                    out, cache["mim"] = self.mim.forward(q, enc, batch.frame_mask)
                    f_mim = out[fa, fb]
            else:
                f_mim, cache["concat"] = self.concat_fuse.forward(np.concatenate([f_motion, f_spatial], axis=1))
            f_joint = residual_join(f_spatial, f_mim)
        else:
            f_joint = f_spatial

        ta, tb = batch.item_track, batch.item_step
        s = self._scatter(f_joint, batch.track_shape, ta, tb)
        dec, cache["dec"] = self.temporal_decoder.forward(
            s, s, positions=batch.track_positions, target_mask=batch.track_mask, memory_mask=batch.track_mask
        )
        f_temporal = dec[ta, tb]

        if cfg.use_asm:
            z = Z.Z
            if cfg.asm_cosine:
                norm = np.maximum(np.linalg.norm(f_temporal, axis=1, keepdims=True), 1e-12)
                fh = f_temporal / norm
                zh = z / np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-12)
                scores = fh @ zh.T
                cache["asm"] = (fh, norm, zh)
            else:
                scores = f_temporal @ z.T
                cache["asm"] = (z,)
        else:
            scores, cache["cls"] = self.classifier.forward(f_temporal)

        probs = sigmoid(scores)
        self._cache = cache
        return ForwardOutput(batch, scores, probs, obj_logits)

    def backward(self, grad_scores: np.ndarray, grad_obj_logits: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
        """Accumulate parameter gradients from dL/dscores and dL/dobject_logits.

        Returns gradients with respect to a few intermediate inputs (the motion
        attribute matrix among them) for inspection.
        """
        cache = self._cache
        if cache is None:
            raise BackwardError("RelationNet.backward called before forward")
        self._cache = None
        cfg = self.cfg
        batch: Batch = cache["batch"]
        if grad_obj_logits is not None:
            self.object_head.backward(grad_obj_logits, cache["obj"])
        if batch.num_items == 0:
            return {}
        ta, tb = batch.item_track, batch.item_step
        fa, fb = batch.item_frame, batch.item_slot

        if cfg.use_asm:
            if cfg.asm_cosine:
                fh, norm, zh = cache["asm"]
                g_fh = grad_scores @ zh
                g_temporal = (g_fh - fh * np.sum(g_fh * fh, axis=1, keepdims=True)) / norm
            else:
                (z,) = cache["asm"]
                g_temporal = grad_scores @ z
        else:
            g_temporal = self.classifier.backward(grad_scores, cache["cls"])

        g_dec = self._scatter(g_temporal, batch.track_shape, ta, tb)
        g_tgt, g_mem = self.temporal_decoder.backward(g_dec, cache["dec"])
        g_s = g_tgt + g_mem
        g_joint = g_s[ta, tb]

        out: Dict[str, np.ndarray] = {}
        g_enc_extra = None
        if cfg.use_mfe:
            g_spatial = g_joint.copy()
            g_mim = g_joint
            if cfg.use_mim:
                if cfg.mim_scope == "pair":
                    gq, gkv = self.mim.backward(g_mim[:, None, :], cache["mim"])
                    g_motion = gq[:, 0, :]
                    g_spatial += gkv[:, 0, :]
                else:
                    g_out = self._scatter(g_mim, batch.frame_shape, fa, fb)
                    gq, gkv = self.mim.backward(g_out, cache["mim"])
                    g_motion = gq[fa, fb]
                    g_enc_extra = gkv
            else:
                g_cat = self.concat_fuse.backward(g_mim, cache["concat"])
                g_motion = g_cat[:, : cfg.dim]
                g_spatial += g_cat[:, cfg.dim :]
            out["motion_input"] = self.motion_embedder.backward(g_motion, cache["motion"])
        else:
            g_spatial = g_joint

        g_enc = self._scatter(g_spatial, batch.frame_shape, fa, fb)
        if g_enc_extra is not None:
            g_enc = g_enc + g_enc_extra
        g_x = self.spatial_encoder.backward(g_enc, cache["enc"])
        g_pair = g_x[fa, fb]
        out["pair_feature"] = g_pair
        self._assemble_backward(g_pair, batch, cache["pair"])
        return out


def forward_full(net: RelationNet, videos: Sequence[Video], Z: Optional[EmbeddingMatrix]) -> ForwardOutput:
    """Run the whole pipeline on raw videos."""
    data = [prepare_video(v, net.cfg) for v in videos]
    return net.forward(collate(data), Z)


# ---------------------------------------------------------------------------
# single-example stage helpers (same parameters as the batched pass)


def assemble_pair_feature(
    net: RelationNet,
    subject: Detection,
    obj: Detection,
    frame_size: Tuple[float, float],
    union_visual: Optional[np.ndarray] = None,
) -> PairFeature:
    cfg = net.cfg
    sf = _feature(subject, cfg.visual_dim, cfg.require_visual)
    of = _feature(obj, cfg.visual_dim, cfg.require_visual)
    f_clip = 0.5 * (sf + of) if union_visual is None else np.asarray(union_visual, dtype=float)
    emb = net.category_embedding.value
    rel_in = np.concatenate(
        [sf, of, geometry_vector(subject.box, obj.box, frame_size), emb[subject.category_id], emb[obj.category_id]]
    )
    f_rel, _ = net.rel_mlp.forward(rel_in[None])
    f_pair, _ = net.pair_proj.forward(np.concatenate([f_rel, f_clip[None]], axis=1))
    return PairFeature(f_rel[0], f_clip, f_pair[0])


def spatial_encode(net: RelationNet, f_pairs: np.ndarray) -> np.ndarray:
    """Encoder over one frame's pair features, ``(P, D) -> (P, D)``."""
    x = np.asarray(f_pairs, dtype=float).reshape(-1, net.cfg.dim)
    if len(x) == 0:
        return x.copy()
    return net.spatial_encoder.forward(x)[0]


def mim_fuse(net: RelationNet, f_motion: np.ndarray, f_spatial: np.ndarray) -> np.ndarray:
    if not net.cfg.use_mim:
        raise ValueError("the network was built without motion interaction")
    q = np.asarray(f_motion, dtype=float)
    kv = np.asarray(f_spatial, dtype=float)
    if q.shape != (net.cfg.dim,) or kv.shape != q.shape:
        raise ShapeError(f"motion {q.shape} and spatial {kv.shape} must both be ({net.cfg.dim},)")
    return net.mim.forward(q[None], kv[None])[0][0]


def temporal_decode(net: RelationNet, S: np.ndarray, positions: Optional[np.ndarray] = None) -> np.ndarray:
    """Decoder over one track sequence ``S`` attending to itself, ``(T, D) -> (T, D)``."""
    s = np.asarray(S, dtype=float)
    if s.ndim != 2 or len(s) == 0:
        raise ShapeError("a track sequence needs shape (T >= 1, D)")
    pos = np.arange(len(s), dtype=float) if positions is None else np.asarray(positions, dtype=float)
    return net.temporal_decoder.forward(s, s, positions=pos)[0]
