"""Readers and writers for the on-disk formats.

* detections: JSONL, one frame per line
* embeddings: binary matrix (magic, version, rows, cols, float32 data)
* vocabulary: one JSON document
* ground truth: JSONL, one frame per line
* predictions: JSONL, one frame per line (pair scores plus ranked triples)

Every reader raises :class:`SchemaError` naming the file and line for
malformed input.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .metrics import FrameKey, GroundTruthGraph, GTTriple, PairPrediction, rank_triples
from .relation_net import EmbeddingMatrix
from .scene_model import BoundingBox, Detection, Frame, RelationVocabulary, SceneModelError, Video

EMBEDDING_MAGIC = b"MOSA-EMBEDDINGS\x00"
EMBEDDING_VERSION = 1
_EMB_HEADER = struct.Struct("<16sIqq")


class SchemaError(ValueError):
    """Malformed input file; the message carries the location."""

    def __init__(self, path, line: Optional[int], message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _write_lines(path, lines: Iterable[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


def _read_jsonl(path) -> Iterable[Tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(path, n, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise SchemaError(path, n, "expected a JSON object")
            yield n, obj


def _require(obj: dict, key: str, kind, path, line: int):
    if key not in obj:
        raise SchemaError(path, line, f"missing field {key!r}")
    value = obj[key]
    if kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise SchemaError(path, line, f"field {key!r} has the wrong type")
    return value


def _check_keys(obj: dict, allowed: set, path, line: int, what: str) -> None:
    extra = set(obj) - allowed
    if extra:
        raise SchemaError(path, line, f"unknown {what} field(s) {sorted(extra)}")


def _box(value, path, line: int) -> BoundingBox:
    if not isinstance(value, list) or len(value) != 4:
        raise SchemaError(path, line, "box must be a list of 4 numbers")
    try:
        return BoundingBox.from_list([float(v) for v in value])
    except (TypeError, ValueError) as exc:
        raise SchemaError(path, line, f"bad box: {exc}") from None


# ---------------------------------------------------------------------------
# detections


_FRAME_KEYS = {"video_id", "frame_index", "width", "height", "detections", "union_features"}
_DET_KEYS = {"instance_id", "category_id", "box", "confidence", "feature"}


def frame_record(video_id: str, frame: Frame) -> dict:
    dets = []
    for d in sorted(frame.detections, key=lambda d: d.instance_id):
        rec = {
            "instance_id": d.instance_id,
            "category_id": d.category_id,
            "box": d.box.to_list(),
            "confidence": d.confidence,
        }
        if d.visual_feature is not None:
            rec["feature"] = [float(x) for x in d.visual_feature]
        dets.append(rec)
    rec = {
        "video_id": video_id,
        "frame_index": frame.frame_index,
        "width": frame.width,
        "height": frame.height,
        "detections": dets,
    }
    if frame.union_features:
        rec["union_features"] = [
            {"subject": s, "object": o, "feature": [float(x) for x in frame.union_features[(s, o)]]}
            for s, o in sorted(frame.union_features)
        ]
    return rec


def write_detections(path, videos: Sequence[Video]) -> None:
    _write_lines(path, (_dump(frame_record(v.video_id, f)) for v in videos for f in v.frames))


def read_detections(path) -> List[Video]:
    """Videos in first-appearance order; frames sorted by index."""
    frames: Dict[str, List[Frame]] = {}
    seen = set()
    for n, obj in _read_jsonl(path):
        _check_keys(obj, _FRAME_KEYS, path, n, "frame")
        vid = _require(obj, "video_id", str, path, n)
        fi = _require(obj, "frame_index", int, path, n)
        w = _require(obj, "width", float, path, n)
        h = _require(obj, "height", float, path, n)
        raw = _require(obj, "detections", list, path, n)
        if (vid, fi) in seen:
            raise SchemaError(path, n, f"duplicate frame {fi} of video {vid!r}")
        seen.add((vid, fi))
        dets = []
        ids = set()
        for d in raw:
            if not isinstance(d, dict):
                raise SchemaError(path, n, "detection must be an object")
            _check_keys(d, _DET_KEYS, path, n, "detection")
            iid = _require(d, "instance_id", int, path, n)
            if iid in ids:
                raise SchemaError(path, n, f"instance id {iid} repeated within a frame")
            ids.add(iid)
            feat = d.get("feature")
            if feat is not None and not (isinstance(feat, list) and all(isinstance(x, (int, float)) for x in feat)):
                raise SchemaError(path, n, "feature must be a list of numbers")
            try:
                dets.append(
                    Detection(
                        frame_index=fi,
                        instance_id=iid,
                        category_id=_require(d, "category_id", int, path, n),
                        box=_box(d.get("box"), path, n),
                        confidence=float(d.get("confidence", 1.0)),
                        visual_feature=None if feat is None else np.array(feat, dtype=float),
                    )
                )
            except SceneModelError as exc:
                raise SchemaError(path, n, str(exc)) from None
        unions = {}
        for u in obj.get("union_features", []):
            try:
                unions[(int(u["subject"]), int(u["object"]))] = np.array(u["feature"], dtype=float)
            except (KeyError, TypeError, ValueError):
                raise SchemaError(path, n, "union feature needs subject, object and feature") from None
        try:
            frames.setdefault(vid, []).append(Frame(fi, float(w), float(h), dets, unions))
        except SceneModelError as exc:
            raise SchemaError(path, n, str(exc)) from None
    return [Video(vid, fs) for vid, fs in frames.items()]


# ---------------------------------------------------------------------------
# embeddings


def write_embeddings(path, emb: EmbeddingMatrix) -> None:
    z = np.ascontiguousarray(emb.Z, dtype="<f4")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_EMB_HEADER.pack(EMBEDDING_MAGIC, EMBEDDING_VERSION, z.shape[0], z.shape[1]))
        fh.write(z.tobytes())


def read_embeddings(path) -> EmbeddingMatrix:
    data = Path(path).read_bytes()
    if len(data) < _EMB_HEADER.size:
        raise SchemaError(path, None, "embedding file shorter than its header")
    magic, version, rows, cols = _EMB_HEADER.unpack_from(data)
    if magic != EMBEDDING_MAGIC:
        raise SchemaError(path, None, "not an embedding file (bad magic)")
    if version != EMBEDDING_VERSION:
        raise SchemaError(path, None, f"unsupported embedding version {version}")
    if rows < 1 or cols < 1:
        raise SchemaError(path, None, f"bad embedding shape {rows}x{cols}")
    expected = _EMB_HEADER.size + 4 * rows * cols
    if len(data) != expected:
        raise SchemaError(path, None, f"expected {expected} bytes, found {len(data)}")
    z = np.frombuffer(data, dtype="<f4", offset=_EMB_HEADER.size).reshape(rows, cols).astype(np.float64)
    try:
        return EmbeddingMatrix(z, source="ingested")
    except ValueError as exc:
        raise SchemaError(path, None, str(exc)) from None


# ---------------------------------------------------------------------------
# vocabulary


def write_vocabulary(path, vocab: RelationVocabulary) -> None:
    _write_lines(path, [json.dumps(vocab.to_dict(), indent=2, sort_keys=True)])


def read_vocabulary(path) -> RelationVocabulary:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(path, exc.lineno, f"invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise SchemaError(path, 1, "expected a JSON object")
    try:
        return RelationVocabulary.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(path, None, f"bad vocabulary: {exc}") from None


# ---------------------------------------------------------------------------
# ground truth


def write_ground_truth(path, gt: GroundTruthGraph) -> None:
    keys = sorted(set(gt.frames) | set(gt.objects))
    lines = []
    for key in keys:
        rec = {
            "video_id": key[0],
            "frame_index": key[1],
            "triples": [
                {
                    "subject_category": t.subject_category,
                    "subject_box": t.subject_box.to_list(),
                    "predicate": t.predicate,
                    "object_category": t.object_category,
                    "object_box": t.object_box.to_list(),
                }
                for t in gt.frames.get(key, [])
            ],
        }
        if key in gt.objects:
            rec["objects"] = [{"category": c, "box": b.to_list()} for c, b in gt.objects[key]]
        lines.append(_dump(rec))
    _write_lines(path, lines)


def read_ground_truth(path) -> GroundTruthGraph:
    gt = GroundTruthGraph()
    for n, obj in _read_jsonl(path):
        _check_keys(obj, {"video_id", "frame_index", "triples", "objects"}, path, n, "ground-truth")
        key = (_require(obj, "video_id", str, path, n), _require(obj, "frame_index", int, path, n))
        if key in gt.frames:
            raise SchemaError(path, n, f"duplicate frame {key}")
        gt.frames[key] = []
        for t in _require(obj, "triples", list, path, n):
            if not isinstance(t, dict):
                raise SchemaError(path, n, "triple must be an object")
            gt.frames[key].append(
                GTTriple(
                    _require(t, "subject_category", int, path, n),
                    _box(t.get("subject_box"), path, n),
                    _require(t, "predicate", int, path, n),
                    _require(t, "object_category", int, path, n),
                    _box(t.get("object_box"), path, n),
                )
            )
        if "objects" in obj:
            gt.objects[key] = [
                (_require(o, "category", int, path, n), _box(o.get("box"), path, n)) for o in obj["objects"]
            ]
    return gt


# ---------------------------------------------------------------------------
# predictions


def _triple_record(t) -> dict:
    return {
        "subject_category": t.subject_category,
        "subject_box": t.subject_box.to_list(),
        "predicate": t.predicate,
        "object_category": t.object_category,
        "object_box": t.object_box.to_list(),
        "score": t.score,
    }


def write_predictions(
    path, predictions: Mapping[FrameKey, Sequence[PairPrediction]], task: str = "predcls", mode: str = "with"
) -> None:
    """Per frame: raw pair scores and the ranked triples under ``mode``.

    ``mode="no"`` is the full dump: every pair contributes one triple per
    predicate.
    """
    lines = []
    for key in sorted(predictions):
        pairs = predictions[key]
        lines.append(
            _dump(
                {
                    "video_id": key[0],
                    "frame_index": key[1],
                    "task": task,
                    "mode": mode,
                    "pairs": [
                        {
                            "pair_id": p.pair_id,
                            "subject_category": p.subject_category,
                            "subject_box": p.subject_box.to_list(),
                            "object_category": p.object_category,
                            "object_box": p.object_box.to_list(),
                            "predicate_scores": [float(s) for s in p.predicate_scores],
                            "subject_score": p.subject_score,
                            "object_score": p.object_score,
                        }
                        for p in pairs
                    ],
                    "triples": [_triple_record(t) for t in rank_triples(pairs, mode, task, key[1])],
                }
            )
        )
    _write_lines(path, lines)


def read_predictions(path) -> Dict[FrameKey, List[PairPrediction]]:
    out: Dict[FrameKey, List[PairPrediction]] = {}
    for n, obj in _read_jsonl(path):
        key = (_require(obj, "video_id", str, path, n), _require(obj, "frame_index", int, path, n))
        if key in out:
            raise SchemaError(path, n, f"duplicate frame {key}")
        pairs = []
        for p in _require(obj, "pairs", list, path, n):
            if not isinstance(p, dict):
                raise SchemaError(path, n, "pair must be an object")
            scores = _require(p, "predicate_scores", list, path, n)
            try:
                pairs.append(
                    PairPrediction(
                        pair_id=_require(p, "pair_id", int, path, n),
                        subject_category=_require(p, "subject_category", int, path, n),
                        subject_box=_box(p.get("subject_box"), path, n),
                        object_category=_require(p, "object_category", int, path, n),
                        object_box=_box(p.get("object_box"), path, n),
                        predicate_scores=np.array(scores, dtype=float),
                        subject_score=float(p.get("subject_score", 1.0)),
                        object_score=float(p.get("object_score", 1.0)),
                    )
                )
            except SchemaError:
                raise
            except (TypeError, ValueError) as exc:
                raise SchemaError(path, n, f"bad pair: {exc}") from None
        out[key] = pairs
    return out
