"""Core value types for frames, detections, pairs and scene graph triples.

Also holds the two pieces of pair bookkeeping every later stage relies on:
building <person, object> candidates inside a frame and linking those
candidates into tracks across frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np


class SceneModelError(ValueError):
    """Raised when a value type is constructed with invalid fields."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel xyxy format."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise SceneModelError(f"non-finite box coordinates {coords}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise SceneModelError(f"degenerate box {coords}")

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BoundingBox":
        if len(values) != 4:
            raise SceneModelError(f"box needs 4 coordinates, got {len(values)}")
        return cls(*(float(v) for v in values))

    def to_list(self) -> List[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def translate(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def scale(self, factor: float) -> "BoundingBox":
        return BoundingBox(self.x1 * factor, self.y1 * factor, self.x2 * factor, self.y2 * factor)


@dataclass(frozen=True, eq=False)
class Detection:
    """A localized, categorized object in one frame.

    Compared by identity: two detections with identical fields in the same
    frame are still distinct objects.
    """

    frame_index: int
    instance_id: int
    category_id: int
    box: BoundingBox
    confidence: float = 1.0
    visual_feature: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise SceneModelError(f"negative frame index {self.frame_index}")
        if self.category_id < 0:
            raise SceneModelError(f"negative category id {self.category_id}")
        if not (0.0 <= self.confidence <= 1.0):
            raise SceneModelError(f"confidence {self.confidence} outside [0, 1]")
        if self.visual_feature is not None:
            feat = np.asarray(self.visual_feature, dtype=np.float64)
            if feat.ndim != 1 or not np.all(np.isfinite(feat)):
                raise SceneModelError("visual feature must be a finite 1-d vector")
            object.__setattr__(self, "visual_feature", feat)

    def validate(self, num_categories: int, feature_dim: Optional[int] = None) -> None:
        """Check the detection against a vocabulary size and feature width."""
        if self.category_id >= num_categories:
            raise SceneModelError(
                f"category {self.category_id} outside vocabulary of {num_categories}"
            )
        if feature_dim is not None and self.visual_feature is not None:
            if self.visual_feature.shape[0] != feature_dim:
                raise SceneModelError(
                    f"feature dim {self.visual_feature.shape[0]} != configured {feature_dim}"
                )


@dataclass(frozen=True)
class PairCandidate:
    subject: Detection
    object: Detection
    frame_index: int


@dataclass(frozen=True)
class RelationVocabulary:
    """Predicate names with their training frequencies, plus object names."""

    predicate_names: Tuple[str, ...]
    frequencies: Tuple[int, ...]
    object_category_names: Tuple[str, ...]
    person_category: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "predicate_names", tuple(self.predicate_names))
        object.__setattr__(self, "frequencies", tuple(int(n) for n in self.frequencies))
        object.__setattr__(self, "object_category_names", tuple(self.object_category_names))
        if len(self.predicate_names) < 1:
            raise SceneModelError("vocabulary needs at least one predicate")
        if len(self.frequencies) != len(self.predicate_names):
            raise SceneModelError("one frequency per predicate required")
        if any(n < 2 for n in self.frequencies):
            raise SceneModelError("predicate frequencies must be >= 2")
        if len(set(self.predicate_names)) != len(self.predicate_names):
            raise SceneModelError("predicate names must be unique")
        if len(set(self.object_category_names)) != len(self.object_category_names):
            raise SceneModelError("object category names must be unique")
        if not 0 <= self.person_category < len(self.object_category_names):
            raise SceneModelError("person category outside object vocabulary")

    @property
    def num_predicates(self) -> int:
        return len(self.predicate_names)

    @property
    def num_object_categories(self) -> int:
        return len(self.object_category_names)

    def to_dict(self) -> dict:
        return {
            "predicate_names": list(self.predicate_names),
            "frequencies": list(self.frequencies),
            "object_category_names": list(self.object_category_names),
            "person_category": self.person_category,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RelationVocabulary":
        return cls(
            predicate_names=tuple(data["predicate_names"]),
            frequencies=tuple(data["frequencies"]),
            object_category_names=tuple(data["object_category_names"]),
            person_category=int(data.get("person_category", 0)),
        )


@dataclass(frozen=True)
class SceneGraphTriple:
    frame_index: int
    subject_category: int
    subject_box: BoundingBox
    predicate: int
    object_category: int
    object_box: BoundingBox
    score: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.score):
            raise SceneModelError(f"non-finite triple score {self.score}")
        if min(self.subject_category, self.predicate, self.object_category) < 0:
            raise SceneModelError("negative index in triple")


@dataclass
class PairTrack:
    """A subject-object pair followed across frames."""

    track_id: int
    subject_category: int
    object_category: int
    entries: Dict[int, Tuple[Detection, Detection]] = field(default_factory=dict)

    def add(self, subject: Detection, obj: Detection) -> None:
        frame = subject.frame_index
        if frame in self.entries:
            raise SceneModelError(f"track {self.track_id} already has frame {frame}")
        if subject.category_id != self.subject_category or obj.category_id != self.object_category:
            raise SceneModelError("categories must stay constant along a track")
        self.entries[frame] = (subject, obj)

    @property
    def frames(self) -> List[int]:
        return sorted(self.entries)

    @property
    def span(self) -> Tuple[int, int]:
        frames = self.frames
        return frames[0], frames[-1]

    def __len__(self) -> int:
        return len(self.entries)

    def previous_frame(self, t: int) -> Optional[int]:
        """Latest track frame strictly before ``t``, if any."""
        earlier = [f for f in self.entries if f < t]
        return max(earlier) if earlier else None


def union_box(a: BoundingBox, b: BoundingBox) -> BoundingBox:
    return BoundingBox(min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))


def build_pairs(frame_detections: Sequence[Detection], person_category: int) -> List[PairCandidate]:
    """Form <person, object> candidates for one frame.

    Every person detection is paired with every non-person detection, person
    as subject. Ordered by subject instance id, then object instance id.
    """
    if not frame_detections:
        return []
    frames = {d.frame_index for d in frame_detections}
    if len(frames) != 1:
        raise SceneModelError(f"detections span several frames: {sorted(frames)}")
    persons = sorted(
        (d for d in frame_detections if d.category_id == person_category),
        key=lambda d: d.instance_id,
    )
    objects = sorted(
        (d for d in frame_detections if d.category_id != person_category),
        key=lambda d: d.instance_id,
    )
    frame = frame_detections[0].frame_index
    return [PairCandidate(s, o, frame) for s in persons for o in objects]


@dataclass
class LinkResult:
    tracks: List[PairTrack]
    duplicates_dropped: int = 0


def _dedupe_by_category(objects: Iterable[Detection]) -> Tuple[List[Detection], int]:
    best: Dict[int, Detection] = {}
    dropped = 0
    for det in objects:
        current = best.get(det.category_id)
        if current is None:
            best[det.category_id] = det
            continue
        dropped += 1
        if (det.confidence, -det.instance_id) > (current.confidence, -current.instance_id):
            best[det.category_id] = det
    return sorted(best.values(), key=lambda d: d.instance_id), dropped


def link_tracks(
    frames: Dict[int, Sequence[Detection]] | Sequence[Sequence[Detection]],
    person_category: int,
    keying: str = "category",
) -> LinkResult:
    """Link per-frame <person, object> pairs into tracks.

    ``keying="category"`` keys a track by (subject instance id, object
    category); two same-category objects in one frame are resolved by keeping
    the more confident one (ties go to the lower instance id) and counted in
    ``duplicates_dropped``. ``keying="instance"`` keys by both instance ids.
    """
    if keying not in ("category", "instance"):
        raise ValueError(f"unknown track keying {keying!r}")
    if isinstance(frames, dict):
        grouped = [frames[k] for k in sorted(frames)]
    else:
        grouped = list(frames)

    tracks: Dict[Tuple[int, int], PairTrack] = {}
    dropped = 0
    for dets in grouped:
        if not dets:
            continue
        persons = [d for d in dets if d.category_id == person_category]
        objects = [d for d in dets if d.category_id != person_category]
        if keying == "category":
            objects, n = _dedupe_by_category(objects)
            dropped += n * len(persons)
        for cand in build_pairs(persons + list(objects), person_category):
            second = cand.object.category_id if keying == "category" else cand.object.instance_id
            key = (cand.subject.instance_id, second)
            track = tracks.get(key)
            if track is None:
                track = PairTrack(
                    track_id=-1,
                    subject_category=cand.subject.category_id,
                    object_category=cand.object.category_id,
                )
                tracks[key] = track
            track.add(cand.subject, cand.object)

    ordered = [tracks[k] for k in sorted(tracks)]
    for i, track in enumerate(ordered):
        track.track_id = i
    return LinkResult(ordered, dropped)


@dataclass
class Frame:
    frame_index: int
    width: float
    height: float
    detections: List[Detection] = field(default_factory=list)
    # optional union-region embeddings keyed by (subject instance, object instance)
    union_features: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise SceneModelError(f"frame {self.frame_index} has non-positive size")
        for det in self.detections:
            if det.frame_index != self.frame_index:
                raise SceneModelError(
                    f"detection frame {det.frame_index} inside frame {self.frame_index}"
                )

    @property
    def size(self) -> Tuple[float, float]:
        return (self.width, self.height)


@dataclass
class Video:
    video_id: str
    frames: List[Frame] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.frames.sort(key=lambda f: f.frame_index)
        indices = [f.frame_index for f in self.frames]
        if len(set(indices)) != len(indices):
            raise SceneModelError(f"video {self.video_id} repeats a frame index")

    def frame(self, index: int) -> Frame:
        for f in self.frames:
            if f.frame_index == index:
                return f
        raise KeyError(index)

    def detections_by_frame(self) -> Dict[int, List[Detection]]:
        return {f.frame_index: list(f.detections) for f in self.frames}
