import json
import struct

import numpy as np
import pytest

from mosa import io
from mosa.datagen import SynthConfig, synth_video
from mosa.metrics import PairPrediction, rank_triples
from mosa.relation_net import EmbeddingMatrix
from mosa.scene_model import BoundingBox

SMALL = SynthConfig(seed=4, num_videos=3, frames=3, objects_per_video=2, track_counts=(2, 1, 1, 2), visual_dim=5)


@pytest.fixture
def sample():
    return synth_video(SMALL)


def test_detections_round_trip(tmp_path, sample):
    path = tmp_path / "d.jsonl"
    io.write_detections(path, sample.videos)
    videos = io.read_detections(path)
    assert [v.video_id for v in videos] == [v.video_id for v in sample.videos]
    for a, b in zip(videos, sample.videos):
        for fa, fb in zip(a.frames, b.frames):
            assert io.frame_record(a.video_id, fa) == io.frame_record(b.video_id, fb)
    again = tmp_path / "d2.jsonl"
    io.write_detections(again, videos)
    assert again.read_bytes() == path.read_bytes()


def test_detections_keep_union_features_and_missing_features(tmp_path):
    line = {"video_id": "v", "frame_index": 0, "width": 10, "height": 10,
            "detections": [{"instance_id": 0, "category_id": 0, "box": [0, 0, 1, 1], "confidence": 0.5},
                           {"instance_id": 1, "category_id": 1, "box": [2, 2, 3, 3], "confidence": 1.0, "feature": [1, 2]}],
            "union_features": [{"subject": 0, "object": 1, "feature": [0.5, 0.5]}]}
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps(line) + "\n")
    (v,) = io.read_detections(path)
    f = v.frames[0]
    assert f.detections[0].visual_feature is None
    np.testing.assert_array_equal(f.union_features[(0, 1)], [0.5, 0.5])
    assert io.frame_record("v", f)["union_features"][0]["feature"] == [0.5, 0.5]


@pytest.mark.parametrize(
    "mutate,needle",
    [
        (lambda r: r.pop("width"), "missing field 'width'"),
        (lambda r: r.update(colour="red"), "unknown frame field"),
        (lambda r: r["detections"][0].update(box=[0, 0, 1]), "box"),
        (lambda r: r["detections"][0].update(box=[2, 0, 1, 1]), "bad box"),
        (lambda r: r["detections"][0].update(instance_id="a"), "wrong type"),
        (lambda r: r["detections"].append(dict(r["detections"][0])), "repeated"),
        (lambda r: r["detections"][0].update(confidence=2.0), "confidence"),
    ],
)
def test_detection_schema_errors_name_the_line(tmp_path, mutate, needle):
    good = {"video_id": "v", "frame_index": 0, "width": 10, "height": 10,
            "detections": [{"instance_id": 0, "category_id": 0, "box": [0, 0, 1, 1], "confidence": 1.0}]}
    bad = json.loads(json.dumps(good))
    bad["frame_index"] = 1
    mutate(bad)
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps(good) + "\n\n" + json.dumps(bad) + "\n")
    with pytest.raises(io.SchemaError) as err:
        io.read_detections(path)
    assert err.value.line == 3
    assert f"{path}:3:" in str(err.value) and needle in str(err.value)


def test_invalid_json_and_duplicates(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"video_id": "v"\n')
    with pytest.raises(io.SchemaError, match=":1: invalid JSON"):
        io.read_detections(path)
    rec = json.dumps({"video_id": "v", "frame_index": 0, "width": 1, "height": 1, "detections": []})
    path.write_text(rec + "\n" + rec + "\n")
    with pytest.raises(io.SchemaError, match=":2: duplicate frame"):
        io.read_detections(path)


class TestEmbeddings:
    def test_round_trip_and_layout(self, tmp_path):
        z = np.arange(6, dtype=float).reshape(2, 3) / 4
        path = tmp_path / "z.bin"
        io.write_embeddings(path, EmbeddingMatrix(z))
        data = path.read_bytes()
        assert data[:16] == io.EMBEDDING_MAGIC
        assert struct.unpack_from("<Iqq", data, 16) == (1, 2, 3)
        np.testing.assert_array_equal(np.frombuffer(data[36:], "<f4").reshape(2, 3), z)
        np.testing.assert_array_equal(io.read_embeddings(path).Z, z)

    def test_corruption(self, tmp_path):
        path = tmp_path / "z.bin"
        io.write_embeddings(path, EmbeddingMatrix(np.ones((2, 2))))
        data = path.read_bytes()
        for name, blob, needle in [
            ("short", data[:10], "shorter"),
            ("magic", b"X" + data[1:], "magic"),
            ("version", data[:16] + struct.pack("<I", 9) + data[20:], "version"),
            ("size", data[:-1], "bytes"),
        ]:
            p = tmp_path / name
            p.write_bytes(blob)
            with pytest.raises(io.SchemaError, match=needle):
                io.read_embeddings(p)


def test_vocabulary_round_trip(tmp_path, sample):
    path = tmp_path / "v.json"
    io.write_vocabulary(path, sample.vocab)
    assert io.read_vocabulary(path) == sample.vocab
    path.write_text('{"predicate_names": ["a"]}')
    with pytest.raises(io.SchemaError):
        io.read_vocabulary(path)


def test_ground_truth_round_trip(tmp_path, sample):
    path = tmp_path / "g.jsonl"
    io.write_ground_truth(path, sample.gt)
    gt = io.read_ground_truth(path)
    assert gt == sample.gt
    path.write_text('{"video_id": "v", "frame_index": 0, "triples": [{"predicate": 0}]}\n')
    with pytest.raises(io.SchemaError, match=":1: missing field 'subject_category'"):
        io.read_ground_truth(path)


def test_predictions_round_trip(tmp_path):
    a, b = BoundingBox(0, 0, 1, 1), BoundingBox(2, 2, 4, 4)
    preds = {("v", 0): [PairPrediction(0, 0, a, 1, b, np.array([0.2, 0.7, 0.1]), 1.0, 0.5)], ("v", 1): []}
    path = tmp_path / "p.jsonl"
    io.write_predictions(path, preds, "predcls", "no")
    back = io.read_predictions(path)
    assert set(back) == set(preds)
    (p,) = back[("v", 0)]
    np.testing.assert_array_equal(p.predicate_scores, [0.2, 0.7, 0.1])
    assert (p.subject_box, p.object_box, p.object_score) == (a, b, 0.5)
    line = json.loads(path.read_text().splitlines()[0])
    assert len(line["triples"]) == 3
    assert [t["predicate"] for t in line["triples"]] == [t.predicate for t in rank_triples(preds[("v", 0)], "no")]
    path.write_text('{"video_id": "v", "frame_index": 0, "pairs": [{"pair_id": 0}]}\n')
    with pytest.raises(io.SchemaError, match=":1:"):
        io.read_predictions(path)
