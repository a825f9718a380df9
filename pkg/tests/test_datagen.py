from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mosa.datagen import (
    REGIMES,
    InfeasibleConfigError,
    SynthConfig,
    long_tail_config,
    regime_rule,
    synth_embeddings,
    synth_video,
)
from mosa.mfe import MotionConfig, compute_motion_attributes
from mosa.scene_model import link_tracks

SMALL = SynthConfig(seed=1, num_videos=12, frames=6, track_counts=(9, 9, 9, 9))


def interior_attributes(sample):
    """(regime name, attributes) for every interior frame of every track."""
    out = []
    for video in sample.videos:
        frames = {f.frame_index: f for f in video.frames}
        for tr in link_tracks(video.detections_by_frame(), 0).tracks:
            lab = sample.track_labels[(video.video_id, tr.object_category)]
            for t in tr.frames[1:-1]:
                out.append((sample.vocab.predicate_names[lab], compute_motion_attributes(tr, t, MotionConfig(), frames[t].size)))
    return out


def test_regimes_by_construction():
    for name, a in interior_attributes(synth_video(SMALL)):
        if name == "approaching":
            assert a.velocity < 0
        elif name == "receding":
            assert a.velocity > 0
        elif name == "carried":
            assert a.cosine_valid and a.direction_cosine == pytest.approx(1.0, abs=1e-9)
        else:
            assert a.velocity == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000))
def test_rule_separates_regimes_without_noise(seed):
    attrs = interior_attributes(synth_video(replace(SMALL, seed=seed)))
    assert attrs
    assert all(regime_rule(a.velocity, a.velocity_valid, a.cosine_valid) == name for name, a in attrs)


def test_label_frequencies_realized():
    cfg = long_tail_config(seed=2, num_videos=40)
    s = synth_video(cfg)
    assert all(abs(a - b) <= 1 for a, b in zip(s.track_counts, cfg.track_counts))
    # vocabulary frequencies count triples, one per track frame
    counts = s.gt.predicate_counts(len(cfg.regimes))
    assert list(s.vocab.frequencies) == [max(2, c) for c in counts]
    assert counts == [n * cfg.frames for n in s.track_counts]


def test_long_tail_preset():
    cfg = long_tail_config(seed=0)
    assert cfg.regimes[-1] == "receding"
    total = sum(cfg.track_counts)
    assert cfg.track_counts[-1] == round(0.05 * total)
    assert max(cfg.track_counts[:-1]) - min(cfg.track_counts[:-1]) <= 1


def test_every_triple_pair_exists_in_detections():
    s = synth_video(SMALL)
    for video in s.videos:
        for frame in video.frames:
            boxes = {(d.category_id, tuple(d.box.to_list())) for d in frame.detections}
            for g in s.gt.frames[(video.video_id, frame.frame_index)]:
                assert (g.subject_category, tuple(g.subject_box.to_list())) in boxes
                assert (g.object_category, tuple(g.object_box.to_list())) in boxes


def test_deterministic():
    a, b = synth_video(SMALL), synth_video(SMALL)
    for va, vb in zip(a.videos, b.videos):
        for fa, fb in zip(va.frames, vb.frames):
            for da, db in zip(fa.detections, fb.detections):
                assert da.box == db.box and da.category_id == db.category_id
                np.testing.assert_array_equal(da.visual_feature, db.visual_feature)
    np.testing.assert_array_equal(a.embeddings.Z, b.embeddings.Z)
    assert a.gt == b.gt


def test_appearance_does_not_reveal_regime():
    s = synth_video(SMALL)
    by_cat = {}
    for video in s.videos:
        for d in video.frames[0].detections:
            by_cat.setdefault(d.category_id, set()).add(tuple(d.visual_feature))
    assert all(len(v) == 1 for v in by_cat.values())


def test_noise_perturbs_boxes_and_features():
    clean, noisy = synth_video(SMALL), synth_video(replace(SMALL, box_jitter=2.0, feature_noise=0.1))
    d0, d1 = clean.videos[0].frames[0].detections[1], noisy.videos[0].frames[0].detections[1]
    assert d0.box != d1.box
    assert not np.allclose(d0.visual_feature, d1.visual_feature)


class TestEmbeddings:
    def test_orthogonal_unit_rows(self):
        vocab = synth_video(SMALL).vocab
        z = synth_embeddings(vocab, 16, seed=3).Z
        np.testing.assert_allclose(z @ z.T, np.eye(4), atol=1e-5)
        np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-6)
        np.testing.assert_array_equal(z, synth_embeddings(vocab, 16, seed=3).Z)

    def test_too_many_rows(self):
        with pytest.raises(ValueError):
            synth_embeddings(synth_video(SMALL).vocab, 3)

    def test_gaussian_mode(self):
        z = synth_embeddings(synth_video(SMALL).vocab, 3, mode="gaussian").Z
        assert z.shape == (4, 3)


class TestInfeasible:
    def test_budget_exceeded(self):
        with pytest.raises(InfeasibleConfigError):
            synth_video(SynthConfig(num_videos=2, objects_per_video=2, track_counts=(2, 1, 1, 1)))
        with pytest.raises(InfeasibleConfigError, match="slots"):
            synth_video(SynthConfig(num_videos=2, objects_per_video=2, track_counts=(2, 1, 1, 1)))

    def test_moving_and_resting_conflict(self):
        # 12 tracks fit 12 slots, but carried needs 2 walking-person videos and static_near 2 resting ones
        with pytest.raises(InfeasibleConfigError, match="videos"):
            synth_video(SynthConfig(num_videos=3, objects_per_video=4, num_object_categories=5, track_counts=(1, 1, 5, 5)))

    def test_invalid_configs(self):
        for bad in (dict(frames=1), dict(track_counts=(1, 1, 1)), dict(regimes=("flying",), track_counts=(1,)),
                    dict(box_jitter=-1.0), dict(objects_per_video=9)):
            with pytest.raises(ValueError):
                SynthConfig(**bad)


def test_regime_names():
    assert set(REGIMES) == {"approaching", "receding", "carried", "static_near"}
