from dataclasses import replace

import numpy as np
import pytest

from mosa.datagen import SynthConfig, synth_video
from mosa.losses import LossConfig
from mosa.relation_net import NetConfig, RelationNet, collate, prepare_video
from mosa.training import TrainConfig, assign_targets, predict, train

SYNTH = SynthConfig(seed=2, num_videos=4, frames=4, objects_per_video=2, track_counts=(2, 2, 2, 2), visual_dim=6,
                    embedding_dim=8, num_object_categories=3)
NET = NetConfig(dim=8, heads=2, encoder_layers=1, decoder_layers=1, ffn_hidden=12, rel_hidden=12, category_dim=3,
                visual_dim=6, num_object_categories=4, num_predicates=4)


@pytest.fixture(scope="module")
def sample():
    return synth_video(SYNTH)


def test_targets_follow_ground_truth(sample):
    batch = collate([prepare_video(v, NET) for v in sample.videos])
    y = assign_targets(batch, sample.gt, 4)
    assert np.all(y.sum(axis=1) == 1)
    for i, item in enumerate(batch.items):
        lab = sample.track_labels[(item.video_id, item.object.category_id)]
        assert y[i, lab] == 1


def test_training_is_deterministic_and_reduces_loss(sample):
    runs = []
    for _ in range(2):
        net = RelationNet(NET, seed=0)
        runs.append(train(net, sample.videos, sample.gt, sample.vocab, sample.embeddings, TrainConfig(epochs=6)))
    assert runs[0].epoch_loss == runs[1].epoch_loss
    assert runs[0].epoch_loss[-1] < runs[0].epoch_loss[0]


def test_object_loss_only_outside_predcls(sample):
    net = RelationNet(NET, seed=0)
    h = train(net, sample.videos, sample.gt, sample.vocab, sample.embeddings, TrainConfig(epochs=1))
    assert h.epoch_obj_loss == [0.0]
    h = train(net, sample.videos, sample.gt, sample.vocab, sample.embeddings, TrainConfig(epochs=1), task="sgcls")
    assert h.epoch_obj_loss[0] > 0


def test_adam_and_time_limit(sample):
    net = RelationNet(NET, seed=0)
    h = train(net, sample.videos, sample.gt, sample.vocab, sample.embeddings,
              TrainConfig(epochs=50, optimizer="adam", lr=1e-3, time_limit=0.0))
    assert len(h.epoch_loss) == 1


def test_predict_covers_every_frame_and_labels_sgcls(sample):
    net = RelationNet(NET, seed=0)
    preds = predict(net, sample.videos, sample.embeddings)
    assert set(preds) == {(v.video_id, f.frame_index) for v in sample.videos for f in v.frames}
    assert all(len(p) == 2 for p in preds.values())
    cls = predict(net, sample.videos, sample.embeddings, task="sgcls")
    for key, pairs in cls.items():
        for a, b in zip(pairs, preds[key]):
            np.testing.assert_array_equal(a.predicate_scores, b.predicate_scores)
            assert 0 < a.subject_score <= 1 and 0 < a.object_score <= 1


def test_unweighted_loss_runs(sample):
    net = RelationNet(replace(NET, use_mim=False), seed=0)
    h = train(net, sample.videos, sample.gt, sample.vocab, sample.embeddings, TrainConfig(epochs=1),
              LossConfig(weighting=False, gamma=0.0))
    assert np.isfinite(h.epoch_loss[0])
