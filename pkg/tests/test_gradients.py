import numpy as np
import pytest

from gradcases import CASES_PER_OP, OPS, STEP, TOLERANCE
from mosa.datagen import SynthConfig, synth_video
from mosa.losses import category_weights, object_loss, relation_loss
from mosa.mfe import MotionConfig, MotionEmbedder
from mosa.nn.gradcheck import numerical_gradient, relative_error
from mosa.relation_net import NetConfig, RelationNet, collate, prepare_video
from mosa.training import assign_targets


# seeds disjoint from the acceptance run so the two suites cover different shapes
@pytest.mark.parametrize("op", sorted(OPS))
def test_op_gradients(op):
    for seed in range(100, 100 + CASES_PER_OP):
        errors = OPS[op](seed)
        worst = max(errors, key=errors.get)
        assert errors[worst] < TOLERANCE, (op, seed, worst, errors[worst])


def test_motion_embedder_gradient_wrt_values():
    rng = np.random.default_rng(3)
    emb = MotionEmbedder(MotionConfig(hidden=5), 4, rng)
    x = np.concatenate([rng.normal(size=(6, 4)), (rng.random((6, 4)) < 0.7).astype(float)], axis=1)
    emb.fit_standardization(x)
    r = rng.normal(size=(6, 4))

    _, c = emb.forward(x)
    g = emb.backward(r, c)
    vals = x[:, :4].copy()

    def loss_vals():
        return float(np.sum(r * emb.forward(np.concatenate([vals, x[:, 4:]], axis=1))[0]))

    num = numerical_gradient(loss_vals, vals, STEP)
    assert relative_error(g[:, :4], num) < TOLERANCE
    np.testing.assert_array_equal(g[:, 4:], 0.0)


def test_object_loss_gradient():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, c = rng.integers(1, 5), rng.integers(2, 6)
        logits = rng.normal(size=(n, c))
        labels = rng.integers(0, c, size=n)
        g = object_loss(logits, labels)[1]
        num = numerical_gradient(lambda: object_loss(logits, labels)[0], logits, STEP)
        assert relative_error(g, num) < TOLERANCE


@pytest.mark.parametrize(
    "ablate,scope,cosine",
    [((), "pair", False), ((), "frame", True), (("mim",), "pair", False), (("mfe",), "pair", False), (("asm",), "pair", False)],
)
def test_full_network_gradient(ablate, scope, cosine):
    """End-to-end check of every trainable parameter of a tiny network."""
    sample = synth_video(SynthConfig(seed=5, num_videos=2, frames=3, objects_per_video=2, track_counts=(1, 1, 1, 1),
                                     visual_dim=3, embedding_dim=4, num_object_categories=3))
    cfg = NetConfig(dim=4, heads=2, encoder_layers=1, decoder_layers=1, ffn_hidden=5, rel_hidden=5, category_dim=2,
                    visual_dim=3, num_object_categories=4, num_predicates=4, mim_scope=scope, asm_cosine=cosine,
                    motion=MotionConfig(hidden=5)).ablate(*ablate)
    net = RelationNet(cfg, seed=1)
    data = [prepare_video(v, cfg) for v in sample.videos]
    if cfg.use_mfe:
        net.motion_embedder.fit_standardization(np.concatenate([d.motion for d in data]))
    batch = collate(data)
    y = assign_targets(batch, sample.gt, 4)
    alpha = category_weights(sample.vocab.frequencies)
    labels = batch.det_labels

    def loss():
        out = net.forward(batch, sample.embeddings)
        net._cache = None
        return relation_loss(out.probabilities, y, alpha)[0] + object_loss(out.object_logits, labels)[0]

    out = net.forward(batch, sample.embeddings)
    net.zero_grad()
    _, g_rel = relation_loss(out.probabilities, y, alpha)
    _, g_obj = object_loss(out.object_logits, labels)
    net.backward(g_rel, g_obj)
    analytic = {n: p.grad.copy() for n, p in net.named_parameters() if p.trainable}
    for name, p in net.named_parameters():
        if not p.trainable:
            continue
        err = relative_error(analytic[name], numerical_gradient(loss, p.value, STEP))
        assert err < TOLERANCE, (name, err)
