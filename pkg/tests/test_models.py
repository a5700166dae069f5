import numpy as np
import pytest

from harfuse import autodiff as ad
from harfuse.autodiff import ParamSet, Tensor
from harfuse.data import SkeletonTopology, default_topology
from harfuse.gradcheck import grad_check
from harfuse.graph import build_adjacency
from harfuse.losses import LossConfig, total_loss
from harfuse.models import (
    POGCN,
    AlignmentError,
    FeatureBundle,
    FusionHead,
    Initializer,
    ModelConfig,
    SequenceTooLongError,
    SequenceTooShortError,
    TransformerConfig,
    TransformerSegmentationModel,
    attention,
    build_model,
    extract_features,
    fuse,
    positional_encoding,
    stgcn_block,
    stgcn_block_params,
    transformer_block,
    transformer_block_params,
)


def frames(rng, T=12, J=8, C=3):
    return rng.normal(size=(T, J, C)).astype(np.float32)


# -- ST-GCN block ------------------------------------------------------------------


def test_block_zero_weights_zero_output(rng):
    params = ParamSet()
    stgcn_block_params(Initializer(0, 0), params, "b", 2, 4, 3)
    for t in params.values():
        t.data[...] = 0
    adj = build_adjacency(default_topology())
    out = stgcn_block(Tensor(rng.normal(size=(2, 10, 8))), adj, params, "b")
    assert out.shape == (4, 10, 8)
    assert not out.data.any()


def test_block_residual_when_widths_match(rng):
    params = ParamSet()
    stgcn_block_params(Initializer(0, 0), params, "b", 3, 3, 3)
    for t in params.values():
        t.data[...] = 0
    x = rng.normal(size=(3, 5, 8))
    out = stgcn_block(Tensor(x), build_adjacency(default_topology()), params, "b")
    np.testing.assert_allclose(out.data, np.maximum(x, 0), rtol=1e-6)


def test_block_gradient(rng):
    params = ParamSet()
    stgcn_block_params(Initializer(1, 0), params, "b", 2, 3, 3)
    adj = build_adjacency(SkeletonTopology(3, ((0, 1), (1, 2)), (0, 0, 1)))
    x = Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)
    c = rng.normal(size=(3, 4, 3))
    f = lambda: ad.sum_(ad.mul(stgcn_block(x, adj, params, "b"), Tensor(c)))
    assert grad_check(f, [x, *params.values()]) < 1e-3


# -- PO-GCN ------------------------------------------------------------------------


def test_pogcn_shapes(rng):
    model = POGCN(ModelConfig(), seed=0)
    logits, feats = model.forward(frames(rng, T=100))
    assert len(logits) == 4 and all(lg.shape == (100, 5) for lg in logits)
    assert feats.shape == (100, model.feature_dim) == (100, 32 * 4)


def test_pogcn_single_stage(rng):
    model = POGCN(ModelConfig(stages=1, gcn_channels=(16,)))
    logits, feats = model.forward(frames(rng))
    assert len(logits) == 1
    assert feats.shape == (12, 16 * 8)


def test_pogcn_refinement_inputs_are_probabilities(rng):
    probs = POGCN(ModelConfig()).stage_inputs(frames(rng, T=30))
    assert len(probs) == 3
    for p in probs:
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_pogcn_rejects_short_sequences(rng):
    with pytest.raises(SequenceTooShortError):
        POGCN(ModelConfig(temporal_kernel=5)).forward(frames(rng, T=4))


def test_pogcn_init_is_seeded():
    a, b, c = POGCN(ModelConfig(), seed=1), POGCN(ModelConfig(), seed=1), POGCN(ModelConfig(), seed=2)
    sa, sb, sc = a.params.state_dict(), b.params.state_dict(), c.params.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    assert not np.array_equal(sa["stage0.block.gcn.w"], sc["stage0.block.gcn.w"])


def test_single_stage_gcn_loss_gradient(rng):
    topo = SkeletonTopology(3, ((0, 1), (1, 2)), (0, 0, 1))
    model = POGCN(ModelConfig(num_classes=3, in_channels=2, stages=1, gcn_channels=(3,), temporal_kernel=3), topo, seed=4)
    x, y = rng.normal(size=(4, 3, 2)), np.array([0, 1, 1, 2])
    cfg = LossConfig(sigma=0.0)
    f = lambda: total_loss(model.forward(x)[0], y, cfg)
    assert grad_check(f, model.params) < 1e-3


# -- attention / transformer -------------------------------------------------------


def test_uniform_attention_averages_values(rng):
    q = Tensor(np.zeros((5, 4)))
    v = rng.normal(size=(5, 4))
    out = attention(q, Tensor(rng.normal(size=(5, 4))) * 0.0, Tensor(v))
    np.testing.assert_allclose(out.data, np.tile(v.mean(axis=0), (5, 1)), rtol=1e-5, atol=1e-6)


def test_single_token_attention_returns_v(rng):
    v = rng.normal(size=(1, 4))
    out = attention(Tensor(rng.normal(size=(1, 4))), Tensor(rng.normal(size=(1, 4))), Tensor(v))
    np.testing.assert_allclose(out.data, v, rtol=1e-6)


def test_attention_gradient(rng):
    q, k, v = (Tensor(rng.normal(size=(4, 4)), requires_grad=True) for _ in range(3))
    c = rng.normal(size=(4, 4))
    assert grad_check(lambda: ad.sum_(ad.mul(attention(q, k, v), Tensor(c))), [q, k, v]) < 1e-3


def test_positional_encoding_at_zero():
    pe = positional_encoding(3, 8)
    np.testing.assert_array_equal(pe[0, 0::2], 0)
    np.testing.assert_array_equal(pe[0, 1::2], 1)


def test_transformer_block_gradient(rng):
    params = ParamSet()
    transformer_block_params(Initializer(2, 0), params, "l", 8, 16)
    x = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
    c = rng.normal(size=(4, 8))
    f = lambda: ad.sum_(ad.mul(transformer_block(x, params, "l", 2), Tensor(c)))
    assert grad_check(f, [x, *params.values()]) < 1e-3


def test_transformer_shapes(rng):
    model = TransformerSegmentationModel(ModelConfig())
    (logits,), feats = model.forward(frames(rng, T=100))
    assert logits.shape == (100, 5) and feats.shape == (100, 32)


def test_transformer_not_permutation_invariant(rng):
    model = TransformerSegmentationModel(ModelConfig())
    x = frames(rng, T=6)
    y = x.copy()
    y[[1, 4]] = y[[4, 1]]
    a = model.forward(x)[0][0].data
    b = model.forward(y)[0][0].data
    assert not np.allclose(a[[1, 4]][::-1], b[[1, 4]])


def test_transformer_max_length(rng):
    model = TransformerSegmentationModel(ModelConfig(transformer=TransformerConfig(max_T=10)))
    with pytest.raises(SequenceTooLongError):
        model.forward(frames(rng, T=11))


def test_heads_must_divide_dim():
    with pytest.raises(ValueError):
        TransformerConfig(model_dim=30, heads=4)


# -- features and fusion -----------------------------------------------------------


@pytest.mark.parametrize("kind", ["pogcn", "transformer"])
def test_extract_features_deterministic(rng, kind):
    model = build_model(kind, ModelConfig())
    x = frames(rng, T=20)
    (a,), (b,) = extract_features(model, [x]), extract_features(model, [x])
    np.testing.assert_array_equal(a.features, b.features)
    assert a.T == 20


def test_fuse_contract():
    a = FeatureBundle("a", np.arange(6.0).reshape(3, 2))
    b = FeatureBundle("b", np.arange(9.0).reshape(3, 3) + 100)
    f = fuse(a, b)
    assert f.shape == (3, 5)
    np.testing.assert_array_equal(f[1], np.concatenate([a.features[1], b.features[1]]))
    assert not np.array_equal(fuse(a, FeatureBundle("b", b.features[:, :2])), fuse(FeatureBundle("b", b.features[:, :2]), a))
    with pytest.raises(AlignmentError):
        fuse(a, FeatureBundle("c", np.zeros((4, 1))))


def test_fusion_head_parameter_count():
    # 40*64 + 64 + 64*5 + 5 + 2*40
    assert FusionHead(40, 64, 5).params.count() == 3029


def test_fusion_head_zero_weights_uniform(rng):
    head = FusionHead(6, 8, 4)
    for name in ("fc1.w", "fc2.w"):
        head.params[name].data[...] = 0
    p = ad.softmax(head.forward(rng.normal(size=(5, 6)), training=True), axis=1).data
    np.testing.assert_allclose(p, 0.25)


def test_fusion_head_single_frame_training_rejected():
    with pytest.raises(ad.BatchSizeError):
        FusionHead(3, 4, 2).forward(np.zeros((1, 3)), training=True)


def test_fusion_head_eval_leaves_running_stats(rng):
    head = FusionHead(3, 4, 2)
    head.forward(rng.normal(size=(6, 3)), training=True)
    before = {k: v.copy() for k, v in head.buffers.items()}
    x = rng.normal(size=(4, 3))
    first = head.forward(x).data
    for _ in range(100):
        assert np.array_equal(head.forward(x).data, first)
    for k, v in head.buffers.items():
        np.testing.assert_array_equal(v, before[k])


def test_fusion_head_gradient(rng):
    head = FusionHead(5, 6, 3, seed=1)
    x, y = rng.normal(size=(7, 5)), rng.integers(0, 3, size=7)
    f = lambda: ad.cross_entropy(head.forward(x, training=True), y)
    assert grad_check(f, head.params) < 1e-3


def test_build_model_unknown_kind():
    with pytest.raises(ValueError, match="pogcn, transformer"):
        build_model("lstm", ModelConfig())


def test_model_config_json_strict():
    cfg = ModelConfig(stages=2, gcn_channels=(8, 16))
    assert ModelConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ValueError):
        ModelConfig.from_json({"stagez": 2})
    with pytest.raises(ValueError):
        ModelConfig(stages=2, gcn_channels=(8,))
