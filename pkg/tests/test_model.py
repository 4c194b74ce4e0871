import numpy as np
import pytest

from _support import gradient_check
from poco import AnalyticField, KdTree, PocoConfig, PocoModel, encode
from poco.geometry import PointCloud
from poco.model import (
    FULL,
    ModelField,
    attention_weights,
    decode,
    encoder_neighbors,
    interpolate,
    loss_and_grads,
    occupancy,
    occupancy_batch,
    parameter_layout,
    relative_encode,
)
from poco.training import make_training_batch, train


def test_default_config():
    cfg = PocoConfig()
    assert (cfg.n, cfg.k, cfg.h) == (32, 64, 64)
    assert cfg.in_features == 3
    assert PocoConfig(use_normals=True).in_features == 6
    with pytest.raises(ValueError):
        PocoConfig(n=0)


def test_parameter_layout_order():
    names = [name for name, _ in parameter_layout(PocoConfig(L=2))]
    assert names[0] == "enc.0.msg1.W"
    assert names.index("enc.1.msg1.W") > names.index("enc.0.res.W")
    assert names[-5:] == ["rel.3.W", "rel.3.b", "att.W", "dec.W", "dec.b"]


def test_model_rejects_mismatched_params(tiny_model):
    with pytest.raises(ValueError):
        PocoModel(PocoConfig(n=5, k=4, h=2, L=1, k_enc=4, hidden=8), params=tiny_model.params)


def test_attention_weights_sum_to_one(rng, small_model):
    zr = rng.normal(size=(10, 8, 8)) * 5
    s = attention_weights(small_model, zr)
    assert s.shape == (10, 8)
    assert np.all(s > 0)
    assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-12)


def test_single_neighbour_weight_is_exactly_one(rng, small_model):
    s = attention_weights(small_model, rng.normal(size=(6, 1, 8)))
    assert np.all(s == 1.0)


def test_interpolate_rejects_bad_weights():
    with pytest.raises(ValueError):
        interpolate(np.ones((2, 3)), np.array([0.5, 0.6, 0.1]))
    assert np.allclose(interpolate(np.eye(2), np.array([0.25, 0.75])), [0.25, 0.75])


def test_decode_probability_matches_logits(tiny_model):
    logits, p = decode(tiny_model, np.ones((3, 4)))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    assert np.allclose(p, e[:, FULL] / e.sum(axis=1))


def test_relative_encode_shapes(tiny_model):
    assert relative_encode(tiny_model, np.zeros(4), np.ones(3)).shape == (4,)
    assert relative_encode(tiny_model, np.zeros((5, 2, 4)), np.ones((5, 2, 3))).shape == (5, 2, 4)


def test_encoder_needs_k_enc_points(tiny_model):
    cloud = PointCloud(np.random.default_rng(0).random((3, 3)))
    with pytest.raises(ValueError, match="k_enc"):
        encode(tiny_model, cloud)


def test_encoder_neighbours_include_self(rng):
    cloud = PointCloud(rng.random((50, 3)))
    nbr = encoder_neighbors(cloud, 5)
    assert np.array_equal(nbr[:, 0], np.arange(50))


def test_encoding_is_permutation_equivariant(rng, small_model):
    cloud = PointCloud(rng.random((60, 3)))
    perm = rng.permutation(60)
    a = encode(small_model, cloud).latents
    b = encode(small_model, cloud.subset(perm)).latents
    assert np.allclose(a[perm], b, atol=1e-12)


def test_occupancy_is_translation_invariant(rng, small_model):
    cloud = PointCloud(rng.random((60, 3)))
    q = rng.random((30, 3))
    shift = np.array([3.0, -1.0, 0.5])
    p1 = occupancy_batch(small_model, encode(small_model, cloud), q)
    moved = PointCloud(cloud.points + shift)
    p2 = occupancy_batch(small_model, encode(small_model, moved), q + shift)
    assert np.allclose(p1, p2, atol=1e-10)


def test_occupancy_chunking_and_single_query(rng, small_model):
    field = encode(small_model, PointCloud(rng.random((40, 3))))
    q = rng.random((25, 3))
    full = occupancy_batch(small_model, field, q)
    assert np.array_equal(full, occupancy_batch(small_model, field, q, chunk=7))
    assert occupancy(small_model, field, q[3]) == full[3]
    assert np.array_equal(ModelField(small_model, field)(q), full)
    assert np.all((full > 0) & (full < 1))


def test_loss_without_accumulate_leaves_grads(rng, tiny_model):
    cloud, q, labels = make_training_batch(AnalyticField.sphere(), 16, 10, 0.0, seed=2)
    tiny_model.params.zero_grad()
    loss_and_grads(tiny_model, cloud, q, labels, accumulate=False)
    assert all(np.all(g == 0) for g in tiny_model.params.grads.values())


def test_gradient_matches_finite_differences():
    assert gradient_check(seed=1) < 1e-4


def test_gradient_check_deeper_model():
    cfg = PocoConfig(n=5, k=6, h=3, L=2, k_enc=4, hidden=6)
    assert gradient_check(seed=3, cfg=cfg, n_points=20, n_queries=12, max_entries=8) < 1e-4


def test_training_batch_labels(sphere):
    cloud, q, labels = make_training_batch(sphere, 100, 400, 0.0, seed=0)
    assert np.allclose(np.linalg.norm(cloud.points, axis=1), 0.5)
    assert np.array_equal(labels, (np.linalg.norm(q, axis=1) <= 0.5).astype(int))


def test_short_training_reduces_loss(sphere, small_model):
    losses = train(small_model, sphere, 150, batch_points=128, batch_queries=100, lr=3e-3, seed=0)
    assert losses[-30:].mean() < losses[:30].mean()


def test_training_is_reproducible(sphere):
    cfg = PocoConfig(n=4, k=4, h=2, L=1, k_enc=4, hidden=8)
    a, b = PocoModel(cfg, seed=0), PocoModel(cfg, seed=0)
    la = train(a, sphere, 5, batch_points=32, batch_queries=16, seed=4)
    lb = train(b, sphere, 5, batch_points=32, batch_queries=16, seed=4)
    assert np.array_equal(la, lb)
    assert all(np.array_equal(a[k], b[k]) for k in a.params)


def test_zero_learning_rate_keeps_parameters(sphere, tiny_model):
    before = {k: v.copy() for k, v in tiny_model.params.items()}
    train(tiny_model, sphere, 1, batch_points=32, batch_queries=16, lr=0.0)
    assert all(np.array_equal(before[k], tiny_model[k]) for k in before)


def test_decode_probabilities_sum_to_one(rng, small_model):
    logits, _ = decode(small_model, rng.normal(size=(100, 8)) * 50)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    assert np.abs(p.sum(axis=1) - 1).max() < 1e-12


def test_noise_free_batch_on_surface(sphere):
    cloud, _, _ = make_training_batch(sphere, 300, 10, 0.0, seed=9)
    assert np.abs(np.linalg.norm(cloud.points, axis=1) - 0.5).max() < 1e-9
