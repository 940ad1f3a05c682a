import json
import math

import numpy as np
import pytest

from encoding import FEATURE_DIM, FeatureConfig, build_graph
from errors import CheckpointError, ShapeMismatchError
from helpers import make_panel
from model import ModelConfig, ModelParams, backward, forward, init_params, load_checkpoint, save_checkpoint
from pattern_io import Pattern


def _ring_graph(n):
    pts = [(math.cos(2 * math.pi * k / n), math.sin(2 * math.pi * k / n)) for k in range(n)]
    return build_graph(Pattern(name="ring", panels=[make_panel("ring", pts)]))


def _random_params(cfg, seed):
    params = init_params(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    params.biases = [rng.normal(0, 0.3, b.shape) for b in params.biases]
    return params


def _fd(fun, arr, step=1e-5):
    grad = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + step
        hi = fun()
        arr[idx] = old - step
        lo = fun()
        arr[idx] = old
        grad[idx] = (hi - lo) / (2 * step)
    return grad


def test_init_is_deterministic_with_expected_shapes():
    cfg = ModelConfig(layers=1, hidden=8, embed_dim=8)
    a, b = init_params(cfg, 7), init_params(cfg, 7)
    assert a.weights[0].shape == (8, 48)
    assert a.biases[0].shape == (8,)
    assert a.z == 1.0
    np.testing.assert_array_equal(a.weights[0], b.weights[0])
    assert not np.array_equal(a.weights[0], init_params(cfg, 8).weights[0])


def test_layer_dims_chain():
    cfg = ModelConfig(layers=3, hidden=16, embed_dim=4)
    assert cfg.layer_dims() == [(FEATURE_DIM, 16), (16, 16), (16, 4)]


def test_zero_features_give_zero_embeddings():
    g = _ring_graph(4)
    f, _ = forward(g, np.zeros((4, FEATURE_DIM)), init_params(ModelConfig(layers=2, hidden=8, embed_dim=4), 0))
    assert np.all(f == 0.0)


def test_single_layer_matches_hand_evaluation():
    g = _ring_graph(4)
    cfg = ModelConfig(layers=1, hidden=3, embed_dim=3)
    params = _random_params(cfg, 1)
    x = np.random.default_rng(2).normal(size=(4, FEATURE_DIM))
    f, _ = forward(g, x, params)
    w, b = params.weights[0], params.biases[0]
    for i in range(4):
        agg = (x[(i - 1) % 4] + x[(i + 1) % 4]) / 2
        expected = np.maximum(w @ np.concatenate([x[i], agg]) + b, 0.0)
        np.testing.assert_allclose(f[i], expected, atol=1e-12)


def test_shape_mismatch_raises():
    g = _ring_graph(4)
    with pytest.raises(ShapeMismatchError):
        forward(g, np.zeros((5, FEATURE_DIM)), init_params(ModelConfig(layers=1, hidden=4, embed_dim=4), 0))


@pytest.mark.parametrize("aggregator", ["mean", "max", "none"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_parameter_gradients_match_finite_differences(aggregator, seed):
    g = _ring_graph(6)
    cfg = ModelConfig(layers=2, hidden=8, embed_dim=4, aggregator=aggregator)
    params = _random_params(cfg, seed)
    rng = np.random.default_rng(100 + seed)
    x = rng.normal(size=(6, FEATURE_DIM))
    weight_out = rng.normal(size=(6, 4))

    def scalar():
        return float(np.sum(weight_out * forward(g, x, params, aggregator)[0]))

    _, cache = forward(g, x, params, aggregator)
    grads, _ = backward(cache, weight_out, params)
    for mine, arr in zip(grads.weights + grads.biases, params.weights + params.biases):
        np.testing.assert_allclose(mine, _fd(scalar, arr), rtol=1e-4, atol=1e-8)


def test_input_gradient_matches_finite_differences():
    g = _ring_graph(5)
    cfg = ModelConfig(layers=2, hidden=8, embed_dim=4)
    params = _random_params(cfg, 3)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, FEATURE_DIM))
    weight_out = rng.normal(size=(5, 4))
    _, cache = forward(g, x, params)
    _, gx = backward(cache, weight_out, params)
    numeric = _fd(lambda: float(np.sum(weight_out * forward(g, x, params)[0])), x)
    np.testing.assert_allclose(gx, numeric, rtol=1e-4, atol=1e-8)


def test_zero_upstream_gradient_gives_zero_grads():
    g = _ring_graph(4)
    cfg = ModelConfig(layers=2, hidden=4, embed_dim=4)
    params = _random_params(cfg, 0)
    _, cache = forward(g, np.ones((4, FEATURE_DIM)), params)
    grads, gx = backward(cache, np.zeros((4, 4)), params)
    assert all(np.all(w == 0) for w in grads.weights + grads.biases)
    assert np.all(gx == 0)


def test_max_aggregator_routes_nothing_to_losing_neighbour():
    g = _ring_graph(4)  # node 0 has neighbours 3 and 1
    cfg = ModelConfig(layers=1, hidden=4, embed_dim=4, aggregator="max")
    params = _random_params(cfg, 5)
    x = np.random.default_rng(6).normal(size=(4, FEATURE_DIM))
    upstream = np.zeros((4, 4))
    upstream[0] = 1.0
    _, cache = forward(g, x, params, "max")
    _, gx = backward(cache, upstream, params)
    losing = x[3] < x[1]
    assert np.all(gx[3, losing] == 0.0)


def test_permutation_equivariance():
    g = _ring_graph(6)
    cfg = ModelConfig(layers=3, hidden=8, embed_dim=4)
    params = _random_params(cfg, 9)
    x = np.random.default_rng(10).normal(size=(6, FEATURE_DIM))
    perm = np.array([3, 5, 0, 1, 4, 2])  # old node i becomes perm[i]
    g2 = build_graph(Pattern(name="ring", panels=[make_panel("ring", [(0, 0), (1, 0), (2, 0), (2, 1), (1, 1), (0, 1)])]))
    nb = np.zeros_like(g.neighbors)
    nb[perm] = perm[g.neighbors]
    g2.neighbors = nb
    x2 = np.zeros_like(x)
    x2[perm] = x
    f, _ = forward(g, x, params)
    f2, _ = forward(g2, x2, params)
    np.testing.assert_allclose(f2[perm], f, atol=1e-12)


def test_receptive_field_is_l_hops():
    g = _ring_graph(12)
    cfg = ModelConfig(layers=2, hidden=8, embed_dim=4)
    params = _random_params(cfg, 11)
    x = np.random.default_rng(12).normal(size=(12, FEATURE_DIM))
    f, _ = forward(g, x, params)
    x[0] += 1.0
    f2, _ = forward(g, x, params)
    far = [3, 4, 5, 6, 7, 8, 9]
    np.testing.assert_array_equal(f2[far], f[far])


def test_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig(layers=2, hidden=8, embed_dim=4, aggregator="max")
    params = _random_params(cfg, 0)
    params.z = -0.25
    path = tmp_path / "model.npz"
    save_checkpoint(path, params, cfg, FeatureConfig(drop_panel_id=True), extra={"sinkhorn": {"iterations": 7}})
    loaded, cfg2, feats, meta = load_checkpoint(path)
    assert cfg2 == cfg
    assert feats.drop_panel_id
    assert meta["sinkhorn"] == {"iterations": 7}
    assert loaded.z == -0.25
    for a, b in zip(loaded.arrays(), params.arrays()):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_with_other_layout_is_rejected(tmp_path):
    cfg = ModelConfig(layers=1, hidden=4, embed_dim=4)
    params = init_params(cfg, 0)
    meta = {"version": 1, "layout": "edge30/v9", "model": cfg.model_dump(), "features": {}}
    path = tmp_path / "old.npz"
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), z=np.array(1.0), W0=params.weights[0], b0=params.biases[0])
    with pytest.raises(CheckpointError, match="layout"):
        load_checkpoint(path)


def test_unreadable_checkpoint(tmp_path):
    path = tmp_path / "junk.npz"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_params_copy_is_independent():
    params = init_params(ModelConfig(layers=1, hidden=4, embed_dim=4), 0)
    clone = params.copy()
    clone.weights[0][0, 0] += 1.0
    assert isinstance(clone, ModelParams)
    assert clone.weights[0][0, 0] != params.weights[0][0, 0]
