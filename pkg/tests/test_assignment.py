import math

import numpy as np
import pytest

from assignment import (
    SELF_MATCH_SENTINEL,
    SinkhornConfig,
    augment_dustbin,
    cost_backward,
    hard_assign,
    marginals,
    score_matrix,
    sinkhorn_backward,
    sinkhorn_log,
    symmetrize,
)
from errors import NumericalError, ShapeMismatchError


def _with_dustbin(entries, m, dustbin=0.0):
    p = np.zeros((m + 1, m + 1))
    for (i, j), value in entries.items():
        p[i, j] = p[j, i] = value
    p[:m, m] = p[m, :m] = dustbin
    return p


def test_score_matrix_and_dustbin():
    f = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    c = score_matrix(f)
    assert c[0, 2] == 1.0 and c[1, 2] == 2.0 and c[0, 1] == 0.0
    assert np.all(np.diag(c) == SELF_MATCH_SENTINEL)
    c_bar = augment_dustbin(c, -0.5)
    assert c_bar.shape == (4, 4)
    assert np.all(c_bar[3] == -0.5) and np.all(c_bar[:, 3] == -0.5)
    np.testing.assert_array_equal(c_bar[:3, :3], c)


def test_score_matrix_needs_two_nodes():
    with pytest.raises(ShapeMismatchError):
        score_matrix(np.ones((1, 4)))


def test_marginals_put_mass_m_on_dustbin():
    log_a, log_b = marginals(5)
    np.testing.assert_allclose(np.exp(log_a), [1, 1, 1, 1, 1, 5])
    np.testing.assert_array_equal(log_a, log_b)


@pytest.mark.parametrize("z", [0.0, -5.0])
def test_two_node_planted_pair_closed_form(z):
    c_bar = augment_dustbin(score_matrix(np.array([[math.sqrt(5.0)], [math.sqrt(5.0)]])), z)
    p = sinkhorn_log(c_bar, SinkhornConfig(iterations=500)).prob
    half = math.exp((5.0 - z) / 2)
    expected = half / (math.sqrt(2.0) + half)
    assert p[0, 1] == pytest.approx(expected, abs=1e-6)
    assert p[1, 0] == pytest.approx(p[0, 1], abs=1e-9)
    assert p[0, 2] == pytest.approx(1.0 - expected, abs=1e-6)


@pytest.mark.parametrize("m", [4, 16, 64])
def test_marginals_are_met(m):
    rng = np.random.default_rng(m)
    f = 0.5 * rng.normal(size=(m, 3))
    res = sinkhorn_log(augment_dustbin(score_matrix(f), 0.5), SinkhornConfig(iterations=100))
    p = res.prob
    target = np.exp(res.log_a)
    np.testing.assert_allclose(p.sum(axis=1), target, atol=1e-5)
    np.testing.assert_allclose(p.sum(axis=0), target, atol=1e-5)
    assert np.all(p >= 0.0)


def _matchings(nodes):
    if not nodes:
        yield []
        return
    first, rest = nodes[0], nodes[1:]
    for k, partner in enumerate(rest):
        for tail in _matchings(rest[:k] + rest[k + 1:]):
            yield [(first, partner)] + tail


def _best_matching(c):
    best = max(_matchings(list(range(c.shape[0]))), key=lambda ms: sum(c[i, j] for i, j in ms))
    return set(best)


def _oracle_trial(seed, margin):
    rng = np.random.default_rng(seed)
    m = int(rng.choice([4, 6, 8]))
    c = rng.uniform(-1.0, 1.0, size=(m, m))
    c = 0.5 * (c + c.T)
    order = rng.permutation(m).tolist()
    for k in range(0, m, 2):
        i, j = sorted(order[k:k + 2])
        c[i, j] = c[j, i] = 1.0 + margin
    np.fill_diagonal(c, SELF_MATCH_SENTINEL)
    cfg = SinkhornConfig(iterations=100, tau_multi=1.0)
    out = hard_assign(symmetrize(sinkhorn_log(augment_dustbin(c, -10.0), cfg).prob), cfg)
    return out.pairs == _best_matching(c)


@pytest.mark.parametrize("margin,required", [(3.0, 190), (6.0, 200)])
def test_hard_assignment_agrees_with_brute_force_matching(margin, required):
    agree = sum(_oracle_trial(seed, margin) for seed in range(200))
    assert agree >= required


def test_nonfinite_scores_raise():
    c_bar = augment_dustbin(np.full((3, 3), -np.inf), -np.inf)
    with pytest.raises(NumericalError):
        sinkhorn_log(c_bar, SinkhornConfig(iterations=3))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sinkhorn_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    c_bar = rng.normal(size=(4, 4))
    weight = rng.normal(size=(4, 4))
    cfg = SinkhornConfig(iterations=20)

    def scalar(c):
        return float(np.sum(weight * sinkhorn_log(c, cfg).log_p))

    res = sinkhorn_log(c_bar, cfg)
    analytic = sinkhorn_backward(c_bar, res, weight)
    numeric = np.zeros_like(c_bar)
    step = 1e-5
    for idx in np.ndindex(c_bar.shape):
        hi, lo = c_bar.copy(), c_bar.copy()
        hi[idx] += step
        lo[idx] -= step
        numeric[idx] = (scalar(hi) - scalar(lo)) / (2 * step)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)


def test_cost_backward_matches_finite_differences():
    rng = np.random.default_rng(7)
    f = rng.normal(size=(4, 3))
    z = 0.3
    weight = rng.normal(size=(5, 5))

    def scalar(f_, z_):
        c_bar = augment_dustbin(score_matrix(f_), z_)
        off = np.ones_like(c_bar)
        np.fill_diagonal(off[:4, :4], 0.0)
        return float(np.sum(weight * c_bar * off))

    g_f, g_z = cost_backward(f, weight)
    step = 1e-6
    numeric = np.zeros_like(f)
    for idx in np.ndindex(f.shape):
        hi, lo = f.copy(), f.copy()
        hi[idx] += step
        lo[idx] -= step
        numeric[idx] = (scalar(hi, z) - scalar(lo, z)) / (2 * step)
    np.testing.assert_allclose(g_f, numeric, rtol=1e-6, atol=1e-8)
    assert g_z == pytest.approx((scalar(f, z + step) - scalar(f, z - step)) / (2 * step), rel=1e-6)


def test_symmetrize():
    p = np.array([[0.0, 0.8], [0.6, 0.0]])
    once = symmetrize(p)
    np.testing.assert_allclose(once, [[0.0, 0.7], [0.7, 0.0]])
    np.testing.assert_array_equal(symmetrize(once), once)


def test_hard_assign_one_to_one():
    p = _with_dustbin({(0, 1): 0.7, (0, 2): 0.2, (0, 3): 0.1, (1, 2): 0.0, (1, 3): 0.3, (2, 3): 0.8}, 4)
    out = hard_assign(p, SinkhornConfig())
    assert out.pairs == {(0, 1), (2, 3)}
    assert out.unstitched == set()


def test_hard_assign_adds_extra_matches_above_threshold():
    p = _with_dustbin({(0, 1): 0.45, (0, 2): 0.44, (0, 3): 0.01, (1, 3): 0.55, (2, 3): 0.56}, 4)
    out = hard_assign(p, SinkhornConfig(tau_multi=0.4))
    assert out.pairs == {(0, 1), (0, 2), (1, 3), (2, 3)}
    # a stricter threshold keeps only the row winners
    assert hard_assign(p, SinkhornConfig(tau_multi=0.5)).pairs == {(0, 1), (1, 3), (2, 3)}


def test_hard_assign_dustbin_winner_leaves_node_unstitched():
    p = _with_dustbin({(0, 1): 0.1}, 2, dustbin=0.8)
    out = hard_assign(p, SinkhornConfig())
    assert out.pairs == set()
    assert out.unstitched == {0, 1}
