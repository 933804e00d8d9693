import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tngeo import mps, training
from tngeo.mps import Mps
from tngeo.training import (
    AdamWConfig,
    AdamWState,
    NllTrace,
    TrainConfig,
    TrainingDiverged,
    TrainingSet,
    adamw_step,
    bipartite_entropy,
    dmrg_fit,
    fit,
    merge_duplicates,
    nll_and_gradient,
    weighted_nll,
)

from oracles import brute_nll, central_difference, dense_state


def random_data(rng, n, s, d):
    x = rng.integers(0, d, size=(n, s))
    w = rng.random(n)
    return x, w / w.sum()


def test_uniform_model_nll():
    m = Mps([np.ones((1, 3, 1)) for _ in range(4)], bond_dim=1)
    x, w = random_data(np.random.default_rng(0), 7, 4, 3)
    assert weighted_nll(m, x, w) == pytest.approx(4 * math.log(3), rel=1e-12)


def test_uniform_model_is_critical_point():
    m = Mps([np.ones((1, 2, 1)) for _ in range(3)], bond_dim=1)
    x = np.array(list(itertools.product(range(2), repeat=3)))
    _, g = nll_and_gradient(m, x, np.full(8, 1 / 8))
    assert max(np.abs(gi).max() for gi in g) < 1e-12


def test_nll_matches_enumeration():
    rng = np.random.default_rng(1)
    m = mps.init_random(5, 4, 3, seed=1)
    x, w = random_data(rng, 30, 5, 4)
    assert weighted_nll(m, x, w) == pytest.approx(brute_nll(m.sites, x, w), rel=1e-10)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    m = mps.init_random(6, 4, 4, seed=seed)
    x, w = random_data(rng, 25, 6, 4)
    data = TrainingSet(x, w)
    _, grads = nll_and_gradient(m, data)
    fd = central_difference(lambda: weighted_nll(m, data), m.sites)
    for g, f in zip(grads, fd):
        np.testing.assert_allclose(g, f, rtol=1e-4, atol=1e-8)


def test_duplicate_merge_leaves_gradient_unchanged():
    m = mps.init_random(4, 3, 3, seed=2)
    a, b = [0, 1, 2, 0], [2, 2, 1, 0]
    v1, g1 = nll_and_gradient(m, [a, a, b], np.full(3, 1 / 3))
    v2, g2 = nll_and_gradient(m, [a, b], [2 / 3, 1 / 3])
    assert v1 == pytest.approx(v2, rel=1e-13)
    for x, y in zip(g1, g2):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-15)


def test_merge_duplicates():
    x, w = merge_duplicates([[1, 2], [0, 1], [1, 2]], [0.25, 0.5, 0.25])
    assert x.tolist() == [[0, 1], [1, 2]] and w.tolist() == [0.5, 0.5]


def test_chunked_equals_serial():
    rng = np.random.default_rng(3)
    m = mps.init_random(8, 8, 6, seed=3)
    x, w = random_data(rng, 500, 8, 8)
    v_serial, g_serial = nll_and_gradient(m, TrainingSet(x, w))
    v_chunked, g_chunked = nll_and_gradient(m, TrainingSet(x, w, chunk_rows=37))
    assert abs(v_serial - v_chunked) < 1e-9
    for a, b in zip(g_serial, g_chunked):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_training_set_validation():
    with pytest.raises(ValueError):
        TrainingSet([[0, 1]], [0.5])
    with pytest.raises(ValueError):
        TrainingSet([[0, 1], [1, 0]], [0.5])
    with pytest.raises(ValueError):
        TrainingSet([[0, 3]], [1.0], num_sites=2, physical_dim=3)


def test_adamw_hand_computed_scalar():
    cfg = TrainConfig(learning_rate=0.1, adamw=AdamWConfig(weight_decay=0.01))
    p, g = [np.array([1.0])], [np.array([2.0])]
    new, state = adamw_step(p, g, AdamWState.zeros_like(p), cfg)
    # m = 0.2, v = 0.004 -> m_hat = 2, v_hat = 4 -> step 2 / (2 + 1e-8) + 0.01
    expected = 1.0 - 0.1 * (2.0 / (2.0 + 1e-8) + 0.01)
    assert new[0][0] == pytest.approx(expected, abs=1e-15)
    assert state.step == 1
    np.testing.assert_allclose(state.m[0], [0.2])
    np.testing.assert_allclose(state.v[0], [0.004])


def test_adamw_zero_gradient_no_decay_is_identity():
    p = [np.array([[1.5, -2.0]])]
    new, _ = adamw_step(p, [np.zeros((1, 2))], AdamWState.zeros_like(p), TrainConfig())
    np.testing.assert_array_equal(new[0], p[0])


def test_adamw_second_step_bias_correction():
    cfg = TrainConfig(learning_rate=1.0)
    p = [np.array([0.0])]
    state = AdamWState.zeros_like(p)
    p, state = adamw_step(p, [np.array([1.0])], state, cfg)
    p, state = adamw_step(p, [np.array([-1.0])], state, cfg)
    m = 0.9 * 0.1 + 0.1 * -1.0
    v = 0.999 * 0.001 + 0.001
    step = (m / (1 - 0.81)) / (math.sqrt(v / (1 - 0.999**2)) + 1e-8)
    assert p[0][0] == pytest.approx(-1.0 / (1 + 1e-8) - step, rel=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(tolerance=-1)
    with pytest.raises(ValueError):
        TrainConfig(adamw=AdamWConfig(beta1=1.0))


def test_trace_rules(tmp_path):
    t = NllTrace()
    t.append(0, 2.0)
    t.append(1, 1.5, 0.3)
    with pytest.raises(ValueError):
        t.append(1, 1.0)
    t.write_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines() == ["epoch,nll,entropy", "0,2.0,", "1,1.5,0.3"]


def test_zero_epoch_budget_returns_initial_model():
    m = mps.init_random(4, 4, 2, seed=0)
    out, trace = fit(m, [[0, 1, 2, 3]], [1.0], TrainConfig(max_epochs=0))
    assert all(np.array_equal(a, b) for a, b in zip(m.sites, out.sites))
    assert len(trace) == 1


def test_point_mass_is_learned():
    m = mps.init_random(6, 6, 4, seed=0)
    target = [3, 1, 4, 0, 5, 2]
    out, trace = fit(m, [target], [1.0], TrainConfig(max_epochs=300))
    p = math.exp(mps.masked_chain_logprob(mps.right_canonicalize(out), target))
    assert p > 0.99
    assert trace.final < trace.nll[0]


def test_stopper_ignores_direction_but_not_size():
    s = training._Stopper(TrainConfig(tolerance=0.1, patience=2))
    assert not s.update(5.0)
    assert not s.update(5.5)  # a rise larger than the tolerance resets
    assert not s.update(5.45)
    assert s.update(5.44)


def test_nan_loss_aborts_with_epoch():
    m = mps.init_random(3, 3, 2, seed=0)
    m.sites[1][...] = np.nan
    with pytest.raises(TrainingDiverged) as info:
        fit(m, [[0, 1, 2]], [1.0], TrainConfig(max_epochs=5))
    assert info.value.epoch == 0
    assert "epoch 0" in str(info.value)


# -- two-site sweeps ------------------------------------------------------------------


def merged_nll(sites, k, theta, x, w):
    l, d, _, r = theta.shape
    joined = sites[:k] + [theta.reshape(l, d * d, r)] + sites[k + 2:]
    psi = dense_state(joined).reshape((d,) * len(sites))
    z = np.sum(psi**2)
    return float(-sum(wi * math.log(psi[tuple(xi)] ** 2 / z) for xi, wi in zip(x, w)))


def test_two_site_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    m = mps.right_canonicalize(mps.init_random(4, 3, 3, seed=4))
    x, w = random_data(rng, 20, 4, 3)
    data = TrainingSet(x, w)
    sites = m.sites
    theta = np.tensordot(sites[0], sites[1], axes=([2], [0]))
    rights = training._right_envs(sites, data.x)
    grad = training._two_site_gradient(
        theta, np.ones((len(data.x), 1)), rights[2], data.w, training._pair_groups(data.x, 0, 3), 3
    )
    fd = central_difference(lambda: merged_nll(sites, 0, theta, data.x, data.w), [theta])[0]
    np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-8)


def test_untruncated_bond_update_is_plain_gradient_step():
    rng = np.random.default_rng(5)
    m = mps.right_canonicalize(mps.init_random(4, 3, 3, seed=5))
    x, w = random_data(rng, 20, 4, 3)
    data = TrainingSet(x, w)
    sites = [a.copy() for a in m.sites]
    theta = np.tensordot(sites[0], sites[1], axes=([2], [0]))
    theta /= np.linalg.norm(theta)
    rights = training._right_envs(sites, data.x)
    left = np.ones((len(data.x), 1))
    grad = training._two_site_gradient(theta, left, rights[2], data.w, training._pair_groups(data.x, 0, 3), 3)
    stepped = theta - 0.05 * grad
    training._update_bond(sites, 0, left, rights[2], data, 0.05, 100, "right")
    updated = np.tensordot(sites[0], sites[1], axes=([2], [0]))
    np.testing.assert_allclose(updated, stepped / np.linalg.norm(stepped), atol=1e-12)
    assert weighted_nll(Mps(sites), data) == pytest.approx(
        merged_nll(m.sites, 0, stepped, data.x, data.w), rel=1e-10
    )


def test_dmrg_fit_lowers_nll_and_respects_bond_dim():
    rng = np.random.default_rng(6)
    x = np.array([rng.permutation(5) for _ in range(40)])
    m = mps.init_random(5, 5, 3, seed=6)
    out, trace = dmrg_fit(m, x, np.full(40, 1 / 40), TrainConfig(max_epochs=15))
    assert trace.final < trace.nll[0]
    assert max(out.bond_dims) <= 3
    assert mps.is_right_canonical(mps.right_canonicalize(out))


# -- entanglement entropy ---------------------------------------------------------------


def test_entropy_product_state_is_zero():
    m = Mps([np.random.default_rng(0).normal(size=(1, 3, 1)) for _ in range(4)], bond_dim=1)
    assert bipartite_entropy(m) == pytest.approx(0.0, abs=1e-12)


def test_entropy_maximal_bond():
    chi = 4
    a = np.eye(chi).reshape(1, chi, chi)
    b = np.eye(chi).reshape(chi, chi, 1)
    assert bipartite_entropy(Mps([a, b], bond_dim=chi)) == pytest.approx(math.log(chi), rel=1e-12)


def test_entropy_matches_full_state_schmidt():
    m = mps.init_random(6, 3, 8, seed=7)
    psi = dense_state(m.sites).reshape(27, 27)
    s = np.linalg.svd(psi, compute_uv=False)
    p = s**2 / np.sum(s**2)
    p = p[p > 1e-300]
    assert bipartite_entropy(m) == pytest.approx(float(-np.sum(p * np.log(p))), abs=1e-8)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 7), st.integers(1, 6))
def test_entropy_bounded_by_log_chi(seed, s, chi):
    m = mps.init_random(s, 3, chi, seed)
    e = bipartite_entropy(m)
    assert -1e-12 <= e <= math.log(max(m.bond_dims)) + 1e-12
