import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from solrcmf import metrics
from solrcmf.admm import Hyperparams, fit
from solrcmf.datamodel import MatrixKey
from solrcmf.errors import NoSharedView, ZeroDataNorm
from solrcmf.initialization import random_init, state_from_factors
from solrcmf.simulate import SIM1_D, build_scenario, builtin_scenario

from conftest import collection_from_arrays, small_scenario


@pytest.fixture
def truth_state(small_truth):
    return state_from_factors(small_truth.data, small_truth.V_truth, small_truth.D_truth)


def test_proportion_of_variation_noiseless_is_one(small_truth, truth_state):
    for key in small_truth.data.keys:
        assert metrics.proportion_of_variation(truth_state, small_truth.data, key) == pytest.approx(1.0)


def test_zero_norm_raises(rng):
    data = collection_from_arrays({(1, 2): np.zeros((3, 2))}, {1: 3, 2: 2})
    s = random_init(data, 1, 0)
    with pytest.raises(ZeroDataNorm):
        metrics.proportion_of_variation(s, data, data.keys[0])


def test_directed_r2_no_shared_view(rng):
    data = collection_from_arrays(
        {(1, 2): rng.standard_normal((3, 3)), (3, 4): rng.standard_normal((3, 3))},
        {1: 3, 2: 3, 3: 3, 4: 3},
    )
    s = random_init(data, 2, 0)
    with pytest.raises(NoSharedView):
        metrics.directed_r2(s, data, (1, 2), (3, 4))
    with pytest.raises(NoSharedView):
        metrics.directed_r2_regression(s, data, (1, 2), (3, 4))


def test_directed_r2_matches_regression_oracle(small_truth):
    data = small_truth.data
    s = fit(data, Hyperparams(lambda1=0.3, t_max=300), random_init(data, 4, 0)).state
    for dep in data.keys:
        for pred in data.keys:
            if metrics.shares_view(dep, pred):
                a = metrics.directed_r2(s, data, dep, pred)
                b = metrics.directed_r2_regression(s, data, dep, pred)
                assert a == pytest.approx(b, abs=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.lists(st.booleans(), min_size=4, max_size=4))
def test_directed_r2_bounded_by_proportion(d_dep, active):
    d_dep = np.array(d_dep)
    d_pred = np.where(active, 1.0, 0.0)
    norm2 = np.sum(d_dep**2) + 1.0
    r2 = metrics.directed_r2_values(d_dep, d_pred, norm2)
    assert 0.0 <= r2 <= np.sum(d_dep**2) / norm2 + 1e-12


def test_sim1_expected_directed_r2():
    # at SNR 0.5 the signal is a third of the data in expectation
    dA = np.array(SIM1_D[(1, 2, 1)])
    dB = np.array(SIM1_D[(1, 3, 1)])
    value = 100 * metrics.directed_r2_values(dA, dB, 3 * np.sum(dA**2))
    assert value == pytest.approx(19.26, abs=0.5)
    assert 100 * metrics.directed_r2_values(dA, dA, 3 * np.sum(dA**2)) == pytest.approx(33.3, abs=0.5)


def test_noise_estimate(small_truth, truth_state):
    s2, snr = metrics.estimate_noise(truth_state, small_truth.data, small_truth.data.keys[0])
    assert s2 == pytest.approx(0.0, abs=1e-20) and np.isinf(snr)
    gt = build_scenario(builtin_scenario("sim1", seed=0))
    state = state_from_factors(gt.data, gt.V_truth, gt.D_truth)
    for key in gt.data.keys:
        s2, snr = metrics.estimate_noise(state, gt.data, key)
        assert s2 == pytest.approx(gt.sigma2[key], rel=0.1)
        assert snr == pytest.approx(0.5, rel=0.1)


def test_ranks(truth_state):
    assert metrics.estimated_rank(truth_state, (1, 2, 1)) == 2
    assert metrics.shared_rank(truth_state, (1, 2, 1), (2, 3, 1)) == 1
    assert metrics.shared_rank(truth_state, (1, 2, 1), (1, 3, 1)) == 0


def test_variation_report_keys(small_truth, truth_state):
    rep = metrics.variation_report(truth_state, small_truth.data)
    assert set(rep.proportions) == set(small_truth.data.keys)
    # the chain layout: every pair shares a view
    assert len(rep.directed) == 9


def test_match_factors_recovers_permutation(rng):
    truth, _ = np.linalg.qr(rng.standard_normal((20, 4)))
    perm = [2, 0, 3, 1]
    est = truth[:, perm] * np.array([1, -1, 1, -1])
    m = metrics.match_factors(est, truth)
    assert m.truth_to_estimate() == {2: 0, 0: 1, 3: 2, 1: 3}
    assert [round(abs(x), 12) for _, _, x in m.pairs] == [1.0] * 4
    opt = metrics.match_factors(est, truth, optimal=True)
    assert opt.pairs == m.pairs


def test_match_factors_threshold(rng):
    truth = np.eye(4)[:, :2]
    est = np.array([[0.7, 0.0], [0.7, 0.0], [0.14, 0.0], [0.0, 1.0]])
    assert metrics.match_factors(est, truth).pairs == []
    loose = metrics.match_factors(est, truth, threshold=0.5)
    assert [(i, j) for i, j, _ in loose.pairs] == [(0, 0)]


def test_confusion():
    truth = np.array([[1, 0], [1, 1], [0, 1], [0, 0]], dtype=bool)
    est = np.array([[1, 1], [0, 1], [0, 1], [1, 1]], dtype=bool)
    m = metrics.FactorMatching([(0, 0, 1.0), (1, 1, 1.0)], 0.75)
    c = metrics.sparsity_confusion(est, truth, m)
    assert (c[0].tpr, c[0].fpr) == (0.5, 0.5)
    assert (c[1].tpr, c[1].fpr) == (1.0, 1.0)
    full = np.ones((3, 1), dtype=bool)
    c = metrics.sparsity_confusion(full, full, metrics.FactorMatching([(0, 0, 1.0)], 0.75))
    assert c[0].tpr == 1.0 and np.isnan(c[0].fpr)


def test_structure_graph(small_truth, truth_state):
    g = metrics.structure_graph(truth_state, small_truth.data)
    assert isinstance(g, nx.DiGraph)
    assert not any(u == v for u, v in g.edges)
    # (1,2) and (1,3) share no active factor
    assert not g.has_edge(MatrixKey(1, 3, 1), MatrixKey(1, 2, 1))
    assert g.has_edge(MatrixKey(2, 3, 1), MatrixKey(1, 2, 1))
    rows = metrics.edge_list(g, small_truth.data)
    assert rows == sorted(rows, key=lambda r: (r[0], r[1])) or len(rows) > 0
    assert all(w > 0 for _, _, w in rows)


def test_canonicalize_signs_keeps_signals(small_truth):
    data = small_truth.data
    res = fit(data, Hyperparams(lambda1=0.1, t_max=200), random_init(data, 4, 7))
    canon = metrics.canonicalize_signs(res)
    assert type(canon) is type(res)
    for key in data.keys:
        np.testing.assert_array_equal(canon.state.signal(key), res.state.signal(key))
    # no factor is active around the whole triangle, so all signs can be fixed
    assert all(np.all(canon.state.D[key] >= 0) for key in data.keys)
    again = metrics.canonicalize_signs(canon.state)
    for key in data.keys:
        np.testing.assert_array_equal(again.D[key], canon.state.D[key])
