import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from powerproxy import metrics
from powerproxy.errors import DataError, ParameterError
from powerproxy.model import (INTERVAL, PER_CYCLE, PowerModel, check_window, evaluate,
                              interval_aggregate, predict_per_cycle, predict_window, relax,
                              screen_signals, select_proxies, temporary_predict, train,
                              train_multicycle, train_validated, validation_split, window_labels)
from powerproxy.syngen import WorkloadProfile, default_profile, gen_design, gen_power_labels, gen_workload


@pytest.fixture(scope="module")
def mid_case():
    d = gen_design(200, 10, 40, seed=3)
    tm = gen_workload(d, default_profile(4000, seed=30))
    y = gen_power_labels(d, tm, include_noise=False)
    return d, tm, y


# -- screening -------------------------------------------------------------------

def test_screen_reasons():
    bits = np.array([[0, 1, 0, 1, 1],
                     [0, 1, 1, 0, 1],
                     [0, 1, 0, 1, 1]], np.uint8)
    rep = screen_signals(bits)
    assert rep.kept.tolist() == [2, 3]
    assert rep.dropped == {0: "never_toggles", 1: "always_toggles", 4: "always_toggles"}


def test_screen_duplicates_keep_lowest(rng):
    bits = (rng.random((50, 4)) < 0.5).astype(np.uint8)
    bits[:, 3] = bits[:, 1]
    rep = screen_signals(bits)
    assert rep.kept.tolist() == [0, 1, 2]
    assert rep.dropped == {3: "duplicate_of:1"}


def test_screen_keeps_clean_matrix(rng):
    bits = (rng.random((200, 30)) < 0.5).astype(np.uint8)
    assert screen_signals(bits).kept.tolist() == list(range(30))


# -- selection and relaxation -------------------------------------------------------

def test_zero_noise_recovers_support(mid_case):
    d, tm, y = mid_case
    ps = select_proxies(tm, y, 10)
    assert ps.indices.tolist() == d.support.tolist()
    assert ps.search.hit


def test_relax_true_support_gives_true_weights(mid_case):
    d, tm, y = mid_case
    ps = select_proxies(tm, y, 10)
    m = relax(tm, y, ps, lambda_ridge=0.0)
    assert np.allclose(m.weights, d.true_weights[d.support], rtol=0, atol=1e-9)
    assert m.flavor == PER_CYCLE


def test_target_all_columns(rng):
    X = (rng.random((300, 8)) < 0.5).astype(np.uint8)
    y = X @ np.arange(1.0, 9.0)
    ps = select_proxies(X, y, 8)
    assert ps.indices.tolist() == list(range(8))


def test_relax_orthogonal_is_ols(rng):
    X = np.zeros((30, 3), np.uint8)
    X[0:10, 0] = 1
    X[10:20, 1] = 1
    X[20:25, 2] = 1
    y = rng.uniform(1, 3, 30)
    ps = select_proxies(X, y, 3)
    m = relax(X, y, ps, lambda_ridge=0.0)
    want = [y[0:10].mean(), y[10:20].mean(), y[20:25].mean()]
    assert np.allclose(m.weights, want, atol=1e-12)


def test_relaxed_beats_temporary_on_train():
    d = gen_design(2000, 50, 100, seed=1)
    tm = gen_workload(d, default_profile(10000, seed=101))
    y = gen_power_labels(d, tm, seed=101)
    model, ps = train(tm, y, 50)
    assert metrics.nrmse(y, predict_per_cycle(model, tm)) < metrics.nrmse(y, temporary_predict(ps, tm))


def test_relaxation_undoes_lasso_shrinkage():
    d = gen_design(2000, 50, 100, seed=1)
    tm = gen_workload(d, default_profile(10000, seed=101))
    y = gen_power_labels(d, tm, seed=101)
    model, ps = train(tm, y, 50, penalty="lasso")
    assert metrics.nrmse(y, predict_per_cycle(model, tm)) < metrics.nrmse(y, temporary_predict(ps, tm))


def test_training_is_deterministic(mid_case):
    _, tm, y = mid_case
    a, _ = train(tm, y, 10)
    b, _ = train(tm, y, 10)
    assert a.to_json() == b.to_json()


def test_tau_one_equals_per_cycle(mid_case):
    _, tm, y = mid_case
    a, _ = train(tm, y, 10)
    b, _ = train_multicycle(tm, y, tau=1, target_q=10)
    assert a.to_json() == b.to_json()


def test_target_too_large(mid_case):
    _, tm, y = mid_case
    with pytest.raises(ParameterError):
        train(tm, y, 5000)


# -- interval models --------------------------------------------------------------

def test_interval_aggregate_hand_means(rng):
    bits = (rng.random((80, 5)) < 0.5).astype(np.uint8)
    y = rng.uniform(0, 4, 80)
    counts, ybar, dropped = interval_aggregate(bits, y, 8)
    assert counts.shape == (10, 5) and dropped == 0
    for k in range(10):
        rows = bits[8 * k:8 * k + 8].tolist()
        assert (counts[k] / 8).tolist() == [sum(r[j] for r in rows) / 8 for j in range(5)]
        assert ybar[k] == pytest.approx(sum(y[8 * k:8 * k + 8]) / 8, rel=1e-15)


def test_interval_tau_equals_n(rng):
    bits = (rng.random((24, 3)) < 0.5).astype(np.uint8)
    y = rng.uniform(0, 4, 24)
    counts, ybar, _ = interval_aggregate(bits, y, 24)
    assert np.allclose(counts[0] / 24, bits.mean(axis=0))
    assert ybar[0] == pytest.approx(y.mean())


def test_interval_remainder_and_errors(rng):
    bits = (rng.random((21, 2)) < 0.5).astype(np.uint8)
    _, _, dropped = interval_aggregate(bits, np.ones(21), 8)
    assert dropped == 5
    with pytest.raises(ParameterError):
        interval_aggregate(bits, np.ones(21), 22)


def test_multicycle_model(mid_case):
    d, tm, y = mid_case
    m, _ = train_multicycle(tm, y, tau=8, target_q=10)
    assert m.flavor == INTERVAL and m.tau == 8
    assert m.proxy_indices.tolist() == d.support.tolist()
    assert np.allclose(m.weights, d.true_weights[d.support], rtol=1e-3)


# -- inference ------------------------------------------------------------------

def test_predict_examples():
    m = PowerModel([1], [3.5])
    assert predict_per_cycle(m, np.array([[0, 0], [0, 1]])).tolist() == [0.0, 3.5]
    with pytest.raises(DataError):
        predict_per_cycle(PowerModel([4], [1.0]), np.zeros((2, 3), np.uint8))


def test_predict_matches_double_loop(rng):
    bits = (rng.random((30, 9)) < 0.5).astype(np.uint8)
    m = PowerModel([0, 2, 5, 8], rng.uniform(0, 5, 4))
    want = oracles.dot_double_loop(bits[:, m.proxy_indices].tolist(), m.weights.tolist())
    assert np.allclose(predict_per_cycle(m, bits), want, rtol=0, atol=1e-12)


def test_window_one_is_per_cycle(rng):
    bits = (rng.random((33, 4)) < 0.5).astype(np.uint8)
    m = PowerModel([0, 3], [1.5, 2.0])
    assert np.array_equal(predict_window(m, bits, 1).values, predict_per_cycle(m, bits))


def test_window_checks():
    for T in (0, 3, 6, -4):
        with pytest.raises(ParameterError):
            check_window(T)
    assert check_window(64) == 64


def test_all_zero_window_and_remainder():
    m = PowerModel([0], [2.0])
    bits = np.zeros((19, 1), np.uint8)
    wp = predict_window(m, bits, 8)
    assert wp.values.tolist() == [0.0, 0.0] and wp.dropped_cycles == 3


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 4, 8, 16, 32, 64]),
       st.sampled_from([1, 2, 4, 8, 3]))
def test_orders_agree(seed, T, tau):
    r = np.random.default_rng(seed)
    bits = (r.random((T * r.integers(1, 6) + r.integers(0, T), 7)) < r.uniform(0.05, 0.95)).astype(np.uint8)
    m = PowerModel(np.sort(r.choice(7, 4, replace=False)), r.uniform(0, 10, 4), tau=tau)
    a = predict_window(m, bits, T, "predict_first").values
    b = predict_window(m, bits, T, "aggregate_first").values
    assert np.all(np.abs(a - b) <= 1e-12 * np.maximum(np.abs(a), 1e-300))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 4, 8, 16]))
def test_window_values_are_bounded_by_cycle_values(seed, T):
    r = np.random.default_rng(seed)
    bits = (r.random((T * 5, 6)) < 0.5).astype(np.uint8)
    m = PowerModel([0, 1, 4], r.uniform(0, 3, 3))
    p = predict_per_cycle(m, bits).reshape(5, T)
    w = predict_window(m, bits, T).values
    assert np.all(p.min(axis=1) <= w + 1e-12) and np.all(w <= p.max(axis=1) + 1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_extra_toggle_never_lowers_power(seed):
    r = np.random.default_rng(seed)
    row = (r.random((1, 8)) < 0.5).astype(np.uint8)
    m = PowerModel([1, 3, 4, 6], r.uniform(0, 3, 4))
    j = int(r.integers(8))
    more = row.copy()
    more[0, j] = 1
    assert predict_per_cycle(m, more)[0] >= predict_per_cycle(m, row)[0]


def test_evaluate_perfect_and_constant(mid_case):
    d, tm, y = mid_case
    m = PowerModel(d.support, d.true_weights[d.support])
    rep = evaluate(m, tm, y, windows=(1, 16))
    assert rep[1].nrmse == pytest.approx(0.0, abs=1e-12) and rep[1].r2 == pytest.approx(1.0)
    assert rep[16].n_points == 4000 // 16
    yv = y.values
    assert metrics.r_squared(yv, np.full_like(yv, yv.mean())) == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(window_labels(yv, 16), yv[:4000].reshape(-1, 16).mean(axis=1))


# -- model file and validation ---------------------------------------------------------

def test_model_json_roundtrip(mid_case):
    _, tm, y = mid_case
    m, _ = train(tm, y, 10, proxy_names=[f"n{j}" for j in range(200)])
    again = PowerModel.from_json(m.to_json())
    assert again.to_json() == m.to_json()
    assert again.proxy_names == [f"n{j}" for j in m.proxy_indices]
    assert set(m.training_meta) >= {"lambda", "gamma", "tol", "dropped_columns"}


def test_model_invariants():
    with pytest.raises(DataError):
        PowerModel([2, 1], [1.0, 1.0])
    with pytest.raises(DataError):
        PowerModel([1], [-1.0])
    with pytest.raises(DataError):
        PowerModel.from_json('{"format": "other"}')


def test_validation_split_interleaves():
    mask = validation_split(10 * 256, 0.2)
    assert mask.sum() == 2 * 256
    assert mask[4 * 256:5 * 256].all() and not mask[:4 * 256].any()


def test_train_validated_picks_a_gamma(mid_case):
    _, tm, y = mid_case
    m, _ = train_validated(tm, y, 10, gammas=(3.0, 10.0))
    scores = m.training_meta["validation_nrmse"]
    assert set(scores) == {"3.0", "10.0"}
    assert m.training_meta["gamma"] == float(min(scores, key=lambda g: (scores[g], float(g))))


def test_flat_profile_default():
    d = gen_design(30, 3, 3, seed=1)
    tm = gen_workload(d, WorkloadProfile(64, seed=1))
    assert tm.n_cycles == 64
