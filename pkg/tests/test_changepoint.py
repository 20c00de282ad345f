import numpy as np
import pytest

from ptotr.applications.changepoint import (
    _labels,
    argmax_smallest,
    batched_khatri_rao,
    changepoint_scan,
    fit_indicator_model,
    group_sums,
    grouped_covariate_step,
    grouped_response_step,
)
from ptotr.estimator import FitConfig, PtotrProblem, build_covariate_update, build_response_update, fit, loglikelihood
from ptotr.exceptions import MleNotExistError
from ptotr.mm import mm_step
from ptotr.synth import make_changepoint_series, make_rng
from ptotr.tensor import cp_reconstruct, khatri_rao, matricize, random_cp


def rel(a, b):
    return np.max(np.abs(a - b) / np.abs(b))


def onehot_problem(series, tau):
    lab = _labels(len(series), tau)
    return PtotrProblem(series, np.eye(2)[lab]), lab


def grouped_inputs(series, tau, b, p):
    """Batch-of-one inputs for the grouped updates of response mode ``p`` (0-based)."""
    sums, counts = group_sums(series, _labels(len(series), tau), 2)
    yp = np.stack([matricize(s, p + 1) for s in sums])[None]
    u = list(b.response_factors)
    others = [u[s] for s in range(len(u)) if s != p]
    k = khatri_rao(others[::-1]) if others else np.ones((1, b.rank))
    return yp, counts[None], k[None]


def test_batched_khatri_rao_matches_single():
    rng = np.random.default_rng(0)
    mats = [rng.random((3, d, 2)) for d in (2, 4, 3)]
    out = batched_khatri_rao(mats)
    for i in range(3):
        np.testing.assert_allclose(out[i], khatri_rao([m[i] for m in mats[::-1]]), rtol=1e-15)


def test_group_sums():
    y = np.arange(12.0).reshape(4, 3)
    sums, counts = group_sums(y, [0, 1, 1, 0], 2)
    np.testing.assert_array_equal(sums, [y[0] + y[3], y[1] + y[2]])
    np.testing.assert_array_equal(counts, [2, 2])


def test_simplified_response_update_matches_generic():
    rng = make_rng(1)
    for trial in range(20):
        T = int(rng.integers(2, 7))
        tau = int(rng.integers(1, T))
        series = make_changepoint_series(3, 4, 2, T, tau, 3.0, rng)
        prob, _ = onehot_problem(series, tau)
        b = random_cp((2,), (3, 4, 2), int(rng.integers(1, 4)), rng, weight_scale=20.0)
        p = trial % 3
        generic = build_response_update(prob, b, p + 1)
        expected = mm_step(generic.c_init, generic)
        yp, counts, k = grouped_inputs(series, tau, b, p)
        got, _ = grouped_response_step(yp, counts, b.covariate_factors[0][None], generic.c_init[None], k)
        assert rel(got[0], expected) <= 1e-10


def test_simplified_group_update_matches_generic():
    rng = make_rng(2)
    for trial in range(20):
        T = int(rng.integers(2, 7))
        tau = int(rng.integers(1, T))
        series = make_changepoint_series(2, 3, 3, T, tau, 4.0, rng)
        prob, _ = onehot_problem(series, tau)
        b = random_cp((2,), (2, 3, 3), int(rng.integers(1, 4)), rng, weight_scale=15.0)
        generic = build_covariate_update(prob, b, 1)
        expected = mm_step(generic.c_init, generic).reshape(2, -1, order="F")
        p = trial % 3
        yp, counts, k = grouped_inputs(series, tau, b, p)
        v_tilde = b.covariate_factors[0] * b.weights
        got, _ = grouped_covariate_step(yp, counts, v_tilde[None], b.response_factors[p][None], k)
        assert rel(got[0], expected) <= 1e-10


def test_grouped_fit_equals_general_fit():
    series = make_changepoint_series(3, 4, 2, 6, 3, 4.0, make_rng(3))
    prob, lab = onehot_problem(series, 3)
    cfg = FitConfig(rank=2, restarts=3, seed=5, outer_max_sweeps=40)
    grouped = fit_indicator_model(series, lab, 2, cfg)
    general = fit(prob, cfg)
    np.testing.assert_allclose(grouped.restart_logliks, general.restart_logliks, rtol=1e-12)
    np.testing.assert_allclose(grouped.loglik_trajectory, general.loglik_trajectory, rtol=1e-12)
    np.testing.assert_allclose(cp_reconstruct(grouped.coefficient), cp_reconstruct(general.coefficient),
                               rtol=1e-10)
    # the grouped loglikelihood is the per-observation one
    assert grouped.loglik == pytest.approx(loglikelihood(prob, grouped.coefficient), rel=1e-12)


def test_singleton_candidates():
    series = make_changepoint_series(2, 2, 2, 2, 1, 3.0, make_rng(4))
    res = changepoint_scan(series, FitConfig(rank=1, restarts=2), [1])
    assert res.tau_hat == 1
    res = changepoint_scan(make_changepoint_series(2, 2, 3, 8, 0, 1.0, make_rng(5)),
                           FitConfig(rank=1, restarts=2), [3])
    assert res.tau_hat == 3


def test_full_size_setting_peak():
    series = make_changepoint_series(10, 10, 15, 14, 6, 8.0, make_rng(6))
    cfg = FitConfig(rank=4, restarts=10, seed=0, outer_tol=1e-4, inner_max_iter=1)
    res = changepoint_scan(series, cfg)
    assert res.tau_hat == 6
    assert sorted(res.loglik_by_tau) == list(range(1, 14))
    for tau, ll in res.loglik_by_tau.items():
        assert res.lambda_by_tau[tau] == pytest.approx(2 * (ll - res.null_loglik), rel=1e-14)
        assert res.lambda_by_tau[tau] >= -10 * cfg.outer_tol * abs(res.null_loglik)
        assert res.fits[tau].loglik == ll


def test_tie_rule():
    assert argmax_smallest({3: 1.0, 1: 1.0, 2: 0.5}) == 1
    assert argmax_smallest({5: -2.0, 4: -3.0}) == 5


def test_errors():
    series = make_changepoint_series(2, 2, 2, 4, 1, 3.0, make_rng(7))
    cfg = FitConfig(rank=1, restarts=1)
    with pytest.raises(ValueError):
        changepoint_scan(series, cfg, [])
    with pytest.raises(ValueError):
        changepoint_scan(series, cfg, [4])
    with pytest.raises(ValueError):
        changepoint_scan(series[:1], cfg)
    with pytest.raises(MleNotExistError):
        changepoint_scan(np.zeros_like(series), cfg)
