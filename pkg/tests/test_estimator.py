import math

import numpy as np
import pytest

from ptotr.estimator import (
    FitConfig,
    PtotrProblem,
    _covariate_blocks,
    _response_blocks,
    bic,
    build_covariate_update,
    build_response_update,
    covariate_design,
    covariate_step,
    fit,
    loglikelihood,
    parameter_count,
    response_step,
)
from ptotr.exceptions import CorruptInputError, DegenerateRateError, DimensionError, MleNotExistError
from ptotr.mm import MmProblem, mm_objective, mm_step
from ptotr.tensor import CpTensor, cp_reconstruct, partial_contract, random_cp, vec


def random_problem(rng, ndims=(2, 3), mdims=(3, 2), n=6, rank=2, scale=20.0):
    b = random_cp(ndims, mdims, rank, rng, weight_scale=scale)
    x = rng.uniform(0.0, 1.0, (n,) + tuple(ndims))
    rates = np.stack([partial_contract(xi, b) for xi in x])
    y = rng.poisson(rates).astype(float)
    return PtotrProblem(y, x), b


def rel(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300))


def test_problem_validation():
    with pytest.raises(DimensionError):
        PtotrProblem(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(CorruptInputError):
        PtotrProblem(np.full((1, 2), 0.5), np.ones((1, 2)))
    with pytest.raises(CorruptInputError):
        PtotrProblem(np.ones((2, 2)), np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_loglik_zero_responses():
    rng = np.random.default_rng(0)
    b = random_cp((2,), (3,), 2, rng, weight_scale=4.0)
    x = rng.random((4, 2)) + 0.1
    prob = PtotrProblem(np.zeros((4, 3)), x)
    total = sum(partial_contract(xi, b).sum() for xi in x)
    assert loglikelihood(prob, b) == pytest.approx(-total, rel=1e-13)


def test_loglik_scalar():
    prob = PtotrProblem(np.array([[2.0]]), np.array([[1.0]]))
    b = CpTensor([2.0], (np.ones((1, 1)),), (np.ones((1, 1)),))
    assert loglikelihood(prob, b) == pytest.approx(2 * math.log(2) - 2, abs=1e-12)
    assert loglikelihood(prob, b, include_constant=True) == pytest.approx(
        2 * math.log(2) - 2 - math.log(2), abs=1e-12)


def test_loglik_matches_vectorized_full_rank():
    rng = np.random.default_rng(1)
    for _ in range(20):
        prob, b = random_problem(rng, ndims=(2,), mdims=(2, 2), n=5, rank=3)
        full = cp_reconstruct(b)
        c = full.reshape(2, -1, order="F").T  # (prod M, prod N)
        mm = MmProblem(y=prob.y_rows.T, d=prob.x_rows.T + 0.0, c_init=c)
        assert loglikelihood(prob, b) == pytest.approx(mm_objective(c, mm), rel=1e-10)


def test_loglik_degenerate():
    prob = PtotrProblem(np.array([[1.0]]), np.array([[1.0]]))
    b = CpTensor([0.0], (np.ones((1, 1)),), (np.ones((1, 1)),))
    with pytest.raises(DegenerateRateError):
        loglikelihood(prob, b)


def test_response_update_matches_generic():
    rng = np.random.default_rng(2)
    for trial in range(20):
        prob, _ = random_problem(rng, ndims=(2, 2), mdims=(3, 2, 2), n=4, rank=2)
        b = random_cp((2, 2), (3, 2, 2), 2, rng, weight_scale=7.0)
        p = trial % 3 + 1
        generic = build_response_update(prob, b, p)
        expected = mm_step(generic.c_init, generic)
        yp, w, k = _response_blocks(prob, b, p)
        got, _ = response_step(yp, w, k, generic.c_init)
        assert rel(got, expected) <= 1e-10
        # the generic MM rates reproduce the model rates
        mat_rates = generic.c_init @ generic.d
        assert mat_rates.shape == generic.y.shape


def test_response_update_pcp_case():
    rng = np.random.default_rng(3)
    y = rng.poisson(5.0, (1, 4)).astype(float)
    prob = PtotrProblem(y, np.ones((1, 1)))
    b = random_cp((1,), (4,), 2, rng, weight_scale=3.0)
    generic = build_response_update(prob, b, 1)
    np.testing.assert_allclose(generic.y, y.T)
    u_tilde = b.response_factors[0] * b.weights
    # single-factor PCP: D is diag(w) with w = V[0, :] = 1 after normalization
    np.testing.assert_allclose(generic.d, np.ones((2, 1)))
    yp, w, k = _response_blocks(prob, b, 1)
    got, _ = response_step(yp, w, k, u_tilde)
    assert rel(got, mm_step(u_tilde, generic)) <= 1e-12


def test_w_for_indicator_covariate():
    rng = np.random.default_rng(4)
    b = random_cp((3, 2), (2,), 3, rng)
    x = np.zeros((1, 3, 2))
    x[0, 1, 0] = 1.0
    prob = PtotrProblem(np.ones((1, 2)), x)
    _, w, _ = _response_blocks(prob, b, 1)
    np.testing.assert_allclose(w[0], b.covariate_factors[0][1] * b.covariate_factors[1][0], rtol=1e-15)


def test_covariate_design_reproduces_contraction():
    rng = np.random.default_rng(5)
    for trial in range(30):
        ndims = tuple(int(d) for d in rng.integers(1, 4, int(rng.integers(1, 4))))
        mdims = tuple(int(d) for d in rng.integers(1, 4, int(rng.integers(1, 3))))
        b = random_cp(ndims, mdims, int(rng.integers(1, 4)), rng, weight_scale=3.0)
        x = rng.random((2,) + ndims)
        prob = PtotrProblem(np.ones((2,) + mdims), x)
        q = trial % len(ndims) + 1
        wq, ku = _covariate_blocks(prob, b, q)
        v_tilde = b.covariate_factors[q - 1] * b.weights
        for i in range(2):
            h = covariate_design(wq[i], ku)
            np.testing.assert_allclose(h @ vec(v_tilde), vec(partial_contract(x[i], b)),
                                       rtol=1e-12, atol=1e-12)


def test_covariate_update_matches_generic():
    rng = np.random.default_rng(6)
    for trial in range(20):
        prob, _ = random_problem(rng, ndims=(2, 3, 2), mdims=(2, 2), n=5, rank=3)
        b = random_cp((2, 3, 2), (2, 2), 3, rng, weight_scale=9.0)
        q = trial % 3 + 1
        generic = build_covariate_update(prob, b, q)
        expected = mm_step(generic.c_init, generic).reshape(b.covariate_dims[q - 1], -1, order="F")
        wq, ku = _covariate_blocks(prob, b, q)
        got, _ = covariate_step(prob.y_rows, wq, ku, b.covariate_factors[q - 1] * b.weights)
        assert rel(got, expected) <= 1e-10


def test_degenerate_covariate_mode():
    rng = np.random.default_rng(7)
    y = rng.poisson(3.0, (5, 3)).astype(float)
    prob = PtotrProblem(y, np.ones((5, 1)))
    b = random_cp((1,), (3,), 2, rng, weight_scale=4.0)
    np.testing.assert_allclose(b.covariate_factors[0], 1.0)
    wq, ku = _covariate_blocks(prob, b, 1)
    v_tilde = b.covariate_factors[0] * b.weights
    new, _ = covariate_step(prob.y_rows, wq, ku, v_tilde)
    lam = new.sum(axis=0)
    np.testing.assert_allclose(new / lam, 1.0)


def test_fit_intercept_only_mean():
    y = np.array([[3.0], [7.0], [2.0], [5.0], [0.0], [4.0]])
    prob = PtotrProblem(y, np.ones((6, 1)))
    res = fit(prob, FitConfig(rank=1, restarts=2, seed=1))
    rate = cp_reconstruct(res.coefficient).item()
    assert rate == pytest.approx(y.mean(), abs=1e-6)


def test_fit_zero_noise_rank1_recovery():
    rng = np.random.default_rng(8)
    b = random_cp((3, 2), (4, 3), 1, rng, weight_scale=1e6)
    x = rng.uniform(0.1, 1.0, (10, 3, 2))
    y = np.round(np.stack([partial_contract(xi, b) for xi in x]))
    res = fit(PtotrProblem(y, x), FitConfig(rank=1, restarts=2, seed=3, outer_tol=1e-13,
                                           inner_tol=1e-10, inner_max_iter=100,
                                           outer_max_sweeps=2000))
    err = np.linalg.norm(cp_reconstruct(res.coefficient) - cp_reconstruct(b)) / np.linalg.norm(cp_reconstruct(b))
    assert err <= 1e-3


def test_fit_trajectory_monotone_and_normalized():
    rng = np.random.default_rng(9)
    for s in range(20):
        prob, _ = random_problem(rng, ndims=(2, 2), mdims=(3,), n=5, rank=2, scale=10.0)
        res = fit(prob, FitConfig(rank=2, restarts=1, seed=s, outer_max_sweeps=40))
        t = np.array(res.loglik_trajectory)
        assert np.all(np.diff(t) >= -1e-8 * np.abs(t[:-1]))
        assert res.coefficient.is_normalized()


def test_fit_deterministic():
    rng = np.random.default_rng(10)
    prob, _ = random_problem(rng)
    cfg = FitConfig(rank=2, restarts=3, seed=42, outer_max_sweeps=30)
    a, b = fit(prob, cfg), fit(prob, cfg)
    assert a.loglik_trajectory == b.loglik_trajectory
    np.testing.assert_array_equal(a.coefficient.weights, b.coefficient.weights)
    c = fit(prob, cfg, threads=3)
    assert c.restart_logliks == a.restart_logliks


def test_fit_selects_best_restart():
    rng = np.random.default_rng(11)
    prob, _ = random_problem(rng)
    res = fit(prob, FitConfig(rank=2, restarts=4, seed=0, outer_max_sweeps=20))
    assert res.loglik == max(res.restart_logliks)
    assert res.restart_index == int(np.argmax(res.restart_logliks))


def test_fit_refuses_all_zero():
    with pytest.raises(MleNotExistError):
        fit(PtotrProblem(np.zeros((3, 2)), np.ones((3, 1))), FitConfig(rank=1))


def test_fit_flags_zero_rows():
    y = np.array([[1.0, 0.0, 2.0], [3.0, 0.0, 1.0]])
    res = fit(PtotrProblem(y, np.ones((2, 1))), FitConfig(rank=1, restarts=1, outer_max_sweeps=20))
    assert res.dne_warnings == {1: [2]}


def test_fit_warns_large_rank():
    y = np.array([[1.0, 2.0], [3.0, 1.0]])
    with pytest.warns(UserWarning):
        fit(PtotrProblem(y, np.ones((2, 1))), FitConfig(rank=3, restarts=1, outer_max_sweeps=5))


def test_bic():
    assert bic(0.0, 0, 10) == 0.0
    assert bic(-10.0, 3, math.e ** 2) == pytest.approx(26.0)
    assert bic(-10.0, 4, 50) > bic(-10.0, 3, 50)


def test_parameter_count_anchors():
    icews_cov, icews_resp = (25, 25, 4, 3), (25, 25, 4)
    assert parameter_count(icews_cov, icews_resp, 1, "raw") == 111
    assert parameter_count(icews_cov, icews_resp, 30, "raw") == 30 * 111
    pet_cov, pet_resp = (256, 256), (240, 4)
    constrained = parameter_count(pet_cov, pet_resp, 84, "constrained")
    assert constrained == 63_168
    assert parameter_count(pet_cov, pet_resp, 0, "raw") == 0
    assert parameter_count(pet_cov, pet_resp, 0, "constrained") == 0
