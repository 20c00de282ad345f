import numpy as np
import pytest

from ptotr.applications.ar import ICEWS_SPEC, ArSpec, ar_covariate, ar_problem, build_ar_covariates
from ptotr.tensor import partial_contract


def random_history(rng, dims, T):
    return [rng.poisson(3.0, dims).astype(float) for _ in range(T)]


def test_slab_layout_three_slabs():
    rng = np.random.default_rng(0)
    hist = random_history(rng, (25, 25, 4), 9)
    xs, ys, times = build_ar_covariates(hist, ICEWS_SPEC)
    assert xs.shape == (4, 25, 25, 4, 3)
    assert times[0] == 6 and times[-1] == 9
    np.testing.assert_array_equal(ys[0], hist[5])
    np.testing.assert_array_equal(xs[0][..., 0], 1.0)
    np.testing.assert_array_equal(xs[0][..., 1], hist[4])
    np.testing.assert_allclose(xs[0][..., 2], sum(hist[f] for f in range(4)) / 4)


def test_lag_block_average():
    hist = [np.full((2, 2), v) for v in (4.0, 2.0, 7.0)]
    x = ar_covariate(hist, 4, ArSpec(lag_blocks=((2, 3),), include_intercept=False))
    np.testing.assert_array_equal(x[..., 0], 3.0)


def test_trend_mode_f0():
    rng = np.random.default_rng(1)
    hist = random_history(rng, (2, 2, 2), 3)
    x = ar_covariate(hist, 3, ArSpec(trend_degree=0))
    assert x.shape == (3, 3, 3)
    assert x[2, 2, 2] == 1.0
    np.testing.assert_array_equal(x[:2, :2, :2], hist[1])
    assert np.count_nonzero(x) == np.count_nonzero(hist[1]) + 1


def test_trend_mode_powers():
    hist = [np.ones((2, 3))] * 4
    x = ar_covariate(hist, 4, ArSpec(trend_degree=2))
    assert x.shape == (5, 6)
    assert [x[2 + f, 3 + f] for f in range(3)] == [1.0, 4.0, 16.0]
    assert x.sum() == 6 + 21


def test_history_too_short():
    with pytest.raises(ValueError):
        build_ar_covariates([np.ones(2)] * 5, ICEWS_SPEC)
    with pytest.raises(ValueError):
        ArSpec(lag_blocks=((0,),))


def test_model_identity_slab_decomposition():
    rng = np.random.default_rng(2)
    spec = ArSpec(lag_blocks=((1,), (2, 3)), include_intercept=True)
    hist = random_history(rng, (3, 2), 6)
    xs, _, _ = build_ar_covariates(hist, spec)
    b = rng.uniform(0.1, 1.0, (3, 2, 3, 3, 2))
    for x in xs:
        whole = partial_contract(x, b)
        parts = sum(partial_contract(x[..., s], b[:, :, s]) for s in range(3))
        np.testing.assert_allclose(whole, parts, rtol=1e-12)


def test_ar_problem_shapes():
    rng = np.random.default_rng(3)
    prob = ar_problem(random_history(rng, (2, 2), 8), ArSpec(lag_blocks=((1,), (2,))))
    assert prob.n_obs == 6
    assert prob.covariate_dims == (2, 2, 3)
    assert prob.response_dims == (2, 2)
