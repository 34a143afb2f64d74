import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orthoboot import dgp
from orthoboot import rng as rngmod
from orthoboot.errors import InvalidArgumentError
from orthoboot.nuisance import (
    ClampSpec,
    ConstantPredictor,
    ForestConfig,
    NuisanceFit,
    ShiftedInputPredictor,
    clamp_propensity,
    fit_forest,
    fit_kernel,
    silverman_bandwidth,
)

SMALL = ForestConfig(num_trees=20)


def _plm(n, seed):
    return dgp.simulate_plm(dgp.PlmConfig(n), rngmod.stream(rngmod.derive_key(seed), rngmod.LANE_DATA))


def test_constant_target_gives_constant_forest(gen):
    X = gen.standard_normal((50, 3))
    f = fit_forest(X, np.full(50, 5.0), SMALL)
    assert isinstance(f, ConstantPredictor)
    assert np.all(f.predict(gen.standard_normal((7, 3))) == 5.0)


def test_single_root_leaf_predicts_sample_mean(gen):
    X = gen.standard_normal((40, 2))
    y = gen.standard_normal(40)
    f = fit_forest(X, y, ForestConfig(num_trees=1, subsample_exponent=1.0, min_leaf=40))
    assert np.allclose(f.predict(gen.standard_normal((5, 2))), y.mean(), rtol=0, atol=1e-14)


def test_forest_rejects_tiny_samples():
    with pytest.raises(InvalidArgumentError):
        fit_forest(np.zeros((1, 2)), np.zeros(1))


def test_forest_config_validation():
    for bad in ({"num_trees": 0}, {"subsample_exponent": 0.0}, {"subsample_exponent": 1.5},
                {"min_leaf": 0}, {"max_features": 0}):
        with pytest.raises(InvalidArgumentError):
            ForestConfig(**bad)


def test_subsample_size():
    cfg = ForestConfig()
    assert cfg.subsample_size(500) == int(np.floor(500 ** 0.49))
    assert ForestConfig(subsample_exponent=0.5).subsample_size(100) == 10
    assert 1 <= cfg.subsample_size(2) <= 2
    assert cfg.features_per_split(5) == 2
    assert ForestConfig(max_features="all").features_per_split(5) == 5


def test_forest_beats_mean_on_ky():
    train, test = _plm(500, 1), _plm(2000, 2)
    f = fit_forest(train.x, train.truth.ky0)
    rmse = np.sqrt(np.mean((f.predict(test.x) - test.truth.ky0) ** 2))
    base = np.sqrt(np.mean((train.truth.ky0.mean() - test.truth.ky0) ** 2))
    assert rmse < base


def test_forest_refit_is_bit_identical():
    d = _plm(300, 3)
    a = fit_forest(d.x, d.y, ForestConfig(num_trees=30, seed=9)).predict(d.x)
    b = fit_forest(d.x, d.y, ForestConfig(num_trees=30, seed=9)).predict(d.x)
    c = fit_forest(d.x, d.y, ForestConfig(num_trees=30, seed=10)).predict(d.x)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 60), q=st.integers(1, 4), seed=st.integers(0, 10**6))
def test_forest_prediction_within_target_range(n, q, seed):
    g = rngmod.stream(rngmod.derive_key(seed), rngmod.LANE_MISC)
    X = g.standard_normal((n, q))
    y = g.standard_normal(n)
    f = fit_forest(X, y, ForestConfig(num_trees=5, min_leaf=1, seed=seed))
    p = f.predict(g.standard_normal((30, q)) * 3)
    assert np.all(np.isfinite(p))
    assert np.all(p >= y.min() - 1e-12) and np.all(p <= y.max() + 1e-12)


def test_propensity_error_shrinks_with_n():
    mse = []
    for n in (250, 1000, 4000):
        errs = []
        for s in range(20):
            d = _plm(n, 100 + s)
            e = fit_forest(d.x, d.z, ForestConfig(num_trees=50, seed=s))
            test = _plm(2000, 999)
            errs.append(np.mean((e.predict(test.x) - test.truth.e0) ** 2))
        mse.append(np.mean(errs))
    assert mse[0] > mse[1] > mse[2]


# kernel

def test_kernel_constant_target(gen):
    x = gen.standard_normal(30)
    k = fit_kernel(x, np.full(30, 2.0))
    assert np.allclose(k.predict(np.linspace(-5, 5, 9)[:, None]), 2.0, rtol=0, atol=1e-14)


def test_kernel_huge_bandwidth_gives_mean(gen):
    x = gen.standard_normal(40)
    y = gen.standard_normal(40)
    k = fit_kernel(x, y, bandwidth=1e6)
    assert np.allclose(k.predict(np.array([[-1.0], [0.0], [2.0]])), y.mean(), rtol=0, atol=1e-6)


def test_kernel_recovers_sine(gen):
    x = gen.standard_normal(1000)
    y = np.sin(x) + gen.standard_normal(1000)
    grid = np.linspace(-2, 2, 81)
    k = fit_kernel(x, y)
    assert np.mean((k.predict(grid[:, None]) - np.sin(grid)) ** 2) < 0.02


def test_kernel_zero_mass_falls_back_to_nearest():
    k = fit_kernel(np.array([0.0, 1.0]), np.array([3.0, 7.0]), bandwidth=1e-3)
    assert k.predict(np.array([[50.0], [-50.0]])).tolist() == [7.0, 3.0]


def test_kernel_bad_bandwidth():
    with pytest.raises(InvalidArgumentError):
        fit_kernel(np.arange(5.0), np.arange(5.0), bandwidth=0.0)
    with pytest.raises(InvalidArgumentError):
        fit_kernel(np.arange(5.0), np.arange(5.0), bandwidth=-1.0)
    with pytest.raises(InvalidArgumentError):
        fit_kernel(np.zeros((5, 2)), np.arange(5.0))


def test_silverman_rule():
    x = np.arange(10.0)
    assert silverman_bandwidth(x) == pytest.approx(1.06 * np.std(x, ddof=1) * 10 ** -0.2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 50))
def test_kernel_prediction_within_target_range(seed, n):
    g = rngmod.stream(rngmod.derive_key(seed), rngmod.LANE_MISC)
    x, y = g.standard_normal(n), g.standard_normal(n)
    if np.ptp(x) == 0:
        return
    p = fit_kernel(x, y).predict(g.standard_normal((20, 1)) * 4)
    assert np.all(p >= y.min() - 1e-12) and np.all(p <= y.max() + 1e-12)


# clamping and bundles

@pytest.mark.parametrize("raw, expected", [(0.0, 0.01), (0.5, 0.5), (1.2, 0.99)])
def test_clamp(raw, expected):
    p = clamp_propensity(ConstantPredictor(raw), ClampSpec(0.01))
    assert p.predict(np.zeros((3, 2))).tolist() == [expected] * 3


@pytest.mark.parametrize("eps", [0.0, 0.5, -0.1, 0.7])
def test_clamp_spec_range(eps):
    with pytest.raises(InvalidArgumentError):
        ClampSpec(eps)


def test_shifted_input_predictor_reads_joint_fit():
    class Echo:
        def predict(self, X):
            return X[:, 0] * 10 + X[:, 1]

    p = ShiftedInputPredictor(Echo(), 1.0)
    assert p.predict(np.array([[2.0], [3.0]])).tolist() == [12.0, 13.0]


def test_nuisance_fit_require_and_blend():
    h0 = NuisanceFit({"k_y": ConstantPredictor(1.0), "e": ConstantPredictor(0.4)})
    h1 = NuisanceFit({"k_y": ConstantPredictor(3.0), "e": ConstantPredictor(0.6)})
    with pytest.raises(InvalidArgumentError):
        h0.require(["mu1"])
    mid = h0.blend(h1, 0.25).predict(np.zeros((2, 1)))
    assert mid["k_y"].tolist() == [1.5, 1.5]
    assert np.allclose(mid["e"], 0.45)
