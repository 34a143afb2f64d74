import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orthoboot import dgp
from orthoboot import rng as rngmod
from orthoboot.errors import DegenerateError, InvalidArgumentError
from orthoboot.harness import ExperimentConfig, fit_nuisance, simulate
from orthoboot.posterior import (
    PosteriorSample,
    read_draws,
    sample_posterior,
    sample_posterior_multi,
    summarize,
    write_draws,
)
from orthoboot.scores import AipwScore, PartialledOutScore, get_score


@pytest.fixture(scope="module")
def plm_case():
    cfg = ExperimentConfig(n=300, forest=ExperimentConfig().forest.__class__(num_trees=50))
    data = simulate(cfg, 0)
    return data, fit_nuisance(cfg, data, 0)


def test_equal_weights_reproduce_frequentist_root(plm_case):
    data, h = plm_case
    s = sample_posterior(data, PartialledOutScore(), h, B=1, scheme="equal")
    assert s.draws.tolist() == [s.theta_hat_n]


def test_sample_shape_and_determinism(plm_case):
    data, h = plm_case
    a = sample_posterior(data, PartialledOutScore(), h, B=200, seed=4)
    b = sample_posterior(data, PartialledOutScore(), h, B=200, seed=4)
    c = sample_posterior(data, PartialledOutScore(), h, B=200, seed=5)
    assert a.B == 200 and a.rejected_draws == 0
    assert np.array_equal(a.draws, b.draws)
    assert not np.array_equal(a.draws, c.draws)


@pytest.mark.parametrize("workers", [2, 3, 8])
def test_threaded_draws_identical(plm_case, workers):
    data, h = plm_case
    a = sample_posterior(data, PartialledOutScore(), h, B=101, seed=1)
    b = sample_posterior(data, PartialledOutScore(), h, B=101, seed=1, workers=workers)
    assert np.array_equal(a.draws, b.draws)


def test_prefix_stability(plm_case):
    # draw j depends only on (seed, j)
    data, h = plm_case
    a = sample_posterior(data, PartialledOutScore(), h, B=50, seed=2)
    b = sample_posterior(data, PartialledOutScore(), h, B=20, seed=2)
    assert np.array_equal(a.draws[:20], b.draws)


def test_aipw_conditional_mean_is_theta_hat():
    cfg = ExperimentConfig(score="aipw", n=300)
    data = simulate(cfg, 3)
    h = fit_nuisance(cfg, data, 3)
    s = sample_posterior(data, AipwScore(), h, B=10_000, seed=0)
    se = s.draws.std(ddof=1) / np.sqrt(s.B)
    assert abs(s.draws.mean() - s.theta_hat_n) <= 4 * se


def test_multinomial_scheme_runs(plm_case):
    data, h = plm_case
    s = sample_posterior(data, PartialledOutScore(), h, B=50, scheme="multinomial", seed=0)
    assert np.all(np.isfinite(s.draws))


def test_too_many_degenerate_draws_abort():
    # two observations, only one with a nonzero slope: multinomial weights often miss it
    data = dgp.Dataset(np.array([1.0, 2.0]), np.array([0.5, 1.0]), np.zeros((2, 1)))
    h = {"k_y": np.zeros(2), "e": np.array([0.5, 0.0])}
    with pytest.raises(DegenerateError):
        sample_posterior(data, PartialledOutScore(), h, B=200, scheme="multinomial", seed=0)


def test_b_must_be_positive(plm_case):
    data, h = plm_case
    with pytest.raises(InvalidArgumentError):
        sample_posterior(data, PartialledOutScore(), h, B=0)


def test_multi_fit_collation(plm_case):
    data, h = plm_case
    s = sample_posterior_multi(data, PartialledOutScore(), [h, h], [30, 20], seed=3)
    assert s.B == 50
    with pytest.raises(InvalidArgumentError):
        sample_posterior_multi(data, PartialledOutScore(), [], 10)


def test_summary_of_constant_draws():
    s = summarize(PosteriorSample(np.full(4, 3.0), 3.0, 1.0, 100))
    assert (s.post_mean, s.post_var, s.cred_lo, s.cred_hi) == (3.0, 0.0, 3.0, 3.0)
    assert s.covers_true is None


def test_summary_quantile_rule():
    g = rngmod.stream(rngmod.derive_key(0), rngmod.LANE_MISC)
    d = g.permutation(np.arange(1.0, 101.0))
    s = summarize(PosteriorSample(d, 50.5, 4.0, 100), 0.95, theta_true=0.0)
    # linear rule: position p (B - 1) in the sorted sample
    assert s.cred_lo == pytest.approx(1 + 0.025 * 99)
    assert s.cred_hi == pytest.approx(1 + 0.975 * 99)
    assert s.covers_true is False
    assert s.freq_lo == pytest.approx(50.5 - 1.959963984540054 * 0.2)
    assert s.post_var == pytest.approx(np.var(np.arange(1, 101), ddof=1))


def test_summary_errors():
    with pytest.raises(InvalidArgumentError):
        summarize(PosteriorSample(np.array([1.0]), 1.0, 1.0, 10))
    with pytest.raises(InvalidArgumentError):
        summarize(PosteriorSample(np.array([1.0, 2.0]), 1.0, 1.0, 10), level=1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=200), st.floats(0.5, 0.99))
def test_summary_invariants(draws, level):
    s = summarize(PosteriorSample(np.array(draws), 0.0, 1.0, 10), level)
    assert s.post_var >= 0
    assert s.cred_lo <= s.cred_hi
    assert min(draws) <= s.cred_lo and s.cred_hi <= max(draws)


def test_draws_round_trip(tmp_path, plm_case):
    data, h = plm_case
    s = sample_posterior(data, PartialledOutScore(), h, B=25, seed=8)
    p = write_draws(s, tmp_path / "draws.txt")
    assert np.array_equal(read_draws(p), s.draws)
    assert len(p.read_text().splitlines()) == 25


def test_posterior_variance_tracks_sandwich():
    cfg = ExperimentConfig(n=1000)
    ratios = []
    for r in range(5):
        data = simulate(cfg, r)
        s = sample_posterior(data, get_score("partialled_out"), fit_nuisance(cfg, data, r), B=1000, seed=r)
        ratios.append(data.n * s.draws.var(ddof=1) / s.sandwich)
    assert 0.8 <= np.mean(ratios) <= 1.25
