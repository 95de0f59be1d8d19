import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamsample.variates import (
    InvalidThresholdError,
    InvalidWeightError,
    Rng,
    constrained_key,
    exponential_key,
    exponential_keys,
    uniform_constrained_key,
    uniform_skip,
    weighted_skip,
)


def injected(*values):
    vals = iter(values)
    return Rng(0, source=lambda: next(vals))


def test_key_identities_with_injected_uniforms():
    # u = 1 gives key 0 regardless of weight
    assert exponential_key(injected(1.0), 3.7) == 0.0
    # -ln(e^-1) = 1, scaled by 1/w
    assert exponential_key(injected(math.exp(-1)), 1.0) == pytest.approx(1.0)
    assert exponential_key(injected(math.exp(-1)), 2.0) == pytest.approx(0.5)


def test_skip_identities_with_injected_uniforms():
    assert weighted_skip(injected(math.exp(-2)), 1.0) == pytest.approx(2.0)
    assert weighted_skip(injected(math.exp(-2)), 2.0) == pytest.approx(1.0)
    assert weighted_skip(injected(1.0), 5.0) == 0.0


def test_constrained_key_identities():
    # u = 1 collapses the truncated draw to 0
    assert constrained_key(injected(1.0), 2.0, 1.5) == 0.0
    # w=1, T=ln 2 makes x = 1/2; u = 1/2 lands at -ln(3/4)
    got = constrained_key(injected(0.5), 1.0, math.log(2.0))
    assert got == pytest.approx(-math.log(0.75))


def test_uniform_skip_identities():
    assert uniform_skip(injected(0.2), 0.5) == 2  # floor(ln .2 / ln .5)
    assert uniform_skip(injected(0.6), 0.5) == 0
    assert uniform_skip(injected(0.25), 0.5) == 2
    # threshold >= 1 accepts every item without drawing
    rng = Rng(3)
    before = Rng(3).uniform()
    assert uniform_skip(rng, 1.0) == 0
    assert rng.uniform() == before


def test_uniform_constrained_key_is_scaled_uniform():
    assert uniform_constrained_key(injected(0.25), 0.5) == 0.125
    assert uniform_constrained_key(injected(1.0), 0.7) == pytest.approx(0.7)


def test_rng_determinism_and_stream_separation():
    a = [Rng(11, 4).uniform() for _ in range(5)]
    b = [Rng(11, 4).uniform() for _ in range(5)]
    assert a == b
    assert [Rng(11, 5).uniform() for _ in range(5)] != a
    assert [Rng(12, 4).uniform() for _ in range(5)] != a
    # tuple stream ids work and differ from the scalar form's neighbours
    assert Rng(11, (4,)).uniform() == Rng(11, 4).uniform()
    assert Rng(11, (4, 0)).uniform() != Rng(11, 4).uniform()


def test_vectorised_draws_match_scalar_sequence():
    rng = Rng(7, 1)
    vec = rng.uniforms(64)
    ref = Rng(7, 1)
    assert [ref.uniform() for _ in range(64)] == vec.tolist()

    rng = Rng(7, 2)
    keys = exponential_keys(rng, np.array([0.5, 1.0, 2.0, 8.0]))
    ref = Rng(7, 2)
    expect = [exponential_key(ref, w) for w in (0.5, 1.0, 2.0, 8.0)]
    assert keys.tolist() == pytest.approx(expect)


def test_draws_live_on_unit_interval():
    rng = Rng(42)
    u = rng.uniforms(10000)
    assert np.all(u > 0.0) and np.all(u <= 1.0)


@pytest.mark.parametrize("bad", [0.0, -1.0, float("inf"), float("nan")])
def test_invalid_weights_rejected(bad):
    with pytest.raises(InvalidWeightError):
        exponential_key(Rng(0), bad)
    with pytest.raises(InvalidWeightError):
        constrained_key(Rng(0), bad, 1.0)


def test_invalid_thresholds_rejected():
    for bad in (0.0, -2.0, float("nan")):
        with pytest.raises(InvalidThresholdError):
            weighted_skip(Rng(0), bad)
        with pytest.raises(InvalidThresholdError):
            uniform_skip(Rng(0), bad)
    with pytest.raises(InvalidThresholdError):
        uniform_constrained_key(Rng(0), 1.5)


@given(
    w=st.floats(0.01, 100.0),
    t=st.floats(0.01, 50.0),
    seed=st.integers(0, 2**32 - 1),
)
@settings(max_examples=200, deadline=None)
def test_constrained_key_stays_below_threshold(w, t, seed):
    key = constrained_key(Rng(seed), w, t)
    assert 0.0 <= key < t


@given(t=st.floats(0.01, 0.99), seed=st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_uniform_draws_in_domain(t, seed):
    assert uniform_skip(Rng(seed), t) >= 0
    assert 0.0 < uniform_constrained_key(Rng(seed), t) <= t


def test_exponential_key_monte_carlo_mean():
    # mean of Exponential(w) is 1/w; 3 sigma with n draws
    rng = Rng(1001)
    for w in (0.25, 1.0, 6.0):
        n = 40000
        keys = exponential_keys(rng, np.full(n, w))
        assert abs(keys.mean() - 1 / w) < 3 / (w * math.sqrt(n))


def test_weighted_skip_monte_carlo_mean():
    rng = Rng(1002)
    n = 40000
    draws = np.array([weighted_skip(rng, 2.0) for _ in range(n)])
    assert abs(draws.mean() - 0.5) < 3 * 0.5 / math.sqrt(n)


def test_uniform_skip_is_geometric():
    # gap count has mean (1-T)/T and matches the closed-form pmf
    rng = Rng(1003)
    t = 0.4
    n = 60000
    draws = np.array([uniform_skip(rng, t) for _ in range(n)])
    mean = (1 - t) / t
    sd = math.sqrt((1 - t) / t**2)
    assert abs(draws.mean() - mean) < 3 * sd / math.sqrt(n)
    p0 = np.mean(draws == 0)
    assert abs(p0 - t) < 3 * math.sqrt(t * (1 - t) / n)


def test_constrained_key_matches_truncated_cdf():
    # KS distance between draws and the truncated-exponential CDF
    rng = Rng(1004)
    w, t = 1.5, 0.9
    n = 20000
    keys = np.sort([constrained_key(rng, w, t) for _ in range(n)])
    denom = 1.0 - math.exp(-w * t)
    cdf = (1.0 - np.exp(-w * keys)) / denom
    grid = np.arange(1, n + 1) / n
    d = max(np.max(grid - cdf), np.max(cdf - (grid - 1.0 / n)))
    assert d < 1.63 / math.sqrt(n)  # 1% critical value


def test_insertion_probability_closed_form():
    # P(exponential_key(w) < T) = 1 - exp(-wT)
    rng = Rng(1005)
    w, t = 0.8, 1.2
    n = 50000
    keys = exponential_keys(rng, np.full(n, w))
    p = 1.0 - math.exp(-w * t)
    assert abs(np.mean(keys < t) - p) < 3 * math.sqrt(p * (1 - p) / n)
