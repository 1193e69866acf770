import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qnet import noise
from qnet.errors import InvalidArgument
from qnet.noise import RTNParams, RTNTrajectory


@pytest.fixture(scope="module")
def ensemble():
    rng = np.random.default_rng(2024)
    return [noise.sample_trajectory(1.0, math.pi, rng) for _ in range(10_000)]


def test_sampling_is_deterministic():
    a = noise.sample_trajectory(1.0, math.pi, np.random.default_rng(3))
    b = noise.sample_trajectory(1.0, math.pi, np.random.default_rng(3))
    assert a == b


def test_slow_limit_rarely_flips():
    rng = np.random.default_rng(1)
    flips = sum(noise.sample_trajectory(1e-6, math.pi, rng).n_flips > 0 for _ in range(10_000))
    assert flips / 10_000 < 1e-4 or flips <= 1


def test_mean_flip_count(ensemble):
    # exp(-nu lag) correlation means flips at rate nu / 2: Poisson mean nu t_up / 2
    assert np.mean([t.n_flips for t in ensemble]) == pytest.approx(math.pi / 2, abs=0.1)


def test_value_at_examples():
    assert noise.value_at(RTNTrajectory(1, (), 2.0), 1.0) == 1
    assert noise.value_at(RTNTrajectory(1, (0.5,), 2.0), 0.6) == -1
    assert noise.value_at(RTNTrajectory(-1, (0.5, 0.7), 2.0), 1.0) == -1


def test_value_at_right_continuous():
    tr = RTNTrajectory(1, (0.5,), 1.0)
    assert noise.value_at(tr, 0.5) == -1
    assert noise.value_at(tr, np.nextafter(0.5, 0)) == 1


def test_value_at_range():
    with pytest.raises(InvalidArgument):
        noise.value_at(RTNTrajectory(1, (), 1.0), 1.5)


@given(seed=st.integers(0, 2**32 - 1), rate=st.floats(0.05, 20))
def test_trajectory_invariants(seed, rate):
    tr = noise.sample_trajectory(rate, 2.0, np.random.default_rng(seed))
    ft = np.array(tr.flip_times)
    assert np.all(np.diff(ft) > 0)
    assert np.all((ft > 0) & (ft < 2.0))
    grid = np.linspace(0, 2.0, 57)
    assert np.array_equal(noise.values_on_grid(tr, grid), [noise.value_at(tr, t) for t in grid])


def test_trajectory_validation():
    with pytest.raises(InvalidArgument):
        RTNTrajectory(0, (), 1.0)
    with pytest.raises(InvalidArgument):
        RTNTrajectory(1, (0.5, 0.4), 1.0)
    with pytest.raises(InvalidArgument):
        RTNTrajectory(1, (1.0,), 1.0)
    with pytest.raises(InvalidArgument):
        RTNParams(amplitude=-1)
    with pytest.raises(InvalidArgument):
        RTNParams(rate=0)


def test_json_round_trip():
    tr = noise.sample_trajectory(1.0, math.pi, np.random.default_rng(5))
    assert RTNTrajectory.from_json(tr.to_json()) == tr


def test_site_energy_examples():
    tr = RTNTrajectory(1, (), 1.0)
    assert noise.site_energy(0, 0.3, tr, 10.0) == 10.0
    assert noise.site_energy(1, 0.3, tr, 10.0) == -10.0
    for n in range(4):
        assert noise.site_energy(n, 0.3, tr, 0.0, eps0=0.7) == 0.7


def test_zero_mean(ensemble):
    grid = np.linspace(0, math.pi, 101)
    vals = np.array([noise.values_on_grid(t, grid) for t in ensemble])
    assert np.abs(vals.mean(axis=0)).max() < 0.05


def test_stationary_sign_distribution(ensemble):
    # binomial standard error for 10^4 fair draws is 0.005; allow 4 of them
    for t in (0.0, 1.0, 3.0):
        frac = np.mean([noise.value_at(tr, t) == 1 for tr in ensemble])
        assert abs(frac - 0.5) < 0.02


def test_autocorrelation_examples(ensemble):
    assert noise.estimate_autocorrelation(ensemble[:50], 0.0) == 1.0
    assert noise.estimate_autocorrelation(ensemble, 1.0) == pytest.approx(math.exp(-1), abs=0.03)
    assert noise.estimate_autocorrelation(ensemble, 3.0) == pytest.approx(math.exp(-3), abs=0.03)


def test_autocorrelation_long_lag():
    rng = np.random.default_rng(8)
    trajs = [noise.sample_trajectory(1.0, 5.0, rng) for _ in range(10_000)]
    assert noise.estimate_autocorrelation(trajs, 4.0) == pytest.approx(math.exp(-4), abs=0.03)


@pytest.mark.parametrize("rate", [0.1, 1.0, 10.0])
def test_autocorrelation_decay(rate):
    # compare alpha(0) alpha(lag) against exp(-rate lag) within 3 standard errors
    rng = np.random.default_rng(int(rate * 100))
    trajs = [noise.sample_trajectory(rate, 2.5, rng) for _ in range(10_000)]
    for lag in (0.5, 1.0, 2.0):
        prod = np.array([noise.value_at(t, 0.0) * noise.value_at(t, lag) for t in trajs], dtype=float)
        se = prod.std(ddof=1) / math.sqrt(prod.size)
        assert abs(prod.mean() - math.exp(-rate * lag)) < 3 * se + 1e-12


def test_autocorrelation_validation(ensemble):
    with pytest.raises(InvalidArgument):
        noise.estimate_autocorrelation(ensemble[:1], 0.5)
    with pytest.raises(InvalidArgument):
        noise.estimate_autocorrelation(ensemble[:5], 5.0)


def test_site_signs_alternate():
    assert noise.site_signs(5).tolist() == [1, -1, 1, -1, 1]
