import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rawdiff.schedule import (DiffusionSchedule, make_schedule, schedule_to_csv,
                              sigma_from_eta)


def test_single_step_schedule():
    s = make_schedule(T=1, beta_min=0.5, beta_max=0.5, eta=0.0)
    np.testing.assert_allclose(s.alpha, [1.0, 0.5], atol=1e-15)
    assert s.sigma[1] == 0.0


def test_two_step_product():
    s = make_schedule(T=2, beta_min=0.1, beta_max=0.3)
    # 0.9 * (1 - 0.3) = 0.63, from the cumulative product evaluated independently
    np.testing.assert_allclose(s.alpha, [1.0, 0.9, 0.63], atol=1e-15)


def test_default_t50_schedule():
    s = make_schedule(T=50, beta_min=1e-4, beta_max=0.02, eta=0.0)
    assert np.all(np.diff(s.alpha) < 0)
    assert s.alpha[50] > 0
    assert np.all(s.sigma == 0.0)


@pytest.mark.parametrize("bad", [
    dict(T=0, beta_min=0.1, beta_max=0.2),
    dict(T=-3, beta_min=0.1, beta_max=0.2),
    dict(T=5, beta_min=0.0, beta_max=0.2),
    dict(T=5, beta_min=0.3, beta_max=0.2),
    dict(T=5, beta_min=0.1, beta_max=1.0),
    dict(T=5, beta_min=0.1, beta_max=0.2, eta=-1.0),
])
def test_make_schedule_rejects(bad):
    with pytest.raises(ValueError):
        make_schedule(**bad)


def test_invariant_violations_rejected():
    with pytest.raises(ValueError):
        DiffusionSchedule(T=2, alpha=np.array([0.9, 0.8, 0.5]), sigma=np.zeros(3))
    with pytest.raises(ValueError):
        DiffusionSchedule(T=2, alpha=np.array([1.0, 0.8, 0.9]), sigma=np.zeros(3))
    with pytest.raises(ValueError):  # sigma too large for the residual radicand
        DiffusionSchedule(T=2, alpha=np.array([1.0, 0.9, 0.5]),
                          sigma=np.array([0.0, 0.0, 0.9]), eta=1.0)
    with pytest.raises(ValueError):  # eta = 0 forces sigma = 0
        DiffusionSchedule(T=1, alpha=np.array([1.0, 0.5]),
                          sigma=np.array([0.0, 0.1]), eta=0.0)


def test_sigma_from_eta_zero_is_exact_zero():
    s = make_schedule(T=7, beta_min=0.01, beta_max=0.1)
    assert np.all(sigma_from_eta(s.alpha, 0.0) == 0.0)


def test_sigma_from_eta_known_value():
    # high-precision evaluation of eta * sqrt(0.1/0.37) * sqrt(1 - 0.63/0.9)
    sigma = sigma_from_eta(np.array([1.0, 0.9, 0.63]), 1.0)
    assert sigma[1] == 0.0  # boundary term vanishes: 1 - alpha[0] = 0
    np.testing.assert_allclose(sigma[2], 0.2847473987, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(T=st.integers(1, 60),
       b0=st.floats(1e-5, 0.05),
       spread=st.floats(0.0, 0.2),
       eta=st.floats(0.0, 1.0))
def test_randomized_schedule_invariants(T, b0, spread, eta):
    s = make_schedule(T=T, beta_min=b0, beta_max=min(b0 + spread, 0.9), eta=eta)
    assert np.all(np.diff(s.alpha) < 0)
    radicand = 1.0 - s.alpha[:-1] - s.sigma[1:] ** 2
    assert np.all(radicand >= -1e-12)


@settings(max_examples=30, deadline=None)
@given(T=st.integers(1, 40), eta=st.floats(0.01, 0.5))
def test_sigma_homogeneous_in_eta(T, eta):
    s = make_schedule(T=T, beta_min=0.001, beta_max=0.05)
    one = sigma_from_eta(s.alpha, eta)
    two = sigma_from_eta(s.alpha, 2.0 * eta)
    np.testing.assert_allclose(two, 2.0 * one, rtol=1e-12)


def test_schedule_csv_dump(tmp_path):
    s = make_schedule(T=5, beta_min=0.01, beta_max=0.1, eta=0.5)
    path = tmp_path / "schedule.csv"
    schedule_to_csv(s, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,alpha,sigma"
    assert len(lines) == 7
    t, alpha, sigma = lines[3].split(",")
    assert float(alpha) == s.alpha[int(t)]
    assert float(sigma) == s.sigma[int(t)]
