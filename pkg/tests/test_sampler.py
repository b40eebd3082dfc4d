import numpy as np
import pytest
import torch

from rawdiff.condition import ConditionOutput
from rawdiff.diffusion import predict_x0
from rawdiff.net import DenoiserConfig, DenoiserUNet
from rawdiff.sampler import sample, sample_model, torch_denoiser
from rawdiff.schedule import make_schedule


def gaussian_oracle_denoiser(m, s, schedule):
    """Closed-form posterior-mean denoiser for a scalar Gaussian target
    x0 ~ N(m, s^2): eps*(x_t, t) = (x_t - sqrt(a)*E[x0|x_t]) / sqrt(1-a) with
    E[x0|x_t] = m + sqrt(a)*s^2 / (a*s^2 + 1 - a) * (x_t - sqrt(a)*m)."""

    def fn(x_t, cond, tmc, t):
        a = float(schedule.alpha[t])
        post_mean = m + (np.sqrt(a) * s**2 / (a * s**2 + 1.0 - a)) * (x_t - np.sqrt(a) * m)
        return (x_t - np.sqrt(a) * post_mean) / np.sqrt(1.0 - a)

    return fn


@pytest.fixture
def sched():
    return make_schedule(T=12)


def zero_denoiser(x_t, cond, tmc, t):
    return np.zeros_like(x_t)


def test_deterministic_rerun_bitwise(sched):
    cond = ConditionOutput(image=np.random.default_rng(0).random((1, 1, 4, 4)))
    a, tr_a = sample(zero_denoiser, cond, sched, seed=5, capture_trace=True)
    b, tr_b = sample(zero_denoiser, cond, sched, seed=5, capture_trace=True)
    assert np.array_equal(a, b)
    for sa, sb in zip(tr_a.states, tr_b.states):
        assert np.array_equal(sa, sb)


def test_trace_lengths(sched):
    cond = ConditionOutput(image=np.zeros((1, 1, 4, 4)))
    _, trace = sample(zero_denoiser, cond, sched, seed=0, capture_trace=True)
    assert len(trace.states) == sched.T + 1
    assert len(trace.tmc_sequence) == sched.T
    _, trace_off = sample(zero_denoiser, cond, sched, seed=0, tmc_enabled=False,
                          capture_trace=True)
    assert len(trace_off.tmc_sequence) == 0


def test_trace_disabled_by_default(sched):
    cond = ConditionOutput(image=np.zeros((1, 1, 4, 4)))
    _, trace = sample(zero_denoiser, cond, sched, seed=0)
    assert trace is None


def test_tmc_recursion_matches_trace(sched):
    """Replaying the recorded states through predict_x0 reproduces the recorded
    TMC sequence: the recursion has no hidden state."""
    calls = []

    def recording_denoiser(x_t, cond, tmc, t):
        eps = 0.1 * x_t + 0.05 * cond + 0.02 * tmc
        calls.append((t, x_t.copy(), eps.copy(), tmc.copy()))
        return eps

    cond_img = np.random.default_rng(1).random((1, 1, 4, 4))
    cond = ConditionOutput(image=cond_img)
    _, trace = sample(recording_denoiser, cond, sched, seed=2, capture_trace=True)
    for i, (t, x_t, eps, _tmc) in enumerate(calls):
        assert t == sched.T - i
        np.testing.assert_array_equal(x_t, trace.states[i])
        np.testing.assert_array_equal(trace.tmc_sequence[i], predict_x0(x_t, eps, t, sched))
    # the TMC slot entering step T is the condition image; afterwards it is the
    # previous step's recorded estimate
    np.testing.assert_array_equal(calls[0][3], cond_img)
    for i in range(1, len(calls)):
        np.testing.assert_array_equal(calls[i][3], trace.tmc_sequence[i - 1])


def test_tmc_init_zeros_flag(sched):
    seen = {}

    def peek(x_t, cond, tmc, t):
        seen.setdefault("first_tmc", tmc.copy())
        return np.zeros_like(x_t)

    cond = ConditionOutput(image=np.full((1, 1, 2, 2), 0.7))
    sample(peek, cond, sched, seed=0, tmc_init="zeros")
    assert np.all(seen["first_tmc"] == 0.0)
    with pytest.raises(ValueError):
        sample(peek, cond, sched, seed=0, tmc_init="midway")


def test_condition_is_live(sched):
    """Two distinct conditions under one seed give different outputs."""

    def cond_denoiser(x_t, cond, tmc, t):
        return 0.2 * x_t + 0.3 * cond

    rng = np.random.default_rng(3)
    a, _ = sample(cond_denoiser, ConditionOutput(image=rng.random((1, 1, 4, 4))),
                  sched, seed=9)
    b, _ = sample(cond_denoiser, ConditionOutput(image=rng.random((1, 1, 4, 4))),
                  sched, seed=9)
    assert not np.array_equal(a, b)


def test_stochastic_sampling_distinct_seeds():
    sched_eta = make_schedule(T=12, eta=0.8)
    cond = ConditionOutput(image=np.zeros((1, 1, 4, 4)))
    a, _ = sample(zero_denoiser, cond, sched_eta, seed=1)
    b, _ = sample(zero_denoiser, cond, sched_eta, seed=2)
    assert not np.array_equal(a, b)


def test_gaussian_oracle_small():
    # scalar Gaussian target: sampled x0 statistics match the target moments.
    # alpha[T] must be near 0 (else the standard-normal initial draw is
    # mismatched with the forward marginal) and the per-step alpha decrements
    # small (the deterministic chain contracts variance at first order in them).
    sched = make_schedule(T=50, beta_min=0.01, beta_max=0.3)
    m, s = 0.4, 1.0
    oracle = gaussian_oracle_denoiser(m, s, sched)
    cond = ConditionOutput(image=np.zeros((2048, 1, 1, 1)))
    x0, _ = sample(oracle, cond, sched, seed=0, tmc_enabled=False)
    vals = x0.ravel()
    assert abs(vals.mean() - m) < 0.05 * s
    assert abs(vals.std() - s) < 0.05 * s


def test_sample_model_validations(sched):
    torch.manual_seed(0)
    cfg = DenoiserConfig(out_channels=1, base_channels=8, channel_multipliers=(1,),
                         time_embed_dim=8)
    model = DenoiserUNet(cfg, T=sched.T)
    cond = ConditionOutput(image=np.random.default_rng(0).random((1, 1, 8, 8)))
    x0, _ = sample_model(model, cond, sched, seed=0)
    assert x0.shape == (1, 1, 8, 8)
    with pytest.raises(ValueError):
        sample_model(model, cond, make_schedule(T=sched.T + 1), seed=0)
    with pytest.raises(ValueError):
        sample_model(model, ConditionOutput(image=np.zeros((3, 8, 8))), sched, seed=0)


def test_denoiser_shape_check(sched):
    def bad(x_t, cond, tmc, t):
        return np.zeros((1, 1, 2, 2))

    with pytest.raises(ValueError):
        sample(bad, ConditionOutput(image=np.zeros((1, 1, 4, 4))), sched, seed=0)
