import numpy as np
import pytest
from scipy import stats

import tensor_core as tc
from config import DiffusionConfig
from diffusion_engine import (
    Denoiser,
    DiffusionSchedule,
    diffpure,
    forward_diffuse,
    img2img,
    l_dm,
    sample,
    strength_to_step,
    train_denoiser,
)
from errors import ConfigError, DimensionError, PreconditionError, StepError, TrainingDivergedError


# ---------------------------------------------------------------------------
# Schedule
# ---------------------------------------------------------------------------

def test_linear_schedule_endpoints(sched):
    assert sched.T == 100
    assert sched.beta[0] == pytest.approx(1e-4)
    assert sched.beta[-1] == pytest.approx(0.02)
    assert np.all(np.diff(sched.alpha_bar) < 0)
    np.testing.assert_allclose(sched.alpha_bar, np.cumprod(1.0 - sched.beta))


@pytest.mark.parametrize("beta", [[0.0, 0.1], [0.1, 1.0], [0.2, 0.1], []])
def test_invalid_schedule_rejected(beta):
    with pytest.raises(ConfigError):
        DiffusionSchedule(np.array(beta))


def test_schedule_round_trips_through_dict(sched):
    again = DiffusionSchedule.from_dict(sched.to_dict())
    np.testing.assert_array_equal(again.beta, sched.beta)


@pytest.mark.parametrize("t", [0, 101])
def test_step_outside_range(sched, t):
    with pytest.raises(StepError):
        forward_diffuse(np.zeros(2), t, np.zeros(2), sched)


# ---------------------------------------------------------------------------
# Forward process and loss
# ---------------------------------------------------------------------------

def test_forward_diffuse_is_affine(sched):
    x0 = tc.Tensor([[1.0, -2.0]])
    eps = tc.Tensor([[0.5, 0.5]])
    ab = sched.alpha_bar[9]
    expected = np.sqrt(ab) * x0.data + np.sqrt(1 - ab) * eps.data
    np.testing.assert_allclose(forward_diffuse(x0, 10, eps, sched).data, expected, rtol=1e-5)


def test_forward_diffuse_noise_shape_mismatch(sched):
    with pytest.raises(DimensionError):
        forward_diffuse(np.zeros((2, 3)), 5, np.zeros((2, 2)), sched)


def test_forward_moments_match_closed_form(sched):
    n = 20_000
    x0 = np.tile(np.array([[0.5, -1.0]], dtype=np.float32), (n, 1))
    stream = tc.RngStream(21)
    for t in np.linspace(1, 100, 10).astype(int):
        x_t = forward_diffuse(x0, t, stream.gaussian((n, 2)), sched).data.astype(np.float64)
        ab = sched.alpha_bar[t - 1]
        sd = np.sqrt(1.0 - ab)
        np.testing.assert_array_less(np.abs(x_t.mean(axis=0) - np.sqrt(ab) * x0[0]), 4 * sd / np.sqrt(n))
        var_sd = (1.0 - ab) * np.sqrt(2.0 / (n - 1))
        np.testing.assert_array_less(np.abs(x_t.var(axis=0, ddof=1) - (1.0 - ab)), 4 * var_sd)


def test_l_dm_of_perfect_predictor_is_zero(sched):
    eps = tc.Tensor([[0.3, -0.2], [1.0, 0.0]])

    def oracle(x_t, t, c):
        return eps

    assert l_dm(oracle, np.zeros((2, 2)), None, np.array([5, 50]), eps, sched).item() == 0.0


def test_l_dm_batches_single_example(sched):
    eps = np.array([1.0, 2.0], dtype=np.float32)

    def zero(x_t, t, c):
        return tc.zeros(x_t.shape)

    assert l_dm(zero, np.zeros(2), None, 3, eps, sched).item() == pytest.approx(5.0)


# ---------------------------------------------------------------------------
# Denoiser
# ---------------------------------------------------------------------------

def test_denoiser_shapes_and_conditions():
    model = Denoiser.create(tc.RngStream(0), 3, 4, hidden=8, depth=2, time_dim=4, cond_dim=5)
    x = tc.Tensor(np.zeros((6, 3)))
    assert model(x, 10).shape == (6, 3)
    assert model(x, np.arange(1, 7), model.class_condition([0, 1, 2, 3, 0, 1])).shape == (6, 3)
    np.testing.assert_array_equal(model.null_condition().data, np.zeros(5))
    with pytest.raises(DimensionError):
        model(tc.Tensor(np.zeros((6, 2))), 10)
    with pytest.raises(DimensionError):
        model(x, 10, tc.zeros((4,)))


def test_denoiser_state_round_trip():
    model = Denoiser.create(tc.RngStream(1), 2, 3, hidden=8, depth=1)
    again = Denoiser.from_state(*model.to_state())
    x = tc.Tensor(np.ones((2, 2)))
    np.testing.assert_array_equal(model(x, 5).data, again(x, 5).data)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _tiny_cfg(**kw):
    return DiffusionConfig(**dict(dict(space="pixel", hidden=8, depth=1, steps=5, batch_size=8), **kw))


def test_training_reduces_loss(gmm_training):
    curve = gmm_training.loss_curve
    assert len(curve) == 400
    assert np.mean(curve[-40:]) < np.mean(curve[:40])


def test_training_is_deterministic(gmm_data, sched):
    cfg = _tiny_cfg()
    results = []
    for _ in range(2):
        rng = tc.RngStream(5)
        model = Denoiser.from_config(rng, cfg, 2, 3)
        results.append(train_denoiser(model, gmm_data.data, gmm_data.labels, sched, cfg, rng))
    assert results[0].loss_curve == results[1].loss_curve
    for name, value in results[0].model.params.items():
        np.testing.assert_array_equal(value.data, results[1].model.params[name].data)


def test_zero_learning_rate_keeps_loss_flat(gmm_data, sched):
    cfg = _tiny_cfg(steps=200, lr=0.0)
    model = Denoiser.from_config(tc.RngStream(2), cfg, 2, 3)
    result = train_denoiser(model, gmm_data.data, gmm_data.labels, sched, cfg, tc.RngStream(2))
    for name, value in model.params.items():
        np.testing.assert_array_equal(result.model.params[name].data, value.data)
    curve = np.asarray(result.loss_curve)
    assert stats.ttest_rel(curve[:100], curve[100:]).pvalue > 0.001


def test_training_preconditions(sched):
    cfg = _tiny_cfg()
    model = Denoiser.create(tc.RngStream(0), 2, 2, hidden=8, depth=1)
    with pytest.raises(PreconditionError):
        train_denoiser(model, np.zeros((0, 2)), np.zeros(0), sched, cfg, tc.RngStream(0))
    with pytest.raises(PreconditionError):
        train_denoiser(model, np.zeros((4, 2)), np.array([0, 1, 2, 0]), sched, cfg, tc.RngStream(0))


def test_training_divergence_reports_step(sched):
    cfg = _tiny_cfg()
    model = Denoiser.create(tc.RngStream(0), 2, 1, hidden=8, depth=1)
    data = np.full((4, 2), np.nan, dtype=np.float32)
    with pytest.raises(TrainingDivergedError) as info:
        train_denoiser(model, data, np.zeros(4, dtype=int), sched, cfg, tc.RngStream(0))
    assert info.value.step == 0


def test_unconverged_training_is_flagged(gmm_data, sched):
    cfg = _tiny_cfg(steps=2, loss_threshold=1e-6)
    model = Denoiser.from_config(tc.RngStream(0), cfg, 2, 3)
    result = train_denoiser(model, gmm_data.data, gmm_data.labels, sched, cfg, tc.RngStream(0))
    assert result.converged is False


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def test_sample_is_reproducible(gmm_model, sched):
    a = sample(gmm_model, sched, None, tc.RngStream(4), 16)
    b = sample(gmm_model, sched, None, tc.RngStream(4), 16)
    assert a.shape == (16, 2)
    np.testing.assert_array_equal(a.data, b.data)


def test_samples_are_closer_to_data_than_noise(gmm_model, gmm_data, sched):
    x = sample(gmm_model, sched, None, tc.RngStream(10), 200).data
    noise = tc.RngStream(11).gaussian((200, 2)).data

    def spread(points):
        d = ((points[:, None, :] - gmm_data.data[None]) ** 2).sum(-1)
        return float(np.mean(np.sqrt(d.min(axis=1))))

    assert spread(x) < spread(noise)


@pytest.mark.parametrize("strength, step", [(0.5, 50), (0.25, 25), (1.0, 100), (0.004, 1)])
def test_strength_to_step(strength, step):
    assert strength_to_step(strength, 100) == step


@pytest.mark.parametrize("strength", [0.0, -0.1, 1.5])
def test_invalid_strength(strength):
    with pytest.raises(ConfigError):
        strength_to_step(strength, 100)


def test_img2img_and_diffpure_shapes(gmm_model, gmm_data, sched):
    source = tc.Tensor(gmm_data.data[:5])
    out = img2img(gmm_model, sched, None, source, 0.3, tc.RngStream(0))
    assert out.shape == (5, 2)
    assert np.all(np.isfinite(out.data))
    purified = diffpure(gmm_model, sched, source, 25, tc.RngStream(0))
    assert purified.shape == (5, 2)
    with pytest.raises(StepError):
        diffpure(gmm_model, sched, source, 101, tc.RngStream(0))
