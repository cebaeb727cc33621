import numpy as np
import pytest

import tensor_core as tc
from config import DefenseConfig
from defenses import DefenseContext, DefenseFactory
from defenses.diffpure import purify
from defenses.jpeg_like import block_dct, block_idct, jpeg_like, quantization_table
from defenses.resample import resample
from defenses.tvm import tv_objective, tvm
from errors import ConfigError, ModeError, PreconditionError


@pytest.fixture
def noisy_images():
    r = np.random.default_rng(0)
    base = np.zeros((2, 16, 16), dtype=np.float32)
    base[:, 4:12, 4:12] = 0.8
    return tc.Tensor(np.clip(base + r.normal(0, 0.08, base.shape), 0.0, 1.0))


def test_registry_has_builtin_defenses():
    assert DefenseFactory.names() == ["diffpure", "jpeg_like", "none", "resample", "tvm"]
    with pytest.raises(KeyError):
        DefenseFactory.create("median")


# ---------------------------------------------------------------------------
# JPEG-like
# ---------------------------------------------------------------------------

def test_block_dct_round_trip():
    img = np.random.default_rng(1).uniform(size=(1, 16, 16))
    np.testing.assert_allclose(block_idct(block_dct(img)), img, atol=1e-12)


def test_constant_mid_gray_is_preserved():
    x = np.full((1, 16, 16), 128 / 255, dtype=np.float32)
    np.testing.assert_allclose(jpeg_like(x, 50).data, x, atol=1e-6)


def test_quality_100_stays_within_one_level(noisy_images):
    out = jpeg_like(noisy_images, 100).data
    assert np.max(np.abs(out - noisy_images.data)) <= 1 / 255 + 1e-6


def test_lower_quality_loses_more(noisy_images):
    err = [np.mean((jpeg_like(noisy_images, q).data - noisy_images.data) ** 2) for q in (90, 50, 10)]
    assert err[0] < err[1] < err[2]


def test_odd_sizes_are_padded_and_cropped():
    x = np.random.default_rng(2).uniform(size=(3, 10, 13)).astype(np.float32)
    out = jpeg_like(x, 75).data
    assert out.shape == x.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


@pytest.mark.parametrize("quality", [0, 101])
def test_quality_out_of_range(quality):
    with pytest.raises(ConfigError):
        quantization_table(quality)


def test_quantization_table_floor():
    assert quantization_table(100).min() == pytest.approx(0.1)
    assert quantization_table(50)[0, 0] == pytest.approx(16.0)


def test_pixel_defenses_reject_points():
    points = np.zeros((4, 2), dtype=np.float32)
    for name in ("jpeg_like", "tvm", "resample"):
        with pytest.raises(ModeError):
            DefenseFactory.create(name)(points, DefenseConfig(kind=name))


# ---------------------------------------------------------------------------
# TV minimization
# ---------------------------------------------------------------------------

def test_tv_objective_never_increases(noisy_images):
    trace = []
    out = tvm(noisy_images, lam=0.1, iters=30, trace=trace)
    assert len(trace) >= 2
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    assert out.shape == noisy_images.shape


def test_tv_reduces_total_variation(noisy_images):
    def total_variation(x):
        return np.abs(np.diff(x, axis=1)).sum() + np.abs(np.diff(x, axis=2)).sum()

    out = tvm(noisy_images, lam=0.2, iters=50).data
    assert total_variation(out) < total_variation(noisy_images.data)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_tv_removes_salt_and_pepper():
    clean = np.full((1, 16, 16), 0.5, dtype=np.float32)
    noisy = clean.copy()
    r = np.random.default_rng(4)
    idx = r.choice(256, size=25, replace=False)
    noisy.reshape(-1)[idx] = r.integers(0, 2, size=25).astype(np.float32)
    out = tvm(noisy, lam=0.3, iters=100).data
    assert np.linalg.norm(out - clean) < np.linalg.norm(noisy - clean)


def test_tv_with_zero_weight_is_clamped_identity():
    x = np.array([[[-0.2, 0.5], [0.7, 1.3]]], dtype=np.float32)
    np.testing.assert_array_equal(tvm(x, lam=0.0).data, np.clip(x, 0.0, 1.0))


def test_tv_objective_at_input_is_pure_regularizer():
    x = tc.Tensor(np.array([[[0.0, 1.0], [0.0, 1.0]]]))
    # two horizontal jumps of 1, no vertical ones
    assert tv_objective(x, x, 0.5).item() == pytest.approx(0.5 * (2 * np.sqrt(1 + 1e-6) + 2 * 1e-3), rel=1e-5)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def test_resample_factor_one_is_identity(noisy_images):
    np.testing.assert_array_equal(resample(noisy_images, 1.0).data, noisy_images.data)


def test_resample_keeps_shape_and_constants():
    x = np.full((2, 16, 16), 0.3, dtype=np.float32)
    out = resample(x, 2.0).data
    assert out.shape == x.shape
    np.testing.assert_allclose(out, x, atol=1e-6)


def test_resample_removes_high_frequencies():
    x = np.indices((16, 16)).sum(axis=0) % 2
    x = x[None].astype(np.float32)
    out = resample(x, 2.0).data
    assert out.std() < x.std()


def test_resample_suppresses_nyquist_energy():
    x = (np.indices((16, 16)).sum(axis=0) % 2)[None].astype(np.float32)

    def nyquist(img):
        return float(np.abs(np.fft.fft2(img[0] - img[0].mean())[8, 8]) ** 2)

    assert nyquist(resample(x, 2.0).data) <= 0.1 * nyquist(x)


def test_resample_factor_below_one():
    with pytest.raises(ConfigError):
        resample(np.zeros((1, 8, 8)), 0.5)


# ---------------------------------------------------------------------------
# Purification
# ---------------------------------------------------------------------------

def test_diffpure_needs_model_and_stream():
    with pytest.raises(PreconditionError):
        purify(np.zeros((2, 2)), 5, DefenseContext())


def test_diffpure_is_seeded(gmm_model, sched, point_space, gmm_data):
    x = gmm_data.data[:6]
    a = purify(x, 25, DefenseContext(gmm_model, sched, point_space, tc.RngStream(1)))
    b = purify(x, 25, DefenseContext(gmm_model, sched, point_space, tc.RngStream(1)))
    assert a.shape == (6, 2)
    np.testing.assert_array_equal(a.data, b.data)


def test_diffpure_latent_images(shapes_codec, shapes_data, sched):
    from diffusion_engine import Denoiser
    from latent_codec import ModelSpace

    space = ModelSpace("latent", (16, 16), shapes_codec)
    model = Denoiser.create(tc.RngStream(0), 4, 2, hidden=8, depth=1)
    out = DefenseFactory.create("diffpure")(shapes_data.data[:3], DefenseConfig(kind="diffpure", t_star=10),
                                            DefenseContext(model, sched, space, tc.RngStream(0)))
    assert out.shape == (3, 16, 16)
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0
