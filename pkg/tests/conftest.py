import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

import tensor_core as tc  # noqa: E402
from classifier import train_classifier  # noqa: E402
from config import ClassifierConfig, CodecConfig, DiffusionConfig, from_dict  # noqa: E402
from data_loader import make_gaussian_mixture, make_synthetic_shapes  # noqa: E402
from diffusion_engine import Denoiser, DiffusionSchedule, train_denoiser  # noqa: E402
from latent_codec import ModelSpace, train_codec  # noqa: E402


@pytest.fixture(scope="session")
def sched():
    return DiffusionSchedule.linear(100, 1e-4, 0.02)


@pytest.fixture(scope="session")
def gmm_data():
    return make_gaussian_mixture(3, 60, radius=1.0, std=0.1, seed=0)


@pytest.fixture(scope="session")
def gmm_training(gmm_data, sched):
    cfg = DiffusionConfig(space="pixel", hidden=32, depth=2, steps=400, batch_size=64, lr=3e-3)
    rng = tc.RngStream(7)
    model = Denoiser.from_config(rng, cfg, 2, gmm_data.class_count)
    return train_denoiser(model, gmm_data.data, gmm_data.labels, sched, cfg, rng)


@pytest.fixture(scope="session")
def gmm_model(gmm_training):
    return gmm_training.model


@pytest.fixture(scope="session")
def point_space():
    return ModelSpace("pixel", (2,), None, valid_range=None)


@pytest.fixture(scope="session")
def gmm_classifier(gmm_data):
    cfg = ClassifierConfig(hidden=32, steps=300, batch_size=64, lr=3e-3)
    return train_classifier(gmm_data.data, gmm_data.labels, gmm_data.class_count, cfg, tc.RngStream(3))


@pytest.fixture(scope="session")
def shapes_data():
    return make_synthetic_shapes(2, 30, size=16, seed=0)


@pytest.fixture(scope="session")
def shapes_codec_training(shapes_data):
    cfg = CodecConfig(latent_dim=4, hidden=32, steps=300, batch_size=32, lr=3e-3)
    return train_codec(shapes_data.flat, cfg, tc.RngStream(11))


@pytest.fixture(scope="session")
def shapes_codec(shapes_codec_training):
    return shapes_codec_training.model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config_dict(output_dir, **changes):
    """A 2-D Gaussian-mixture experiment small enough to run in seconds."""
    data = {
        "name": "tiny",
        "dataset": {"kind": "gaussian_mixture_2d", "class_count": 2, "per_class": 30},
        "diffusion": {"space": "pixel", "T": 20, "hidden": 16, "depth": 1, "steps": 60,
                      "batch_size": 32, "cond_dim": 4, "time_dim": 8},
        "classifier": {"hidden": 16, "steps": 50},
        "inversion": {"steps": 5, "group_size": 5},
        "attack": {"epsilon": 0.25, "alpha": 0.05, "n_steps": 3, "mode": "pixel"},
        "attacks": ["none", "advdm", "pgd_dm"],
        "defenses": [{"kind": "none"}, {"kind": "diffpure", "t_star": 5}],
        "groups": 2,
        "samples_per_group": 10,
        "seeds": [0],
        "output_dir": str(output_dir),
        "metric": {"k": 3, "features": "pixel"},
    }
    for key, value in changes.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key] = dict(data[key], **value)
        else:
            data[key] = value
    return data


@pytest.fixture
def tiny_config(tmp_path):
    def make(**changes):
        return from_dict(tiny_config_dict(tmp_path / "run", **changes))

    return make
