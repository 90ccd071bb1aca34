import numpy as np
import pytest

from pdmp_detect.model import NoiseSpec, PdmpModel


def model_1a(sigma2=0.5, delta=1 / 6, N=36, d=3, speeds=(0.1, 0.5, 1.0), trunc=None):
    trunc = 3.0 * np.sqrt(sigma2) if trunc is None else trunc
    return PdmpModel(
        example="1a", d=d, speeds=speeds, noise=NoiseSpec(sigma2, trunc), delta=delta, horizon_steps=N
    )


def model_1b(sigma2=0.5, delta=1 / 6, N=36):
    return PdmpModel(
        example="1b",
        d=2,
        speeds=(0.5, 2.0),
        noise=NoiseSpec(sigma2, 3.0 * np.sqrt(sigma2)),
        delta=delta,
        horizon_steps=N,
    )


def model_2a(sigma2=0.1, delta=1 / 6, N=36):
    return PdmpModel(
        example="2a",
        d=1,
        speeds=(5.0,),
        base_speed=3.0,
        x0=0.0,
        noise=NoiseSpec(sigma2, 3.0 * np.sqrt(sigma2)),
        delta=delta,
        horizon_steps=N,
    )


def model_2b(sigma2=0.5, delta=1 / 6, N=36):
    return PdmpModel(
        example="2b",
        d=2,
        speeds=(0.5, 1.5),
        base_speed=3.0,
        x0=0.0,
        noise=NoiseSpec(sigma2, 3.0 * np.sqrt(sigma2)),
        delta=delta,
        horizon_steps=N,
    )


ALL_MODELS = {"1a": model_1a, "1b": model_1b, "2a": model_2a, "2b": model_2b}


@pytest.fixture
def rng():
    return np.random.default_rng(20240612)
