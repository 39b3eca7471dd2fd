import numpy as np
import pytest

from sfsda.datasets import SyntheticConfig, TwoDomainDataset, generate_synthetic


def small_dataset(seed=0, n_s=10, n_t=5, p=3, beta_t=0.0, noise_sd=1.0) -> TwoDomainDataset:
    return generate_synthetic(SyntheticConfig(n_s, n_t, p, (2.0,) * p, (beta_t,) * p, noise_sd, seed))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
