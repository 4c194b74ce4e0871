import numpy as np
import pytest

from poco import AnalyticField, PocoConfig, PocoModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sphere():
    return AnalyticField.sphere()


@pytest.fixture
def tiny_model():
    cfg = PocoConfig(n=4, k=4, h=2, L=1, k_enc=4, hidden=8)
    return PocoModel(cfg, seed=0)


@pytest.fixture
def small_model():
    cfg = PocoConfig(n=8, k=8, h=4, L=2, k_enc=6, hidden=16)
    return PocoModel(cfg, seed=1)
