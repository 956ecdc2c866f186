import numpy as np
import pytest

from kvmas.engine import ModelConfig, init_model


@pytest.fixture(scope="session")
def tiny_config():
    """Small 4-layer config: full depth, quick forward passes."""
    return ModelConfig(
        num_layers=4, model_dim=64, num_heads=2, head_dim=32,
        vocab_size=260, max_seq_len=512, seed=11,
    )


@pytest.fixture(scope="session")
def tiny_weights(tiny_config):
    return init_model(tiny_config)


@pytest.fixture(scope="session")
def shallow_config():
    """Single-layer config: keys/values depend only on token and position,
    so cache transplantation is exact and splice/full-text comparisons are
    pure float-error measurements."""
    return ModelConfig(
        num_layers=1, model_dim=64, num_heads=2, head_dim=32,
        vocab_size=260, max_seq_len=512, seed=5,
    )


@pytest.fixture(scope="session")
def shallow_weights(shallow_config):
    return init_model(shallow_config)


def random_tokens(rng, n, vocab=260):
    return rng.integers(0, vocab, size=n).tolist()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
