import pytest

from gudn import EncoderConfig, gen_synthetic


@pytest.fixture(scope="session")
def tiny_bundle():
    """Small synthetic dataset shared by read-only tests."""
    return gen_synthetic(L=8, n_train=30, n_test=10, labels_per_sample=2,
                         noise_tokens=4, semantic_strength=1.0, seed=11, max_len=24)


@pytest.fixture
def tiny_encoder_config():
    return EncoderConfig(num_layers=2, hidden_dim=16, num_heads=2, ffn_dim=32,
                         vocab_size=64, max_input_len=24)
