import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_model_kwargs():
    """Smallest config at which the loop dynamics are observable in tests."""
    return dict(d_model=32, n_heads=2, n_enc_layers=1, n_dec_layers=1,
                ff_dim=64, dropout=0.0, label_smoothing=0.0, warmup_steps=50)
