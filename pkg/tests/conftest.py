import numpy as np
import pytest
import torch

from panolight.models import ModelCheckpoint, build_models
from panolight.panorama import ToneMapParams
from panolight.training import toy_config


@pytest.fixture(scope="session")
def tiny_ckpt() -> ModelCheckpoint:
    """Untrained 32x64 checkpoint; enough for optimization-path tests."""
    cfg, _ = toy_config(32)
    gen, d_hdr, d_ldr = build_models(cfg, seed=0)
    return ModelCheckpoint(
        config=cfg,
        tone_map=ToneMapParams(alpha=0.5, gamma=2.4),
        generator_state=gen.state_dict(),
        d_hdr_state=d_hdr.state_dict(),
        d_ldr_state=d_ldr.state_dict(),
    )


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)
    np.random.seed(0)
