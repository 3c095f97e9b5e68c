import numpy as np
import pytest

from vidinsert.codec import CodecConfig
from vidinsert.config import OptimizerConfig, RunConfig, ScheduleConfig
from vidinsert.model import ModelConfig
from vidinsert.synth import build_dataset


def tiny_run_config(seed=0, max_steps=3, batch_size=2):
    """16x16, 5-frame setup that trains in seconds; shapes mirror desk scale."""
    return RunConfig(
        codec=CodecConfig(spatial_factor=2, temporal_factor=2, channels=24),
        model=ModelConfig(
            channels=24, depth=1, width=16, heads=2, max_prompt_tokens=16,
            vocab_size=256, max_frames=4, latent_h=8, latent_w=8,
        ),
        schedule=ScheduleConfig(timesteps=100),
        optimizer=OptimizerConfig(lr=1e-3),
        batch_size=batch_size,
        max_steps=max_steps,
        checkpoint_every=0,
        seed=seed,
    )


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_data")
    manifest = build_dataset(4, seed=21, out_dir=out, height=16, width=16, frames=5)
    return manifest


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
