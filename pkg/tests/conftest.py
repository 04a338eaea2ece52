"""
Shared fixtures for the duetgraph test suite.
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from loguru import logger

from duetgraph.models import ModelConfig, SimConfig, TrainConfig
from duetgraph.pose import build_particle_tensor, build_training_tensor, clean_stream
from duetgraph.sim import simulate_dataset
from duetgraph.synthetic import synthetic_duet


@pytest.fixture
def project_root():
    """Get the project root directory."""
    return Path(__file__).parent.parent


@pytest.fixture
def cli_command():
    """Get the command to run the CLI."""
    return [sys.executable, "-m", "duetgraph"]


@pytest.fixture
def rng():
    """Seeded numpy generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def small_sim_config():
    """A simulation small enough for unit tests."""
    return SimConfig(num_trajectories=6, num_particles=3, frames=13, substeps_per_frame=10, seed=7)


@pytest.fixture
def particle_tensors(small_sim_config):
    """Train/val windows of a small simulation, seq_len 3."""
    dataset = simulate_dataset(small_sim_config)
    return build_particle_tensor(dataset, seq_len=3, split=0.5, seed=0)


@pytest.fixture
def duet_tensors():
    """Train/val windows of a synthetic duet, 3 joints per dancer, seq_len 4."""
    poses = clean_stream(synthetic_duet(frames=120, seed=3))
    return build_training_tensor([poses], seq_len=4, joints_per_dancer=3, split=0.8, seed=0)


@pytest.fixture
def tiny_model_config():
    """Small model for 3-particle windows of 3 frames."""
    return ModelConfig(
        n_edge_types=2, hidden_dim=8, dropout_p=0.0, seq_len=3, feature_dim=4,
    )


@pytest.fixture
def quick_train_config():
    """Short training run."""
    return TrainConfig(epochs=2, batch_size=4, seed=0)


@pytest.fixture(autouse=True)
def reset_logging():
    """Point loguru back at the real stderr after tests that reconfigure it."""
    yield
    logger.remove()
    logger.add(sys.__stderr__, level="WARNING")
