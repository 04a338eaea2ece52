"""
Charged-particle trajectories with known interaction graphs.

Particles carry charges of +1 or -1; equal charges repel and opposite charges
attract with a softened inverse-square force. Integration is leapfrog
(kick-drift-kick) with unit masses and elastic walls.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from itertools import repeat

import numpy as np
from loguru import logger

from .config import validate
from .models import GroundTruthGraph, ParticleSystem, SimConfig
from .storage import read_blocks, write_blocks


SIM_FORMAT = "duetgraph.sim/1"
SPATIAL_DIMS = 2
CHUNK_SIZE = 256
# Initial positions fall in this half-width when the box has no walls.
OPEN_BOX_INIT_HALFWIDTH = 5.0


class SimulationError(Exception):
    """Exception raised for simulation failures."""
    pass


class NonFiniteState(SimulationError):
    """A coordinate became NaN or infinite, usually because dt is too large."""

    def __init__(self, message: str, trajectory_index: int = None):
        self.trajectory_index = trajectory_index
        super().__init__(message)


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent random stream for trajectory ``index``."""
    return np.random.default_rng([seed, index])


def sample_system(config: SimConfig, rng: np.random.Generator):
    """
    Draw charges, positions and velocities for one system.

    Args:
        config: Simulation settings
        rng: Random generator

    Returns:
        tuple: (ParticleSystem, GroundTruthGraph)
    """
    n = config.num_particles
    half = config.box_halfwidth if config.box_halfwidth is not None else OPEN_BOX_INIT_HALFWIDTH
    charges = rng.choice(np.array([-1.0, 1.0]), size=n)
    positions = rng.uniform(-half, half, size=(n, SPATIAL_DIMS))
    velocities = rng.normal(0.0, config.velocity_scale, size=(n, SPATIAL_DIMS))
    system = ParticleSystem(charges=charges, positions=positions, velocities=velocities)
    return system, GroundTruthGraph.from_charges(charges)


def pairwise_forces(positions: np.ndarray, signs: np.ndarray, eps: float) -> np.ndarray:
    """
    Softened inverse-square forces.

    Force on i is sum_j sign[i, j] * (r_i - r_j) / (|r_i - r_j|^2 + eps^2)^(3/2).

    Args:
        positions: Shape [..., N, D]
        signs: Shape [..., N, N]
        eps: Softening length

    Returns:
        np.ndarray: Shape [..., N, D]
    """
    diff = positions[..., :, None, :] - positions[..., None, :, :]
    dist2 = np.sum(diff * diff, axis=-1) + eps * eps
    n = positions.shape[-2]
    coef = signs * dist2 ** -1.5 * (1.0 - np.eye(n))
    return np.sum(coef[..., None] * diff, axis=-2)


def _reflect(positions, velocities, box):
    above = positions > box
    below = positions < -box
    positions = np.where(above, 2.0 * box - positions, positions)
    positions = np.where(below, -2.0 * box - positions, positions)
    velocities = np.where(above | below, -velocities, velocities)
    return positions, velocities


def _leapfrog(positions, velocities, signs, dt, eps, box):
    velocities = velocities + 0.5 * dt * pairwise_forces(positions, signs, eps)
    positions = positions + dt * velocities
    if box is not None:
        positions, velocities = _reflect(positions, velocities, box)
    velocities = velocities + 0.5 * dt * pairwise_forces(positions, signs, eps)
    return positions, velocities


def step(
    system: ParticleSystem,
    graph: GroundTruthGraph,
    dt: float,
    eps: float,
    box_halfwidth: float = None,
) -> ParticleSystem:
    """
    Advance a system by one leapfrog step.

    Args:
        system: Current state
        graph: Interaction signs
        dt: Time step
        eps: Force softening length, must be positive
        box_halfwidth: Reflecting wall position; None for open space

    Returns:
        ParticleSystem: The new state

    Raises:
        NonFiniteState: If any coordinate becomes non-finite
    """
    if eps <= 0:
        raise ValueError("Force softening must be positive")
    positions, velocities = _leapfrog(
        system.positions, system.velocities, graph.sign_matrix, dt, eps, box_halfwidth
    )
    if not (np.isfinite(positions).all() and np.isfinite(velocities).all()):
        raise NonFiniteState(f"Non-finite particle state after a step of dt={dt}")
    return ParticleSystem(charges=system.charges, positions=positions, velocities=velocities)


def _simulate_chunk(config: SimConfig, indices: range):
    systems = [sample_system(config, trajectory_rng(config.seed, i)) for i in indices]
    positions = np.stack([s.positions for s, _ in systems])
    velocities = np.stack([s.velocities for s, _ in systems])
    signs = np.stack([g.sign_matrix for _, g in systems])

    batch, n = positions.shape[0], config.num_particles
    out = np.empty((batch, config.frames, n, 2 * SPATIAL_DIMS), dtype=np.float64)
    for frame in range(config.frames):
        if frame > 0:
            for _ in range(config.substeps_per_frame):
                positions, velocities = _leapfrog(
                    positions, velocities, signs,
                    config.dt, config.force_softening, config.box_halfwidth,
                )
            finite = np.isfinite(positions).all(axis=(1, 2)) & np.isfinite(velocities).all(axis=(1, 2))
            if not finite.all():
                bad = indices[int(np.argmin(finite))]
                raise NonFiniteState(
                    f"Trajectory {bad} became non-finite at frame {frame}; reduce dt",
                    trajectory_index=bad,
                )
        out[:, frame, :, :SPATIAL_DIMS] = positions
        out[:, frame, :, SPATIAL_DIMS:] = velocities

    logger.debug("Simulated trajectories {}..{}", indices.start, indices.stop - 1)
    return [(out[k], graph) for k, (_, graph) in enumerate(systems)]


def simulate_dataset(config: SimConfig) -> list:
    """
    Generate ``config.num_trajectories`` trajectories.

    Frame 0 is the sampled initial state; every further frame is recorded after
    ``substeps_per_frame`` integrator steps. Each trajectory draws from its own
    random stream, so the output does not depend on ``workers``.

    Args:
        config: Simulation settings

    Returns:
        list: (trajectory of shape [frames, N, 4], GroundTruthGraph) pairs

    Raises:
        NonFiniteState: With the index of the failing trajectory
    """
    validate("sim", config)
    total = config.num_trajectories
    chunks = [range(s, min(s + CHUNK_SIZE, total)) for s in range(0, total, CHUNK_SIZE)]
    logger.info(
        "Simulating {} trajectories of {} particles over {} frames",
        total, config.num_particles, config.frames,
    )

    if config.workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_simulate_chunk, repeat(config), chunks))
    else:
        results = [_simulate_chunk(config, chunk) for chunk in chunks]
    return [item for chunk in results for item in chunk]


def save_dataset(path, dataset: list, config: SimConfig):
    """
    Write trajectories and their graphs to one artifact file.

    Args:
        path: Destination file
        dataset: Output of ``simulate_dataset``
        config: Settings echoed into the header
    """
    trajectories = np.stack([traj for traj, _ in dataset])
    header = {
        "config": asdict(config),
        "counts": {
            "num_trajectories": len(dataset),
            "frames": int(trajectories.shape[1]),
            "num_particles": int(trajectories.shape[2]),
        },
        "shapes": {"trajectory": list(trajectories.shape[1:])},
        "graphs": [graph.to_edge_list() for _, graph in dataset],
    }
    return write_blocks(path, SIM_FORMAT, header, {"trajectories": trajectories})


def load_dataset(path):
    """
    Read a simulation artifact.

    Returns:
        tuple: (list of (trajectory, GroundTruthGraph), header dict)
    """
    header, blocks = read_blocks(path, SIM_FORMAT)
    trajectories = blocks["trajectories"]
    n = header["counts"]["num_particles"]
    dataset = []
    for traj, edges in zip(trajectories, header["graphs"]):
        signs = np.ones((n, n))
        for edge in edges:
            signs[edge["source"], edge["target"]] = edge["sign"]
        dataset.append((np.asarray(traj, dtype=np.float64), GroundTruthGraph(sign_matrix=signs)))
    return dataset, header
