"""
Unit tests for the charged-particle simulator.
"""

import pytest

pytestmark = [pytest.mark.unit]
from dataclasses import replace

import numpy as np

from duetgraph import sim
from duetgraph.config import ConfigError
from duetgraph.models import GroundTruthGraph, ParticleSystem, SimConfig
from duetgraph.sim import (
    NonFiniteState,
    load_dataset,
    pairwise_forces,
    sample_system,
    save_dataset,
    simulate_dataset,
    step,
    trajectory_rng,
)


class TestSampleSystem:
    """Tests for sample_system."""

    def test_charges_are_signs(self):
        """Test charges are drawn from {-1, +1}."""
        system, _ = sample_system(SimConfig(num_particles=8), trajectory_rng(0, 0))
        assert set(np.unique(system.charges)) <= {-1.0, 1.0}
        assert system.positions.shape == (8, 2)
        assert system.velocities.shape == (8, 2)

    def test_graph_is_charge_outer_product(self):
        """Test the sign matrix equals the outer product of the charges."""
        for i in range(20):
            system, graph = sample_system(SimConfig(), trajectory_rng(3, i))
            np.testing.assert_array_equal(graph.sign_matrix, np.outer(system.charges, system.charges))

    def test_positions_inside_box(self):
        """Test initial positions lie inside the box."""
        system, _ = sample_system(SimConfig(box_halfwidth=2.0, num_particles=50), trajectory_rng(0, 1))
        assert np.all(np.abs(system.positions) <= 2.0)

    def test_charge_balance(self):
        """Test about half of the charges over 10^4 systems are positive."""
        config = SimConfig()
        charges = np.concatenate([
            sample_system(config, trajectory_rng(7, i))[0].charges for i in range(10_000)
        ])
        assert np.mean(charges > 0) == pytest.approx(0.5, abs=0.02)


class TestPairwiseForces:
    """Tests for pairwise_forces."""

    def test_equal_charges_repel(self):
        """Test two positive charges push each other apart."""
        positions = np.array([[0.0, 0.0], [1.0, 0.0]])
        signs = np.outer([1.0, 1.0], [1.0, 1.0])
        forces = pairwise_forces(positions, signs, eps=0.1)
        assert forces[0, 0] < 0
        assert forces[1, 0] > 0

    def test_opposite_charges_attract(self):
        """Test opposite charges pull each other together."""
        positions = np.array([[0.0, 0.0], [1.0, 0.0]])
        signs = np.outer([1.0, -1.0], [1.0, -1.0])
        forces = pairwise_forces(positions, signs, eps=0.1)
        assert forces[0, 0] > 0
        assert forces[1, 0] < 0

    def test_forces_sum_to_zero(self, rng):
        """Test internal forces cancel (Newton's third law)."""
        positions = rng.normal(size=(6, 2))
        charges = rng.choice([-1.0, 1.0], size=6)
        forces = pairwise_forces(positions, np.outer(charges, charges), eps=0.1)
        np.testing.assert_allclose(forces.sum(axis=0), 0.0, atol=1e-12)

    def test_softened_magnitude(self):
        """Test the force magnitude follows the softened inverse-square law."""
        positions = np.array([[0.0, 0.0], [2.0, 0.0]])
        signs = np.ones((2, 2))
        forces = pairwise_forces(positions, signs, eps=0.5)
        expected = 2.0 / (4.0 + 0.25) ** 1.5
        assert forces[1, 0] == pytest.approx(expected)


class TestStep:
    """Tests for the single-step integrator."""

    def _pair(self):
        system = ParticleSystem(
            charges=np.array([1.0, -1.0]),
            positions=np.array([[-1.0, 0.0], [1.0, 0.0]]),
            velocities=np.array([[0.0, 0.3], [0.0, -0.1]]),
        )
        return system, GroundTruthGraph.from_charges(system.charges)

    def test_step_conserves_momentum(self):
        """Test one step keeps total momentum without walls."""
        system, graph = self._pair()
        after = step(system, graph, dt=0.01, eps=0.1)
        np.testing.assert_allclose(after.momentum(), system.momentum(), atol=1e-14)

    def test_step_rejects_non_positive_softening(self):
        """Test eps <= 0 is rejected."""
        system, graph = self._pair()
        with pytest.raises(ValueError):
            step(system, graph, dt=0.01, eps=0.0)

    def test_step_reports_non_finite_state(self):
        """Test a NaN coordinate raises NonFiniteState."""
        system, graph = self._pair()
        system.positions[0, 0] = np.nan
        with pytest.raises(NonFiniteState):
            step(system, graph, dt=0.01, eps=0.1)

    def test_lone_particle_moves_in_a_straight_line(self):
        """Test a single particle without walls keeps its velocity."""
        system = ParticleSystem(
            charges=np.array([1.0]),
            positions=np.array([[0.0, 0.0]]),
            velocities=np.array([[0.5, -0.2]]),
        )
        graph = GroundTruthGraph.from_charges(system.charges)
        for _ in range(10):
            system = step(system, graph, dt=0.01, eps=0.1)
        np.testing.assert_allclose(system.positions, [[0.05, -0.02]], atol=1e-12)
        np.testing.assert_array_equal(system.velocities, [[0.5, -0.2]])

    def test_equal_charges_accelerate_apart(self):
        """Test two resting equal charges gain equal and opposite x-velocities."""
        system = ParticleSystem(
            charges=np.array([1.0, 1.0]),
            positions=np.array([[-1.0, 0.0], [1.0, 0.0]]),
            velocities=np.zeros((2, 2)),
        )
        after = step(system, GroundTruthGraph.from_charges(system.charges), dt=0.01, eps=0.1)
        assert after.velocities[0, 0] < 0 < after.velocities[1, 0]
        assert after.velocities[0, 0] == pytest.approx(-after.velocities[1, 0], rel=1e-12)
        np.testing.assert_array_equal(after.velocities[:, 1], 0.0)

    def test_square_keeps_fourfold_symmetry(self):
        """Test four equal charges on a square stay symmetric under 90 degree rotation."""
        corners = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
        system = ParticleSystem(charges=np.ones(4), positions=corners, velocities=np.zeros((4, 2)))
        graph = GroundTruthGraph.from_charges(system.charges)
        quarter_turn = np.array([[0.0, -1.0], [1.0, 0.0]])
        for _ in range(500):
            system = step(system, graph, dt=0.001, eps=0.1)
            rotated = system.positions @ quarter_turn.T
            assert np.abs(rotated - np.roll(system.positions, -1, axis=0)).max() <= 1e-6
        assert np.all(np.abs(system.positions) > 1.0)

    def test_walls_reflect(self):
        """Test a particle crossing the wall is reflected back inside."""
        system = ParticleSystem(
            charges=np.array([1.0]),
            positions=np.array([[0.99, 0.0]]),
            velocities=np.array([[1.0, 0.0]]),
        )
        graph = GroundTruthGraph.from_charges(system.charges)
        after = step(system, graph, dt=0.1, eps=0.1, box_halfwidth=1.0)
        assert after.positions[0, 0] == pytest.approx(0.91)
        assert after.velocities[0, 0] == pytest.approx(-1.0)


class TestSimulateDataset:
    """Tests for simulate_dataset."""

    def test_shapes(self, small_sim_config):
        """Test trajectories are [frames, N, 4] with one graph each."""
        dataset = simulate_dataset(small_sim_config)
        assert len(dataset) == 6
        for trajectory, graph in dataset:
            assert trajectory.shape == (13, 3, 4)
            assert graph.sign_matrix.shape == (3, 3)

    def test_frame_zero_is_initial_state(self, small_sim_config):
        """Test the first frame holds the sampled initial state."""
        trajectory, _ = simulate_dataset(small_sim_config)[2]
        system, _ = sample_system(small_sim_config, trajectory_rng(small_sim_config.seed, 2))
        np.testing.assert_array_equal(trajectory[0, :, :2], system.positions)
        np.testing.assert_array_equal(trajectory[0, :, 2:], system.velocities)

    def test_deterministic(self, small_sim_config):
        """Test two runs with the same seed are identical."""
        a = simulate_dataset(small_sim_config)
        b = simulate_dataset(small_sim_config)
        for (ta, ga), (tb, gb) in zip(a, b):
            np.testing.assert_array_equal(ta, tb)
            np.testing.assert_array_equal(ga.sign_matrix, gb.sign_matrix)

    def test_seed_changes_data(self, small_sim_config):
        """Test a different seed gives different trajectories."""
        a = simulate_dataset(small_sim_config)
        b = simulate_dataset(replace(small_sim_config, seed=8))
        assert not np.array_equal(a[0][0], b[0][0])

    @pytest.mark.slow
    def test_workers_do_not_change_output(self):
        """Test the process pool yields the same trajectories as a single process."""
        config = SimConfig(num_trajectories=300, num_particles=3, frames=3, substeps_per_frame=2, seed=1)
        single = simulate_dataset(config)
        pooled = simulate_dataset(replace(config, workers=2))
        for (ta, _), (tb, _) in zip(single, pooled):
            np.testing.assert_array_equal(ta, tb)

    def test_momentum_drift_without_walls(self):
        """Test total momentum stays constant over open-space trajectories."""
        config = SimConfig(
            num_trajectories=100, num_particles=5, frames=49, box_halfwidth=None, seed=11,
        )
        for trajectory, graph in simulate_dataset(config):
            momentum = trajectory[:, :, 2:].sum(axis=1)
            scale = np.abs(trajectory[0, :, 2:]).sum()
            drift = np.abs(momentum - momentum[0]).max()
            assert drift <= 1e-6 * scale

    def test_non_finite_state_names_trajectory(self, small_sim_config, monkeypatch):
        """Test a blow-up reports the index of the failing trajectory."""
        def exploding(positions, velocities, signs, dt, eps, box):
            return positions * np.nan, velocities

        monkeypatch.setattr(sim, "_leapfrog", exploding)
        with pytest.raises(NonFiniteState) as excinfo:
            simulate_dataset(small_sim_config)
        assert excinfo.value.trajectory_index == 0

    def test_invalid_config(self):
        """Test invariant violations are rejected before simulating."""
        with pytest.raises(ConfigError):
            simulate_dataset(SimConfig(num_trajectories=0))


class TestDatasetStorage:
    """Tests for save_dataset/load_dataset."""

    def test_save_and_load(self, small_sim_config, tmp_path):
        """Test trajectories and graphs survive the artifact file."""
        dataset = simulate_dataset(small_sim_config)
        path = save_dataset(tmp_path / "dataset.dgt", dataset, small_sim_config)
        loaded, header = load_dataset(path)

        assert header["counts"] == {"num_trajectories": 6, "frames": 13, "num_particles": 3}
        assert header["config"]["seed"] == 7
        for (ta, ga), (tb, gb) in zip(dataset, loaded):
            np.testing.assert_allclose(tb, ta, rtol=1e-6, atol=1e-6)
            off_diagonal = ~np.eye(3, dtype=bool)
            np.testing.assert_array_equal(gb.sign_matrix[off_diagonal], ga.sign_matrix[off_diagonal])


class TestGroundTruthGraph:
    """Tests for GroundTruthGraph helpers."""

    def test_edge_labels(self):
        """Test repelling pairs get label 1 and attracting pairs label 0."""
        graph = GroundTruthGraph.from_charges(np.array([1.0, 1.0, -1.0]))
        edge_index = np.array([[0, 1], [0, 2], [2, 1]])
        np.testing.assert_array_equal(graph.edge_labels(edge_index), [1, 0, 0])

    def test_edge_list_excludes_self_pairs(self):
        """Test the edge list covers every ordered pair once."""
        graph = GroundTruthGraph.from_charges(np.array([1.0, -1.0, 1.0]))
        edges = graph.to_edge_list()
        assert len(edges) == 6
        assert all(e["source"] != e["target"] for e in edges)
