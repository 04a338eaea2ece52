"""
Data models for simulated particles, duet pose streams, training tensors,
configuration sections and evaluation reports.
"""

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np


# Default edge-type priors per number of edge types; type 0 is "no connection".
DEFAULT_PRIORS = {
    2: (0.9, 0.1),
    3: (0.85, 0.1, 0.05),
    4: (0.85, 0.07, 0.05, 0.03),
    5: (0.8, 0.08, 0.06, 0.04, 0.02),
}

FORMAT_VERSION = "1"


@dataclass
class SimConfig:
    """
    Charged-particle simulation settings.

    Attributes:
        num_trajectories: Number of trajectories to generate
        num_particles: Particles per system
        frames: Recorded frames per trajectory
        substeps_per_frame: Integrator steps between two recorded frames
        dt: Integrator time step
        force_softening: Softening length added to every pair distance
        box_halfwidth: Half-width of the reflecting box (None disables walls)
        velocity_scale: Standard deviation of the initial velocities
        seed: Base seed; trajectory i draws from the stream (seed, i)
        workers: Worker processes used for generation
    """
    num_trajectories: int = 1000
    num_particles: int = 5
    frames: int = 49
    substeps_per_frame: int = 100
    dt: float = 0.001
    force_softening: float = 0.1
    box_halfwidth: Optional[float] = 5.0
    velocity_scale: float = 0.5
    seed: int = 42
    workers: int = 1


@dataclass
class PreprocessConfig:
    """Settings for cleaning keypoint streams and windowing them."""
    seq_len: Optional[int] = None
    joints_per_dancer: Optional[int] = None
    split: float = 0.85
    seed: int = 0
    keep_ratio: float = 0.25
    fps: Optional[float] = None
    center: bool = False


@dataclass
class ModelConfig:
    """
    Encoder/decoder hyperparameters.

    Attributes:
        n_edge_types: Number of latent edge types (type 0 passes no message)
        hidden_dim: Width of every hidden representation
        dropout_p: Dropout probability in the edge blocks
        use_batchnorm: Apply batch normalization in the edge blocks
        prior: Edge-type prior; None selects the default for n_edge_types
        temperature: Gumbel-Softmax temperature
        seq_len: Input frames per window
        feature_dim: Features per node and frame (6 for poses, 4 for particles)
        encoder: "full" or "compact"
        hard_sample: Use straight-through one-hot samples during training
        residual_output: Predict the change from the last input frame
    """
    n_edge_types: int = 2
    hidden_dim: int = 64
    dropout_p: float = 0.1
    use_batchnorm: bool = False
    prior: Optional[tuple] = None
    temperature: float = 0.5
    seq_len: int = 8
    feature_dim: int = 6
    encoder: str = "full"
    hard_sample: bool = True
    residual_output: bool = True

    @property
    def resolved_prior(self) -> tuple:
        if self.prior is not None:
            return tuple(float(p) for p in self.prior)
        return DEFAULT_PRIORS[self.n_edge_types]

    def to_dict(self) -> dict:
        data = asdict(self)
        data["prior"] = list(self.resolved_prior)
        return data


@dataclass
class TrainConfig:
    """
    Optimization settings.

    Attributes:
        epochs: Passes over the training windows
        batch_size: Windows per optimizer step
        learning_rate: Initial Adam learning rate
        lr_decay_every: Epochs between learning-rate decays
        lr_decay: Multiplicative learning-rate decay
        beta: KL weight reached by the schedule
        beta_schedule: "constant" or "warmup"
        warmup_fraction: Fraction of epochs used to ramp beta from 0
        augment_factor: Rotated copies appended next to the original batch, so B windows train as (augment_factor + 1) * B (0 disables augmentation)
        seed: Seed for initialization, shuffling, sampling and augmentation
        checkpoint_every: Write a checkpoint every N epochs (0 disables)
    """
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 5e-4
    lr_decay_every: int = 10
    lr_decay: float = 0.5
    beta: float = 1.0
    beta_schedule: str = "warmup"
    warmup_fraction: float = 0.25
    augment_factor: int = 0
    seed: int = 0
    checkpoint_every: int = 0


@dataclass
class EvalConfig:
    """Evaluation settings."""
    threshold: float = 0.8
    seed: int = 0
    batch_size: int = 64


@dataclass
class RenderConfig:
    """Rendering settings."""
    windows: tuple = (0,)
    symmetrize: bool = False


@dataclass
class ParticleSystem:
    """
    State of one charged-particle system.

    Attributes:
        charges: Per-particle sign, shape [N], entries +1 or -1
        positions: Shape [N, 2]
        velocities: Shape [N, 2]
    """
    charges: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray

    @property
    def num_particles(self) -> int:
        return int(self.charges.shape[0])

    def momentum(self) -> np.ndarray:
        # Unit masses.
        return self.velocities.sum(axis=0)


@dataclass
class GroundTruthGraph:
    """
    Interaction signs between particles: +1 repels, -1 attracts.

    Attributes:
        sign_matrix: Shape [N, N]; the diagonal is unused
    """
    sign_matrix: np.ndarray

    @classmethod
    def from_charges(cls, charges: np.ndarray) -> "GroundTruthGraph":
        charges = np.asarray(charges, dtype=np.float64)
        return cls(sign_matrix=np.outer(charges, charges))

    @property
    def num_nodes(self) -> int:
        return int(self.sign_matrix.shape[0])

    def edge_labels(self, edge_index: np.ndarray) -> np.ndarray:
        """Type label per ordered pair: 1 for repulsion, 0 for attraction."""
        src, dst = edge_index[:, 0], edge_index[:, 1]
        return (self.sign_matrix[src, dst] > 0).astype(np.int64)

    def to_edge_list(self) -> list:
        n = self.num_nodes
        return [
            {"source": i, "target": j, "sign": int(self.sign_matrix[i, j])}
            for i in range(n)
            for j in range(n)
            if i != j
        ]


@dataclass
class Detection:
    """
    One detected person in one frame.

    Attributes:
        joints: Shape [29, 3], meters, z up
        confidence: Detector confidence in [0, 1]
        person_id: Tag assigned by the upstream tracker
    """
    joints: np.ndarray
    confidence: float
    person_id: int = 0

    def copy(self) -> "Detection":
        return Detection(self.joints.copy(), self.confidence, self.person_id)


@dataclass
class RawFrame:
    """A frame of zero or more detections plus the repairs applied to it."""
    index: int
    detections: list
    flags: set = field(default_factory=set)

    def copy(self) -> "RawFrame":
        return RawFrame(self.index, [d.copy() for d in self.detections], set(self.flags))


@dataclass
class RawFrameStream:
    """Frames as delivered by the pose extractor."""
    frames: list
    fps: float = 30.0

    def __len__(self):
        return len(self.frames)


@dataclass
class PoseSequence:
    """
    Cleaned duet.

    Attributes:
        data: Shape [T, 2, 29, 3]
        flags: Per-frame provenance flags (filled, matched, pruned, swapped, ambiguous)
        fps: Frames per second
    """
    data: np.ndarray
    flags: list
    fps: float = 30.0

    @property
    def num_frames(self) -> int:
        return int(self.data.shape[0])


@dataclass
class TrainingTensor:
    """
    Windowed model input.

    Attributes:
        sequences: Shape [S, seq_len + 1, J, F]; the last frame is the target
        edge_index: Shape [E, 2], ordered (source, target) candidate pairs
        split_tag: "train" or "val"
        node_groups: Group of each node (dancer 0/1, or particle index)
        node_labels: Human-readable label per node
        joint_ids: Original joint index per node (poses only)
        edge_labels: Shape [S, E] ground-truth edge types (simulation only)
        window_origin: Shape [S, 2], (source sequence, first frame) per window
        fps: Frames per second of the source data
    """
    sequences: np.ndarray
    edge_index: np.ndarray
    split_tag: str
    node_groups: list
    node_labels: list
    joint_ids: Optional[list] = None
    edge_labels: Optional[np.ndarray] = None
    window_origin: Optional[np.ndarray] = None
    fps: float = 30.0

    @property
    def num_windows(self) -> int:
        return int(self.sequences.shape[0])

    @property
    def seq_len(self) -> int:
        return int(self.sequences.shape[1]) - 1

    @property
    def num_nodes(self) -> int:
        return int(self.sequences.shape[2])

    @property
    def feature_dim(self) -> int:
        return int(self.sequences.shape[3])

    @property
    def num_edges(self) -> int:
        return int(self.edge_index.shape[0])


@dataclass
class HighConfidenceEdge:
    """An inferred edge that passed the confidence threshold."""
    source: int
    target: int
    edge_type: int
    probability: float


@dataclass
class EvalReport:
    """
    Evaluation summary.

    Attributes:
        recon_mse: One-step next-frame MSE from observed inputs
        kl: Mean KL divergence to the prior per edge
        edge_confidences: Shape [E, n] mean posterior probabilities
        high_confidence_edges: Edges whose best non-zero type reaches the threshold
        threshold: Threshold used for the selection
        edge_index: Shape [E, 2]
        node_labels: Label per node
        edge_accuracy: Permutation-maximized accuracy (simulation only)
        baseline_accuracy: Shuffled-posterior accuracy (simulation only)
    """
    recon_mse: float
    kl: float
    edge_confidences: np.ndarray
    high_confidence_edges: list
    threshold: float
    edge_index: np.ndarray
    node_labels: list
    edge_accuracy: Optional[float] = None
    baseline_accuracy: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "format": f"duetgraph.report/{FORMAT_VERSION}",
            "recon_mse": float(self.recon_mse),
            "kl": float(self.kl),
            "threshold": float(self.threshold),
            "edge_index": [[int(s), int(t)] for s, t in self.edge_index],
            "node_labels": list(self.node_labels),
            "edge_confidences": [[float(p) for p in row] for row in self.edge_confidences],
            "high_confidence_edges": [asdict(e) for e in self.high_confidence_edges],
            "edge_accuracy": None if self.edge_accuracy is None else float(self.edge_accuracy),
            "baseline_accuracy": (
                None if self.baseline_accuracy is None else float(self.baseline_accuracy)
            ),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(
            recon_mse=data["recon_mse"],
            kl=data["kl"],
            edge_confidences=np.asarray(data["edge_confidences"], dtype=np.float64),
            high_confidence_edges=[HighConfidenceEdge(**e) for e in data["high_confidence_edges"]],
            threshold=data["threshold"],
            edge_index=np.asarray(data["edge_index"], dtype=np.int64).reshape(-1, 2),
            node_labels=list(data["node_labels"]),
            edge_accuracy=data.get("edge_accuracy"),
            baseline_accuracy=data.get("baseline_accuracy"),
        )

    def __str__(self):
        """Human-readable summary."""
        lines = [
            f"Reconstruction MSE: {self.recon_mse:.6f}",
            f"KL: {self.kl:.6f}",
            f"Edges >= {self.threshold:.2f}: {len(self.high_confidence_edges)}",
        ]
        for e in self.high_confidence_edges:
            lines.append(
                f"  {self.node_labels[e.source]} -> {self.node_labels[e.target]}"
                f" type {e.edge_type} ({e.probability:.3f})"
            )
        if self.edge_accuracy is not None:
            lines.append(f"Edge accuracy: {self.edge_accuracy:.4f}")
        if self.baseline_accuracy is not None:
            lines.append(f"Shuffled baseline: {self.baseline_accuracy:.4f}")
        return "\n".join(lines)


@dataclass
class RunManifest:
    """Everything needed to replay one CLI run."""
    subcommand: str
    config_path: Optional[str]
    inputs: dict
    outputs: list
    seed: Optional[int]
    resolved_config: dict
    version: str

    def to_dict(self) -> dict:
        return {
            "format": f"duetgraph.manifest/{FORMAT_VERSION}",
            "subcommand": self.subcommand,
            "config_path": self.config_path,
            "inputs": dict(self.inputs),
            "outputs": list(self.outputs),
            "seed": self.seed,
            "resolved_config": self.resolved_config,
            "version": self.version,
        }
