#!/usr/bin/env python3
"""
Demo script for duetgraph modules.
This runs a small duet pipeline in memory: synthetic keypoints, cleaning,
a short training run and evaluation.
"""

from duetgraph.models import EvalConfig, ModelConfig, TrainConfig
from duetgraph.pose import PoseError, build_training_tensor, clean_stream
from duetgraph.synthetic import synthetic_duet
from duetgraph.train import TrainingError, evaluate, train


def main():
    """Demonstrate the preprocess, train and eval steps."""

    print("=" * 50)
    print("duetgraph demo")
    print("=" * 50)

    stream = synthetic_duet(frames=300, seed=0, drop_person_rate=0.02, swap_rate=0.01)
    try:
        poses = clean_stream(stream)
    except PoseError as e:
        print(f"ERROR: Could not clean keypoints: {e}")
        return 4

    repaired = sum(1 for f in poses.flags if f)
    print(f"Cleaned {poses.num_frames} frames ({repaired} repaired)")

    train_data, val_data = build_training_tensor([poses], seq_len=8, joints_per_dancer=3, seed=0)
    print(f"{train_data.num_windows} training / {val_data.num_windows} validation windows")

    try:
        result = train(
            ModelConfig(hidden_dim=32, seq_len=8, feature_dim=6),
            TrainConfig(epochs=5, batch_size=16, learning_rate=2e-3),
            train_data,
            val_data,
        )
    except TrainingError as e:
        print(f"ERROR: Training failed: {e}")
        return 3

    print(evaluate(result.model, val_data, EvalConfig(threshold=0.8)))
    print("=" * 50)
    return 0


if __name__ == "__main__":
    exit(main())
