"""
Procedurally animated duets for smoke tests and demos.

Dancer A sways and swings its arms; dancer B repeats A's motion a few frames
later, so the B joints depend on A's history. Optional corruptions reproduce
what a pose extractor delivers: jitter, dropped frames, a missed dancer,
spurious extra people and tracker identity swaps.
"""

import math

import numpy as np

from .models import Detection, RawFrame, RawFrameStream
from .skeleton import LEFT_ARM, LEFT_LEG, REST_POSE, RIGHT_ARM, RIGHT_LEG


def _dancer(signal: np.ndarray, x_offset: float) -> np.ndarray:
    frames = signal.shape[0]
    joints = np.broadcast_to(REST_POSE, (frames,) + REST_POSE.shape).copy()
    s = signal[:, None]

    # Arms swing up and down, more at the hands than at the shoulders.
    for arm, sign in ((LEFT_ARM, 1.0), (RIGHT_ARM, -1.0)):
        reach = np.abs(REST_POSE[list(arm), 0]) - 0.18
        joints[:, list(arm), 2] += sign * 0.5 * s * reach
    for leg, sign in ((LEFT_LEG, 1.0), (RIGHT_LEG, -1.0)):
        joints[:, list(leg), 1] += sign * 0.08 * s

    joints[..., 0] += x_offset + 0.15 * s
    joints[..., 2] += 0.05 * s ** 2
    return joints


def animate_duet(
    frames: int,
    fps: float = 30.0,
    seed: int = 0,
    lag_frames: int = 4,
    separation: float = 2.0,
) -> np.ndarray:
    """
    Clean coupled motion of two 29-joint skeletons.

    Returns:
        np.ndarray: Shape [frames, 2, 29, 3]
    """
    rng = np.random.default_rng(seed)
    freq = rng.uniform(0.3, 0.6)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    t = np.arange(frames) / fps
    lead = np.sin(2.0 * math.pi * freq * t + phase)
    follow = np.sin(2.0 * math.pi * freq * (t - lag_frames / fps) + phase)
    return np.stack([_dancer(lead, -separation / 2), _dancer(follow, separation / 2)], axis=1)


def synthetic_duet(
    frames: int = 240,
    fps: float = 30.0,
    seed: int = 0,
    jitter: float = 0.01,
    drop_frame_rate: float = 0.0,
    drop_person_rate: float = 0.0,
    extra_detection_rate: float = 0.0,
    swap_rate: float = 0.0,
) -> RawFrameStream:
    """
    Raw keypoint stream of an animated duet with optional corruptions.

    The first frame is always clean. A swap toggles the order in which the
    two dancers are reported until the next swap.
    """
    rng = np.random.default_rng(seed)
    clean = animate_duet(frames, fps=fps, seed=seed)

    swapped = False
    stream = []
    for i in range(frames):
        detections = [
            Detection(
                joints=clean[i, p] + rng.normal(0.0, jitter, size=clean[i, p].shape),
                confidence=float(rng.uniform(0.8, 1.0)),
                person_id=p,
            )
            for p in range(2)
        ]
        if i > 0:
            if rng.random() < swap_rate:
                swapped = not swapped
            if swapped:
                detections = detections[::-1]
            if rng.random() < drop_person_rate:
                detections.pop(int(rng.integers(2)))
            if rng.random() < extra_detection_rate:
                ghost = clean[i, int(rng.integers(2))] + rng.normal(0.0, 0.5, size=(1, 3))
                detections.insert(
                    int(rng.integers(len(detections) + 1)),
                    Detection(joints=ghost, confidence=float(rng.uniform(0.1, 0.4)), person_id=2),
                )
            if rng.random() < drop_frame_rate:
                detections = []
        stream.append(RawFrame(index=i, detections=detections))
    return RawFrameStream(frames=stream, fps=fps)
