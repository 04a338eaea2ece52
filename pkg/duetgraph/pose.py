"""
Duet keypoint cleaning, augmentation and windowing.

Raw streams come from an upstream 3D pose extractor: one record per frame with
zero or more 29-joint detections. Cleaning turns them into exactly two dancers
per frame with consistent labels and reduced jitter; windowing turns cleaned
sequences (or simulated particle trajectories) into model input.
"""

import json
import math
from pathlib import Path

import numpy as np
from loguru import logger
from scipy.fft import dct, idct

from .models import (
    Detection,
    PoseSequence,
    RawFrame,
    RawFrameStream,
    TrainingTensor,
)
from .skeleton import JOINT_NAMES, NUM_JOINTS
from .storage import read_blocks, write_blocks


TENSOR_FORMAT = "duetgraph.tensor/1"
POSE_FORMAT = "duetgraph.pose/1"

FILLED = "filled"
MATCHED = "matched"
PRUNED = "pruned"
SWAPPED = "swapped"
AMBIGUOUS = "ambiguous"

DANCER_PREFIXES = ("A", "B")


class PoseError(Exception):
    """Exception raised for unusable keypoint data."""
    pass


class EmptyLeadingFrames(PoseError):
    """The stream starts with frames that hold no detection."""
    pass


class BadArity(PoseError):
    """A frame holds a different number of detections than the operation needs."""
    pass


class SequenceTooShort(PoseError):
    """No training window fits in the available frames."""
    pass


class KeypointFormatError(PoseError):
    """A keypoint file does not follow the documented schema."""
    pass


def joint_distance(a: Detection, b: Detection) -> float:
    """Sum of Euclidean distances between corresponding joints."""
    return float(np.linalg.norm(a.joints - b.joints, axis=-1).sum())


def fill_missing_frames(stream: RawFrameStream) -> RawFrameStream:
    """
    Replace every empty frame with a copy of the previous frame's detections.

    Raises:
        EmptyLeadingFrames: If the first frame has no detection
    """
    if not stream.frames or not stream.frames[0].detections:
        raise EmptyLeadingFrames("The stream must start with at least one detection")

    frames = []
    for frame in stream.frames:
        if frame.detections:
            frames.append(frame.copy())
        else:
            previous = frames[-1]
            frames.append(RawFrame(
                index=frame.index,
                detections=[d.copy() for d in previous.detections],
                flags=set(frame.flags) | {FILLED},
            ))
    return RawFrameStream(frames=frames, fps=stream.fps)


def resolve_single_detection(frame: RawFrame, prev_frame: RawFrame) -> RawFrame:
    """
    Complete a single-person frame from the previous two-person frame.

    The previous person farther from the detection (summed joint distance) is
    assumed to be the missed one and is copied in; the detection keeps the
    other slot. Equal distances copy person 0 and flag the frame ambiguous.

    Raises:
        BadArity: Unless ``frame`` has one detection and ``prev_frame`` has two
    """
    if len(frame.detections) != 1 or len(prev_frame.detections) != 2:
        raise BadArity(
            f"Frame {frame.index}: expected 1 detection after a 2-detection frame, "
            f"got {len(frame.detections)} after {len(prev_frame.detections)}"
        )

    detected = frame.detections[0]
    distances = [joint_distance(detected, person) for person in prev_frame.detections]
    flags = set(frame.flags) | {MATCHED}
    if distances[0] == distances[1]:
        flags.add(AMBIGUOUS)

    copied = int(np.argmax(distances))
    detections = [None, None]
    detections[copied] = prev_frame.detections[copied].copy()
    detections[1 - copied] = detected.copy()
    return RawFrame(index=frame.index, detections=detections, flags=flags)


def prune_extra_detections(frame: RawFrame) -> RawFrame:
    """Keep the two most confident detections (lower index wins ties), in original order."""
    if len(frame.detections) <= 2:
        return frame.copy()
    ranked = sorted(range(len(frame.detections)), key=lambda i: (-frame.detections[i].confidence, i))
    keep = sorted(ranked[:2])
    return RawFrame(
        index=frame.index,
        detections=[frame.detections[i].copy() for i in keep],
        flags=set(frame.flags) | {PRUNED},
    )


def enforce_index_consistency(stream: RawFrameStream) -> RawFrameStream:
    """
    Undo dancer label swaps with a forward scan.

    Each frame is compared with the already corrected previous frame; labels
    are swapped when the crossed assignment has a strictly smaller summed
    joint distance than the identity assignment.

    Raises:
        BadArity: If a frame does not hold exactly two detections
    """
    for frame in stream.frames:
        if len(frame.detections) != 2:
            raise BadArity(f"Frame {frame.index}: expected 2 detections, got {len(frame.detections)}")

    if not stream.frames:
        return RawFrameStream(frames=[], fps=stream.fps)

    frames = [stream.frames[0].copy()]
    for frame in stream.frames[1:]:
        p, q = frames[-1].detections
        a, b = frame.detections
        identity = joint_distance(a, p) + joint_distance(b, q)
        crossed = joint_distance(a, q) + joint_distance(b, p)
        fixed = frame.copy()
        if crossed < identity:
            fixed.detections = [b.copy(), a.copy()]
            fixed.flags.add(SWAPPED)
        frames.append(fixed)
    return RawFrameStream(frames=frames, fps=stream.fps)


def dct_lowpass(series: np.ndarray, keep_ratio: float, axis: int = 0) -> np.ndarray:
    """
    Low-pass filter along ``axis`` with an orthonormal DCT-II/DCT-III pair.

    Coefficients with index >= ceil(keep_ratio * T) are zeroed. Every other
    axis is filtered independently.

    Args:
        series: Array with T >= 2 samples along ``axis``
        keep_ratio: Fraction of lowest-frequency coefficients kept, in (0, 1]
        axis: Time axis

    Returns:
        np.ndarray: Filtered array, same shape
    """
    series = np.asarray(series, dtype=np.float64)
    length = series.shape[axis]
    if length < 2:
        raise ValueError("dct_lowpass needs at least 2 samples")
    if not 0 < keep_ratio <= 1:
        raise ValueError("keep_ratio must be in (0, 1]")

    keep = math.ceil(keep_ratio * length - 1e-9)
    coeffs = dct(series, type=2, norm="ortho", axis=axis)
    cut = [slice(None)] * series.ndim
    cut[axis] = slice(keep, None)
    coeffs[tuple(cut)] = 0.0
    return idct(coeffs, type=2, norm="ortho", axis=axis)


def estimate_velocities(positions: np.ndarray, fps: float) -> np.ndarray:
    """
    Append forward-difference velocities to positions.

    v_t = (p_{t+1} - p_t) * fps, and the last frame repeats the previous velocity.

    Args:
        positions: Shape [T, ..., D] with T >= 2
        fps: Frames per second

    Returns:
        np.ndarray: Shape [T, ..., 2D]
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[0] < 2:
        raise ValueError("estimate_velocities needs at least 2 frames")
    velocities = np.empty_like(positions)
    velocities[:-1] = (positions[1:] - positions[:-1]) * fps
    velocities[-1] = velocities[-2]
    return np.concatenate([positions, velocities], axis=-1)


def rotate_z(batch: np.ndarray, theta: float) -> np.ndarray:
    """
    Rotate positions and velocities about the z axis.

    The last axis holds [position, velocity] with 2 or 3 components each; only
    the x and y components change.
    """
    batch = np.asarray(batch)
    dims = batch.shape[-1] // 2
    c, s = math.cos(theta), math.sin(theta)
    out = batch.copy()
    for offset in (0, dims):
        x = batch[..., offset]
        y = batch[..., offset + 1]
        out[..., offset] = c * x - s * y
        out[..., offset + 1] = s * x + c * y
    return out


def center_windows(windows: np.ndarray) -> np.ndarray:
    """Subtract each window's mean position over all frames and nodes."""
    dims = windows.shape[-1] // 2
    out = windows.copy()
    out[..., :dims] -= windows[..., :dims].mean(axis=(1, 2), keepdims=True)
    return out


def clean_stream(stream: RawFrameStream, keep_ratio: float = 0.25) -> PoseSequence:
    """
    Full cleaning pipeline.

    Missing frames are filled, extra detections pruned, single detections
    completed, labels made consistent and every joint track low-pass filtered.
    Leading frames with a single detection have no reference to be completed
    from and are dropped.

    Args:
        stream: Raw frames
        keep_ratio: DCT keep ratio; 1.0 disables the filter

    Returns:
        PoseSequence: Shape [T, 2, 29, 3]
    """
    filled = fill_missing_frames(stream)

    frames = []
    dropped = 0
    for frame in filled.frames:
        if len(frame.detections) > 2:
            frame = prune_extra_detections(frame)
        if len(frame.detections) == 1:
            if not frames:
                dropped += 1
                continue
            frame = resolve_single_detection(frame, frames[-1])
        frames.append(frame)

    if dropped:
        logger.warning("Dropped {} leading single-person frames", dropped)
    if not frames:
        raise SequenceTooShort("No frame with two detections in the stream")

    consistent = enforce_index_consistency(RawFrameStream(frames=frames, fps=stream.fps))
    data = np.stack([
        np.stack([d.joints for d in frame.detections]) for frame in consistent.frames
    ]).astype(np.float64)
    bad = ~np.isfinite(data).all(axis=(1, 2, 3))
    if bad.any():
        indices = [frame.index for frame, b in zip(consistent.frames, bad) if b]
        raise KeypointFormatError(f"Non-finite joint coordinates in frames {indices[:10]}")
    if data.shape[0] >= 2 and keep_ratio < 1.0:
        data = dct_lowpass(data, keep_ratio, axis=0)

    flags = [sorted(frame.flags) for frame in consistent.frames]
    counts = {name: sum(name in f for f in flags) for name in (FILLED, MATCHED, PRUNED, SWAPPED)}
    logger.info(
        "Cleaned {} frames: {} filled, {} matched, {} pruned, {} swapped",
        len(flags), counts[FILLED], counts[MATCHED], counts[PRUNED], counts[SWAPPED],
    )
    for frame, f in zip(consistent.frames, flags):
        if f:
            logger.debug("Frame {}: {}", frame.index, ", ".join(f))
    return PoseSequence(data=data, flags=flags, fps=stream.fps)


def candidate_edges(node_groups) -> np.ndarray:
    """All ordered pairs of nodes from different groups, shape [E, 2]."""
    groups = list(node_groups)
    pairs = [
        (s, t)
        for s in range(len(groups))
        for t in range(len(groups))
        if groups[s] != groups[t]
    ]
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def _windows(features: np.ndarray, seq_len: int):
    span = seq_len + 1
    starts = list(range(0, features.shape[0] - span + 1, span))
    return [features[s:s + span] for s in starts], starts


def _split(windows, origins, labels, split, rng, **common):
    total = len(windows)
    order = rng.permutation(total)
    n_train = int(round(split * total))
    parts = []
    for tag, idx in (("train", np.sort(order[:n_train])), ("val", np.sort(order[n_train:]))):
        parts.append(TrainingTensor(
            sequences=windows[idx].astype(np.float32),
            split_tag=tag,
            window_origin=origins[idx],
            edge_labels=None if labels is None else labels[idx],
            **common,
        ))
    logger.info("Split {} windows into {} train / {} val", total, n_train, total - n_train)
    return parts[0], parts[1]


def build_training_tensor(
    sequences: list,
    seq_len: int,
    joints_per_dancer: int,
    split: float = 0.85,
    seed: int = 0,
    center: bool = False,
):
    """
    Window cleaned duets into training and validation tensors.

    The same random joints (``joints_per_dancer`` per dancer, without
    replacement) are used for every sequence of the run. Windows hold
    ``seq_len`` input frames plus the next frame as target and do not overlap.

    Args:
        sequences: Cleaned PoseSequence objects
        seq_len: Input frames per window
        joints_per_dancer: Sampled joints per dancer, 3 to 5
        split: Fraction of windows used for training
        seed: Seed for joint sampling and the split
        center: Subtract each window's centroid

    Returns:
        tuple: (train TrainingTensor, val TrainingTensor)

    Raises:
        SequenceTooShort: If no window fits
    """
    if not 3 <= joints_per_dancer <= 5:
        raise ValueError("joints_per_dancer must be between 3 and 5")
    if seq_len < 2:
        raise ValueError("seq_len must be >= 2")

    rng = np.random.default_rng(seed)
    joints = [np.sort(rng.choice(NUM_JOINTS, size=joints_per_dancer, replace=False)) for _ in range(2)]
    logger.info("Sampled joints: A={} B={}", joints[0].tolist(), joints[1].tolist())

    windows, origins = [], []
    fps = sequences[0].fps if sequences else 30.0
    for seq_index, seq in enumerate(sequences):
        if seq.num_frames < 2:
            continue
        nodes = np.concatenate([seq.data[:, 0, joints[0]], seq.data[:, 1, joints[1]]], axis=1)
        chunk, starts = _windows(estimate_velocities(nodes, seq.fps), seq_len)
        windows.extend(chunk)
        origins.extend((seq_index, s) for s in starts)
    if not windows:
        raise SequenceTooShort(f"No window of {seq_len + 1} frames fits in the input")

    windows = np.stack(windows)
    if center:
        windows = center_windows(windows)

    node_groups = [0] * joints_per_dancer + [1] * joints_per_dancer
    joint_ids = [int(j) for j in joints[0]] + [int(j) for j in joints[1]]
    node_labels = [
        f"{DANCER_PREFIXES[g]}:{JOINT_NAMES[j]}" for g, j in zip(node_groups, joint_ids)
    ]
    return _split(
        windows, np.asarray(origins, dtype=np.int64), None, split, rng,
        edge_index=candidate_edges(node_groups),
        node_groups=node_groups,
        node_labels=node_labels,
        joint_ids=joint_ids,
        fps=fps,
    )


def build_particle_tensor(dataset: list, seq_len: int, split: float = 0.85, seed: int = 0, center: bool = False):
    """
    Window simulated trajectories over the fully connected candidate graph.

    Every window carries the ground-truth type of each candidate edge
    (1 repel, 0 attract).

    Returns:
        tuple: (train TrainingTensor, val TrainingTensor)
    """
    if seq_len < 2:
        raise ValueError("seq_len must be >= 2")
    if not dataset:
        raise SequenceTooShort("Empty dataset")

    n = dataset[0][0].shape[1]
    node_groups = list(range(n))
    edge_index = candidate_edges(node_groups)

    windows, origins, labels = [], [], []
    for traj_index, (traj, graph) in enumerate(dataset):
        chunk, starts = _windows(np.asarray(traj, dtype=np.float64), seq_len)
        windows.extend(chunk)
        origins.extend((traj_index, s) for s in starts)
        labels.extend([graph.edge_labels(edge_index)] * len(chunk))
    if not windows:
        raise SequenceTooShort(f"No window of {seq_len + 1} frames fits in the trajectories")

    windows = np.stack(windows)
    if center:
        windows = center_windows(windows)
    rng = np.random.default_rng(seed)
    return _split(
        windows, np.asarray(origins, dtype=np.int64), np.stack(labels), split, rng,
        edge_index=edge_index,
        node_groups=node_groups,
        node_labels=[f"p{i}" for i in range(n)],
        fps=1.0,
    )


def read_keypoints_jsonl(path, fps: float = 30.0) -> RawFrameStream:
    """
    Read a keypoint file.

    Schema, one JSON object per line:
        {"fps": 30.0}                                   optional, anywhere
        {"frame": 12, "detections": [
            {"person_id": 0, "confidence": 0.93, "joints": [[x, y, z], ... 29 rows]}
        ]}

    Frame indices missing from the file become empty frames.
    """
    records = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if "frame" not in record:
                    fps = float(record["fps"])
                    continue
                detections = []
                for det in record["detections"]:
                    joints = np.asarray(det["joints"], dtype=np.float64)
                    if joints.shape != (NUM_JOINTS, 3):
                        raise KeypointFormatError(
                            f"line {lineno}: expected {NUM_JOINTS}x3 joints, got {joints.shape}"
                        )
                    if not np.isfinite(joints).all():
                        raise KeypointFormatError(f"line {lineno}: non-finite joint coordinates")
                    detections.append(Detection(
                        joints=joints,
                        confidence=float(det.get("confidence", 1.0)),
                        person_id=int(det.get("person_id", len(detections))),
                    ))
                records[int(record["frame"])] = detections
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise KeypointFormatError(f"{path}, line {lineno}: {e}")

    if not records:
        return RawFrameStream(frames=[], fps=fps)
    first, last = min(records), max(records)
    frames = [RawFrame(index=i, detections=records.get(i, [])) for i in range(first, last + 1)]
    return RawFrameStream(frames=frames, fps=fps)


def write_keypoints_jsonl(path, stream: RawFrameStream):
    """Write a stream in the format read by ``read_keypoints_jsonl``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"fps": stream.fps}) + "\n")
        for frame in stream.frames:
            fh.write(json.dumps({
                "frame": frame.index,
                "detections": [
                    {
                        "person_id": d.person_id,
                        "confidence": d.confidence,
                        "joints": d.joints.tolist(),
                    }
                    for d in frame.detections
                ],
            }) + "\n")
    return path


def save_training_tensor(path, tensor: TrainingTensor):
    header = {
        "split_tag": tensor.split_tag,
        "seq_len": tensor.seq_len,
        "fps": tensor.fps,
        "edge_index": tensor.edge_index.tolist(),
        "node_groups": list(tensor.node_groups),
        "node_labels": list(tensor.node_labels),
        "joint_ids": tensor.joint_ids,
        "edge_labels": None if tensor.edge_labels is None else tensor.edge_labels.tolist(),
        "window_origin": None if tensor.window_origin is None else tensor.window_origin.tolist(),
    }
    return write_blocks(path, TENSOR_FORMAT, header, {"sequences": tensor.sequences})


def load_training_tensor(path) -> TrainingTensor:
    header, blocks = read_blocks(path, TENSOR_FORMAT)
    return TrainingTensor(
        sequences=np.array(blocks["sequences"]),
        edge_index=np.asarray(header["edge_index"], dtype=np.int64).reshape(-1, 2),
        split_tag=header["split_tag"],
        node_groups=header["node_groups"],
        node_labels=header["node_labels"],
        joint_ids=header.get("joint_ids"),
        edge_labels=(
            None if header.get("edge_labels") is None
            else np.asarray(header["edge_labels"], dtype=np.int64).reshape(-1, len(header["edge_index"]))
        ),
        window_origin=(
            None if header.get("window_origin") is None
            else np.asarray(header["window_origin"], dtype=np.int64).reshape(-1, 2)
        ),
        fps=header["fps"],
    )


def save_pose_sequence(path, sequence: PoseSequence):
    header = {"fps": sequence.fps, "flags": sequence.flags}
    return write_blocks(path, POSE_FORMAT, header, {"data": sequence.data})


def load_pose_sequence(path) -> PoseSequence:
    header, blocks = read_blocks(path, POSE_FORMAT)
    return PoseSequence(data=np.array(blocks["data"], dtype=np.float64), flags=header["flags"], fps=header["fps"])
