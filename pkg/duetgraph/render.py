"""
SVG snapshots and CSV tables of inferred edges.

Nodes are drawn by orthographic projection onto the x-y plane; for 3D data
the z coordinate sets the marker size. Each selected edge is a line whose
opacity equals its confidence.
"""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from loguru import logger  # noqa: E402

from .models import EvalReport, HighConfidenceEdge, PoseSequence, RenderConfig, TrainingTensor  # noqa: E402
from .skeleton import BONES  # noqa: E402


CSV_COLUMNS = ("source_joint", "target_joint", "type", "confidence")
EDGE_COLOR = "#202020"
MARKER_SIZE = (12.0, 60.0)
SVG_RC = {"svg.hashsalt": "duetgraph", "svg.fonttype": "none"}


def symmetrize_edges(edges: list) -> list:
    """
    Merge (s, t) and (t, s) into one undirected edge.

    The merged edge keeps the type and confidence of the more confident
    direction and is reported with source < target.
    """
    merged = {}
    for edge in edges:
        key = (min(edge.source, edge.target), max(edge.source, edge.target))
        current = merged.get(key)
        if current is None or edge.probability > current.probability:
            merged[key] = HighConfidenceEdge(key[0], key[1], edge.edge_type, edge.probability)
    return list(merged.values())


def sorted_edges(edges: list) -> list:
    """Descending confidence, then source and target."""
    return sorted(edges, key=lambda e: (-e.probability, e.source, e.target))


def write_edge_csv(path, edges: list, node_labels: list):
    """
    One row per edge, most confident first.

    Raises:
        IndexError: If an edge references a node without a label
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for edge in sorted_edges(edges):
            writer.writerow([
                node_labels[edge.source],
                node_labels[edge.target],
                edge.edge_type,
                f"{edge.probability:.6f}",
            ])
    return path


def _marker_sizes(positions: np.ndarray) -> np.ndarray:
    if positions.shape[-1] < 3:
        return np.full(positions.shape[0], MARKER_SIZE[1] / 2)
    z = positions[:, 2]
    span = z.max() - z.min()
    scale = (z - z.min()) / span if span > 0 else np.full_like(z, 0.5)
    return MARKER_SIZE[0] + scale * (MARKER_SIZE[1] - MARKER_SIZE[0])


def render_frame(
    path,
    positions: np.ndarray,
    node_groups: list,
    node_labels: list,
    edges: list,
    skeletons: np.ndarray = None,
    title: str = None,
):
    """
    Draw one frame to an SVG file.

    Args:
        path: Destination file
        positions: Node positions, shape [J, 2] or [J, 3]
        node_groups: Group per node; selects the node color
        node_labels: Label per node
        edges: HighConfidenceEdge list to overlay
        skeletons: Optional full skeletons, shape [2, 29, 3]
        title: Optional figure title

    Raises:
        IndexError: If an edge references a node outside ``positions``
    """
    positions = np.asarray(positions, dtype=np.float64)
    num_nodes = positions.shape[0]
    for edge in edges:
        if not (0 <= edge.source < num_nodes and 0 <= edge.target < num_nodes):
            raise IndexError(f"Edge {edge.source}->{edge.target} outside {num_nodes} nodes")

    colors = plt.get_cmap("tab10")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(6, 6))
        if skeletons is not None:
            for dancer, joints in enumerate(np.asarray(skeletons)):
                for child, parent in BONES:
                    ax.plot(
                        [joints[child, 0], joints[parent, 0]],
                        [joints[child, 1], joints[parent, 1]],
                        color=colors(dancer), linewidth=1.5, alpha=0.5,
                    )
        for edge in edges:
            (line,) = ax.plot(
                positions[[edge.source, edge.target], 0],
                positions[[edge.source, edge.target], 1],
                color=EDGE_COLOR, linewidth=2.0, alpha=float(np.clip(edge.probability, 0.0, 1.0)),
            )
            line.set_gid(f"edge-{edge.source}-{edge.target}")
        ax.scatter(
            positions[:, 0], positions[:, 1],
            s=_marker_sizes(positions),
            c=[colors(g % 10) for g in node_groups],
            zorder=3,
        )
        for label, (x, y) in zip(node_labels, positions[:, :2]):
            ax.annotate(label, (x, y), fontsize=6, xytext=(3, 3), textcoords="offset points")
        if title:
            ax.set_title(title, fontsize=9)
        ax.set_aspect("equal", adjustable="datalim")
        ax.axis("off")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def render(
    report: EvalReport,
    data: TrainingTensor,
    out_dir,
    config: RenderConfig = None,
    poses: PoseSequence = None,
) -> list:
    """
    Write one SVG per selected window plus ``edges.csv``.

    Each SVG shows the last input frame of its window. With ``poses`` and a
    pose tensor, nodes are placed at the cleaned skeleton joints and both
    skeletons are drawn.

    Returns:
        list: Written paths

    Raises:
        IndexError: If a window or edge does not exist in ``data``
    """
    config = config or RenderConfig()
    out_dir = Path(out_dir)
    edges = report.high_confidence_edges
    if config.symmetrize:
        edges = symmetrize_edges(edges)
    for edge in edges:
        if max(edge.source, edge.target) >= data.num_nodes:
            raise IndexError(f"Edge {edge.source}->{edge.target} outside {data.num_nodes} nodes")

    dims = data.feature_dim // 2
    frame_offset = data.seq_len - 1
    written = []
    for w in config.windows:
        if w >= data.num_windows:
            raise IndexError(f"Window {w} requested, {data.num_windows} available")
        positions = np.asarray(data.sequences[w, frame_offset, :, :dims])
        skeletons = None
        if poses is not None and data.joint_ids is not None and data.window_origin is not None:
            frame = int(data.window_origin[w, 1]) + frame_offset
            skeletons = poses.data[frame]
            positions = np.stack([
                skeletons[group, joint] for group, joint in zip(data.node_groups, data.joint_ids)
            ])
        written.append(render_frame(
            out_dir / f"window_{w:04d}.svg",
            positions,
            data.node_groups,
            data.node_labels,
            edges,
            skeletons=skeletons,
            title=f"window {w}",
        ))
    written.append(write_edge_csv(out_dir / "edges.csv", edges, data.node_labels))
    logger.info("Rendered {} windows with {} edges to {}", len(config.windows), len(edges), out_dir)
    return written
