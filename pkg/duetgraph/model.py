"""
Edge-inference model.

The encoder maps a window of node trajectories to logits over edge types for
every candidate edge. Edge types are sampled with Gumbel-Softmax and drive a
decoder whose LSTM gates are graph convolutions; the decoder predicts the frame
that follows the window. Edge type 0 means "no connection" and carries no
message.
"""

import numpy as np
import torch
import torch.nn.functional as F
from loguru import logger
from torch import nn

from . import __version__
from .models import ModelConfig
from .storage import read_blocks, write_blocks


CHECKPOINT_FORMAT = "duetgraph.checkpoint/1"
GUMBEL_EPS = 1e-20


class ModelError(Exception):
    """Exception raised for model failures."""
    pass


class ShapeMismatch(ModelError):
    """Inputs do not match the model configuration or the edge list."""
    pass


class CheckpointError(ModelError):
    """A checkpoint cannot be restored."""
    pass


def incidence(edge_index: torch.Tensor, num_nodes: int, dtype=torch.float32):
    """
    One-hot sender and receiver matrices.

    Args:
        edge_index: Shape [E, 2], (source, target) rows
        num_nodes: J

    Returns:
        tuple: (send [E, J], recv [E, J])
    """
    if edge_index.numel() and int(edge_index.max()) >= num_nodes:
        raise ShapeMismatch(f"Edge list references node {int(edge_index.max())} of {num_nodes}")
    send = F.one_hot(edge_index[:, 0], num_nodes).to(dtype)
    recv = F.one_hot(edge_index[:, 1], num_nodes).to(dtype)
    return send, recv


def normalized_adjacency(edge_index, num_nodes, edge_weight=None, dtype=torch.float32):
    """
    D^-1/2 (A + I) D^-1/2 where A[t, s] is the weight of edge s -> t.

    Args:
        edge_index: Shape [E, 2]
        num_nodes: J
        edge_weight: Shape [..., E]; None means weight 1

    Returns:
        torch.Tensor: Shape [..., J, J]
    """
    send, recv = incidence(edge_index, num_nodes, dtype)
    if edge_weight is None:
        edge_weight = torch.ones(edge_index.shape[0], dtype=dtype)
    adj = torch.einsum("et,...e,es->...ts", recv, edge_weight, send)
    adj = adj + torch.eye(num_nodes, dtype=dtype)
    inv_sqrt = adj.sum(dim=-1).pow(-0.5)
    return inv_sqrt[..., :, None] * adj * inv_sqrt[..., None, :]


def gcn_layer(x, edge_index, weight, bias=None, edge_weight=None):
    """
    Graph convolution H' = Â H W + b with self-loops added.

    Args:
        x: Shape [..., J, d_in]
        edge_index: Shape [E, 2]
        weight: Shape [d_in, d_out]
        bias: Shape [d_out] or None
        edge_weight: Optional per-edge weights, shape [..., E]

    Returns:
        torch.Tensor: Shape [..., J, d_out]
    """
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatch(f"Node features of width {x.shape[-1]} for a {tuple(weight.shape)} weight")
    a_hat = normalized_adjacency(edge_index, x.shape[-2], edge_weight, dtype=x.dtype)
    out = a_hat @ (x @ weight)
    if bias is not None:
        out = out + bias
    return out


def node_to_edge(x: torch.Tensor, edge_index: torch.Tensor) -> torch.Tensor:
    """[h_source || h_target] per edge: [..., J, d] -> [..., E, 2d]."""
    return torch.cat([x[..., edge_index[:, 0], :], x[..., edge_index[:, 1], :]], dim=-1)


def edge_to_node(e: torch.Tensor, edge_index: torch.Tensor, num_nodes: int) -> torch.Tensor:
    """Mean of incoming edge representations: [..., E, d] -> [..., J, d]; isolated nodes get zeros."""
    _, recv = incidence(edge_index, num_nodes, e.dtype)
    summed = torch.einsum("ej,...ed->...jd", recv, e)
    count = recv.sum(dim=0).clamp(min=1.0)
    return summed / count[:, None]


def sample_gumbel(shape, generator=None, dtype=torch.float32) -> torch.Tensor:
    """Standard Gumbel noise."""
    u = torch.rand(shape, generator=generator, dtype=dtype)
    return -torch.log(-torch.log(u + GUMBEL_EPS) + GUMBEL_EPS)


def gumbel_softmax(logits, tau: float, hard: bool = False, generator=None) -> torch.Tensor:
    """
    Relaxed categorical sample per row.

    Args:
        logits: Shape [..., n]
        tau: Temperature, must be positive
        hard: Return exact one-hot rows whose gradient is that of the soft sample
        generator: torch.Generator for the noise

    Returns:
        torch.Tensor: Same shape as ``logits``
    """
    if tau <= 0:
        raise ValueError("Gumbel-Softmax temperature must be positive")
    y = F.softmax((logits + sample_gumbel(logits.shape, generator, logits.dtype)) / tau, dim=-1)
    if not hard:
        return y
    y_hard = torch.zeros_like(y).scatter_(-1, y.argmax(dim=-1, keepdim=True), 1.0)
    return y_hard + (y - y.detach())


def elbo_loss(predicted, target, logits, prior, beta: float):
    """
    Reconstruction MSE plus beta-weighted KL between the edge posterior and the prior.

    The KL term is summed over edge types and averaged over edges (and windows).

    Returns:
        tuple: (total, recon_mse, kl)
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    recon = F.mse_loss(predicted, target)
    log_q = F.log_softmax(logits, dim=-1)
    log_p = torch.log(torch.as_tensor(prior, dtype=logits.dtype))
    kl = (log_q.exp() * (log_q - log_p)).sum(dim=-1).mean()
    return recon + beta * kl, recon, kl


class GCNLayer(nn.Module):
    """Graph convolution over an unweighted (or scalar-weighted) edge list."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(in_dim, out_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim))
        nn.init.xavier_uniform_(self.weight)

    def forward(self, x, edge_index, edge_weight=None):
        return gcn_layer(x, edge_index, self.weight, self.bias, edge_weight)


class TypedGCNLayer(nn.Module):
    """
    Graph convolution over sampled edge types.

    Self-loops use ``self_weight``; an edge of type k >= 1 sends its source
    features through ``type_weight[k - 1]`` scaled by its assignment weight.
    Type 0 adds nothing to the adjacency, so it neither sends a message nor
    changes the normalization.
    """

    def __init__(self, in_dim: int, out_dim: int, n_edge_types: int):
        super().__init__()
        self.self_weight = nn.Parameter(torch.empty(in_dim, out_dim))
        self.type_weight = nn.Parameter(torch.empty(n_edge_types - 1, in_dim, out_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim))
        nn.init.xavier_uniform_(self.self_weight)
        for k in range(n_edge_types - 1):
            nn.init.xavier_uniform_(self.type_weight[k])

    def forward(self, x, edge_index, assignment):
        """
        Args:
            x: Shape [B, J, d_in]
            edge_index: Shape [E, 2]
            assignment: Shape [B, E, n]

        Returns:
            torch.Tensor: Shape [B, J, d_out]
        """
        num_nodes = x.shape[-2]
        send, recv = incidence(edge_index, num_nodes, x.dtype)
        adj = torch.einsum("et,bek,es->bkts", recv, assignment[..., 1:], send)
        degree = 1.0 + adj.sum(dim=(1, 3))
        inv_sqrt = degree.pow(-0.5)
        adj = inv_sqrt[:, None, :, None] * adj * inv_sqrt[:, None, None, :]

        own = (x @ self.self_weight) / degree[..., None]
        transformed = torch.einsum("bjd,kde->bkje", x, self.type_weight)
        messages = torch.einsum("bkts,bkse->bte", adj, transformed)
        return own + messages + self.bias


class EdgeBlock(nn.Module):
    """Linear map with ELU, optional batch normalization and dropout, applied per edge."""

    def __init__(self, in_dim: int, out_dim: int, dropout_p: float, use_batchnorm: bool):
        super().__init__()
        self.linear = nn.Linear(in_dim, out_dim)
        self.norm = nn.BatchNorm1d(out_dim) if use_batchnorm else None
        self.dropout = nn.Dropout(dropout_p)

    def forward(self, e):
        h = F.elu(self.linear(e))
        if self.norm is not None:
            shape = h.shape
            h = self.norm(h.reshape(-1, shape[-1])).reshape(shape)
        return self.dropout(h)


class Encoder(nn.Module):
    """
    Window -> edge logits.

    full:    GCN -> node2edge -> block (S) -> edge2node -> GCN -> node2edge
             -> concat S -> linear -> logits
    compact: GCN -> node2edge -> block -> logits
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.hidden_dim
        self.gcn1 = GCNLayer(config.seq_len * config.feature_dim, d)
        self.block1 = EdgeBlock(2 * d, d, config.dropout_p, config.use_batchnorm)
        if config.encoder == "full":
            self.gcn2 = GCNLayer(d, d)
            self.merge = nn.Linear(3 * d, d)
        self.head = nn.Linear(d, config.n_edge_types)

    def forward(self, inputs: torch.Tensor, edge_index: torch.Tensor) -> torch.Tensor:
        """
        Args:
            inputs: Shape [B, seq_len, J, feature_dim] (or unbatched)
            edge_index: Shape [E, 2]

        Returns:
            torch.Tensor: Logits, shape [B, E, n_edge_types]
        """
        unbatched = inputs.dim() == 3
        if unbatched:
            inputs = inputs.unsqueeze(0)
        _check_window(inputs, self.config)

        batch, steps, num_nodes, features = inputs.shape
        x = inputs.permute(0, 2, 1, 3).reshape(batch, num_nodes, steps * features)
        h = F.elu(self.gcn1(x, edge_index))
        skip = self.block1(node_to_edge(h, edge_index))
        if self.config.encoder == "full":
            h = F.elu(self.gcn2(edge_to_node(skip, edge_index, num_nodes), edge_index))
            e = torch.cat([node_to_edge(h, edge_index), skip], dim=-1)
            logits = self.head(F.elu(self.merge(e)))
        else:
            logits = self.head(skip)
        return logits[0] if unbatched else logits


class GCNLSTMCell(nn.Module):
    """LSTM cell whose four gate maps on [x_t || h] are typed graph convolutions."""

    def __init__(self, input_dim: int, hidden_dim: int, n_edge_types: int):
        super().__init__()
        width = input_dim + hidden_dim
        self.input_gate = TypedGCNLayer(width, hidden_dim, n_edge_types)
        self.forget_gate = TypedGCNLayer(width, hidden_dim, n_edge_types)
        self.output_gate = TypedGCNLayer(width, hidden_dim, n_edge_types)
        self.cell_gate = TypedGCNLayer(width, hidden_dim, n_edge_types)

    def forward(self, x, h, c, edge_index, assignment):
        z = torch.cat([x, h], dim=-1)
        i = torch.sigmoid(self.input_gate(z, edge_index, assignment))
        f = torch.sigmoid(self.forget_gate(z, edge_index, assignment))
        o = torch.sigmoid(self.output_gate(z, edge_index, assignment))
        g = torch.tanh(self.cell_gate(z, edge_index, assignment))
        c = f * c + i * g
        h = o * torch.tanh(c)
        return h, c


class Decoder(nn.Module):
    """
    Window + sampled edges -> next frame.

    The GCN-LSTM runs over the input frames; its final state goes through
    node2edge, an edge block whose output is scaled by each edge's non-zero
    type mass, edge2node (added to the node's own state) and a typed output
    GCN.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.hidden_dim
        self.cell = GCNLSTMCell(config.feature_dim, d, config.n_edge_types)
        self.block = EdgeBlock(2 * d, d, config.dropout_p, config.use_batchnorm)
        self.output = TypedGCNLayer(d, config.feature_dim, config.n_edge_types)

    def forward(self, inputs, assignment, edge_index):
        """
        Args:
            inputs: Shape [B, seq_len, J, feature_dim] (or unbatched)
            assignment: Shape [B, E, n] sampled edge types (or unbatched)
            edge_index: Shape [E, 2]

        Returns:
            torch.Tensor: Predicted next frame, shape [B, J, feature_dim]
        """
        unbatched = inputs.dim() == 3
        if unbatched:
            inputs = inputs.unsqueeze(0)
            assignment = assignment.unsqueeze(0)
        _check_window(inputs, self.config)
        if assignment.shape[1:] != (edge_index.shape[0], self.config.n_edge_types):
            raise ShapeMismatch(
                f"Edge assignment of shape {tuple(assignment.shape)} for "
                f"{edge_index.shape[0]} edges and {self.config.n_edge_types} types"
            )

        batch, steps, num_nodes, _ = inputs.shape
        h = inputs.new_zeros(batch, num_nodes, self.config.hidden_dim)
        c = inputs.new_zeros(batch, num_nodes, self.config.hidden_dim)
        for t in range(steps):
            h, c = self.cell(inputs[:, t], h, c, edge_index, assignment)

        connected = assignment[..., 1:].sum(dim=-1, keepdim=True)
        e = self.block(node_to_edge(h, edge_index)) * connected
        nodes = edge_to_node(e, edge_index, num_nodes) + h
        out = self.output(nodes, edge_index, assignment)
        if self.config.residual_output:
            out = inputs[:, -1] + out
        return out[0] if unbatched else out


def _check_window(inputs, config: ModelConfig):
    if inputs.dim() != 4 or inputs.shape[1] != config.seq_len or inputs.shape[3] != config.feature_dim:
        raise ShapeMismatch(
            f"Expected windows of shape [B, {config.seq_len}, J, {config.feature_dim}], "
            f"got {tuple(inputs.shape)}"
        )


class RelationalModel(nn.Module):
    """Encoder, edge sampler and decoder."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config)
        self.decoder = Decoder(config)

    @property
    def prior(self) -> tuple:
        return self.config.resolved_prior

    def forward(self, inputs, edge_index, hard: bool = None, generator=None):
        """
        Returns:
            tuple: (predicted next frame, edge logits, sampled edge assignment)
        """
        logits = self.encoder(inputs, edge_index)
        if hard is None:
            hard = self.config.hard_sample
        edges = gumbel_softmax(logits, self.config.temperature, hard=hard, generator=generator)
        return self.decoder(inputs, edges, edge_index), logits, edges


def save_checkpoint(path, model: RelationalModel, extra: dict = None):
    """
    Write parameters and buffers with the model config.

    Floating tensors are stored as float32 blocks; integer buffers go into the header.
    """
    blocks, integers, manifest = {}, {}, []
    for name, tensor in model.state_dict().items():
        value = tensor.detach().cpu()
        if value.is_floating_point():
            blocks[name] = value.numpy()
            manifest.append({"name": name, "shape": list(value.shape)})
        else:
            integers[name] = value.tolist()
    header = {
        "model_config": model.config.to_dict(),
        "parameters": manifest,
        "integer_buffers": integers,
        "version": __version__,
        "extra": extra or {},
    }
    return write_blocks(path, CHECKPOINT_FORMAT, header, blocks)


def load_checkpoint(path):
    """
    Rebuild a model from a checkpoint.

    Returns:
        tuple: (RelationalModel in eval mode, header dict)

    Raises:
        StorageError: If the file is unreadable or not a checkpoint
        CheckpointError: If the stored tensors do not fit the model they describe
    """
    header, blocks = read_blocks(path, CHECKPOINT_FORMAT)

    config_data = dict(header["model_config"])
    if config_data.get("prior") is not None:
        config_data["prior"] = tuple(config_data["prior"])
    model = RelationalModel(ModelConfig(**config_data))

    state = {name: torch.from_numpy(np.array(block)) for name, block in blocks.items()}
    for name, value in header.get("integer_buffers", {}).items():
        state[name] = torch.tensor(value, dtype=torch.long)
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as e:
        raise CheckpointError(f"{path}: {e}")
    model.eval()
    logger.debug("Loaded checkpoint {} ({} tensors)", path, len(state))
    return model, header
