"""
Training loop, evaluation and edge-recovery metrics.

Training minimizes reconstruction MSE of the next frame plus a beta-weighted
KL term that pulls the edge posterior towards a sparse prior. Evaluation
averages the edge posterior over windows and keeps the edges whose best
non-zero type reaches a confidence threshold.
"""

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from loguru import logger
from torch.optim.lr_scheduler import StepLR

from .config import validate
from .model import RelationalModel, ShapeMismatch, elbo_loss, gumbel_softmax, save_checkpoint
from .models import (
    EvalConfig,
    EvalReport,
    GroundTruthGraph,
    HighConfidenceEdge,
    ModelConfig,
    TrainConfig,
    TrainingTensor,
)
from .pose import rotate_z


LOG_COLUMNS = ("epoch", "train_mse", "val_mse", "kl", "lr")


class TrainingError(Exception):
    """Exception raised for training and evaluation failures."""
    pass


class NonFiniteLoss(TrainingError):
    """The loss became NaN or infinite."""
    pass


class ArityMismatch(TrainingError):
    """Posterior and ground truth disagree on the number of edges."""
    pass


@dataclass
class EpochStats:
    """Losses of one epoch."""
    epoch: int
    train_mse: float
    val_mse: float
    kl: float
    lr: float


@dataclass
class TrainResult:
    """
    Outcome of a training run.

    Attributes:
        model: Model holding the best-validation parameters, in eval mode
        history: One EpochStats per epoch
        best_epoch: Epoch whose parameters were kept
        initial_val_mse: Validation MSE before the first update
    """
    model: RelationalModel
    history: list
    best_epoch: int
    initial_val_mse: float

    @property
    def best_val_mse(self) -> float:
        return self.history[self.best_epoch - 1].val_mse


def beta_at(config: TrainConfig, epoch: int) -> float:
    """
    KL weight for a 1-based epoch.

    The warmup schedule rises linearly from 0 at epoch 1 and reaches
    ``config.beta`` after ceil(warmup_fraction * epochs) epochs.
    """
    if config.beta_schedule == "constant":
        return config.beta
    warm = math.ceil(config.warmup_fraction * config.epochs)
    if warm == 0:
        return config.beta
    return config.beta * min(1.0, (epoch - 1) / warm)


def _check_data(config: ModelConfig, data: TrainingTensor):
    if data.seq_len != config.seq_len or data.feature_dim != config.feature_dim:
        raise ShapeMismatch(
            f"{data.split_tag} windows have seq_len={data.seq_len}, feature_dim={data.feature_dim}; "
            f"the model expects seq_len={config.seq_len}, feature_dim={config.feature_dim}"
        )


def _augment(batch: np.ndarray, factor: int, rng: np.random.Generator) -> np.ndarray:
    if factor == 0:
        return batch
    copies = [batch] + [rotate_z(batch, rng.uniform(0.0, 2.0 * math.pi)) for _ in range(factor)]
    return np.concatenate(copies, axis=0)


def _batches(total: int, batch_size: int, order=None):
    order = np.arange(total) if order is None else order
    for start in range(0, total, batch_size):
        yield order[start:start + batch_size]


def validation_metrics(model: RelationalModel, data: TrainingTensor, batch_size: int = 64, seed: int = 0):
    """
    One-step reconstruction MSE and mean KL over a tensor.

    Returns:
        tuple: (recon_mse, kl)
    """
    model.eval()
    generator = torch.Generator().manual_seed(seed)
    edge_index = torch.as_tensor(data.edge_index, dtype=torch.long)
    prior = model.prior
    sq_err, kl_sum = 0.0, 0.0
    with torch.no_grad():
        for idx in _batches(data.num_windows, batch_size):
            x = torch.from_numpy(np.ascontiguousarray(data.sequences[idx]))
            pred, logits, _ = model(x[:, :-1], edge_index, generator=generator)
            _, recon, kl = elbo_loss(pred, x[:, -1], logits, prior, 0.0)
            sq_err += recon.item() * len(idx)
            kl_sum += kl.item() * len(idx)
    return sq_err / data.num_windows, kl_sum / data.num_windows


def _write_log_row(path, stats: EpochStats, header: bool):
    with Path(path).open("w" if header else "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow(LOG_COLUMNS)
        writer.writerow([stats.epoch, stats.train_mse, stats.val_mse, stats.kl, stats.lr])


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    train_data: TrainingTensor,
    val_data: TrainingTensor,
    log_path=None,
    checkpoint_dir=None,
) -> TrainResult:
    """
    Fit a model with Adam on the ELBO.

    Every batch is extended by ``augment_factor`` copies rotated about z by
    fresh random angles. The parameters with the lowest validation MSE are
    kept. Given the same seed and data, two runs produce identical histories.

    Args:
        model_config: Architecture
        train_config: Optimization settings
        train_data: Training windows
        val_data: Validation windows; an empty tensor falls back to the training windows
        log_path: Optional CSV file with one row per epoch
        checkpoint_dir: Directory for periodic checkpoints (``checkpoint_every``)

    Returns:
        TrainResult: Best model and loss history

    Raises:
        NonFiniteLoss: If a loss becomes NaN or infinite
        ShapeMismatch: If the windows do not fit the model
    """
    validate("model", model_config)
    validate("train", train_config)
    if train_data.num_windows == 0:
        raise TrainingError("No training windows")
    if val_data is None or val_data.num_windows == 0:
        logger.warning("Validation split is empty; validating on the training windows")
        val_data = train_data
    _check_data(model_config, train_data)
    _check_data(model_config, val_data)

    seed = train_config.seed
    torch.manual_seed(seed)
    generator = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)

    model = RelationalModel(model_config)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_config.learning_rate)
    scheduler = StepLR(optimizer, step_size=train_config.lr_decay_every, gamma=train_config.lr_decay)
    edge_index = torch.as_tensor(train_data.edge_index, dtype=torch.long)
    prior = model_config.resolved_prior

    initial_val_mse, initial_kl = validation_metrics(model, val_data, seed=seed)
    logger.info("Initial validation MSE {:.6f}, KL {:.6f}", initial_val_mse, initial_kl)

    history = []
    best_epoch, best_val, best_state = 0, math.inf, None
    for epoch in range(1, train_config.epochs + 1):
        model.train()
        beta = beta_at(train_config, epoch)
        order = torch.randperm(train_data.num_windows, generator=generator).numpy()
        sq_err, kl_sum, seen = 0.0, 0.0, 0
        for idx in _batches(train_data.num_windows, train_config.batch_size, order):
            batch = _augment(train_data.sequences[idx], train_config.augment_factor, rng)
            x = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32))
            pred, logits, _ = model(x[:, :-1], edge_index, generator=generator)
            loss, recon, kl = elbo_loss(pred, x[:, -1], logits, prior, beta)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(
                    f"Loss became {loss.item()} in epoch {epoch}; lower the learning rate"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            sq_err += recon.item() * len(batch)
            kl_sum += kl.item() * len(batch)
            seen += len(batch)

        lr = optimizer.param_groups[0]["lr"]
        scheduler.step()
        val_mse, _ = validation_metrics(model, val_data, seed=seed)
        if not math.isfinite(val_mse):
            raise NonFiniteLoss(f"Validation MSE became {val_mse} in epoch {epoch}")

        stats = EpochStats(epoch, sq_err / seen, val_mse, kl_sum / seen, lr)
        history.append(stats)
        logger.info(
            "Epoch {}/{}: train MSE {:.6f}, val MSE {:.6f}, KL {:.6f}, beta {:.3f}, lr {:.2e}",
            epoch, train_config.epochs, stats.train_mse, val_mse, stats.kl, beta, lr,
        )
        if log_path is not None:
            _write_log_row(log_path, stats, header=epoch == 1)
        if val_mse < best_val:
            best_epoch, best_val = epoch, val_mse
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if checkpoint_dir is not None and train_config.checkpoint_every and epoch % train_config.checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"epoch_{epoch:03d}.ckpt", model, extra={"epoch": epoch})

    model.load_state_dict(best_state)
    model.eval()
    logger.info("Best validation MSE {:.6f} at epoch {}", best_val, best_epoch)
    return TrainResult(model=model, history=history, best_epoch=best_epoch, initial_val_mse=initial_val_mse)


def select_edges(confidences: np.ndarray, edge_index: np.ndarray, threshold: float) -> list:
    """
    Edges whose most probable non-zero type has probability >= threshold.

    A threshold of 1 or more selects nothing.
    """
    if threshold >= 1.0:
        return []
    selected = []
    for (source, target), row in zip(np.asarray(edge_index), np.asarray(confidences)):
        k = 1 + int(np.argmax(row[1:]))
        if row[k] >= threshold:
            selected.append(HighConfidenceEdge(
                source=int(source), target=int(target), edge_type=k, probability=float(row[k]),
            ))
    return selected


def edge_accuracy(posterior, ground_truth, edge_index=None) -> float:
    """
    Fraction of edges whose argmax type matches the ground truth, maximized
    over every relabeling of the latent types.

    Args:
        posterior: Shape [..., E, n] probabilities or logits
        ground_truth: Labels of shape [..., E], or a GroundTruthGraph
        edge_index: Required with a GroundTruthGraph unless the posterior
            covers all ordered pairs in row-major order

    Raises:
        ArityMismatch: If the edge counts differ
    """
    posterior = np.asarray(posterior)
    if isinstance(ground_truth, GroundTruthGraph):
        if edge_index is None:
            n = ground_truth.num_nodes
            edge_index = np.asarray([(s, t) for s in range(n) for t in range(n) if s != t], dtype=np.int64)
        labels = ground_truth.edge_labels(np.asarray(edge_index).reshape(-1, 2))
    else:
        labels = np.asarray(ground_truth)
    if posterior.shape[:-1] != labels.shape:
        raise ArityMismatch(
            f"Posterior covers {posterior.shape[:-1]} edges, ground truth {labels.shape}"
        )

    predicted = posterior.argmax(axis=-1)
    n_types = posterior.shape[-1]
    best = 0.0
    for perm in itertools.permutations(range(n_types)):
        best = max(best, float(np.mean(np.asarray(perm)[predicted] == labels)))
    return best


def random_baseline_accuracy(posterior, labels, seed: int = 0) -> float:
    """Edge accuracy after shuffling each window's posterior rows across edges."""
    posterior = np.asarray(posterior)
    rng = np.random.default_rng(seed)
    flat = posterior.reshape((-1,) + posterior.shape[-2:])
    shuffled = np.stack([window[rng.permutation(window.shape[0])] for window in flat])
    return edge_accuracy(shuffled.reshape(posterior.shape), labels)


def evaluate(model: RelationalModel, data: TrainingTensor, config: EvalConfig = None) -> EvalReport:
    """
    Edge confidences, selected edges and reconstruction metrics.

    Confidences are the encoder's softmax posterior averaged over all windows.
    Reconstruction predicts one step from observed frames and samples edges with a seeded
    generator. Data with ground-truth labels also gets the edge accuracy and
    the shuffled-posterior baseline.

    Args:
        model: Trained model
        data: Windows to evaluate
        config: Threshold, seed and batch size

    Returns:
        EvalReport
    """
    config = config or EvalConfig()
    validate("eval", config)
    _check_data(model.config, data)
    if data.num_windows == 0:
        raise TrainingError("No windows to evaluate")

    model.eval()
    generator = torch.Generator().manual_seed(config.seed)
    edge_index = torch.as_tensor(data.edge_index, dtype=torch.long)
    prior = model.prior
    posteriors = []
    sq_err, kl_sum = 0.0, 0.0
    with torch.no_grad():
        for idx in _batches(data.num_windows, config.batch_size):
            x = torch.from_numpy(np.ascontiguousarray(data.sequences[idx]))
            inputs = x[:, :-1]
            logits = model.encoder(inputs, edge_index)
            edges = gumbel_softmax(
                logits, model.config.temperature, hard=model.config.hard_sample, generator=generator
            )
            pred = model.decoder(inputs, edges, edge_index)
            _, recon, kl = elbo_loss(pred, x[:, -1], logits, prior, 0.0)
            sq_err += recon.item() * len(idx)
            kl_sum += kl.item() * len(idx)
            posteriors.append(F.softmax(logits, dim=-1).double().numpy())

    posterior = np.concatenate(posteriors, axis=0)
    confidences = posterior.mean(axis=0)
    selected = select_edges(confidences, data.edge_index, config.threshold)

    accuracy = baseline = None
    if data.edge_labels is not None:
        accuracy = edge_accuracy(posterior, data.edge_labels)
        baseline = random_baseline_accuracy(posterior, data.edge_labels, seed=config.seed)
        logger.info("Edge accuracy {:.4f} (shuffled baseline {:.4f})", accuracy, baseline)

    report = EvalReport(
        recon_mse=sq_err / data.num_windows,
        kl=kl_sum / data.num_windows,
        edge_confidences=confidences,
        high_confidence_edges=selected,
        threshold=config.threshold,
        edge_index=np.asarray(data.edge_index),
        node_labels=list(data.node_labels),
        edge_accuracy=accuracy,
        baseline_accuracy=baseline,
    )
    logger.info("Selected {} of {} edges at threshold {}", len(selected), data.num_edges, config.threshold)
    return report
