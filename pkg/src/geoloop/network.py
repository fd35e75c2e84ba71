"""Fully connected Siamese embedding with hand-written backpropagation."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import as_rng
from .exceptions import DataError, DivergenceError
from .supervision import PairSet, sample_batch

ACTIVATIONS = ("relu", "identity")


class EmbeddingModel:
    """Maps descriptors in R^n to embeddings in R^m.

    Hidden layers use ``activation``; the output layer is linear. Weights are
    stored as ``(out, in)`` matrices.
    """

    def __init__(self, weights, biases, activation="relu", margin=1.0):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if not margin > 0:
            raise ValueError("margin must be > 0")
        self.weights = [np.array(W, dtype=np.float64) for W in weights]
        self.biases = [np.array(b, dtype=np.float64).reshape(-1) for b in biases]
        self.activation = activation
        self.margin = float(margin)
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape[0] != b.shape[0]:
                raise ValueError(f"layer {k}: weight rows {W.shape[0]} != bias size {b.shape[0]}")
            if k and W.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: input size does not match previous layer")

    @classmethod
    def initialize(cls, layer_dims: Sequence[int], margin=1.0, activation="relu", random_state=None):
        """Glorot-uniform weights, zero biases."""
        rng = as_rng(random_state)
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"invalid layer_dims {layer_dims}")
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, activation, margin)

    @property
    def layer_dims(self) -> list:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def parameters(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for p in self.parameters():
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.weights, self.biases, self.activation, self.margin)

    def _act(self, z):
        return np.maximum(z, 0.0) if self.activation == "relu" else z

    def _act_grad(self, z):
        return (z > 0.0).astype(np.float64) if self.activation == "relu" else np.ones_like(z)

    def _check_input(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        if X2.ndim != 2 or X2.shape[1] != self.input_dim:
            raise DataError(f"descriptor dimension {X2.shape[-1]} != model input {self.input_dim}")
        return X2

    def forward(self, X, return_cache=False):
        X2 = self._check_input(X)
        cache = [X2]
        h = X2
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W.T + b
            h = z if k == last else self._act(z)
            cache.append(z)
        if return_cache:
            return h, cache
        return h[0] if np.asarray(X).ndim == 1 else h

    def backward(self, cache, grad_out) -> list:
        """Parameter gradients (same order as :meth:`parameters`) for ``dL/d phi``."""
        grads = [None] * (2 * len(self.weights))
        delta = grad_out
        for k in range(len(self.weights) - 1, -1, -1):
            inp = cache[0] if k == 0 else self._act(cache[k])
            grads[2 * k] = delta.T @ inp
            grads[2 * k + 1] = delta.sum(axis=0)
            if k:
                delta = (delta @ self.weights[k]) * self._act_grad(cache[k])
        return grads

    def to_dict(self) -> dict:
        return {
            "layer_dims": self.layer_dims,
            "activation": self.activation,
            "margin": self.margin,
            "weights": [W.ravel().tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddingModel":
        dims = d["layer_dims"]
        weights = [np.asarray(w, dtype=np.float64).reshape(o, i)
                   for w, i, o in zip(d["weights"], dims[:-1], dims[1:])]
        return cls(weights, d["biases"], d.get("activation", "relu"), d["margin"])

    def __repr__(self):
        return f"EmbeddingModel(layer_dims={self.layer_dims}, margin={self.margin})"


def forward(model: EmbeddingModel, x) -> np.ndarray:
    return model.forward(x)


def pair_distance(model: EmbeddingModel, xi, xj) -> float:
    return float(np.linalg.norm(model.forward(xi) - model.forward(xj)))


def contrastive_loss(model: EmbeddingModel, Xi, Xj, y, pos_weight: float = 1.0):
    """Weighted contrastive loss summed over a batch, and its exact gradients.

    Similar pairs (``y == 1``) cost ``pos_weight * D**2``; dissimilar pairs cost
    ``max(0, margin - D)**2``. Both Siamese branches share ``model``, so their
    gradient contributions are added.
    """
    y = np.asarray(y)
    if y.size == 0:
        raise DataError("contrastive_loss needs a non-empty batch")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("pair labels must be 0 or 1")
    y = y.astype(np.float64).reshape(-1)
    phi_i, cache_i = model.forward(Xi, return_cache=True)
    phi_j, cache_j = model.forward(Xj, return_cache=True)
    diff = phi_i - phi_j
    D = np.sqrt(np.sum(diff * diff, axis=1))
    hinge = np.maximum(model.margin - D, 0.0)
    w = np.where(y == 1.0, pos_weight, 1.0)
    loss = float(np.sum(w * (y * D**2 + (1.0 - y) * hinge**2)))

    # d/d diff of D^2 is 2 diff; of hinge^2 is -2 hinge diff / D (zero when D == 0)
    safe_D = np.where(D > 0.0, D, 1.0)
    coef = w * (2.0 * y - (1.0 - y) * 2.0 * hinge / safe_D * (D > 0.0))
    g = coef[:, None] * diff
    gi = model.backward(cache_i, g)
    gj = model.backward(cache_j, -g)
    return loss, [a + b for a, b in zip(gi, gj)]


def batch_loss(model, X, batch, pos_weight):
    """Contrastive loss for an ``(B, 3)`` index batch over descriptor matrix ``X``."""
    return contrastive_loss(model, X[batch[:, 0]], X[batch[:, 1]], batch[:, 2], pos_weight)


def numerical_gradient(model: EmbeddingModel, Xi, Xj, y, pos_weight=1.0, step=1e-6) -> np.ndarray:
    """Central differences of :func:`contrastive_loss` over the flat parameter vector."""
    probe = model.copy()
    theta = probe.get_flat()
    grad = np.empty_like(theta)
    for k in range(theta.size):
        orig = theta[k]
        theta[k] = orig + step
        probe.set_flat(theta)
        up, _ = contrastive_loss(probe, Xi, Xj, y, pos_weight)
        theta[k] = orig - step
        probe.set_flat(theta)
        down, _ = contrastive_loss(probe, Xi, Xj, y, pos_weight)
        theta[k] = orig
        grad[k] = (up - down) / (2.0 * step)
    return grad


def gradient_check(model, Xi, Xj, y, pos_weight=1.0, step=1e-6, floor=1e-4) -> float:
    """Max component-wise relative error between analytic and numeric gradients.

    Each component is compared on the scale ``max(|a|, |n|, floor * max(1, max|a|))``.
    Central differences carry roundoff of order ``eps * loss / step`` (~1e-8
    for batch losses near 50), which would otherwise dominate components that
    are exactly zero, such as the output-bias gradient whose two Siamese
    branches cancel.
    """
    _, grads = contrastive_loss(model, Xi, Xj, y, pos_weight)
    analytic = np.concatenate([g.ravel() for g in grads])
    numeric = numerical_gradient(model, Xi, Xj, y, pos_weight, step)
    scale = floor * max(1.0, float(np.max(np.abs(analytic))))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), scale)
    return float(np.max(np.abs(analytic - numeric) / denom))


@dataclass
class TrainConfig:
    epochs: int = 200
    batches_per_epoch: int = 20
    batch_positives: int = 8
    neg_ratio: int = 10
    learning_rate: float = 0.2
    lr_decay: float = 0.99
    pos_class_weight: float = 10.0
    seed: int = 0
    # bound on the global norm of the batch-mean gradient; 0 disables
    clip_norm: float = 0.341

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batches_per_epoch < 1 or self.batch_positives < 1 or self.neg_ratio < 1:
            raise ValueError("batches_per_epoch, batch_positives and neg_ratio must be >= 1")


def train(model: EmbeddingModel, pairs: PairSet, X, cfg: TrainConfig = TrainConfig()):
    """Plain SGD on the batch-mean gradient of sampled batches.

    The reported loss is the per-batch sum averaged over the epoch.
    Returns ``(trained copy, per-epoch mean loss)``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DataError(f"descriptor dimension {X.shape[-1]} != model input {model.input_dim}")
    if pairs.n_positives == 0 or pairs.n_negatives == 0:
        raise DataError(f"training needs both pair classes, got {pairs.summary()}")
    model = model.copy()
    rng = as_rng(cfg.seed)
    trace = []
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        total = 0.0
        for _ in range(cfg.batches_per_epoch):
            batch = sample_batch(pairs, None, rng, cfg.batch_positives, cfg.neg_ratio)
            # a diverging run overflows before the finiteness check below reports it
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = batch_loss(model, X, batch, cfg.pos_class_weight)
            grads = [g / len(batch) for g in grads]
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}; lower learning_rate (now {lr:g})"
                )
            if cfg.clip_norm > 0:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
                if norm > cfg.clip_norm:
                    grads = [g * (cfg.clip_norm / norm) for g in grads]
            for p, g in zip(model.parameters(), grads):
                p -= lr * g
            total += loss
        trace.append(total / cfg.batches_per_epoch)
        lr *= cfg.lr_decay
    if not np.all(np.isfinite(model.get_flat())):
        raise DivergenceError("parameters became non-finite during training")
    return model, trace


@dataclass(frozen=True)
class EmbeddedDescriptor:
    keyframe_id: int
    phi: np.ndarray


def embed_all(model: EmbeddingModel, frames) -> list:
    if not frames:
        return []
    # per frame, so results match single-vector forward calls bit for bit
    return [EmbeddedDescriptor(f.id, model.forward(f.descriptor.vector)) for f in frames]


def save_checkpoint(model: EmbeddingModel, path, config: dict = None) -> None:
    payload = model.to_dict()
    payload["config"] = config or {}
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_checkpoint(path) -> EmbeddingModel:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such checkpoint")
    try:
        return EmbeddingModel.from_dict(json.loads(path.read_text()))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise DataError(f"{path}: unreadable checkpoint ({exc})") from None


def write_loss_trace(trace, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,mean_loss\n")
        for epoch, loss in enumerate(trace):
            fh.write(f"{epoch},{loss!r}\n")


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
