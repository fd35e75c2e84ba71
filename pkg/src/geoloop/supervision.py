"""GPS-derived supervision: similarity kernel, pair labels and batch sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import as_rng, wrap_angles
from .exceptions import ConfigError, DataError

DEFAULT_GAMMA_T = 1.0 / (2.0 * 10.0**2)
DEFAULT_GAMMA_R = 1.0 / (2.0 * (math.pi / 6.0) ** 2)
DEFAULT_TEMPORAL_GUARD = 10
INVERSE_DISTANCE_OFFSET = 1e-6


@dataclass(frozen=True)
class KernelParams:
    gamma_t: float = DEFAULT_GAMMA_T
    gamma_R: float = DEFAULT_GAMMA_R

    def __post_init__(self):
        if not (self.gamma_t > 0 and self.gamma_R > 0):
            raise ConfigError("kernel bandwidths must be > 0")


@dataclass(frozen=True)
class LabelThresholds:
    tau_p: float = 0.9
    tau_n: float = 0.4

    def __post_init__(self):
        if not (0 < self.tau_n < self.tau_p < 1):
            raise ConfigError(
                f"need 0 < tau_n < tau_p < 1, got tau_n={self.tau_n}, tau_p={self.tau_p}"
            )


def _fix_array(fixes) -> np.ndarray:
    """Accept Keyframes, GpsFixes or an (N, 3) array of x, y, bearing."""
    if isinstance(fixes, np.ndarray):
        Z = np.asarray(fixes, dtype=np.float64)
    else:
        rows = []
        for f in fixes:
            f = getattr(f, "fix", f)
            rows.append((f.x, f.y, f.bearing))
        Z = np.array(rows, dtype=np.float64).reshape(-1, 3)
    if Z.ndim != 2 or Z.shape[1] != 3:
        raise DataError(f"expected (N, 3) array of x, y, bearing; got shape {Z.shape}")
    return Z


def _fix_triple(z):
    if isinstance(z, (tuple, list, np.ndarray)):
        return float(z[0]), float(z[1]), float(z[2])
    f = getattr(z, "fix", z)
    return f.x, f.y, f.bearing


def kernel(zi, zj, p: KernelParams = KernelParams()) -> float:
    """Gaussian similarity of two GPS fixes: translation term times heading term.

    Fixes may be GpsFix/Keyframe objects or ``(x, y, bearing)`` triples.
    """
    xi, yi, bi = _fix_triple(zi)
    xj, yj, bj = _fix_triple(zj)
    dx, dy = xi - xj, yi - yj
    dtheta = float(wrap_angles(bi - bj))
    return math.exp(-p.gamma_t * (dx * dx + dy * dy)) * math.exp(-p.gamma_R * dtheta * dtheta)


def kernel_matrix(Za, Zb=None, p: KernelParams = KernelParams()) -> np.ndarray:
    Za = _fix_array(Za)
    Zb = Za if Zb is None else _fix_array(Zb)
    dx = Za[:, None, 0] - Zb[None, :, 0]
    dy = Za[:, None, 1] - Zb[None, :, 1]
    dtheta = wrap_angles(Za[:, None, 2] - Zb[None, :, 2])
    return np.exp(-p.gamma_t * (dx * dx + dy * dy)) * np.exp(-p.gamma_R * dtheta * dtheta)


@dataclass
class SimilarityMatrix:
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def self_similarity(frames, p: KernelParams = KernelParams()) -> SimilarityMatrix:
    Z = _fix_array(frames)
    if Z.shape[0] < 1:
        raise DataError("self_similarity needs at least one keyframe")
    K = kernel_matrix(Z, None, p)
    np.fill_diagonal(K, 1.0)
    return SimilarityMatrix(K)


@dataclass
class PairSet:
    """Labelled index pairs ``(i, j)`` with ``i < j``.

    ``pos_weights``/``neg_weights`` are sampling weights (uniform until
    :func:`attach_distance_weights` is applied).
    """

    positives: np.ndarray
    negatives: np.ndarray
    pos_weights: np.ndarray = field(default=None)
    neg_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        self.positives = np.asarray(self.positives, dtype=np.int64).reshape(-1, 2)
        self.negatives = np.asarray(self.negatives, dtype=np.int64).reshape(-1, 2)
        if self.pos_weights is None:
            self.pos_weights = np.ones(len(self.positives))
        if self.neg_weights is None:
            self.neg_weights = np.ones(len(self.negatives))

    @property
    def n_positives(self) -> int:
        return len(self.positives)

    @property
    def n_negatives(self) -> int:
        return len(self.negatives)

    def shifted(self, offset: int) -> "PairSet":
        return PairSet(self.positives + offset, self.negatives + offset,
                       self.pos_weights.copy(), self.neg_weights.copy())

    @classmethod
    def concatenate(cls, sets: Sequence["PairSet"]) -> "PairSet":
        if not sets:
            return cls(np.zeros((0, 2)), np.zeros((0, 2)))
        return cls(
            np.vstack([s.positives for s in sets]),
            np.vstack([s.negatives for s in sets]),
            np.concatenate([s.pos_weights for s in sets]),
            np.concatenate([s.neg_weights for s in sets]),
        )

    def summary(self) -> str:
        return f"{self.n_positives} positive / {self.n_negatives} negative pairs"


def label_pairs(sim, th: LabelThresholds = LabelThresholds(),
                temporal_guard: int = DEFAULT_TEMPORAL_GUARD) -> PairSet:
    """Positives have ``K > tau_p``, negatives ``K < tau_n``; pairs closer than
    ``temporal_guard`` keyframes in sequence are never labelled."""
    K = np.asarray(sim, dtype=np.float64)
    i, j = np.triu_indices(K.shape[0], k=int(temporal_guard) + 1)
    k = K[i, j]
    pos = np.column_stack([i[k > th.tau_p], j[k > th.tau_p]])
    neg = np.column_stack([i[k < th.tau_n], j[k < th.tau_n]])
    return PairSet(pos, neg)


def inverse_distance_weights(pairs: np.ndarray, X: np.ndarray,
                             clamp=(0.1, 10.0), offset=INVERSE_DISTANCE_OFFSET) -> np.ndarray:
    """``1 / (d + offset)`` over raw-descriptor distances, clipped to
    ``[clamp[0], clamp[1]] * median``."""
    if len(pairs) == 0:
        return np.zeros(0)
    d = np.linalg.norm(X[pairs[:, 0]] - X[pairs[:, 1]], axis=1)
    w = 1.0 / (d + offset)
    med = np.median(w)
    return np.clip(w, clamp[0] * med, clamp[1] * med)


def attach_distance_weights(pairs: PairSet, X: np.ndarray) -> PairSet:
    """Weight negatives by inverse raw-descriptor distance; positives stay uniform."""
    X = np.asarray(X, dtype=np.float64)
    return PairSet(pairs.positives, pairs.negatives, np.ones(pairs.n_positives),
                   inverse_distance_weights(pairs.negatives, X))


def sample_batch(pairs: PairSet, descriptors=None, rng=None, batch_positives: int = 8,
                 neg_ratio: int = 10) -> np.ndarray:
    """Draw a training batch as an ``(B, 3)`` int array of ``(i, j, y)`` rows.

    Positives are drawn uniformly, negatives in proportion to their sampling
    weights; both without replacement. If ``descriptors`` is given the negative
    weights are (re)computed from it. ``y`` is 1 for similar pairs.
    """
    rng = as_rng(rng)
    n_neg = int(neg_ratio) * int(batch_positives)
    if pairs.n_positives == 0 or pairs.n_negatives == 0:
        raise DataError(f"cannot sample from an empty pair set ({pairs.summary()})")
    if batch_positives > pairs.n_positives or n_neg > pairs.n_negatives:
        raise DataError(
            f"batch of {batch_positives} positives + {n_neg} negatives exceeds "
            f"available {pairs.summary()}"
        )
    neg_w = pairs.neg_weights
    if descriptors is not None:
        neg_w = inverse_distance_weights(pairs.negatives, np.asarray(descriptors, dtype=np.float64))
    pi = rng.choice(pairs.n_positives, size=batch_positives, replace=False)
    ni = rng.choice(pairs.n_negatives, size=n_neg, replace=False, p=neg_w / neg_w.sum())
    batch = np.empty((batch_positives + n_neg, 3), dtype=np.int64)
    batch[:batch_positives, :2] = pairs.positives[pi]
    batch[:batch_positives, 2] = 1
    batch[batch_positives:, :2] = pairs.negatives[ni]
    batch[batch_positives:, 2] = 0
    return batch


def write_pgm(matrix, path, vmin=0.0, vmax=1.0) -> None:
    """Binary greyscale PGM, row-major, values scaled to 0..255."""
    M = np.asarray(matrix, dtype=np.float64)
    span = (vmax - vmin) or 1.0
    img = np.rint(np.clip((M - vmin) / span, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_matrix_csv(matrix, path) -> None:
    np.savetxt(path, np.asarray(matrix), delimiter=",", fmt="%.10g")
