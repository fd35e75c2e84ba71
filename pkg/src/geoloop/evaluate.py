"""Precision-recall and distance-histogram evaluation of embedding spaces."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import wrap_angles
from .exceptions import ConfigError, DataError
from .supervision import _fix_array

DEFAULT_SWEEP_SIZE = 256


@dataclass(frozen=True)
class GroundTruthRule:
    dist_thresh: float = 20.0
    bearing_aware: bool = False
    neg_floor: float = 50.0
    bearing_thresh: float = math.pi / 6

    def __post_init__(self):
        if not self.dist_thresh > 0:
            raise ConfigError("dist_thresh must be > 0")
        if not self.neg_floor > self.dist_thresh:
            raise ConfigError(
                f"neg_floor ({self.neg_floor}) must exceed dist_thresh ({self.dist_thresh})"
            )


@dataclass
class PrCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    auc: float
    n_ground_truth: int = 0

    @property
    def points(self) -> list:
        return list(zip(self.thresholds.tolist(), self.precision.tolist(), self.recall.tolist()))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "precision", "recall"])
            for t, p, r in self.points:
                w.writerow([repr(t), repr(p), repr(r)])


def _embeddings(embeddings) -> np.ndarray:
    E = np.asarray(embeddings, dtype=np.float64)
    if E.ndim != 2:
        raise DataError(f"embeddings must be 2-D, got shape {E.shape}")
    if not np.all(np.isfinite(E)):
        raise DataError("embeddings contain non-finite values")
    return E


def guarded_pairs(n: int, temporal_guard: int):
    """Index pairs ``i < j`` with ``j - i > temporal_guard``."""
    return np.triu_indices(n, int(temporal_guard) + 1)


def pair_distances(E: np.ndarray, i, j) -> np.ndarray:
    diff = E[i] - E[j]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def ground_truth_mask(Z: np.ndarray, i, j, rule: GroundTruthRule) -> np.ndarray:
    gps = np.hypot(Z[i, 0] - Z[j, 0], Z[i, 1] - Z[j, 1])
    ok = gps < rule.dist_thresh
    if rule.bearing_aware:
        ok &= np.abs(wrap_angles(Z[i, 2] - Z[j, 2])) <= rule.bearing_thresh
    return ok


def default_sweep(max_distance: float, size: int = DEFAULT_SWEEP_SIZE) -> np.ndarray:
    return np.linspace(0.0, float(max_distance), size)


def pr_curve(frames, embeddings, rule: GroundTruthRule = GroundTruthRule(),
             temporal_guard: int = 10, sweep=None, db_frames=None, db_embeddings=None) -> PrCurve:
    """Precision and recall of ε-threshold proposals over a distance sweep.

    With only ``frames`` given, queries and database are the same session and
    pairs are restricted by the temporal guard. Passing ``db_frames`` and
    ``db_embeddings`` evaluates every query against a separate database
    (no guard). Precision is 1 when nothing is proposed.
    """
    Zq = _fix_array(frames)
    Eq = _embeddings(embeddings)
    if len(Zq) != len(Eq):
        raise DataError(f"{len(Eq)} embeddings for {len(Zq)} frames")
    if db_frames is None:
        i, j = guarded_pairs(len(Zq), temporal_guard)
        Z_all, E_all = Zq, Eq
        jj = j
    else:
        Zd = _fix_array(db_frames)
        Ed = _embeddings(db_embeddings)
        if len(Zd) != len(Ed) or Ed.shape[1] != Eq.shape[1]:
            raise DataError("database frames and embeddings are misaligned")
        i, j = np.meshgrid(np.arange(len(Zq)), np.arange(len(Zd)), indexing="ij")
        i, j = i.ravel(), j.ravel()
        Z_all, E_all = np.vstack([Zq, Zd]), np.vstack([Eq, Ed])
        jj = j + len(Zq)
    d = pair_distances(E_all, i, jj)
    gt = ground_truth_mask(Z_all, i, jj, rule)
    n_gt = int(gt.sum())
    if n_gt == 0:
        raise DataError("undefined recall: no ground-truth positive pairs under the rule")
    if sweep is None:
        sweep = default_sweep(d.max() if d.size else 0.0)
    sweep = np.asarray(sweep, dtype=np.float64).reshape(-1)
    if sweep.size == 0 or np.any(np.diff(sweep) < 0):
        raise ConfigError("sweep must be a non-empty ascending sequence")
    order = np.argsort(d, kind="stable")
    d_sorted = d[order]
    tp_cum = np.concatenate([[0], np.cumsum(gt[order])])
    # proposals at τ are all pairs with d <= τ
    n_prop = np.searchsorted(d_sorted, sweep, side="right")
    tp = tp_cum[n_prop]
    precision = np.where(n_prop > 0, tp / np.maximum(n_prop, 1), 1.0)
    recall = tp / n_gt
    auc = float(np.trapezoid(precision, recall)) if recall.size > 1 else 0.0
    return PrCurve(sweep, precision, recall, min(max(auc, 0.0), 1.0), n_gt)


def ranked_auc(frames, embeddings, rule: GroundTruthRule = GroundTruthRule(),
               temporal_guard: int = 10) -> float:
    """Area under the PR curve with one operating point per distinct distance.

    Independent of any sweep resolution; anchored at (recall 0, precision 1).
    """
    Z = _fix_array(frames)
    E = _embeddings(embeddings)
    i, j = guarded_pairs(len(Z), temporal_guard)
    d = pair_distances(E, i, j)
    gt = ground_truth_mask(Z, i, j, rule)
    if not gt.any():
        raise DataError("undefined recall: no ground-truth positive pairs under the rule")
    order = np.argsort(d, kind="stable")
    d_sorted, g = d[order], gt[order]
    # operating points only where the distance changes, so ties are atomic
    last = np.concatenate([d_sorted[1:] != d_sorted[:-1], [True]])
    tp = np.cumsum(g)[last]
    n = np.arange(1, len(g) + 1)[last]
    recall = np.concatenate([[0.0], tp / gt.sum()])
    precision = np.concatenate([[1.0], tp / n])
    return float(np.trapezoid(precision, recall))


def knn_pr_curve(frames, embeddings, rule: GroundTruthRule = GroundTruthRule(),
                 temporal_guard: int = 10, max_k: int = 10) -> PrCurve:
    """PR curve where each query proposes its ``k`` nearest guarded neighbours.

    The sweep runs over ``k = 1..max_k``; neighbours come from the KD-tree,
    over-fetching by the ``2 * guard + 1`` frames the guard can exclude.
    """
    from .index import KdIndex

    if max_k < 1:
        raise ConfigError("max_k must be >= 1")
    Z = _fix_array(frames)
    E = _embeddings(embeddings)
    n = len(Z)
    i, j = guarded_pairs(n, temporal_guard)
    gt_total = int(ground_truth_mask(Z, i, j, rule).sum())
    if gt_total == 0:
        raise DataError("undefined recall: no ground-truth positive pairs under the rule")
    index = KdIndex(E.shape[1]).insert_many(enumerate(E))
    fetch = max_k + 2 * int(temporal_guard) + 1
    ranks = [[c for c, _ in index.query_knn(E[q], fetch) if abs(c - q) > temporal_guard][:max_k]
             for q in range(n)]
    precision, recall = [], []
    for k in range(1, max_k + 1):
        pairs = sorted({(min(q, c), max(q, c)) for q in range(n) for c in ranks[q][:k]})
        if not pairs:
            precision.append(1.0)
            recall.append(0.0)
            continue
        a = np.array(pairs)
        correct = ground_truth_mask(Z, a[:, 0], a[:, 1], rule)
        precision.append(float(correct.mean()))
        recall.append(float(correct.sum()) / gt_total)
    precision, recall = np.array(precision), np.array(recall)
    auc = float(np.trapezoid(precision, recall)) if max_k > 1 else 0.0
    ks = np.arange(1, max_k + 1, dtype=np.float64)
    return PrCurve(ks, precision, recall, min(max(auc, 0.0), 1.0), gt_total)


@dataclass
class Histograms:
    edges: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    overlap: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_left", "bin_right", "pos_mass", "neg_mass"])
            for k in range(len(self.pos)):
                w.writerow([repr(float(self.edges[k])), repr(float(self.edges[k + 1])),
                            repr(float(self.pos[k])), repr(float(self.neg[k]))])


def histogram_overlap(p, n) -> float:
    return float(np.minimum(np.asarray(p), np.asarray(n)).sum())


def distance_histograms(frames, embeddings, rule: GroundTruthRule = GroundTruthRule(),
                        bins: int = 50, temporal_guard: int = 10) -> Histograms:
    """Normalized embedded-distance histograms of positive and negative pairs.

    Positives are guarded pairs closer than ``rule.dist_thresh``; negatives are
    at least ``rule.neg_floor`` apart. Bins span ``[0, max distance]``.
    """
    if bins < 1:
        raise ConfigError("bins must be >= 1")
    Z = _fix_array(frames)
    E = _embeddings(embeddings)
    if len(Z) != len(E):
        raise DataError(f"{len(E)} embeddings for {len(Z)} frames")
    i, j = guarded_pairs(len(Z), temporal_guard)
    d = pair_distances(E, i, j)
    gps = np.hypot(Z[i, 0] - Z[j, 0], Z[i, 1] - Z[j, 1])
    pos, neg = d[gps < rule.dist_thresh], d[gps >= rule.neg_floor]
    if pos.size == 0 or neg.size == 0:
        raise DataError(f"empty class: {pos.size} positive and {neg.size} negative pairs")
    top = float(d.max())
    edges = np.linspace(0.0, top if top > 0 else 1.0, bins + 1)
    hp, _ = np.histogram(pos, edges)
    hn, _ = np.histogram(neg, edges)
    hp = hp / hp.sum()
    hn = hn / hn.sum()
    return Histograms(edges, hp, hn, histogram_overlap(hp, hn))


@dataclass
class SpaceReport:
    raw_curve: PrCurve
    learned_curve: PrCurve
    raw_hist: Histograms
    learned_hist: Histograms
    raw_eps: dict = field(default_factory=dict)
    learned_eps: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "auc_raw": self.raw_curve.auc,
            "auc_learned": self.learned_curve.auc,
            "overlap_raw": self.raw_hist.overlap,
            "overlap_learned": self.learned_hist.overlap,
            "overlap_ratio": (self.learned_hist.overlap / self.raw_hist.overlap
                              if self.raw_hist.overlap > 0 else math.nan),
            "eps_raw": self.raw_eps,
            "eps_learned": self.learned_eps,
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.learned_curve.write_csv(out / "pr_curve.csv")
        self.raw_curve.write_csv(out / "pr_curve_raw.csv")
        self.learned_hist.write_csv(out / "hist.csv")
        self.raw_hist.write_csv(out / "hist_raw.csv")
        with open(out / "summary.json", "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def eps_precision_recall(frames, embeddings, radius: float,
                         rule: GroundTruthRule = GroundTruthRule(), temporal_guard: int = 10) -> dict:
    """Precision and recall of the single operating point ``D <= radius``."""
    curve = pr_curve(frames, embeddings, rule, temporal_guard, sweep=[float(radius)])
    return {"radius": float(radius), "precision": float(curve.precision[0]),
            "recall": float(curve.recall[0])}


def compare_spaces(frames, raw_descriptors, model, rule: GroundTruthRule = GroundTruthRule(),
                   sweep=None, temporal_guard: int = 10, bins: int = 50,
                   radius=None) -> SpaceReport:
    """Evaluate raw descriptors and their embeddings under the same protocol.

    ``model`` is anything with ``forward(X)``; each space gets its own default
    sweep when ``sweep`` is None because raw and embedded scales differ.
    """
    X = _embeddings(raw_descriptors)
    E = np.atleast_2d(model.forward(X))
    curves = [pr_curve(frames, S, rule, temporal_guard, sweep) for S in (X, E)]
    hists = [distance_histograms(frames, S, rule, bins, temporal_guard) for S in (X, E)]
    report = SpaceReport(curves[0], curves[1], hists[0], hists[1])
    if radius is not None:
        report.raw_eps = eps_precision_recall(frames, X, radius, rule, temporal_guard)
        report.learned_eps = eps_precision_recall(frames, E, radius, rule, temporal_guard)
    return report


def write_ppm(matrix, path, vmin=None, vmax=None) -> None:
    """Grayscale binary PPM (P6) of a matrix, value scaled to 0..255."""
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim != 2:
        raise DataError("matrix must be 2-D")
    lo = M.min() if vmin is None else vmin
    hi = M.max() if vmax is None else vmax
    scale = (M - lo) / (hi - lo) if hi > lo else np.zeros_like(M)
    g = np.rint(np.clip(scale, 0.0, 1.0) * 255).astype(np.uint8)
    rgb = np.repeat(g[:, :, None], 3, axis=2)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{M.shape[1]} {M.shape[0]}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def rule_dict(rule: GroundTruthRule) -> dict:
    return asdict(rule)
