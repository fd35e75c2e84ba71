"""SE(2) pose graph with odometry and weak loop-closure factors.

The graph is solved in batch by re-linearized Gauss-Newton with Levenberg
damping. Node 0 carries the single prior and is held fixed during the solve,
which removes the gauge freedom exactly.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .core import Pose2, as_rng, se2_compose, se2_relative, wrap_angle, wrap_angles
from .exceptions import ConfigError, DataError, SingularSystemError

SIGMA_FLOOR = 1e-6
PRIOR_SIGMA = 1e-6
LOOP_SIGMA_TRANS = 3.0
LOOP_SIGMA_ROT = 0.3


def _check_information(info: np.ndarray) -> np.ndarray:
    info = np.asarray(info, dtype=np.float64)
    if info.shape != (3, 3):
        raise ConfigError(f"information must be 3x3, got {info.shape}")
    if not np.allclose(info, info.T, rtol=0.0, atol=1e-12):
        raise ConfigError("information must be symmetric")
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        raise ConfigError("information must be positive-definite") from None
    return info


@dataclass(frozen=True)
class Factor:
    kind: str
    i: int
    j: int
    measurement: Pose2
    information: np.ndarray = field(compare=False)

    def __post_init__(self):
        if self.kind not in ("odometry", "loop", "prior"):
            raise ConfigError(f"unknown factor kind {self.kind!r}")
        object.__setattr__(self, "information", _check_information(self.information))

    def residual(self, nodes) -> np.ndarray:
        if self.kind == "prior":
            xi = nodes[self.i]
            m = self.measurement
            return np.array([xi.x - m.x, xi.y - m.y, wrap_angle(xi.theta - m.theta)])
        return relative_residual(self.measurement, nodes[self.i], nodes[self.j])

    def chi2(self, nodes) -> float:
        r = self.residual(nodes)
        return float(r @ self.information @ r)


def relative_residual(measurement: Pose2, xi: Pose2, xj: Pose2) -> np.ndarray:
    """``measurement^-1 (+) (xi^-1 (+) xj)`` as a vector with a wrapped angle."""
    e = se2_relative(xi, xj)
    r = se2_relative(measurement, e)
    return np.array([r.x, r.y, r.theta])


def relative_jacobians(measurement: Pose2, xi: Pose2, xj: Pose2):
    """Jacobians of the relative residual with respect to ``xi`` and ``xj``."""
    ci, si = math.cos(xi.theta), math.sin(xi.theta)
    cm, sm = math.cos(measurement.theta), math.sin(measurement.theta)
    RmT = np.array([[cm, sm], [-sm, cm]])
    RiT = np.array([[ci, si], [-si, ci]])
    dRiT = np.array([[-si, ci], [-ci, -si]])
    dt = np.array([xj.x - xi.x, xj.y - xi.y])
    A = np.zeros((3, 3))
    B = np.zeros((3, 3))
    A[:2, :2] = -RmT @ RiT
    A[:2, 2] = RmT @ dRiT @ dt
    A[2, 2] = -1.0
    B[:2, :2] = RmT @ RiT
    B[2, 2] = 1.0
    return A, B


@dataclass(frozen=True)
class NoiseSpec:
    sigma_rot: float = 1e-3
    sigma_trans: float = 5e-2

    def __post_init__(self):
        if self.sigma_rot < 0 or self.sigma_trans < 0:
            raise ConfigError("noise sigmas must be >= 0")

    def information(self) -> np.ndarray:
        # a zero sigma means an exact measurement; floor it to stay finite
        st = max(self.sigma_trans, SIGMA_FLOOR)
        sr = max(self.sigma_rot, SIGMA_FLOOR)
        return np.diag([1.0 / st**2, 1.0 / st**2, 1.0 / sr**2])


def loop_information(sigma_trans: float = LOOP_SIGMA_TRANS, sigma_rot: float = LOOP_SIGMA_ROT) -> np.ndarray:
    return np.diag([1.0 / sigma_trans**2, 1.0 / sigma_trans**2, 1.0 / sigma_rot**2])


def inject_noise(true_rel: Pose2, spec: NoiseSpec, rng) -> Pose2:
    """Perturb a relative pose with independent Gaussian noise per component."""
    rng = as_rng(rng)
    dx, dy = rng.normal(0.0, 1.0, 2) * spec.sigma_trans
    dth = rng.normal(0.0, 1.0) * spec.sigma_rot
    return Pose2(true_rel.x + dx, true_rel.y + dy, true_rel.theta + dth)


class PoseGraph:
    """Node estimates plus factors; node 0 is anchored by the single prior."""

    def __init__(self, origin: Pose2 = Pose2()):
        self.nodes = [origin]
        self.factors = [Factor("prior", 0, 0, origin, np.diag([1.0 / PRIOR_SIGMA**2] * 3))]
        self._loops = set()

    def __len__(self):
        return len(self.nodes)

    @property
    def prior(self) -> Factor:
        return self.factors[0]

    def _check_node(self, i):
        if not 0 <= i < len(self.nodes):
            raise DataError(f"node {i} does not exist (graph has {len(self.nodes)} nodes)")

    def add_odometry(self, i: int, measured_rel: Pose2, spec: NoiseSpec = NoiseSpec()) -> int:
        """Append node ``i+1`` from node ``i`` and the measured relative pose."""
        self._check_node(i)
        if i != len(self.nodes) - 1:
            raise DataError(f"odometry must extend the last node {len(self.nodes) - 1}, got {i}")
        self.factors.append(Factor("odometry", i, i + 1, measured_rel, spec.information()))
        self.nodes.append(se2_compose(self.nodes[i], measured_rel))
        return i + 1

    def add_loop_closure(self, i: int, j: int, information=None) -> None:
        """Zero relative-pose constraint between nodes ``i`` and ``j``."""
        self._check_node(i)
        self._check_node(j)
        if i == j:
            raise DataError("loop closure needs two distinct nodes")
        key = (min(i, j), max(i, j))
        if key in self._loops:
            raise DataError(f"loop closure {key} already present")
        self._loops.add(key)
        info = loop_information() if information is None else information
        self.factors.append(Factor("loop", i, j, Pose2(), info))

    @property
    def loop_closures(self) -> list:
        return [(f.i, f.j) for f in self.factors if f.kind == "loop"]

    def chi2(self, nodes=None) -> float:
        nodes = self.nodes if nodes is None else nodes
        return float(sum(f.chi2(nodes) for f in self.factors))

    def as_array(self) -> np.ndarray:
        return np.array([[p.x, p.y, p.theta] for p in self.nodes]).reshape(-1, 3)

    def copy(self) -> "PoseGraph":
        g = PoseGraph.__new__(PoseGraph)
        g.nodes = list(self.nodes)
        g.factors = list(self.factors)
        g._loops = set(self._loops)
        return g


@dataclass
class OptimizeReport:
    initial_chi2: float
    final_chi2: float
    iterations: int
    converged: bool
    last_update_norm: float
    final_lambda: float
    chi2_history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "initial_chi2": self.initial_chi2,
            "final_chi2": self.final_chi2,
            "iterations": self.iterations,
            "converged": self.converged,
            "last_update_norm": self.last_update_norm,
            "final_lambda": self.final_lambda,
        }


def _check_connected(graph: PoseGraph) -> None:
    n = len(graph.nodes)
    rel = [(f.i, f.j) for f in graph.factors if f.kind != "prior"]
    if n == 1:
        return
    if not rel:
        raise SingularSystemError("graph has no relative factors; nodes beyond 0 are unconstrained")
    a = np.array(rel)
    adj = sp.coo_matrix((np.ones(len(a)), (a[:, 0], a[:, 1])), shape=(n, n))
    count, _ = connected_components(adj, directed=False)
    if count > 1:
        raise SingularSystemError(f"pose graph has {count} disconnected components")


def _linearize(graph: PoseGraph, nodes):
    """Normal equations over nodes 1..n-1 (node 0 is held fixed)."""
    n = len(nodes)
    dim = 3 * (n - 1)
    rows, cols, vals = [], [], []
    g = np.zeros(dim)

    def block(a, b, M):
        if a == 0 or b == 0:
            return
        r = np.repeat(np.arange(3 * (a - 1), 3 * a), 3)
        c = np.tile(np.arange(3 * (b - 1), 3 * b), 3)
        rows.append(r)
        cols.append(c)
        vals.append(M.ravel())

    for f in graph.factors:
        if f.kind == "prior":
            continue
        xi, xj = nodes[f.i], nodes[f.j]
        r = relative_residual(f.measurement, xi, xj)
        A, B = relative_jacobians(f.measurement, xi, xj)
        L = f.information
        block(f.i, f.i, A.T @ L @ A)
        block(f.i, f.j, A.T @ L @ B)
        block(f.j, f.i, B.T @ L @ A)
        block(f.j, f.j, B.T @ L @ B)
        if f.i:
            g[3 * (f.i - 1):3 * f.i] += A.T @ L @ r
        if f.j:
            g[3 * (f.j - 1):3 * f.j] += B.T @ L @ r
    if rows:
        H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(dim, dim)).tocsc()
    else:
        H = sp.csc_matrix((dim, dim))
    return H, g


def _apply(nodes, delta):
    out = [nodes[0]]
    for k, p in enumerate(nodes[1:]):
        d = delta[3 * k:3 * k + 3]
        out.append(Pose2(p.x + d[0], p.y + d[1], p.theta + d[2]))
    return out


def optimize(graph: PoseGraph, max_iters: int = 50, tol: float = 1e-8,
             initial_lambda: float = 1e-6):
    """Minimize the total chi2 in place; returns ``(graph, OptimizeReport)``.

    Steps that raise chi2 are rejected and the damping grows tenfold; accepted
    steps shrink it tenfold. Stops when the update norm falls below ``tol``.
    """
    _check_connected(graph)
    nodes = list(graph.nodes)
    chi2 = graph.chi2(nodes)
    report = OptimizeReport(chi2, chi2, 0, True, 0.0, initial_lambda, [chi2])
    if len(nodes) == 1:
        return graph, report
    lam = initial_lambda
    update_norm = math.inf
    it = 0
    while it < max_iters:
        it += 1
        H, g = _linearize(graph, nodes)
        A = H + lam * sp.identity(H.shape[0], format="csc")
        delta = spsolve(A, -g)
        if not np.all(np.isfinite(delta)):
            raise SingularSystemError("normal equations are singular; check gauge and connectivity")
        update_norm = float(np.linalg.norm(delta))
        trial = _apply(nodes, delta)
        trial_chi2 = graph.chi2(trial)
        if trial_chi2 <= chi2:
            nodes, chi2 = trial, trial_chi2
            lam = max(lam / 10.0, 1e-12)
            report.chi2_history.append(chi2)
        else:
            lam *= 10.0
            if lam > 1e12:
                break
        if update_norm < tol:
            break
    graph.nodes = nodes
    report.final_chi2 = chi2
    report.iterations = it
    report.last_update_norm = update_norm
    report.final_lambda = lam
    report.converged = update_norm < tol or update_norm <= 1e-3
    return graph, report


def ate_rmse(estimated, truth) -> float:
    """Root-mean-square position error, without any alignment."""
    E = _pose_array(estimated)
    T = _pose_array(truth)
    if len(E) != len(T):
        raise DataError(f"trajectory lengths differ: {len(E)} vs {len(T)}")
    if len(E) == 0:
        raise DataError("trajectories must be non-empty")
    return float(np.sqrt(np.mean(np.sum((E[:, :2] - T[:, :2]) ** 2, axis=1))))


def _pose_array(poses) -> np.ndarray:
    if isinstance(poses, np.ndarray):
        return poses.reshape(-1, 3)
    return np.array([[p.x, p.y, p.theta] for p in poses], dtype=np.float64).reshape(-1, 3)


def write_trajectory_csv(poses, path) -> None:
    A = _pose_array(poses)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "x", "y", "theta"])
        for k, (x, y, th) in enumerate(A):
            w.writerow([k, repr(float(x)), repr(float(y)), repr(float(th))])


@dataclass
class SlamReport:
    truth: list
    dead_reckoned: list
    optimized: list
    closures: list
    ate_dead_reckoned: float
    ate_optimized: float
    optimizations: int
    final_report: OptimizeReport = None

    @property
    def closure_precision(self) -> float:
        if not self.closures:
            return 1.0
        return float(np.mean([c["correct"] for c in self.closures]))

    def summary(self) -> dict:
        return {
            "nodes": len(self.truth),
            "closures": len(self.closures),
            "closure_precision": self.closure_precision,
            "ate_dead_reckoned": self.ate_dead_reckoned,
            "ate_optimized": self.ate_optimized,
            "ate_ratio": (self.ate_optimized / self.ate_dead_reckoned
                          if self.ate_dead_reckoned > 0 else math.nan),
            "optimizations": self.optimizations,
            "final_chi2": self.final_report.final_chi2 if self.final_report else 0.0,
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(self.truth, out / "trajectory_truth.csv")
        write_trajectory_csv(self.dead_reckoned, out / "trajectory_dead_reckoned.csv")
        write_trajectory_csv(self.optimized, out / "trajectory_optimized.csv")
        with open(out / "closures.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "j", "embedded_distance", "truth_distance", "correct_flag"])
            for c in self.closures:
                w.writerow([c["i"], c["j"], repr(c["embedded_distance"]),
                            repr(c["truth_distance"]), int(c["correct"])])
        with open(out / "slam_summary.json", "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def run_slam_experiment(frames, truth, model, accept_radius: float = 1.0,
                        noise: NoiseSpec = NoiseSpec(), temporal_guard: int = 10,
                        reoptimize_every: int = 10, correct_dist: float = 20.0,
                        random_state=None, leaf_size: int = 16) -> SlamReport:
    """Online loop-closure SLAM over a keyframe sequence.

    Each keyframe is embedded and queried against the index (ε-NN with radius
    ``accept_radius``, temporally guarded); the nearest surviving match becomes
    a loop factor. Odometry is the true relative motion plus injected noise.
    The graph is re-solved every ``reoptimize_every`` insertions and at the end.
    """
    from .index import KdIndex

    if len(frames) != len(truth):
        raise DataError(f"{len(frames)} frames but {len(truth)} truth poses")
    if not frames:
        raise DataError("SLAM run needs at least one keyframe")
    if accept_radius < 0:
        raise ConfigError("accept_radius must be >= 0")
    if reoptimize_every < 1:
        raise ConfigError("reoptimize_every must be >= 1")
    rng = as_rng(random_state)
    X = np.vstack([f.descriptor.vector for f in frames])
    E = np.atleast_2d(model.forward(X))
    index = KdIndex(E.shape[1], leaf_size)
    graph = PoseGraph(truth[0])
    dead = [truth[0]]
    closures = []
    optimizations = 0
    report = None
    for k in range(len(frames)):
        if k > 0:
            measured = inject_noise(se2_relative(truth[k - 1], truth[k]), noise, rng)
            graph.add_odometry(k - 1, measured, noise)
            dead.append(se2_compose(dead[-1], measured))
        hits = [(i, d) for i, d in index.query_radius(E[k], accept_radius)
                if k - i > temporal_guard]
        if hits:
            i, d = hits[0]
            graph.add_loop_closure(i, k)
            gap = math.hypot(truth[i].x - truth[k].x, truth[i].y - truth[k].y)
            closures.append({"i": int(i), "j": int(k), "embedded_distance": float(d),
                             "truth_distance": float(gap), "correct": bool(gap < correct_dist)})
        index.insert(k, E[k])
        if (k + 1) % reoptimize_every == 0:
            graph, report = optimize(graph)
            optimizations += 1
    graph, report = optimize(graph)
    optimizations += 1
    return SlamReport(
        truth=list(truth),
        dead_reckoned=dead,
        optimized=list(graph.nodes),
        closures=closures,
        ate_dead_reckoned=ate_rmse(dead, truth),
        ate_optimized=ate_rmse(graph.nodes, truth),
        optimizations=optimizations,
        final_report=report,
    )
