"""Synthetic driving sessions over a block grid with repeated laps.

Appearance is a latent field over the grid intersections (bilinearly
interpolated), pushed through a fixed random two-layer map together with the
heading and a slowly drifting nuisance signal. Sessions generated from the same
``seed`` share the world (latents, map weights); ``session`` selects a fresh
draw of nuisance phases and sensor noise, which is what a held-out test drive
looks like.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import Pose2, RngStream, wrap_angles
from .exceptions import ConfigError, DataError

NUISANCE_DIM = 1
GENERATOR_HIDDEN = 64
PERIOD_RANGE = (0.6, 1.8)


@dataclass
class WorldConfig:
    block_size: float = 20.0
    grid: tuple = (4, 4)
    # indices into the (rows+1) x (cols+1) lattice of street intersections,
    # row-major; the route is closed (last waypoint connects back to the first)
    route: list = field(default_factory=lambda: [0, 4, 24, 20])
    sample_spacing: float = 9.67
    laps: int = 2
    appearance_dim: int = 16
    descriptor_dim: int = 128
    nuisance_amplitude: float = 6.0
    descriptor_noise_sigma: float = 0.02
    gps_noise_sigma: float = 0.1
    seed: int = 42
    session: int = 0
    turn_radius: float = 40.0
    speed: float = 10.0
    gps_time_offset: float = 0.02
    # spacing of the appearance latent lattice; 0 means block_size
    appearance_cell: float = 30.0

    def __post_init__(self):
        self.grid = tuple(int(g) for g in self.grid)
        self.route = [int(r) for r in self.route]
        self.validate()

    @property
    def lattice_shape(self):
        return self.grid[0] + 1, self.grid[1] + 1

    @property
    def cell_size(self) -> float:
        return self.appearance_cell or self.block_size

    @property
    def appearance_shape(self):
        rows = int(math.ceil(self.grid[0] * self.block_size / self.cell_size)) + 1
        cols = int(math.ceil(self.grid[1] * self.block_size / self.cell_size)) + 1
        return rows, cols

    def validate(self):
        rows, cols = self.grid
        if rows < 1 or cols < 1:
            raise ConfigError("grid dimensions must be >= 1")
        for name in ("appearance_dim", "descriptor_dim", "laps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("nuisance_amplitude", "descriptor_noise_sigma", "gps_noise_sigma",
                     "turn_radius", "appearance_cell"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("block_size", "sample_spacing", "speed"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if len(self.route) < 2:
            raise ConfigError("route needs at least two waypoints")
        n_nodes = self.lattice_shape[0] * self.lattice_shape[1]
        bad = [r for r in self.route if not 0 <= r < n_nodes]
        if bad:
            raise ConfigError(f"route references out-of-grid waypoint(s) {bad}")
        if self.laps < 2:
            raise ConfigError("at least two laps are needed for revisits")

    def waypoint_xy(self, index: int) -> np.ndarray:
        _, cols = self.lattice_shape
        r, c = divmod(index, cols)
        return np.array([c * self.block_size, r * self.block_size], dtype=np.float64)


@dataclass
class SyntheticSession:
    truth_poses: list
    gps_rows: list
    descriptor_rows: list
    revisit_pairs: list
    lap: np.ndarray
    timestamps: np.ndarray
    config: WorldConfig

    def __len__(self):
        return len(self.truth_poses)

    def truth_array(self) -> np.ndarray:
        return np.array([p.to_vector() for p in self.truth_poses])

    def write(self, directory) -> dict:
        """Write ``descriptors.jsonl``, ``gps.jsonl``, ``truth.jsonl`` and ``world.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {
            "descriptors": d / "descriptors.jsonl",
            "gps": d / "gps.jsonl",
            "truth": d / "truth.jsonl",
            "world": d / "world.json",
        }
        _write_jsonl(paths["descriptors"], self.descriptor_rows)
        _write_jsonl(paths["gps"], self.gps_rows)
        _write_jsonl(paths["truth"], [
            {"t": float(t), "x": p.x, "y": p.y, "theta": p.theta}
            for t, p in zip(self.timestamps, self.truth_poses)
        ])
        paths["world"].write_text(json.dumps(asdict(self.config), indent=2, sort_keys=True) + "\n")
        return paths


def _write_jsonl(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def read_truth(path) -> tuple[np.ndarray, list]:
    """Read a truth log into ``(timestamps, poses)``."""
    ts, poses = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                ts.append(float(obj["t"]))
                poses.append(Pose2(obj["x"], obj["y"], obj["theta"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad truth row ({exc})") from None
    if not ts:
        raise DataError(f"{path}: empty stream")
    return np.array(ts), poses


class _Route:
    """Closed polyline through waypoints, corners replaced by circular arcs."""

    def __init__(self, points: np.ndarray, radius: float):
        pts = [p for i, p in enumerate(points) if not np.allclose(p, points[i - 1])]
        if len(pts) < 2:
            raise ConfigError("route collapses to a single point")
        pts = np.array(pts)
        n = len(pts)
        seg = [pts[(i + 1) % n] - pts[i] for i in range(n)]
        seg_len = [float(np.hypot(*s)) for s in seg]
        heading = [math.atan2(s[1], s[0]) for s in seg]

        # corner i sits at pts[i], between segment i-1 (incoming) and segment i
        corners = []
        for i in range(n):
            turn = float(wrap_angles(heading[i] - heading[i - 1]))
            if abs(turn) < 1e-12 or radius == 0.0:
                corners.append((0.0, 0.0, turn))
                continue
            tan_len = radius * math.tan(abs(turn) / 2.0)
            limit = 0.5 * min(seg_len[i], seg_len[i - 1])
            if abs(abs(turn) - math.pi) < 1e-9:
                raise ConfigError("route reverses direction at a waypoint")
            r = radius if tan_len <= limit else limit / math.tan(abs(turn) / 2.0)
            corners.append((r * math.tan(abs(turn) / 2.0), r, turn))

        self.pieces = []
        for i in range(n):
            tan_out, _, _ = corners[i]
            tan_in, r_next, turn_next = corners[(i + 1) % n]
            u = seg[i] / seg_len[i]
            start = pts[i] + u * tan_out
            length = seg_len[i] - tan_out - tan_in
            if length > 1e-9:
                self.pieces.append(("line", start, heading[i], length, 0.0))
            if r_next > 0.0:
                arc_start = pts[(i + 1) % n] - u * tan_in
                self.pieces.append(("arc", arc_start, heading[i], r_next * abs(turn_next),
                                    math.copysign(1.0 / r_next, turn_next)))
        # rotate so the route starts at the first piece's start
        self.lengths = np.array([p[3] for p in self.pieces])
        self.offsets = np.concatenate([[0.0], np.cumsum(self.lengths)])
        self.length = float(self.offsets[-1])

    def pose_at(self, s: float) -> tuple:
        s = s % self.length
        k = int(np.searchsorted(self.offsets, s, side="right") - 1)
        k = min(max(k, 0), len(self.pieces) - 1)
        kind, start, h0, _, curvature = self.pieces[k]
        u = s - self.offsets[k]
        if kind == "line":
            return start[0] + u * math.cos(h0), start[1] + u * math.sin(h0), h0
        h = h0 + curvature * u
        r = 1.0 / curvature
        x = start[0] + r * (math.sin(h) - math.sin(h0))
        y = start[1] - r * (math.cos(h) - math.cos(h0))
        return x, y, h


class _Appearance:
    """Fixed world: lattice latents and the nonlinear descriptor map."""

    def __init__(self, cfg: WorldConfig, rng: RngStream):
        rows, cols = cfg.appearance_shape
        k, n = cfg.appearance_dim, cfg.descriptor_dim
        self.cfg = cfg
        self.latents = rng.normal(size=(rows, cols, k))
        in_dim = k + 2 + NUISANCE_DIM
        self.W1 = rng.normal(size=(GENERATOR_HIDDEN, in_dim)) * math.sqrt(2.0 / in_dim)
        self.b1 = rng.normal(size=GENERATOR_HIDDEN) * 0.1
        self.W2 = rng.normal(size=(n, GENERATOR_HIDDEN)) * math.sqrt(1.0 / GENERATOR_HIDDEN)

    def latent_at(self, xy: np.ndarray) -> np.ndarray:
        rows, cols = self.cfg.appearance_shape
        gx = np.clip(xy[:, 0] / self.cfg.cell_size, 0.0, cols - 1)
        gy = np.clip(xy[:, 1] / self.cfg.cell_size, 0.0, rows - 1)
        c0 = np.minimum(np.floor(gx).astype(int), cols - 2) if cols > 1 else np.zeros(len(gx), int)
        r0 = np.minimum(np.floor(gy).astype(int), rows - 2) if rows > 1 else np.zeros(len(gy), int)
        fx = (gx - c0)[:, None]
        fy = (gy - r0)[:, None]
        c1 = np.minimum(c0 + 1, cols - 1)
        r1 = np.minimum(r0 + 1, rows - 1)
        L = self.latents
        return ((1 - fx) * (1 - fy) * L[r0, c0] + fx * (1 - fy) * L[r0, c1]
                + (1 - fx) * fy * L[r1, c0] + fx * fy * L[r1, c1])

    def descriptors(self, xy, theta, nuisance) -> np.ndarray:
        inp = np.column_stack([self.latent_at(xy), np.cos(theta), np.sin(theta), nuisance])
        hidden = np.maximum(inp @ self.W1.T + self.b1, 0.0)
        return np.tanh(hidden @ self.W2.T)


def generate_session(cfg: WorldConfig) -> SyntheticSession:
    """Drive ``cfg.laps`` laps of the route and record truth, GPS and descriptors."""
    cfg.validate()
    world_rng = RngStream(cfg.seed)
    appearance = _Appearance(cfg, world_rng.spawn(0))
    periods_rng = world_rng.spawn(1)
    session_rng = world_rng.spawn(1000 + cfg.session)

    route = _Route(np.array([cfg.waypoint_xy(w) for w in cfg.route]), cfg.turn_radius)
    per_lap = max(int(round(route.length / cfg.sample_spacing)), 1)
    spacing = route.length / per_lap

    poses, lap = [], []
    for l in range(cfg.laps):
        for j in range(per_lap):
            x, y, h = route.pose_at(j * spacing)
            poses.append(Pose2(x, y, h))
            lap.append(l)
    n = len(poses)
    t = np.arange(n) * spacing / cfg.speed
    xy = np.array([[p.x, p.y] for p in poses])
    theta = np.array([p.theta for p in poses])

    lap_time = per_lap * spacing / cfg.speed
    periods = lap_time * periods_rng.uniform(PERIOD_RANGE[0], PERIOD_RANGE[1], size=NUISANCE_DIM)
    phases = session_rng.uniform(0.0, 2.0 * math.pi, size=NUISANCE_DIM)
    nuisance = cfg.nuisance_amplitude * np.sin(2.0 * math.pi * t[:, None] / periods + phases)

    desc = appearance.descriptors(xy, theta, nuisance)
    desc = desc + cfg.descriptor_noise_sigma * session_rng.normal(size=desc.shape)
    gps = xy + cfg.gps_noise_sigma * session_rng.normal(size=xy.shape)

    descriptor_rows = [{"t": float(ti), "d": [float(v) for v in row]} for ti, row in zip(t, desc)]
    gps_rows = [{"t": float(ti + cfg.gps_time_offset), "x": float(g[0]), "y": float(g[1])}
                for ti, g in zip(t, gps)]
    return SyntheticSession(
        truth_poses=poses,
        gps_rows=gps_rows,
        descriptor_rows=descriptor_rows,
        revisit_pairs=find_revisits(xy, theta, spacing),
        lap=np.array(lap),
        timestamps=t,
        config=cfg,
    )


def find_revisits(xy, theta, spacing, max_dist=5.0, max_turn=math.pi / 6, min_travel=50.0):
    """Index pairs co-located (``< max_dist`` m, heading gap ``< max_turn``) after
    the vehicle travelled at least ``min_travel`` metres in between."""
    xy = np.asarray(xy)
    n = len(xy)
    gap = int(math.ceil(min_travel / spacing))
    pairs = []
    for i in range(n):
        j = np.arange(i + gap, n)
        if j.size == 0:
            break
        d = np.hypot(xy[j, 0] - xy[i, 0], xy[j, 1] - xy[i, 1])
        turn = np.abs(wrap_angles(theta[j] - theta[i]))
        for jj in j[(d < max_dist) & (turn < max_turn)]:
            pairs.append((i, int(jj)))
    return pairs


def session_keyframes(session: SyntheticSession, sync_tolerance: float = 0.1,
                      trans_thresh: float = 5.0, rot_thresh: float = math.pi / 6):
    """Run the ingest chain on an in-memory session.

    Returns ``(keyframes, truth poses at the keyframes)``.
    """
    from .ingest import DescriptorRecord, fixes_from_rows, select_keyframes, synchronize

    records = [DescriptorRecord(r["t"], np.asarray(r["d"], dtype=np.float64))
               for r in session.descriptor_rows]
    synced, _ = synchronize(records, fixes_from_rows(session.gps_rows), sync_tolerance)
    if not synced:
        raise DataError("no descriptor/GPS pairs survived synchronization")
    frames = select_keyframes(synced, trans_thresh, rot_thresh)
    idx = np.searchsorted(session.timestamps, [f.timestamp for f in frames])
    return frames, [session.truth_poses[k] for k in idx]
