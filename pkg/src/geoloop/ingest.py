"""Descriptor/GPS log parsing, stream synchronization and keyframe sub-sampling.

Log formats (JSON lines):

* descriptors: ``{"t": seconds, "d": [float, ...]}``
* GPS: ``{"t": seconds, "lat": deg, "lon": deg}`` or ``{"t": seconds, "x": m, "y": m}``
* keyframes (output): ``{"id", "t", "x", "y", "bearing", "d"}``
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import wrap_angle, wrap_angles
from .exceptions import DataError

EARTH_RADIUS_M = 6371000.0
DEFAULT_SYNC_TOLERANCE = 0.1
DEFAULT_TRANS_THRESH = 5.0
DEFAULT_ROT_THRESH = math.pi / 6


@dataclass(frozen=True)
class DescriptorRecord:
    timestamp: float
    vector: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


@dataclass(frozen=True)
class GpsFix:
    timestamp: float
    x: float
    y: float
    bearing: float = 0.0
    source_geodetic: Optional[tuple] = None

    @property
    def t(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Keyframe:
    id: int
    descriptor: DescriptorRecord
    fix: GpsFix

    @property
    def timestamp(self) -> float:
        return self.descriptor.timestamp


def _read_jsonl(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            rows.append((lineno, obj))
    if not rows:
        raise DataError(f"{path}: empty stream")
    return rows


def _finite_number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DataError(f"{where}: expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise DataError(f"{where}: non-finite value")
    return value


def parse_descriptor_log(path) -> list[DescriptorRecord]:
    records = []
    dim = None
    for lineno, obj in _read_jsonl(path):
        where = f"{path}:{lineno}"
        if "t" not in obj or "d" not in obj:
            raise DataError(f"{where}: descriptor rows need keys 't' and 'd'")
        t = _finite_number(obj["t"], where)
        d = obj["d"]
        if not isinstance(d, list) or not d:
            raise DataError(f"{where}: 'd' must be a non-empty list")
        vec = np.array([_finite_number(v, where) for v in d], dtype=np.float64)
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise DataError(
                f"{where}: descriptor dimension {vec.shape[0]} != {dim} of earlier rows"
            )
        records.append(DescriptorRecord(t, vec))
    records.sort(key=lambda r: r.timestamp)
    return records


def parse_gps_log(path) -> list[dict]:
    rows = []
    kind = None
    for lineno, obj in _read_jsonl(path):
        where = f"{path}:{lineno}"
        if "t" not in obj:
            raise DataError(f"{where}: GPS rows need key 't'")
        if "lat" in obj and "lon" in obj:
            row_kind, keys = "geodetic", ("lat", "lon")
        elif "x" in obj and "y" in obj:
            row_kind, keys = "metric", ("x", "y")
        else:
            raise DataError(f"{where}: GPS rows need 'lat'/'lon' or 'x'/'y'")
        if kind is None:
            kind = row_kind
        elif row_kind != kind:
            raise DataError(f"{where}: mixing geodetic and metric rows in one file")
        row = {"t": _finite_number(obj["t"], where)}
        for k in keys:
            row[k] = _finite_number(obj[k], where)
        rows.append(row)
    rows.sort(key=lambda r: r["t"])
    return rows


def load_session(descriptor_path, gps_path):
    """Parse a descriptor log and a GPS log, each sorted by timestamp."""
    return parse_descriptor_log(descriptor_path), parse_gps_log(gps_path)


def geodetic_to_local(rows: Sequence) -> np.ndarray:
    """Equirectangular projection of (lat, lon) degrees about the first row.

    Returns an ``(N, 2)`` array of (east, north) metres; row 0 maps to the origin.
    """
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, 2)
    if arr.shape[0] == 0:
        raise DataError("geodetic_to_local needs at least one row")
    lat, lon = arr[:, 0], arr[:, 1]
    if np.any(np.abs(lat) > 90.0) or np.any(np.abs(lon) > 180.0) or not np.all(np.isfinite(arr)):
        raise DataError("latitude must lie in [-90, 90] and longitude in [-180, 180]")
    lat_r, lon_r = np.radians(lat), np.radians(lon)
    x = EARTH_RADIUS_M * (lon_r - lon_r[0]) * math.cos(lat_r[0])
    y = EARTH_RADIUS_M * (lat_r - lat_r[0])
    return np.column_stack([x, y])


def derive_bearings(fixes: Sequence[GpsFix], stationary_eps: float = 1e-6) -> list[GpsFix]:
    """Heading of travel from forward differences of consecutive positions.

    The last fix reuses the previous bearing. Where consecutive positions coincide
    the previous bearing is carried forward; a stationary prefix takes the first
    defined bearing.
    """
    n = len(fixes)
    if n < 2:
        raise DataError("derive_bearings needs at least two fixes")
    xy = np.array([[f.x, f.y] for f in fixes])
    step = np.diff(xy, axis=0)
    moving = np.hypot(step[:, 0], step[:, 1]) > stationary_eps
    raw = np.arctan2(step[:, 1], step[:, 0])

    bearings = np.empty(n)
    current = None
    for i in range(n - 1):
        if moving[i]:
            current = raw[i]
        bearings[i] = np.nan if current is None else current
    if current is None:
        # never moved: no heading information at all
        bearings[:] = 0.0
    else:
        first = raw[np.argmax(moving)]
        bearings[: n - 1] = np.where(np.isnan(bearings[: n - 1]), first, bearings[: n - 1])
        bearings[n - 1] = bearings[n - 2]
    bearings = wrap_angles(bearings)
    return [
        GpsFix(f.timestamp, f.x, f.y, float(b), f.source_geodetic)
        for f, b in zip(fixes, bearings)
    ]


def fixes_from_rows(rows: Sequence[dict]) -> list[GpsFix]:
    """Turn parsed GPS rows into local-frame fixes with derived bearings."""
    if not rows:
        raise DataError("empty stream")
    if "lat" in rows[0]:
        geo = [(r["lat"], r["lon"]) for r in rows]
        xy = geodetic_to_local(geo)
        fixes = [GpsFix(r["t"], float(p[0]), float(p[1]), 0.0, g) for r, p, g in zip(rows, xy, geo)]
    else:
        x0, y0 = rows[0]["x"], rows[0]["y"]
        fixes = [GpsFix(r["t"], r["x"] - x0, r["y"] - y0) for r in rows]
    if len(fixes) == 1:
        return fixes
    return derive_bearings(fixes)


def synchronize(descriptors: Sequence[DescriptorRecord], fixes: Sequence[GpsFix],
                tolerance: float = DEFAULT_SYNC_TOLERANCE):
    """Pair every descriptor with its nearest-in-time fix.

    Returns ``(pairs, dropped)`` where pairs whose time gap exceeds ``tolerance``
    are left out and counted in ``dropped``. Equal gaps resolve to the earlier fix.
    """
    if not fixes:
        return [], len(descriptors)
    ft = np.array([f.timestamp for f in fixes])
    pairs, dropped = [], 0
    for rec in descriptors:
        k = int(np.searchsorted(ft, rec.timestamp))
        best = None
        for cand in (k - 1, k):
            if 0 <= cand < len(ft):
                gap = abs(ft[cand] - rec.timestamp)
                if best is None or gap < best[1]:
                    best = (cand, gap)
        if best[1] > tolerance:
            dropped += 1
            continue
        pairs.append((rec, fixes[best[0]]))
    return pairs, dropped


def select_keyframes(synced: Sequence, trans_thresh: float = DEFAULT_TRANS_THRESH,
                     rot_thresh: float = DEFAULT_ROT_THRESH) -> list[Keyframe]:
    """Keep a pair once it moved ``>= trans_thresh`` or turned ``>= rot_thresh``
    relative to the last kept one. The first pair is always kept."""
    if not synced:
        raise DataError("select_keyframes needs at least one synchronized pair")
    keyframes = []
    last = None
    for rec, fix in synced:
        if last is not None:
            moved = math.hypot(fix.x - last.x, fix.y - last.y)
            turned = abs(wrap_angle(fix.bearing - last.bearing))
            if moved < trans_thresh and turned < rot_thresh:
                continue
        keyframes.append(Keyframe(len(keyframes), rec, fix))
        last = fix
    return keyframes


def build_keyframes(descriptor_path, gps_path, sync_tolerance=DEFAULT_SYNC_TOLERANCE,
                    trans_thresh=DEFAULT_TRANS_THRESH, rot_thresh=DEFAULT_ROT_THRESH):
    """Load a session from disk and reduce it to keyframes."""
    descriptors, rows = load_session(descriptor_path, gps_path)
    fixes = fixes_from_rows(rows)
    synced, _ = synchronize(descriptors, fixes, sync_tolerance)
    if not synced:
        raise DataError(
            f"no descriptor/GPS pairs within {sync_tolerance} s of each other"
        )
    return select_keyframes(synced, trans_thresh, rot_thresh)


def keyframe_arrays(frames: Sequence[Keyframe]):
    """Stack keyframes into ``(descriptors (N, n), fixes (N, 3) of x, y, bearing)``."""
    if not frames:
        return np.zeros((0, 0)), np.zeros((0, 3))
    X = np.vstack([f.descriptor.vector for f in frames])
    Z = np.array([[f.fix.x, f.fix.y, f.fix.bearing] for f in frames])
    return X, Z


def write_keyframes(frames: Sequence[Keyframe], path) -> None:
    with Path(path).open("w") as fh:
        for f in frames:
            fh.write(json.dumps({
                "id": f.id, "t": f.timestamp, "x": f.fix.x, "y": f.fix.y,
                "bearing": f.fix.bearing, "d": f.descriptor.vector.tolist(),
            }) + "\n")


def read_keyframes(path) -> list[Keyframe]:
    frames = []
    for lineno, obj in _read_jsonl(path):
        try:
            vec = np.asarray(obj["d"], dtype=np.float64)
            rec = DescriptorRecord(float(obj["t"]), vec)
            fix = GpsFix(float(obj["t"]), float(obj["x"]), float(obj["y"]), float(obj["bearing"]))
            frames.append(Keyframe(int(obj["id"]), rec, fix))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: bad keyframe row ({exc})") from None
    return frames
