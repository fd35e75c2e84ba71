"""SE(2) poses, angle arithmetic and seeded random streams."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angles(a):
    """Vectorized wrap of angles into (-pi, pi].

    Rounding is half-to-even, so ``wrap_angles(-a) == -wrap_angles(a)`` holds
    bit-exactly everywhere except at the boundary, which maps to +pi.
    """
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("angle must be finite")
    r = a - TWO_PI * np.rint(a / TWO_PI)
    r = np.where(r <= -math.pi, r + TWO_PI, r)
    r = np.where(r > math.pi, r - TWO_PI, r)
    return r


def wrap_angle(a: float) -> float:
    """Wrap a single angle into (-pi, pi]."""
    if not math.isfinite(a):
        raise ValueError(f"angle must be finite, got {a!r}")
    return float(wrap_angles(a))


@dataclass(frozen=True)
class Pose2:
    """Planar rigid pose. ``theta`` is wrapped on construction."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite pose translation ({self.x}, {self.y})")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @classmethod
    def identity(cls) -> "Pose2":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_vector(cls, v) -> "Pose2":
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def to_vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def __matmul__(self, other: "Pose2") -> "Pose2":
        return se2_compose(self, other)


def se2_compose(a: Pose2, b: Pose2) -> Pose2:
    """Group product ``a (+) b``: express ``b`` (given in frame ``a``) in the world."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta)


def se2_inverse(p: Pose2) -> Pose2:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2(-c * p.x - s * p.y, s * p.x - c * p.y, -p.theta)


def se2_relative(a: Pose2, b: Pose2) -> Pose2:
    """Return ``inverse(a) (+) b``, the pose of ``b`` seen from ``a``."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return Pose2(c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta)


class RngStream:
    """Seeded PCG64 stream; same seed gives the same draws on every platform."""

    algorithm = "PCG64"

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = seed
        self.generator = np.random.Generator(np.random.PCG64(seed))

    def spawn(self, key: int) -> "RngStream":
        """Independent child stream, stable for a given (seed, key)."""
        child = RngStream.__new__(RngStream)
        child.seed = self.seed
        ss = np.random.SeedSequence(self.seed, spawn_key=(int(key),))
        child.generator = np.random.Generator(np.random.PCG64(ss))
        return child

    def __getattr__(self, name):
        # normal/uniform/choice/... are forwarded to the generator
        if name == "generator":
            raise AttributeError(name)
        return getattr(self.generator, name)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, algorithm={self.algorithm!r})"


def as_rng(random_state) -> RngStream:
    """Coerce ``None``/int/RngStream into an RngStream (``None`` means seed 0)."""
    if isinstance(random_state, RngStream):
        return random_state
    if random_state is None:
        return RngStream(0)
    return RngStream(int(random_state))
