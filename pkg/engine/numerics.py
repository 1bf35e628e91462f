"""Deterministic tensor helpers, seeded random streams, the low-pass projection
and point-set geometry shared by every other engine module.

All tensors are ``torch.float64``. Random numbers come from SplitMix64 streams
rather than torch's generator so that a (seed, stream id) pair fully determines
every draw of a run.
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np
import torch

logger = logging.getLogger(__name__)

DTYPE = torch.float64

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
# Streams of one seed occupy disjoint 2**32-step windows of the same Weyl sequence.
STREAM_STRIDE = 1 << 32

Shape = Union[int, Sequence[int]]


class DivergenceError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""

    def __init__(self, message: str, iteration: int = -1):
        super().__init__(message)
        self.iteration = iteration


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


class RngStream:
    """SplitMix64 stream. Single owner, never shared between threads."""

    __slots__ = ("seed", "stream_id", "state")

    def __init__(self, seed: int, stream_id: int = 0):
        if stream_id < 0 or stream_id >= STREAM_STRIDE:
            raise ValueError(f"stream_id must lie in [0, 2**32), got {stream_id}")
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id)
        base = int(_mix64(np.array([self.seed], dtype=np.uint64))[0])
        self.state = (base + self.stream_id * STREAM_STRIDE * _GAMMA) & _MASK64

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, state={self.state:#018x})"

    def clone(self) -> "RngStream":
        twin = RngStream.__new__(RngStream)
        twin.seed, twin.stream_id, twin.state = self.seed, self.stream_id, self.state
        return twin

    def spawn(self, stream_id: int) -> "RngStream":
        """Fresh stream of the same seed with another id."""
        return RngStream(self.seed, stream_id)

    def advance(self, n: int) -> np.ndarray:
        """Step the Weyl state ``n`` times and return the raw (unmixed) states."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(_GAMMA)
        if n:
            self.state = int(states[-1])
        return states

    def next_uint64(self, n: int) -> np.ndarray:
        return _mix64(self.advance(n))

    def uniform(self, n: int) -> np.ndarray:
        """Uniform doubles in [0, 1)."""
        return (self.next_uint64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform_open(self, n: int) -> np.ndarray:
        """Uniform doubles in (0, 1]; safe for ``log``."""
        return ((self.next_uint64(n) >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        """Integers in [low, high)."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        span = high - low
        return low + np.minimum((self.uniform(n) * span).astype(np.int64), span - 1)

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        bits = self.next_uint64(2 * pairs)
        u1 = ((bits[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (bits[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * math.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")


def _as_extents(shape: Shape) -> Tuple[int, ...]:
    extents = (shape,) if isinstance(shape, int) else tuple(int(s) for s in shape)
    if not extents or any(s <= 0 for s in extents):
        raise ValueError(f"shape must be a non-empty list of positive extents, got {shape}")
    return extents


def gaussian_draw(
    rng: RngStream,
    shape: Shape,
    mean: Union[float, torch.Tensor] = 0.0,
    scale: float = 1.0,
) -> torch.Tensor:
    """i.i.d. normal tensor of ``shape``; ``scale=0`` returns ``mean`` exactly."""
    extents = _as_extents(shape)
    draws = torch.from_numpy(rng.normal(math.prod(extents))).reshape(extents)
    return mean + scale * draws


def to_tensor(values) -> torch.Tensor:
    if isinstance(values, torch.Tensor):
        return values.to(DTYPE)
    return torch.as_tensor(np.asarray(values, dtype=np.float64))


def check_finite(x: torch.Tensor, what: str, iteration: int = -1) -> None:
    if not bool(torch.isfinite(x).all()):
        raise DivergenceError(f"non-finite values in {what}", iteration)


def check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


# ---------------------------------------------------------------------------
# Low-pass projection phi_N
# ---------------------------------------------------------------------------

def _replicate_tail(x: torch.Tensor, dim: int, length: int) -> torch.Tensor:
    extra = length - x.shape[dim]
    if extra == 0:
        return x
    edge = x.narrow(dim, x.shape[dim] - 1, 1)
    reps = [1] * x.dim()
    reps[dim] = extra
    return torch.cat([x, edge.repeat(*reps)], dim=dim)


def _block_mean(x: torch.Tensor, dim: int, factor: int) -> torch.Tensor:
    n = x.shape[dim]
    block = min(factor, n)
    padded = _replicate_tail(x, dim, -(-n // block) * block)
    shape = list(padded.shape)
    shape[dim:dim + 1] = [padded.shape[dim] // block, block]
    means = padded.reshape(shape).mean(dim=dim + 1)
    return means.repeat_interleave(block, dim=dim).narrow(dim, 0, n)


def low_pass(x: torch.Tensor, factor: int, spatial_dims: int = 2) -> torch.Tensor:
    """Block average over ``factor``-sized blocks of the trailing ``spatial_dims``
    axes, upsampled back by repetition.

    Extents that are not multiples of ``factor`` are padded by edge replication
    before pooling and cropped afterwards; a factor beyond an extent averages that
    whole axis. The map is linear and idempotent.
    """
    if factor < 1:
        raise ValueError(f"low-pass factor N must be >= 1, got {factor}")
    if spatial_dims not in (1, 2) or x.dim() < spatial_dims:
        raise ValueError(f"spatial_dims={spatial_dims} incompatible with shape {tuple(x.shape)}")
    if factor == 1:
        return x.clone()
    out = x
    for dim in range(x.dim() - spatial_dims, x.dim()):
        out = _block_mean(out, dim, factor)
    return out


# ---------------------------------------------------------------------------
# Point sets
# ---------------------------------------------------------------------------

PointSet = torch.Tensor


def check_point_set(points: PointSet, name: str = "points", min_count: int = 1) -> PointSet:
    points = to_tensor(points)
    if points.dim() != 2 or points.shape[1] < 1:
        raise ValueError(f"{name} must be an (n, D) point set, got shape {tuple(points.shape)}")
    if points.shape[0] < min_count:
        raise ValueError(f"{name} needs at least {min_count} points, got {points.shape[0]}")
    return points


def centroid(points: PointSet) -> torch.Tensor:
    return check_point_set(points).mean(dim=0)


def rms_radius(points: PointSet) -> float:
    points = check_point_set(points)
    return math.sqrt(float(((points - points.mean(dim=0)) ** 2).sum(dim=1).mean()))


def pairwise_distances(points: PointSet) -> torch.Tensor:
    points = check_point_set(points, min_count=2)
    return torch.cdist(points, points, compute_mode="donot_use_mm_for_euclid_dist")


def rotation_matrix_2d(angle_deg: float) -> torch.Tensor:
    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    return torch.tensor([[c, -s], [s, c]], dtype=DTYPE)


def rotation_angle_deg(rotation: torch.Tensor) -> float:
    """Angle of a proper rotation in [0, 180]: planar angle for D=2, geodesic for D=3."""
    dim = rotation.shape[0]
    if dim == 2:
        return abs(math.degrees(math.atan2(float(rotation[1, 0]), float(rotation[0, 0]))))
    if dim == 3:
        cos_angle = (float(torch.trace(rotation)) - 1.0) / 2.0
        return math.degrees(math.acos(min(1.0, max(-1.0, cos_angle))))
    raise ValueError(f"rotation angle is defined for D in (2, 3), got D={dim}")


@dataclass(frozen=True)
class ProcrustesFit:
    rotation_deg: float
    residual: float
    degenerate: bool
    rotation: torch.Tensor


def orthogonal_procrustes(a: PointSet, b: PointSet, rank_tol: float = 1e-10) -> ProcrustesFit:
    """Best proper rotation taking centered ``a`` onto centered ``b``.

    ``residual`` is the RMS point distance after alignment. A rank-deficient
    cross-covariance yields the identity with ``degenerate=True``.
    """
    a = check_point_set(a, "a")
    b = check_point_set(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"procrustes needs equal-size sets of equal dimension, got {tuple(a.shape)} vs {tuple(b.shape)}")
    dim = a.shape[1]
    if dim not in (2, 3):
        raise ValueError(f"procrustes supports D in (2, 3), got D={dim}")
    a0 = a - a.mean(dim=0)
    b0 = b - b.mean(dim=0)
    u, s, vh = torch.linalg.svd(a0.T @ b0)
    top = float(s[0])
    degenerate = top == 0.0 or float(s[-1]) <= rank_tol * top
    if degenerate:
        logger.warning("⚠️ rank-deficient cross-covariance, reporting identity rotation")
        rotation = torch.eye(dim, dtype=DTYPE)
    else:
        v = vh.T
        signs = torch.ones(dim, dtype=DTYPE)
        signs[-1] = torch.sign(torch.linalg.det(v @ u.T))
        rotation = v @ torch.diag(signs) @ u.T
    residual = math.sqrt(float(((a0 @ rotation.T - b0) ** 2).sum(dim=1).mean()))
    angle = 0.0 if degenerate else rotation_angle_deg(rotation)
    return ProcrustesFit(rotation_deg=angle, residual=residual, degenerate=degenerate, rotation=rotation)
