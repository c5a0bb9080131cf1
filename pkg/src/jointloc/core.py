"""Shared domain types: locations, observations, area partitions and likelihoods."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Tolerance on the sum of a probability vector.
SIMPLEX_TOL = 1e-9
RSSI_MIN_DBM = -120.0
RSSI_MAX_DBM = 0.0


class JointLocError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(JointLocError, ValueError):
    pass


class PartitionError(JointLocError, ValueError):
    pass


class DivergenceError(JointLocError, ArithmeticError):
    """Raised when a training loop produces a non-finite loss."""

    def __init__(self, message: str, where: dict | None = None):
        super().__init__(message)
        self.where = dict(where or {})


@dataclass(frozen=True)
class Location:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"location coordinate {name} is not finite: {v}")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Location":
        a = np.asarray(a, dtype=float).reshape(3)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def distance(self, other: "Location") -> float:
        return float(np.linalg.norm(self.as_array() - other.as_array()))

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "z": self.z}

    @classmethod
    def from_dict(cls, d: dict) -> "Location":
        return cls(d["x"], d["y"], d["z"])


def _frozen_array(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RssiObservation:
    """An N_s x N_AP block of RSSI samples in dBm."""

    samples: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.samples, 2, "RSSI samples")
        if arr.min(initial=0.0) < RSSI_MIN_DBM or arr.max(initial=RSSI_MIN_DBM) > RSSI_MAX_DBM:
            raise ValueError(f"RSSI entries must lie in [{RSSI_MIN_DBM}, {RSSI_MAX_DBM}] dBm")
        object.__setattr__(self, "samples", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape

    def check_shape(self, n_s: int, n_ap: int) -> None:
        if self.samples.shape != (n_s, n_ap):
            raise ValueError(f"RSSI block has shape {self.samples.shape}, expected {(n_s, n_ap)}")

    def __eq__(self, other):
        return isinstance(other, RssiObservation) and np.array_equal(self.samples, other.samples)


@dataclass(frozen=True)
class ImageFeatureSpec:
    """Image geometry carried as metadata; only ``n_p`` and ``feature_dim`` shape data."""

    n_p: int = 104
    n_w: int = 752
    n_l: int = 780
    n_rgb: int = 1
    feature_dim: int = 16

    def __post_init__(self):
        for name in ("n_p", "n_w", "n_l", "n_rgb", "feature_dim"):
            v = getattr(self, name)
            if int(v) != v or v <= 0:
                raise ConfigError(f"ImageFeatureSpec.{name} must be a positive integer, got {v!r}")


@dataclass(frozen=True, eq=False)
class ImageFeatures:
    """N_p feature vectors standing in for the query images at one location."""

    features: np.ndarray
    spec: ImageFeatureSpec | None = None

    def __post_init__(self):
        arr = _frozen_array(self.features, 2, "image features")
        if self.spec is not None and arr.shape != (self.spec.n_p, self.spec.feature_dim):
            raise ValueError(
                f"feature block has shape {arr.shape}, expected {(self.spec.n_p, self.spec.feature_dim)}"
            )
        object.__setattr__(self, "features", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.features.shape

    def __eq__(self, other):
        return isinstance(other, ImageFeatures) and np.array_equal(self.features, other.features)


@dataclass(frozen=True)
class ReferencePoint:
    index: int
    location: Location


@dataclass(frozen=True, eq=False)
class Area:
    """Axis-aligned box; containment is closed on every face."""

    index: int
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = _frozen_array(self.lo, 1, "area lower corner")
        hi = _frozen_array(self.hi, 1, "area upper corner")
        if lo.shape != (3,) or hi.shape != (3,):
            raise PartitionError("area corners must be 3-vectors")
        if np.any(hi <= lo):
            raise PartitionError(f"area {self.index} has non-positive extent")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def contains(self, point) -> bool:
        p = np.asarray(point.as_array() if isinstance(point, Location) else point, dtype=float)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))

    def clamp(self, point: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(point, self.lo), self.hi)

    def __eq__(self, other):
        return (
            isinstance(other, Area)
            and self.index == other.index
            and np.array_equal(self.lo, other.lo)
            and np.array_equal(self.hi, other.hi)
        )


@dataclass(frozen=True, eq=False)
class AreaPartition:
    areas: tuple[Area, ...]
    rp_membership: np.ndarray
    floor_lo: np.ndarray
    floor_hi: np.ndarray
    warnings: tuple[str, ...] = ()

    @property
    def n_areas(self) -> int:
        return len(self.areas)

    @property
    def n_rp(self) -> int:
        return len(self.rp_membership)

    def area_of(self, point) -> int | None:
        """Index of the first area (lowest index) containing ``point``, or None."""
        for a in self.areas:
            if a.contains(point):
                return a.index
        return None

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.rp_membership == j)

    def __eq__(self, other):
        return (
            isinstance(other, AreaPartition)
            and self.areas == other.areas
            and np.array_equal(self.rp_membership, other.rp_membership)
        )


def make_grid_partition(floor_lo, floor_hi, n_cells_x: int, n_cells_y: int,
                        rps: Sequence[ReferencePoint]) -> AreaPartition:
    """Tile the floor with an ``n_cells_x`` by ``n_cells_y`` grid and assign each RP to its cell.

    Cells are indexed row-major (``j = iy * n_cells_x + ix``) and span the full
    z-range of the floor. A point on a shared face belongs to the lower index.
    Empty cells are allowed; each one adds a message to ``warnings``.
    """
    lo = np.asarray(floor_lo, dtype=float)
    hi = np.asarray(floor_hi, dtype=float)
    if n_cells_x < 1 or n_cells_y < 1:
        raise PartitionError("grid partition needs at least one cell per axis")
    if np.any(hi <= lo):
        raise PartitionError("floor box must have positive extent")
    xs = np.linspace(lo[0], hi[0], n_cells_x + 1)
    ys = np.linspace(lo[1], hi[1], n_cells_y + 1)
    areas = []
    for iy in range(n_cells_y):
        for ix in range(n_cells_x):
            areas.append(Area(iy * n_cells_x + ix,
                              [xs[ix], ys[iy], lo[2]], [xs[ix + 1], ys[iy + 1], hi[2]]))

    rps = sorted(rps, key=lambda r: r.index)
    if [r.index for r in rps] != list(range(len(rps))):
        raise PartitionError("reference point indices must be unique and contiguous from 0")
    membership = np.empty(len(rps), dtype=int)
    for r in rps:
        p = r.location.as_array()
        if np.any(p < lo) or np.any(p > hi):
            raise PartitionError(f"reference point {r.index} at {p.tolist()} lies outside the floor")
        for a in areas:
            if a.contains(p):
                membership[r.index] = a.index
                break
    membership.setflags(write=False)

    notes = []
    counts = np.bincount(membership, minlength=len(areas))
    for j in np.flatnonzero(counts == 0):
        notes.append(f"area {int(j)} contains no reference points")
    for msg in notes:
        warnings.warn(msg, stacklevel=2)
    lo.setflags(write=False)
    hi.setflags(write=False)
    return AreaPartition(tuple(areas), membership, lo, hi, tuple(notes))


def rp_grid(floor_lo, floor_hi, spacing: float, z: float | None = None) -> list[ReferencePoint]:
    """Regular RP grid with exact ``spacing``, centred on the floor.

    Each axis holds ``floor(extent / spacing)`` points; indices run x-fastest.
    """
    lo = np.asarray(floor_lo, dtype=float)
    hi = np.asarray(floor_hi, dtype=float)
    if spacing <= 0:
        raise ConfigError("grid spacing must be positive")
    ext = hi - lo
    counts = np.floor(ext[:2] / spacing + 1e-9).astype(int)
    if np.any(counts < 1):
        raise ConfigError(f"grid spacing {spacing} m is larger than the floor ({ext[0]} x {ext[1]} m)")
    if z is None:
        z = 0.5 * (lo[2] + hi[2])
    axes = [lo[k] + 0.5 * (ext[k] - (counts[k] - 1) * spacing) + spacing * np.arange(counts[k])
            for k in range(2)]
    out = []
    for y in axes[1]:
        for x in axes[0]:
            out.append(ReferencePoint(len(out), Location(x, y, z)))
    return out


@dataclass(frozen=True, eq=False)
class LikelihoodVector:
    """A probability vector over RPs or areas.

    Negative or non-finite entries are always rejected. Pass ``renormalize=True``
    to rescale a nonnegative vector; otherwise the sum must already be 1.
    """

    probs: np.ndarray
    renormalize: bool = field(default=False, repr=False)

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).reshape(-1)
        if p.size == 0:
            raise ValueError("likelihood vector is empty")
        if not np.all(np.isfinite(p)):
            raise ValueError("likelihood vector has non-finite entries")
        if np.any(p < 0):
            raise ValueError("likelihood vector has negative entries")
        s = p.sum()
        if self.renormalize:
            if s <= 0:
                raise ValueError("cannot renormalize a zero vector")
            p = p / s
        elif abs(s - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"likelihood vector sums to {s!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return self.probs.size

    def __eq__(self, other):
        return isinstance(other, LikelihoodVector) and np.array_equal(self.probs, other.probs)


@dataclass(frozen=True, eq=False)
class CandidateSelection:
    """Candidate areas in descending-probability order with their likelihoods."""

    area_indices: tuple[int, ...]
    probs: np.ndarray

    def __post_init__(self):
        idx = tuple(int(i) for i in self.area_indices)
        p = np.array(self.probs, dtype=float).reshape(-1)
        if len(idx) == 0:
            raise ValueError("candidate selection is empty")
        if len(idx) != p.size:
            raise ValueError("area indices and probabilities differ in length")
        if len(set(idx)) != len(idx):
            raise ValueError("candidate selection repeats an area")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("candidate probabilities must be finite and nonnegative")
        p.setflags(write=False)
        object.__setattr__(self, "area_indices", idx)
        object.__setattr__(self, "probs", p)

    @property
    def j_star(self) -> int:
        return len(self.area_indices)

    @property
    def max_prob(self) -> float:
        return float(self.probs.max())

    @property
    def weight(self) -> float:
        """Loss weight ``1 / max retained probability``."""
        m = self.max_prob
        if m <= 0:
            raise ValueError("all retained probabilities are zero")
        return 1.0 / m

    def verify_against(self, p_a: LikelihoodVector | np.ndarray) -> bool:
        src = p_a.probs if isinstance(p_a, LikelihoodVector) else np.asarray(p_a, dtype=float)
        idx = list(self.area_indices)
        if max(idx) >= src.size or not np.array_equal(src[idx], self.probs):
            return False
        keep = np.zeros(src.size, dtype=bool)
        keep[idx] = True
        if keep.all():
            return True
        return bool(src[keep].min() >= src[~keep].max())

    def __eq__(self, other):
        return (
            isinstance(other, CandidateSelection)
            and self.area_indices == other.area_indices
            and np.array_equal(self.probs, other.probs)
        )


def locations_array(locs: Iterable[Location]) -> np.ndarray:
    return np.array([l.as_array() for l in locs], dtype=float).reshape(-1, 3)
