"""Events, the observation window, coordinate normalization and the
representative-point lattice.

Events are stored as ``(N, 3)`` float arrays with columns ``(t, s1, s2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidDomainError, OutOfDomainError


class Event(NamedTuple):
    t: float
    s: tuple[float, float]

    @property
    def coords(self) -> np.ndarray:
        return np.array([self.t, self.s[0], self.s[1]], dtype=np.float64)


def as_event_array(events) -> np.ndarray:
    """Coerce events (array-like or a list of :class:`Event`) to ``(N, 3)``."""
    if isinstance(events, np.ndarray):
        arr = np.asarray(events, dtype=np.float64)
    else:
        events = list(events)
        if events and isinstance(events[0], Event):
            arr = np.array([e.coords for e in events], dtype=np.float64)
        else:
            arr = np.asarray(events, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 3))
    arr = np.atleast_2d(arr)
    if arr.shape[1] != 3:
        raise ValueError(f"events must have 3 columns (t, s1, s2), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("events contain non-finite coordinates")
    return arr


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


TRAIN_MINUTES = 120960.0  # 12 weeks
HORIZON_MINUTES = 10080.0  # 7 days, i.e. 14 bins of 12 hours


@dataclass(frozen=True, eq=False)
class SpatioTemporalDomain:
    """Rectangular window ``[t_min, t_max] x [s_min, s_max]``.

    ``train_end`` is the forecast origin T; the horizon is ``t_max - T``.
    """

    t_min: float
    t_max: float
    s_min: np.ndarray
    s_max: np.ndarray
    train_end: float

    def __post_init__(self):
        object.__setattr__(self, "s_min", _frozen(self.s_min))
        object.__setattr__(self, "s_max", _frozen(self.s_max))
        vals = [self.t_min, self.t_max, self.train_end, *self.s_min, *self.s_max]
        if not np.all(np.isfinite(vals)):
            raise InvalidDomainError("domain bounds must be finite")
        if self.s_min.shape != (2,) or self.s_max.shape != (2,):
            raise InvalidDomainError("spatial bounds must be 2-vectors")
        if not self.t_min < self.t_max:
            raise InvalidDomainError(f"zero temporal extent: [{self.t_min}, {self.t_max}]")
        if not np.all(self.s_min < self.s_max):
            raise InvalidDomainError(f"zero spatial extent: {self.s_min} .. {self.s_max}")
        if not self.t_min <= self.train_end <= self.t_max:
            raise InvalidDomainError(
                f"train_end {self.train_end} outside [{self.t_min}, {self.t_max}]")

    @property
    def horizon(self) -> float:
        return self.t_max - self.train_end

    @property
    def area(self) -> float:
        return float(np.prod(self.s_max - self.s_min))

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.t_min, *self.s_min])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.t_max, *self.s_max])

    def contains(self, events: np.ndarray) -> np.ndarray:
        events = as_event_array(events)
        return np.all((events >= self.lower) & (events <= self.upper), axis=1)

    @classmethod
    def unit(cls, train_end: float = 1.0) -> "SpatioTemporalDomain":
        return cls(0.0, 1.0, (0.0, 0.0), (1.0, 1.0), train_end)

    @classmethod
    def weekly_forecast(cls, s_min, s_max, train_minutes: float = TRAIN_MINUTES,
                        horizon_minutes: float = HORIZON_MINUTES) -> "SpatioTemporalDomain":
        """Time in minutes: twelve weeks of history, one week ahead."""
        return cls(0.0, train_minutes + horizon_minutes, s_min, s_max, train_minutes)


@dataclass(frozen=True, eq=False)
class NormalizationTransform:
    """Per-axis affine map ``x' = (x - offset) / scale`` onto the unit cube."""

    offset: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "offset", _frozen(self.offset))
        object.__setattr__(self, "scale", _frozen(self.scale))
        if not np.all(self.scale > 0):
            raise InvalidDomainError("normalization scales must be positive")

    @classmethod
    def for_domain(cls, domain: SpatioTemporalDomain) -> "NormalizationTransform":
        return cls(domain.lower, domain.upper - domain.lower)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.offset) / self.scale

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.scale + self.offset

    @property
    def jacobian(self) -> float:
        """Volume of the raw domain per unit normalized volume."""
        return float(np.prod(self.scale))

    @property
    def log_jacobian(self) -> float:
        return float(np.sum(np.log(self.scale)))

    def forward_domain(self, domain: SpatioTemporalDomain) -> SpatioTemporalDomain:
        lo = self.forward(domain.lower)
        hi = self.forward(domain.upper)
        T = float(self.forward([domain.train_end, 0.0, 0.0])[0])
        return SpatioTemporalDomain(lo[0], hi[0], lo[1:], hi[1:], T)

    def to_dict(self) -> dict:
        return {"offset": [float(v).hex() for v in self.offset],
                "scale": [float(v).hex() for v in self.scale]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationTransform":
        return cls([float.fromhex(v) for v in d["offset"]],
                   [float.fromhex(v) for v in d["scale"]])


def normalize(events, domain: SpatioTemporalDomain):
    """Map events onto ``[0, 1]^3``; returns ``(normalized, transform)``."""
    events = as_event_array(events)
    inside = domain.contains(events)
    if not np.all(inside):
        bad = np.flatnonzero(~inside)
        raise OutOfDomainError(f"events outside the domain at indices {bad[:20].tolist()}"
                               + (" ..." if bad.size > 20 else ""))
    transform = NormalizationTransform.for_domain(domain)
    out = transform.forward(events)
    # endpoint rounding can leave values a few ulps outside the cube
    np.clip(out, 0.0, 1.0, out=out)
    return out, transform


@dataclass(frozen=True, eq=False)
class RepPointGrid:
    """Representative points: ``M`` time points times ``L`` lattice sites.

    Point ``j = m * L + l`` has time ``time_points[m]`` and location
    ``space_points[l]``; site ``l = ix * n_side + iy`` sits at the centre of
    lattice cell ``(ix, iy)``.
    """

    time_points: np.ndarray
    axis_points: tuple  # (xs, ys) cell centres along each spatial axis
    points: np.ndarray = field(repr=False)
    train_end: float

    @property
    def M(self) -> int:
        return len(self.time_points)

    @property
    def n_side(self) -> tuple[int, int]:
        return len(self.axis_points[0]), len(self.axis_points[1])

    @property
    def L(self) -> int:
        return self.n_side[0] * self.n_side[1]

    @property
    def J(self) -> int:
        return self.M * self.L

    @property
    def space_points(self) -> np.ndarray:
        return self.points[: self.L, 1:]

    @property
    def test_mask(self) -> np.ndarray:
        """Boolean mask of the points with ``tau > T`` (the forecast subset)."""
        return self.points[:, 0] > self.train_end

    def window_mask(self, t_lo: float, t_hi: float) -> np.ndarray:
        tau = self.points[:, 0]
        return (tau > t_lo) & (tau <= t_hi)

    def index(self, m: int, ix: int, iy: int) -> int:
        nx, ny = self.n_side
        return m * nx * ny + ix * ny + iy


def build_grid(domain: SpatioTemporalDomain, M: int, L_per_axis: int) -> RepPointGrid:
    if M < 2:
        raise ValueError(f"M must be >= 2, got {M}")
    if L_per_axis < 1:
        raise ValueError(f"L_per_axis must be >= 1, got {L_per_axis}")
    if not (domain.t_max > domain.t_min and np.all(domain.s_max > domain.s_min)):
        raise InvalidDomainError("domain has zero temporal or spatial extent")
    taus = domain.t_min + (domain.t_max - domain.t_min) * np.arange(M) / (M - 1)
    taus[-1] = domain.t_max
    centres = (np.arange(L_per_axis) + 0.5) / L_per_axis
    xs = domain.s_min[0] + (domain.s_max[0] - domain.s_min[0]) * centres
    ys = domain.s_min[1] + (domain.s_max[1] - domain.s_min[1]) * centres
    sx, sy = np.meshgrid(xs, ys, indexing="ij")
    space = np.column_stack([sx.ravel(), sy.ravel()])
    L = len(space)
    points = np.column_stack([np.repeat(taus, L), np.tile(space, (M, 1))])
    return RepPointGrid(_frozen(taus), (_frozen(xs), _frozen(ys)), _frozen(points),
                        float(domain.train_end))
