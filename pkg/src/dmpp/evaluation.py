"""Forecast scoring, count prediction, thinning simulation and the
homogeneous-Poisson baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import SpatioTemporalDomain
from .errors import (ConfigurationError, DominatingRateError, OutOfRegionError,
                     PartitionMismatchError)
from .kernels import Box, _axis_terms
from .model import DmppModel


def test_region(domain: SpatioTemporalDomain) -> Box:
    return Box([domain.train_end, *domain.s_min], [domain.t_max, *domain.s_max])


def train_region(domain: SpatioTemporalDomain) -> Box:
    return Box([domain.t_min, *domain.s_min], [domain.train_end, *domain.s_max])


def window_mask(model: DmppModel, region: Box) -> np.ndarray:
    """Representative points with ``t_lo < tau <= t_hi`` for the region's time span."""
    mask = model.grid.window_mask(region.lower[0], region.upper[0])
    if not mask.any():
        raise ConfigurationError(
            f"no representative points inside the time window "
            f"({region.lower[0]}, {region.upper[0]}]")
    return mask


def window_log_likelihood(model: DmppModel, events, region: Box) -> tuple[float, float]:
    """Log-likelihood over ``region`` using only the points in its time
    window; returns ``(total, total / n_events)``."""
    active = window_mask(model, region)
    events = np.asarray(events, dtype=np.float64).reshape(-1, 3)
    total = model.log_likelihood(events, region, active=active)
    per_event = total / len(events) if len(events) else float("nan")
    return total, per_event


def test_log_likelihood(model: DmppModel, test_events, region: Box) -> tuple[float, float]:
    """Forecast log-likelihood over the test window and its per-event value."""
    return window_log_likelihood(model, test_events, region)


# -- partitions and counts --------------------------------------------------

@dataclass(frozen=True, eq=False)
class Partition:
    """Regular ``n_x x n_y`` spatial cells times ``n_bins`` time bins over ``region``.

    Cell ``r = ix * n_y + iy``; bin ``b`` counts forward in time.
    """

    region: Box
    n_x: int = 10
    n_y: int = 10
    n_bins: int = 14

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_x * self.n_y, self.n_bins

    def edges(self, axis: int) -> np.ndarray:
        n = (self.n_bins, self.n_x, self.n_y)[axis]
        lo, hi = self.region.lower[axis], self.region.upper[axis]
        e = lo + (hi - lo) * np.arange(n + 1) / n
        e[-1] = hi
        return e

    @property
    def boxes(self) -> list[Box]:
        et, ex, ey = self.edges(0), self.edges(1), self.edges(2)
        out = []
        for ix in range(self.n_x):
            for iy in range(self.n_y):
                for b in range(self.n_bins):
                    out.append(Box([et[b], ex[ix], ey[iy]], [et[b + 1], ex[ix + 1], ey[iy + 1]]))
        return out

    def same_as(self, other: "Partition") -> bool:
        return (self.shape == other.shape and (self.n_x, self.n_y) == (other.n_x, other.n_y)
                and np.array_equal(self.region.lower, other.region.lower)
                and np.array_equal(self.region.upper, other.region.upper))

    @classmethod
    def parse(cls, spec: str, region: Box) -> "Partition":
        if spec == "default":
            return cls(region)
        try:
            nx, ny, nb = (int(v) for v in spec.lower().split("x"))
        except ValueError:
            raise ConfigurationError(f"partition must be 'default' or MxNxB, got {spec!r}")
        if min(nx, ny, nb) < 1:
            raise ConfigurationError(f"partition sizes must be positive: {spec!r}")
        return cls(region, nx, ny, nb)


def build_eval_partition(domain: SpatioTemporalDomain, n_x: int = 10, n_y: int = 10,
                         n_bins: int = 14) -> Partition:
    if not domain.horizon > 0:
        raise ConfigurationError("evaluation needs a positive forecast horizon")
    return Partition(test_region(domain), n_x, n_y, n_bins)


@dataclass(eq=False)
class CountGrid:
    counts: np.ndarray  # (N_r, N_b)
    partition: Partition

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def rows(self):
        for r in range(self.counts.shape[0]):
            for b in range(self.counts.shape[1]):
                yield r, b, float(self.counts[r, b])


def count_events(events, partition: Partition) -> CountGrid:
    """Observed counts per cell; events outside the region are ignored."""
    events = np.asarray(events, dtype=np.float64).reshape(-1, 3)
    events = events[partition.region.contains(events)]
    idx = []
    for axis, n in enumerate((partition.n_bins, partition.n_x, partition.n_y)):
        e = partition.edges(axis)
        idx.append(np.clip(np.searchsorted(e, events[:, axis], side="right") - 1, 0, n - 1))
    b, ix, iy = idx
    counts = np.zeros(partition.shape)
    np.add.at(counts, (ix * partition.n_y + iy, b), 1.0)
    return CountGrid(counts, partition)


def predict_counts(model: DmppModel, partition: Partition | list, region: Box | None = None):
    """Expected counts ``sum_{u_j in U*} f_j int_box k(x, u_j)`` per cell.

    For a :class:`Partition` the box integrals factorize per axis and are
    combined with one tensor contraction; a plain list of boxes returns a
    vector of expectations.
    """
    if isinstance(partition, Partition):
        region = partition.region if region is None else region
        if not partition.region.within(region):
            raise OutOfRegionError("partition extends beyond the forecast region")
        active = window_mask(model, region)
        f = np.where(active, model.f_values(), 0.0)
        kp = model.kernel
        U = model.grid.points
        per_axis = []
        for axis in range(3):
            e = partition.edges(axis)
            cols = [_axis_terms(kp.family, e[i], e[i + 1], U[:, axis], kp.sigma[axis],
                                kp.support_w)[0] for i in range(len(e) - 1)]
            per_axis.append(np.stack(cols, axis=1))  # (J, n)
        It, Ix, Iy = per_axis
        cube = np.einsum("j,jb,jx,jy->xyb", f, It, Ix, Iy)
        return CountGrid(cube.reshape(partition.shape), partition)
    boxes = list(partition)
    if region is None:
        raise ValueError("a list of boxes needs the forecast region")
    active = window_mask(model, region)
    out = np.empty(len(boxes))
    for i, box in enumerate(boxes):
        if not box.within(region):
            raise OutOfRegionError(f"box {i} lies outside the forecast region")
        out[i] = model.expected_count(box, active)
    return out


def mape(actual: CountGrid, predicted: CountGrid) -> float:
    """``sum |n - n_hat| / n`` over cells with ``n > 0``."""
    if actual.counts.shape != predicted.counts.shape or not actual.partition.same_as(
            predicted.partition):
        raise PartitionMismatchError("count grids use different partitions")
    n = actual.counts
    pos = n > 0
    return float(np.sum(np.abs(n[pos] - predicted.counts[pos]) / n[pos]))


# -- thinning ---------------------------------------------------------------

def dominating_rate(model: DmppModel, region: Box, active=None, lattice: int = 20,
                    safety: float = 1.2) -> float:
    axes = [np.linspace(region.lower[d], region.upper[d], lattice) for d in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return safety * float(model.intensity(pts, active).max())


def simulate_thinning(model: DmppModel, region: Box, seed=None, active=None,
                      rate: float | None = None, safety: float = 1.2) -> np.ndarray:
    """Draw one realization over ``region`` by thinning a homogeneous
    Poisson process; returns events sorted by time.

    ``rate`` overrides the lattice-based dominating rate. Raises
    :class:`DominatingRateError` if any candidate exceeds it.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lam_bar = dominating_rate(model, region, active, safety=safety) if rate is None else rate
    if lam_bar <= 0 or region.volume == 0:
        return np.zeros((0, 3))
    n = rng.poisson(lam_bar * region.volume)
    cand = region.lower + (region.upper - region.lower) * rng.random((n, 3))
    lam = model.intensity(cand, active) if n else np.zeros(0)
    if np.any(lam > lam_bar):
        raise DominatingRateError(
            f"intensity {lam.max():.6g} exceeds the dominating rate {lam_bar:.6g}; "
            "increase the safety factor")
    keep = rng.random(n) * lam_bar < lam
    out = cand[keep]
    return out[np.argsort(out[:, 0], kind="stable")]


# -- homogeneous Poisson baseline ---------------------------------------------

@dataclass(frozen=True)
class HpModel:
    rate: float

    def __post_init__(self):
        if not self.rate >= 0:
            raise ValueError(f"rate must be nonnegative, got {self.rate}")


def fit_hp(events, region: Box) -> HpModel:
    vol = region.volume
    if not vol > 0:
        raise ConfigurationError("HP fit needs a region of positive measure")
    n = len(np.asarray(events).reshape(-1, 3))
    return HpModel(n / vol)


def hp_log_likelihood(hp: HpModel, events, region: Box) -> float:
    """``n log(rate) - rate |region|``."""
    vol = region.volume
    if not vol > 0:
        raise ConfigurationError("HP likelihood needs a region of positive measure")
    n = int(events) if np.isscalar(events) else len(np.asarray(events).reshape(-1, 3))
    if n == 0:
        return -hp.rate * vol
    return n * float(np.log(hp.rate)) - hp.rate * vol


def hp_counts(hp: HpModel, partition: Partition) -> CountGrid:
    vols = np.array([b.volume for b in partition.boxes]).reshape(
        partition.n_x, partition.n_y, partition.n_bins)
    return CountGrid(hp.rate * vols.reshape(partition.shape), partition)
