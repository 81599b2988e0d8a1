"""Mixture-of-kernels intensity and its exact log-likelihood.

All coordinates here are normalized (unit cube); see
:class:`dmpp.domain.NormalizationTransform` for the raw-unit mapping.
"""
from __future__ import annotations

import numpy as np

from .autodiff import ParameterStore, Tape
from .context import SnapshotBatch
from .domain import NormalizationTransform, RepPointGrid
from .errors import DegenerateLikelihoodError, OutOfDomainError, OutOfRegionError, ShapeError
from .kernels import (Box, KernelFamily, KernelParams, kernel_box_integral,
                      kernel_box_integral_grad, kernel_matrix)
from .network import ForwardResult, NetworkConfig, fusion_forward, init_parameters

LOG_SIGMA = "kernel.log_sigma"
UNIT_BOX = Box(np.zeros(3), np.ones(3))


def default_log_sigma(grid: RepPointGrid) -> np.ndarray:
    """Bandwidths equal to the lattice spacing along each axis."""
    dt = grid.time_points[1] - grid.time_points[0]
    nx, ny = grid.n_side
    xs, ys = grid.axis_points
    sx = xs[1] - xs[0] if nx > 1 else 1.0
    sy = ys[1] - ys[0] if ny > 1 else 1.0
    return np.log([dt, sx, sy])


class DmppModel:
    """``lambda(x) = sum_j f(u_j, z_j; theta) k(x, u_j)``."""

    def __init__(self, grid: RepPointGrid, snapshots: SnapshotBatch,
                 family: KernelFamily | str, support_w: float,
                 net_config: NetworkConfig, store: ParameterStore,
                 transform: NormalizationTransform | None = None,
                 domain_box: Box = UNIT_BOX):
        if len(snapshots) != grid.J:
            raise ShapeError(f"{len(snapshots)} snapshots for {grid.J} representative points")
        if LOG_SIGMA not in store:
            raise ShapeError(f"parameter store lacks {LOG_SIGMA!r}")
        self.grid = grid
        self.snapshots = snapshots
        self.family = KernelFamily(family)
        self.support_w = float(support_w)
        self.net_config = net_config
        self.store = store
        self.transform = transform
        self.domain_box = domain_box
        self._f_cache: tuple[int, np.ndarray] | None = None

    @classmethod
    def create(cls, grid: RepPointGrid, snapshots: SnapshotBatch, net_config: NetworkConfig,
               family: KernelFamily | str = KernelFamily.COMPACT_GAUSSIAN,
               support_w: float = 3.0, seed: int = 0, log_sigma=None,
               transform: NormalizationTransform | None = None) -> "DmppModel":
        rng = np.random.default_rng(seed)
        store = ParameterStore()
        ls = default_log_sigma(grid) if log_sigma is None else np.asarray(log_sigma, float)
        store.add(LOG_SIGMA, ls, decay=False)
        init_parameters(net_config, rng, store)
        return cls(grid, snapshots, family, support_w, net_config, store, transform)

    # -- parameters ---------------------------------------------------------

    @property
    def kernel(self) -> KernelParams:
        return KernelParams(self.family, self.store[LOG_SIGMA], self.support_w)

    @property
    def J(self) -> int:
        return self.grid.J

    def forward(self, train: bool = False, seed: int | None = None) -> tuple[Tape, ForwardResult]:
        tape = Tape(self.store)
        rng = np.random.default_rng(self.net_config.dropout_seed if seed is None else seed)
        return tape, fusion_forward(tape, self.net_config, self.snapshots, train=train, rng=rng)

    def f_values(self) -> np.ndarray:
        """Eval-mode mixture weights, cached until a parameter changes."""
        if self._f_cache is not None and self._f_cache[0] == self.store.version:
            return self._f_cache[1]
        _, res = self.forward(train=False)
        f = res.values.copy()
        f.setflags(write=False)
        self._f_cache = (self.store.version, f)
        return f

    def attention(self) -> dict:
        return self.forward(train=False)[1].attention

    # -- intensity ----------------------------------------------------------

    def _weights(self, active) -> np.ndarray:
        f = self.f_values()
        if active is None:
            return f
        return np.where(active, f, 0.0)

    def intensity(self, X, active=None) -> np.ndarray:
        """Intensity at each row of ``X``; ``active`` masks representative points."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        outside = ~self.domain_box.contains(X, tol=1e-12)
        if np.any(outside):
            raise OutOfDomainError(
                f"points outside the model domain at indices {np.flatnonzero(outside)[:20].tolist()}")
        return kernel_matrix(self.kernel, X, self.grid).matvec(self._weights(active))

    def intensity_at(self, x, active=None) -> float:
        return float(self.intensity(np.asarray(x, dtype=np.float64).reshape(1, 3), active)[0])

    def expected_count(self, box: Box, active=None) -> float:
        return float(self._weights(active) @ kernel_box_integral(self.kernel, self.grid.points, box))

    # -- likelihood ---------------------------------------------------------

    def _check_events(self, events, region: Box) -> np.ndarray:
        events = np.atleast_2d(np.asarray(events, dtype=np.float64)).reshape(-1, 3)
        bad = ~region.contains(events, tol=1e-12)
        if np.any(bad):
            raise OutOfRegionError(
                f"events outside the likelihood region at indices {np.flatnonzero(bad)[:20].tolist()}")
        return events

    def _event_log_terms(self, events, f, kp):
        K = kernel_matrix(kp, events, self.grid)
        lam = K.matvec(f)
        if np.any(lam <= 0):
            i = int(np.flatnonzero(lam <= 0)[0])
            raise DegenerateLikelihoodError(
                f"zero intensity at event {i} {events[i].tolist()}: outside every kernel support")
        return K, lam

    def log_likelihood(self, events, region: Box, active=None) -> float:
        """``sum_i log lambda(x_i) - int_region lambda``, exact."""
        events = self._check_events(events, region)
        f = self._weights(active)
        kp = self.kernel
        integral = float(f @ kernel_box_integral(kp, self.grid.points, region))
        if len(events) == 0:
            return -integral
        _, lam = self._event_log_terms(events, f, kp)
        return float(np.sum(np.log(lam))) - integral

    def minibatch_objective(self, events, batch_indices, N: int, region: Box,
                            train: bool = True, seed: int | None = None,
                            backward: bool = True) -> float:
        """Mini-batch estimate of the log-likelihood.

        ``(N / |I|) sum_{i in I} log lambda(x_i) - sum_j f_j int_region k``.
        When ``backward`` is true the gradient (with respect to every network
        parameter and ``log_sigma``) is added to the store's gradient slots.
        """
        idx = np.asarray(batch_indices, dtype=np.int64).reshape(-1)
        if idx.size == 0:
            raise ValueError("empty mini-batch")
        if idx.min() < 0 or idx.max() >= N:
            raise IndexError(f"batch indices must lie in [0, {N})")
        events = self._check_events(np.asarray(events)[idx], region)
        kp = self.kernel
        tape, res = self.forward(train=train, seed=seed)
        f = res.values
        K, lam = self._event_log_terms(events, f, kp)
        scale = N / idx.size
        I = kernel_box_integral(kp, self.grid.points, region)
        value = scale * float(np.sum(np.log(lam))) - float(f @ I)
        if backward:
            inv = scale / lam
            df = K.rmatvec(inv) - I
            tape.backward(res.f, df)
            w_entries = f[K.cols] * inv[K.rows]
            g_sigma = K.log_sigma_grad(kp.family, w_entries)
            g_sigma -= f @ kernel_box_integral_grad(kp, self.grid.points, region)
            self.store.grads[LOG_SIGMA] += g_sigma
        return value

    def first_term(self, events, batch_indices, N: int) -> float:
        """Scaled data term ``(N/|I|) sum_{i in I} log lambda(x_i)`` (eval mode)."""
        idx = np.asarray(batch_indices, dtype=np.int64).reshape(-1)
        events = np.asarray(events, dtype=np.float64)[idx]
        _, lam = self._event_log_terms(events, self.f_values(), self.kernel)
        return N / idx.size * float(np.sum(np.log(lam)))


class FixedMixture:
    """Mixture intensity with fixed weights; shares the intensity interface
    of :class:`DmppModel` (used as synthetic ground truth)."""

    def __init__(self, grid: RepPointGrid, kernel: KernelParams, weights,
                 domain_box: Box = UNIT_BOX):
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if weights.shape != (grid.J,):
            raise ShapeError(f"{weights.size} weights for {grid.J} representative points")
        self.grid = grid
        self.kernel = kernel
        self.weights = weights
        self.domain_box = domain_box

    def f_values(self) -> np.ndarray:
        return self.weights

    def intensity(self, X, active=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        w = self.weights if active is None else np.where(active, self.weights, 0.0)
        return kernel_matrix(self.kernel, X, self.grid).matvec(w)

    def expected_count(self, box: Box, active=None) -> float:
        w = self.weights if active is None else np.where(active, self.weights, 0.0)
        return float(w @ kernel_box_integral(self.kernel, self.grid.points, box))
