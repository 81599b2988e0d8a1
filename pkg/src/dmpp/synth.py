"""Synthetic event data from a known fixed-weight mixture intensity."""
from __future__ import annotations

import numpy as np

from .config import RunConfig
from .domain import NormalizationTransform, build_grid
from .errors import ConfigurationError
from .evaluation import simulate_thinning
from .kernels import KernelParams, kernel_box_integral
from .model import UNIT_BOX, FixedMixture, default_log_sigma


def _truth(config: RunConfig):
    transform = NormalizationTransform.for_domain(config.domain)
    grid = build_grid(transform.forward_domain(config.domain), config.M, config.L_per_axis)
    ls = config.synth_log_sigma
    if ls is None:
        ls = default_log_sigma(grid) if config.log_sigma is None else config.log_sigma
    return transform, grid, KernelParams(config.kernel_family, ls, config.support_w)


def default_true_weights(config: RunConfig) -> np.ndarray:
    """Time-stationary pattern with two spatial hot spots, scaled so the
    expected count over the domain is ``config.synth_expected_events``."""
    _, grid, kp = _truth(config)
    s = grid.points[:, 1:]
    bump = (np.exp(-np.sum((s - [0.25, 0.3]) ** 2, axis=1) / 0.03)
            + 0.6 * np.exp(-np.sum((s - [0.7, 0.75]) ** 2, axis=1) / 0.05))
    w = 0.05 + bump
    total = float(w @ kernel_box_integral(kp, grid.points, UNIT_BOX))
    return w * (config.synth_expected_events / total)


def synth_generate(config: RunConfig, true_weights=None, seed: int = 0):
    """Thinning sample from ``lambda*(x) = sum_j w_j k(x, u_j)`` over the domain.

    Weights live on the normalized grid of ``config`` (intensity per unit
    normalized volume). Returns ``(events, descriptor)`` with events in raw
    units sorted by time.
    """
    transform, grid, kp = _truth(config)
    w = default_true_weights(config) if true_weights is None else np.asarray(
        true_weights, dtype=np.float64).reshape(-1)
    if w.shape != (grid.J,):
        raise ConfigurationError(f"expected {grid.J} weights, got {w.size}")
    if not np.all(w > 0):
        raise ConfigurationError("true weights must be strictly positive")
    truth = FixedMixture(grid, kp, w)
    events = transform.inverse(simulate_thinning(truth, UNIT_BOX, seed=seed))
    expected = float(w @ kernel_box_integral(kp, grid.points, UNIT_BOX))
    descriptor = {
        "kernel_family": kp.family.value,
        "support_w": kp.support_w,
        "log_sigma": [float(v) for v in kp.log_sigma],
        "M": config.M,
        "L_per_axis": config.L_per_axis,
        "weights": [float(v) for v in w],
        "expected_count": expected,
        "n_events": int(len(events)),
        "seed": int(seed),
        "units": "weights are intensities per unit normalized volume",
    }
    return events, descriptor
