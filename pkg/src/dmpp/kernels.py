"""Kernel experts: pointwise evaluation, closed-form box integrals and their
bandwidth gradients, and sparse kernel matrices for compact families.

The bandwidth is diagonal, ``Sigma = diag(sigma**2)`` with ``sigma =
exp(log_sigma)``, and all kernels are functions of the scaled offset
``z = (x - u) / sigma``:

* Gaussian: ``exp(-|z|^2)``
* Uniform: ``1[max|z_d| < w]``
* CompactGaussian: ``exp(-|z|^2) * 1[max|z_d| < w]``
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf, erfc

from .domain import RepPointGrid

SQRT_PI = math.sqrt(math.pi)


class KernelFamily(str, enum.Enum):
    UNIFORM = "uniform"
    GAUSSIAN = "gaussian"
    COMPACT_GAUSSIAN = "compact_gaussian"

    @property
    def compact(self) -> bool:
        return self is not KernelFamily.GAUSSIAN

    @property
    def smooth(self) -> bool:
        return self is not KernelFamily.UNIFORM


@dataclass(frozen=True, eq=False)
class KernelParams:
    family: KernelFamily
    log_sigma: np.ndarray
    support_w: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        ls = np.array(self.log_sigma, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(ls)):
            raise ValueError("log_sigma must be finite")
        ls.setflags(write=False)
        object.__setattr__(self, "log_sigma", ls)
        if self.family.compact and not self.support_w > 0:
            raise ValueError(f"support_w must be positive, got {self.support_w}")

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    def replace(self, **kw) -> "KernelParams":
        d = dict(family=self.family, log_sigma=self.log_sigma, support_w=self.support_w)
        d.update(kw)
        return KernelParams(**d)


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned region ``[lower, upper]`` in (t, s1, s2)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=np.float64).reshape(3)
        hi = np.array(self.upper, dtype=np.float64).reshape(3)
        if not np.all(lo <= hi):
            raise ValueError(f"box lower {lo} exceeds upper {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, x: np.ndarray, tol: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.lower - tol) & (x <= self.upper + tol), axis=1)

    def within(self, other: "Box", tol: float = 1e-12) -> bool:
        return bool(np.all(self.lower >= other.lower - tol)
                    and np.all(self.upper <= other.upper + tol))

    def split(self, axis: int, at: float) -> tuple["Box", "Box"]:
        hi = self.upper.copy()
        hi[axis] = at
        lo = self.lower.copy()
        lo[axis] = at
        return Box(self.lower, hi), Box(lo, self.upper)

    def to_list(self) -> list:
        return [self.lower.tolist(), self.upper.tolist()]


# -- pointwise --------------------------------------------------------------

def _values_from_scaled(family: KernelFamily, z: np.ndarray, w: float) -> np.ndarray:
    # explicit per-axis sums keep results bit-identical for any batch shape
    z0, z1, z2 = z[..., 0], z[..., 1], z[..., 2]
    if family is KernelFamily.UNIFORM:
        inside = np.maximum(np.maximum(np.abs(z0), np.abs(z1)), np.abs(z2)) < w
        return inside.astype(np.float64)
    val = np.exp(-(z0 * z0 + z1 * z1 + z2 * z2))
    if family is KernelFamily.COMPACT_GAUSSIAN:
        inside = np.maximum(np.maximum(np.abs(z0), np.abs(z1)), np.abs(z2)) < w
        val = np.where(inside, val, 0.0)
    return val


def kernel_eval(params: KernelParams, x, u):
    """``k(x, u)``; broadcasts over leading dimensions of ``x`` and ``u``."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    z = (x - u) / params.sigma
    out = _values_from_scaled(params.family, z, params.support_w)
    return float(out) if out.ndim == 0 else out


# -- box integrals ----------------------------------------------------------

def _erf_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``erf(b) - erf(a)`` without cancellation in the tails."""
    out = erf(b) - erf(a)
    pos = a > 0
    neg = b < 0
    out = np.where(pos, erfc(a) - erfc(b), out)
    out = np.where(neg, erfc(-b) - erfc(-a), out)
    return out


def _axis_terms(family: KernelFamily, lo, hi, u, sigma, w):
    """Per-axis integral of the 1-D factor over ``[lo, hi]`` and its
    derivative with respect to ``log sigma``.

    For compact families the interval is clipped to the support
    ``(u - w sigma, u + w sigma)``; a clipped endpoint moves with sigma,
    which contributes the boundary term.
    """
    u = np.asarray(u, dtype=np.float64)
    if family.compact:
        a_sup = u - w * sigma
        b_sup = u + w * sigma
        a_clip = a_sup > lo
        b_clip = b_sup < hi
        a = np.where(a_clip, a_sup, lo)
        b = np.where(b_clip, b_sup, hi)
    else:
        a = np.broadcast_to(np.float64(lo), u.shape)
        b = np.broadcast_to(np.float64(hi), u.shape)
        a_clip = b_clip = np.zeros(u.shape, dtype=bool)
    empty = b <= a

    if family is KernelFamily.UNIFORM:
        val = np.where(empty, 0.0, b - a)
        grad = sigma * w * (a_clip.astype(float) + b_clip.astype(float))
        return val, np.where(empty, 0.0, grad)

    za = (a - u) / sigma
    zb = (b - u) / sigma
    # endpoints sitting exactly on the support edge have z = +-w
    za = np.where(a_clip, -w, za)
    zb = np.where(b_clip, w, zb)
    val = sigma * (SQRT_PI / 2.0) * _erf_diff(za, zb)
    # d/dlog(sigma) of sigma*G(za, zb): free endpoints have dz/dlog(sigma) = -z
    grad = val.copy()
    grad = grad - np.where(b_clip, 0.0, sigma * zb * np.exp(-zb * zb))
    grad = grad + np.where(a_clip, 0.0, sigma * za * np.exp(-za * za))
    val = np.where(empty, 0.0, val)
    grad = np.where(empty, 0.0, grad)
    return val, grad


def _box_terms(params: KernelParams, u, box: Box):
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    sigma = params.sigma
    vals = np.empty(u.shape)
    grads = np.empty(u.shape)
    for d in range(3):
        vals[:, d], grads[:, d] = _axis_terms(params.family, box.lower[d], box.upper[d],
                                             u[:, d], sigma[d], params.support_w)
    return vals, grads


def kernel_box_integral(params: KernelParams, u, box: Box):
    """``int_box k(x, u) dx`` in closed form, for one centre or a ``(J, 3)`` stack."""
    single = np.ndim(u) == 1
    vals, _ = _box_terms(params, u, box)
    out = np.prod(vals, axis=1)
    return float(out[0]) if single else out


def kernel_box_integral_grad(params: KernelParams, u, box: Box):
    """Gradient of :func:`kernel_box_integral` with respect to ``log_sigma``."""
    single = np.ndim(u) == 1
    vals, grads = _box_terms(params, u, box)
    out = np.empty_like(vals)
    for d in range(3):
        others = [e for e in range(3) if e != d]
        out[:, d] = grads[:, d] * vals[:, others[0]] * vals[:, others[1]]
    return out[0] if single else out


# -- kernel matrices --------------------------------------------------------

@dataclass
class KernelMatrix:
    """Coordinate-format ``n x J`` kernel matrix with the scaled offsets of
    each stored entry (needed for bandwidth gradients)."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    scaled_offsets: np.ndarray
    shape: tuple[int, int]

    @property
    def nnz(self) -> int:
        return len(self.values)

    def matvec(self, f: np.ndarray) -> np.ndarray:
        return np.bincount(self.rows, weights=self.values * f[self.cols],
                           minlength=self.shape[0])

    def rmatvec(self, g: np.ndarray) -> np.ndarray:
        return np.bincount(self.cols, weights=self.values * g[self.rows],
                           minlength=self.shape[1])

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.values
        return out

    def log_sigma_grad(self, family: KernelFamily, weights: np.ndarray) -> np.ndarray:
        """``sum_entries weights[entry] * dK/dlog(sigma)`` as a 3-vector."""
        if not family.smooth:
            return np.zeros(3)
        z2 = self.scaled_offsets ** 2
        return 2.0 * (weights * self.values) @ z2


def _axis_candidates(x: np.ndarray, origin: float, spacing: float, count: int,
                     reach: float) -> tuple[np.ndarray, np.ndarray]:
    """Lattice indices within ``reach`` of each coordinate (superset), plus a
    validity mask. Returns arrays of shape ``(n, k)``."""
    if count == 1:
        return np.zeros((len(x), 1), dtype=np.int64), np.ones((len(x), 1), dtype=bool)
    k = min(count, int(math.ceil(2.0 * reach / spacing)) + 3)
    start = np.floor((x - reach - origin) / spacing).astype(np.int64)
    start = np.clip(start, 0, count - k)
    idx = start[:, None] + np.arange(k)[None, :]
    return idx, np.ones(idx.shape, dtype=bool)


def _lattice_spec(grid: RepPointGrid):
    axes = [grid.time_points, grid.axis_points[0], grid.axis_points[1]]
    specs = []
    for a in axes:
        spacing = float(a[1] - a[0]) if len(a) > 1 else math.inf
        specs.append((float(a[0]), spacing, len(a)))
    return specs


def kernel_matrix(params: KernelParams, X, grid: RepPointGrid) -> KernelMatrix:
    """Kernel matrix ``K[i, j] = k(x_i, u_j)``.

    Dense families store every entry. Compact families visit only the
    lattice neighbourhood of each event and keep strictly positive entries.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, J = len(X), grid.J
    sigma = params.sigma
    U = grid.points
    if not params.family.compact:
        rows = np.repeat(np.arange(n), J)
        cols = np.tile(np.arange(J), n)
        z = (X[rows] - U[cols]) / sigma
        vals = _values_from_scaled(params.family, z, params.support_w)
        return KernelMatrix(rows, cols, vals, z, (n, J))

    reach = params.support_w * sigma
    specs = _lattice_spec(grid)
    per_axis = [_axis_candidates(X[:, d], *specs[d], reach[d])[0] for d in range(3)]
    it, ix, iy = per_axis
    kt, kx, ky = it.shape[1], ix.shape[1], iy.shape[1]
    _, nx, ny = specs[0][2], specs[1][2], specs[2][2]
    cand = (it[:, :, None, None] * (nx * ny)
            + ix[:, None, :, None] * ny
            + iy[:, None, None, :]).reshape(n, kt * kx * ky)
    rows = np.repeat(np.arange(n), cand.shape[1])
    cols = cand.ravel()
    z = (X[rows] - U[cols]) / sigma
    vals = _values_from_scaled(params.family, z, params.support_w)
    keep = vals > 0
    rows, cols, vals, z = rows[keep], cols[keep], vals[keep], z[keep]
    order = np.lexsort((cols, rows))
    return KernelMatrix(rows[order], cols[order], vals[order], z[order], (n, J))


def kernel_row(params: KernelParams, x, grid: RepPointGrid) -> tuple[np.ndarray, np.ndarray]:
    """Nonzero entries ``(indices, values)`` of ``k(x, u_j)`` over the grid."""
    km = kernel_matrix(params, np.asarray(x, dtype=np.float64).reshape(1, 3), grid)
    return km.cols, km.values
