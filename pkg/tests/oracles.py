"""Independent reference computations used by the tests."""
import math

import numpy as np


def kernel_direct(family, x, u, sigma, w):
    """Scalar kernel value straight from its definition."""
    z = [(x[d] - u[d]) / sigma[d] for d in range(3)]
    inside = max(abs(v) for v in z) < w
    if family == "uniform":
        return 1.0 if inside else 0.0
    g = math.exp(-sum(v * v for v in z))
    if family == "compact_gaussian":
        return g if inside else 0.0
    return g


def _axis_nodes(lo, hi, breaks, max_width, order):
    pts = sorted({lo, hi, *[b for b in breaks if lo < b < hi]})
    gx, gw = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(math.ceil((b - a) / max_width)))
        edges = np.linspace(a, b, n + 1)
        for c, d in zip(edges[:-1], edges[1:]):
            nodes.append(0.5 * (d - c) * gx + 0.5 * (c + d))
            weights.append(0.5 * (d - c) * gw)
    return np.concatenate(nodes), np.concatenate(weights)


def mixture_quadrature(family, f, U, sigma, w, lower, upper, order=8):
    """Tensor Gauss-Legendre integral of sum_j f_j k(x, u_j) over a box.

    Term j is integrated on its own nodes: each axis is split at that
    term's support edges u_jd +- w sigma_d (where the integrand jumps) and,
    for the Gaussian families, into pieces no wider than sigma_d / 2, so
    each piece carries a smooth integrand.
    """
    total = 0.0
    for j in range(len(f)):
        axes = []
        for d in range(3):
            breaks = [] if family == "gaussian" else [U[j, d] - w * sigma[d], U[j, d] + w * sigma[d]]
            width = math.inf if family == "uniform" else sigma[d] / 2
            axes.append(_axis_nodes(lower[d], upper[d], breaks, width, order))
        (xt, wt), (xx, wx), (xy, wy) = axes
        zt = (xt - U[j, 0]) / sigma[0]
        zx = (xx - U[j, 1]) / sigma[1]
        zy = (xy - U[j, 2]) / sigma[2]
        Zinf = np.maximum(np.maximum(np.abs(zt)[:, None, None], np.abs(zx)[None, :, None]),
                          np.abs(zy)[None, None, :])
        if family == "uniform":
            val = (Zinf < w).astype(float)
        else:
            Z2 = zt[:, None, None] ** 2 + zx[None, :, None] ** 2 + zy[None, None, :] ** 2
            val = np.exp(-Z2)
            if family == "compact_gaussian":
                val = np.where(Zinf < w, val, 0.0)
        total += f[j] * np.einsum("i,j,k,ijk->", wt, wx, wy, val)
    return float(total)


def adam_reference(grads, lr=0.01, b1=0.01, b2=0.9, eps=1e-8, theta=0.0, l2=0.0):
    """Scalar Adam ascent written out step by step."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        g = g - 2 * l2 * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta + lr * mhat / (math.sqrt(vhat) + eps)
    return theta, m, v
