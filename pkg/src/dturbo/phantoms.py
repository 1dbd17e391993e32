"""Seeded test signals: sparse vectors, piecewise-smooth images, low-rank matrices."""

import numpy as np

from .denoisers import BernoulliGaussianPrior


def sparse_bg(n, rho, seed):
    """i.i.d. ``(1 - rho) delta_0 + rho N(0, 1/rho)`` entries (unit average energy)."""
    return BernoulliGaussianPrior.unit_energy(rho).sample(n, np.random.default_rng(seed))


def low_rank(n1, n2, rank, seed):
    """Product of seeded standard Gaussian ``n1 x rank`` and ``rank x n2`` factors."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n1, rank)) @ rng.standard_normal((rank, n2))


def piecewise_smooth_image(size=128, seed=0):
    """8-bit grayscale test image: smooth shading plus flat and graded shapes.

    Returns a ``uint8`` array of shape ``(size, size)``.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 90 + 60 * xx + 30 * np.sin(2 * np.pi * (0.7 * yy + 0.3 * xx))

    for _ in range(6):
        cy, cx = rng.uniform(0.15, 0.85, 2)
        ry, rx = rng.uniform(0.06, 0.3, 2)
        angle = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(angle) + dy * np.sin(angle)
        v = -dx * np.sin(angle) + dy * np.cos(angle)
        inside = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
        level = rng.uniform(20, 235)
        slope = rng.uniform(-60, 60)
        img = np.where(inside, level + slope * (u / rx), img)

    for _ in range(3):
        y0, x0 = rng.uniform(0.05, 0.7, 2)
        h, w = rng.uniform(0.1, 0.3, 2)
        inside = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
        img = np.where(inside, rng.uniform(20, 235), img)

    return np.clip(np.rint(img), 0, 255).astype(np.uint8)
