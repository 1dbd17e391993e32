"""Concrete denoisers with closed-form divergences.

* Bernoulli-Gaussian MMSE (posterior mean and variance).
* SURE-LET with three piecewise-linear kernels in an orthonormal transform
  domain, in both the plain and the extrinsic (divergence-free) form.
* Singular value thresholding (SVT) with its closed-form divergence and an
  exhaustive threshold search for the extrinsic version.
* Componentwise soft thresholding.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import transforms
from .errors import DegenerateExtrinsic, SolveFailure
from .transforms import TransformKind

PINV_RCOND = 1e-10
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class BernoulliGaussianPrior:
    """Spike-and-slab prior ``(1 - rho) delta_0 + rho N(0, signal_variance)``."""

    rho: float
    signal_variance: float

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if not self.signal_variance > 0:
            raise ValueError(f"signal_variance must be positive, got {self.signal_variance}")

    @classmethod
    def unit_energy(cls, rho):
        """Prior with nonzero variance ``1/rho`` so that ``E[x^2] = 1``."""
        return cls(rho, 1.0 / rho)

    @property
    def second_moment(self):
        return self.rho * self.signal_variance

    def sample(self, n, rng):
        support = rng.random(n) < self.rho
        return np.where(support, np.sqrt(self.signal_variance) * rng.standard_normal(n), 0.0)


def bg_posterior(r, tau_sq, prior):
    """Componentwise posterior mean and variance for ``r = x + N(0, tau_sq)``."""
    if not tau_sq > 0:
        raise ValueError(f"tau_sq must be positive, got {tau_sq}")
    r = np.asarray(r, dtype=float)
    sx2 = prior.signal_variance
    gain = sx2 / (sx2 + tau_sq)
    slab_mean = gain * r
    slab_var = gain * tau_sq
    if prior.rho >= 1.0:
        return slab_mean, np.full_like(r, slab_var)
    # log-odds of slab vs spike; Gaussian evidences compared in log domain
    log_odds = (
        np.log(prior.rho / (1.0 - prior.rho))
        + 0.5 * np.log(tau_sq / (sx2 + tau_sq))
        + 0.5 * r**2 * (1.0 / tau_sq - 1.0 / (sx2 + tau_sq))
    )
    pi = expit(log_odds)
    mean = pi * slab_mean
    var = pi * slab_var + pi * (1.0 - pi) * slab_mean**2
    return mean, var


def mmse_bg_denoise(r, tau_sq, prior):
    """Posterior mean vector and average posterior variance."""
    mean, var = bg_posterior(r, tau_sq, prior)
    return mean, float(np.mean(var))


def soft_threshold(r, threshold):
    r = np.asarray(r, dtype=float)
    return np.sign(r) * np.maximum(np.abs(r) - threshold, 0.0)


def soft_threshold_divergence(r, threshold):
    return float(np.count_nonzero(np.abs(r) > threshold))


# --------------------------------------------------------------------------
# SURE-LET
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LetKernelParams:
    """Kernel thresholds and the analysis transform.

    ``beta1`` and ``beta2`` are absolute thresholds; :meth:`for_noise`
    builds them as multiples of the noise standard deviation.  ``shape``
    switches the transform to its 2D separable form.
    """

    beta1: float
    beta2: float
    transform_kind: TransformKind = TransformKind.DCT
    shape: tuple = None

    def __post_init__(self):
        if not 0 < self.beta1 < self.beta2:
            raise ValueError(f"need 0 < beta1 < beta2, got {self.beta1}, {self.beta2}")
        object.__setattr__(self, "transform_kind", TransformKind(self.transform_kind))
        if self.shape is not None:
            object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    @classmethod
    def for_noise(cls, tau_sq, beta1_scale=2.0, beta2_scale=4.0, transform_kind="DCT", shape=None):
        tau = np.sqrt(tau_sq)
        return cls(beta1_scale * tau, beta2_scale * tau, transform_kind, shape)


def let_kernels(rt, beta1, beta2):
    """Evaluate the three kernels and their derivatives at each entry.

    Returns ``(psi, dpsi)``, both of shape ``(3, n)``.
    """
    rt = np.asarray(rt, dtype=float)
    a = np.abs(rt)
    s = np.sign(rt)

    inner = a <= beta1
    ramp_down = (a > beta1) & (a < 2 * beta1)
    psi1 = np.where(inner, rt / beta1, np.where(ramp_down, s * (2.0 - a / beta1), 0.0))
    dpsi1 = np.where(inner, 1.0 / beta1, np.where(ramp_down, -1.0 / beta1, 0.0))

    mid = (a > beta1) & (a < beta2)
    outer = a >= beta2
    psi2 = np.where(mid, s * (a - beta1) / (beta2 - beta1), np.where(outer, s, 0.0))
    dpsi2 = np.where(mid, 1.0 / (beta2 - beta1), 0.0)

    psi3 = np.where(outer, s * (a - beta2), 0.0)
    dpsi3 = outer.astype(float)

    return np.stack([psi1, psi2, psi3]), np.stack([dpsi1, dpsi2, dpsi3])


def _pinv_solve(M, b):
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(b))):
        raise SolveFailure("non-finite Gram system")
    theta = np.linalg.pinv(M, rcond=PINV_RCOND, hermitian=True) @ b
    if not np.all(np.isfinite(theta)):
        raise SolveFailure("pseudo-inverse solve produced non-finite weights")
    return theta


def let_denoise(r, tau_sq, params):
    """Plain SURE-LET: weights minimizing the SURE of ``sum_k theta_k Psi_k``.

    Returns ``(estimate, theta, divergence)``.
    """
    rt = transforms.forward(r, params.transform_kind, params.shape)
    psi, dpsi = let_kernels(rt, params.beta1, params.beta2)
    div = dpsi.sum(axis=1)
    theta = _pinv_solve(psi @ psi.T, psi @ rt - tau_sq * div)
    est = transforms.inverse(theta @ psi, params.transform_kind, params.shape)
    return est, theta, float(theta @ div)


def let_extrinsic_solve(r, tau_sq, params):
    """Extrinsic SURE-LET: SURE-optimal weights over the divergence-free kernels.

    Returns ``(theta_ext, x_ext, sure, divergences)`` where ``divergences``
    holds ``div psi_k`` for each kernel; the overall scale ``c`` is absorbed
    into ``theta_ext``.
    """
    if not tau_sq > 0:
        raise ValueError(f"tau_sq must be positive, got {tau_sq}")
    rt = transforms.forward(r, params.transform_kind, params.shape)
    n = rt.size
    psi, dpsi = let_kernels(rt, params.beta1, params.beta2)
    div = dpsi.sum(axis=1)
    psi_ext = psi - np.outer(div / n, rt)
    theta = _pinv_solve(psi_ext @ psi_ext.T, psi_ext @ rt)
    xt = theta @ psi_ext
    sure = float(np.sum((xt - rt) ** 2) / n - tau_sq)
    x_ext = transforms.inverse(xt, params.transform_kind, params.shape)
    return theta, x_ext, sure, div


def let_apply(r, theta, params, divergences=None):
    """Evaluate a LET map with frozen weights (and frozen ``div/n`` terms).

    With ``divergences`` given, the map is ``sum_k theta_k (Psi_k(r) - div_k/n r)``,
    i.e. the extrinsic form with its coefficients held fixed.
    """
    rt = transforms.forward(r, params.transform_kind, params.shape)
    psi, _ = let_kernels(rt, params.beta1, params.beta2)
    out = theta @ psi
    if divergences is not None:
        out = out - (theta @ divergences) / rt.size * rt
    return transforms.inverse(out, params.transform_kind, params.shape)


# --------------------------------------------------------------------------
# SVT
# --------------------------------------------------------------------------


def svt(R, threshold):
    """Proximal map of ``threshold * nuclear norm``: soft-threshold singular values."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    U, s, Vt = np.linalg.svd(np.asarray(R, dtype=float), full_matrices=False)
    return (U * np.maximum(s - threshold, 0.0)) @ Vt


def _svt_divergence_grid(sigma, thresholds, n1, n2):
    """Closed-form SVT divergence for every threshold in ``thresholds``."""
    sigma = np.asarray(sigma, dtype=float)
    th = np.atleast_1d(np.asarray(thresholds, dtype=float))[:, None]
    k = sigma.size
    smax = sigma.max() if k else 0.0

    sq = sigma**2
    gaps = sq[:, None] - sq[None, :]
    tie = np.abs(gaps) <= TIE_RTOL * smax**2
    np.fill_diagonal(tie, False)
    inv = np.zeros_like(gaps)
    off = ~tie & ~np.eye(k, dtype=bool)
    inv[off] = 1.0 / gaps[off]
    weight = inv.sum(axis=1)
    n_ties = tie.sum(axis=1)

    shrunk = np.maximum(sigma - th, 0.0)
    active = sigma > th
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(sigma > 0, shrunk / sigma, 0.0)
        # limit of the paired terms as sigma_i -> sigma_j: 1 - theta / (2 sigma)
        tie_limit = np.where(active, 1.0 - th / (2.0 * sigma), 0.0)
    div = (
        abs(n1 - n2) * ratio.sum(axis=1)
        + active.sum(axis=1)
        + 2.0 * (sigma * shrunk * weight).sum(axis=1)
        + (n_ties * tie_limit).sum(axis=1)
    )
    # SVT(.; 0) is the identity map
    div = np.where(th[:, 0] == 0, float(n1 * n2), div)
    return div


def svt_divergence(sigma, threshold, n1, n2):
    """Divergence of ``R -> SVT(R; threshold)`` from the singular values of ``R``.

    Pairs of (numerically) equal singular values use the limiting value of
    their pairwise term instead of the singular ratio.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.size != min(n1, n2):
        raise ValueError(f"expected {min(n1, n2)} singular values, got {sigma.size}")
    return float(_svt_divergence_grid(sigma, [threshold], n1, n2)[0])


def svt_sure_denoise(R, tau_sq, grid_size=256):
    """SVT with the threshold minimizing its own SURE over a uniform grid.

    Returns ``(estimate, threshold, divergence)``.
    """
    R = np.asarray(R, dtype=float)
    n1, n2 = R.shape
    n = R.size
    U, s, Vt = np.linalg.svd(R, full_matrices=False)
    grid = np.linspace(0.0, s.max(), grid_size)
    div = _svt_divergence_grid(s, grid, n1, n2)
    resid = (np.minimum(s[None, :], grid[:, None]) ** 2).sum(axis=1)
    sure = resid / n + 2.0 * tau_sq * div / n - tau_sq
    best = int(np.argmin(sure))
    theta = grid[best]
    return (U * np.maximum(s - theta, 0.0)) @ Vt, float(theta), float(div[best])


@dataclass(frozen=True)
class SvtExtrinsic:
    threshold: float
    x_ext: np.ndarray
    c: float
    sure: float
    divergence: float
    d: np.ndarray


def svt_extrinsic(R, tau_sq, grid_size=256):
    """Extrinsic SVT with the threshold picked by exhaustive SURE search.

    One SVD of ``R``; for every grid threshold the direction
    ``Phi = (sigma - theta)_+ - div/n * sigma`` is formed and the threshold
    maximizing ``(Phi . sigma)^2 / |Phi|^2`` with ``Phi . sigma > 0`` is kept.
    """
    if not tau_sq > 0:
        raise ValueError(f"tau_sq must be positive, got {tau_sq}")
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    R = np.asarray(R, dtype=float)
    n1, n2 = R.shape
    n = R.size
    U, s, Vt = np.linalg.svd(R, full_matrices=False)
    grid = np.linspace(0.0, s.max(), grid_size)
    div = _svt_divergence_grid(s, grid, n1, n2)
    phi = np.maximum(s[None, :] - grid[:, None], 0.0) - (div / n)[:, None] * s[None, :]
    norm_sq = (phi**2).sum(axis=1)
    proj = phi @ s
    scale = max(float(s @ s), np.finfo(float).tiny)
    # c = proj / norm_sq must be positive: as theta -> max(sigma) the ratio
    # also tends to 1 along a negative, hugely amplified c whose SURE is
    # meaningless, and a finer grid would chase it
    usable = (norm_sq > 1e-24 * scale) & (proj > 0)
    if not usable.any():
        raise DegenerateExtrinsic("SVT extrinsic direction vanishes at every threshold")
    objective = np.where(usable, proj**2 / np.where(usable, norm_sq, 1.0), -np.inf)
    best = int(np.argmax(objective))
    phi_best = phi[best]
    c = proj[best] / norm_sq[best]
    x_ext = (U * (c * phi_best)) @ Vt
    d = (U * np.maximum(s - grid[best], 0.0)) @ Vt
    sure = float((s @ s - objective[best]) / n - tau_sq)
    return SvtExtrinsic(float(grid[best]), x_ext, float(c), sure, float(div[best]), d)
