"""Divergence-free extrinsic denoisers built from arbitrary denoisers.

Given a denoiser ``D`` and a noisy input ``r = x + tau * e``, the extrinsic
output is ``c * (D(r) - alpha * r)`` with ``alpha = div D(r) / n`` and ``c``
the SURE-minimizing scale.  The subtraction makes the map divergence-free,
so its SURE reduces to ``|x_ext - r|^2 / n - tau^2``.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import denoisers as dn
from .errors import DegenerateExtrinsic

DEGENERATE_RTOL = 1e-10


class DenoiserKind(str, Enum):
    MMSE_BG = "MMSE_BG"
    SURE_LET = "SURE_LET"
    SVT = "SVT"
    BLACK_BOX = "BLACK_BOX"
    SOFT_THRESHOLD = "SOFT_THRESHOLD"


# name -> factory(**params) returning a callable (r, tau_sq) -> estimate
BLACK_BOX_REGISTRY = {}


def register_black_box(name):
    def wrap(factory):
        BLACK_BOX_REGISTRY[name] = factory
        return factory

    return wrap


@register_black_box("identity")
def _identity_factory(**_):
    return lambda r, tau_sq: np.array(r, dtype=float)


@register_black_box("median")
def _median_factory(shape, size=3, **_):
    from scipy.ndimage import median_filter

    shape = tuple(shape)

    def denoise(r, tau_sq):
        img = np.asarray(r, dtype=float).reshape(shape, order="F")
        return median_filter(img, size=size, mode="reflect").ravel(order="F")

    return denoise


@register_black_box("soft")
def _soft_factory(scale=1.0, **_):
    return lambda r, tau_sq: dn.soft_threshold(r, scale * np.sqrt(tau_sq))


_DEFAULTS = {
    DenoiserKind.MMSE_BG: {},
    DenoiserKind.SURE_LET: {"transform": "DCT", "beta1": 2.0, "beta2": 4.0, "shape": None},
    DenoiserKind.SVT: {"grid_size": 256, "threshold": None},
    DenoiserKind.BLACK_BOX: {"delta": None, "n_probes": 1, "seed": 0, "name": None, "divergence_fn": None},
    DenoiserKind.SOFT_THRESHOLD: {"scale": 1.0},
}


@dataclass(frozen=True)
class DenoiserSpec:
    """A denoiser kind with its parameters.

    Parameters per kind:

    MMSE_BG
        ``rho``, ``signal_variance``
    SURE_LET
        ``transform`` (DCT, HAAR or IDENTITY), ``beta1`` and ``beta2`` as
        multiples of the input noise standard deviation, optional ``shape``
        for 2D transforms
    SVT
        ``shape`` = (n1, n2), ``grid_size``, optional fixed ``threshold``
    BLACK_BOX
        ``denoiser`` callable ``(r, tau_sq) -> estimate`` or a registered
        ``name`` (plus its factory arguments), Monte-Carlo ``delta``,
        ``n_probes`` and probe ``seed``; an optional ``divergence_fn``
        ``(r, tau_sq) -> div`` replaces the Monte-Carlo estimate
    SOFT_THRESHOLD
        ``scale``: threshold as a multiple of the noise standard deviation
    """

    kind: DenoiserKind
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        kind = DenoiserKind(self.kind)
        object.__setattr__(self, "kind", kind)
        params = {**_DEFAULTS[kind], **self.params}
        if kind is DenoiserKind.BLACK_BOX and params.get("denoiser") is None:
            name = params.get("name")
            if name not in BLACK_BOX_REGISTRY:
                raise ValueError(f"black-box denoiser needs a callable or a registered name, got {name!r}")
            extra = {k: v for k, v in params.items() if k not in _DEFAULTS[kind]}
            params["denoiser"] = BLACK_BOX_REGISTRY[name](**extra)
        object.__setattr__(self, "params", params)
        self._validate()

    def _validate(self):
        p = self.params
        if self.kind is DenoiserKind.MMSE_BG:
            self.prior  # constructing it validates rho and the variance
        elif self.kind is DenoiserKind.SURE_LET:
            if not 0 < p["beta1"] < p["beta2"]:
                raise ValueError(f"need 0 < beta1 < beta2, got {p['beta1']}, {p['beta2']}")
            dn.TransformKind(p["transform"])
        elif self.kind is DenoiserKind.SVT:
            shape = p.get("shape")
            if shape is None or len(shape) != 2 or min(shape) < 1:
                raise ValueError(f"SVT needs a 2D shape, got {shape}")
            if p["grid_size"] < 2:
                raise ValueError("grid_size must be at least 2")
            if p["threshold"] is not None and p["threshold"] < 0:
                raise ValueError("threshold must be nonnegative")
        elif self.kind is DenoiserKind.BLACK_BOX:
            if not callable(p["denoiser"]):
                raise ValueError("black-box denoiser must be callable")
            if p["delta"] is not None and not p["delta"] > 0:
                raise ValueError(f"delta must be positive, got {p['delta']}")
            if p["n_probes"] < 1:
                raise ValueError("n_probes must be at least 1")
            if p["divergence_fn"] is not None and not callable(p["divergence_fn"]):
                raise ValueError("divergence_fn must be callable")
        elif self.kind is DenoiserKind.SOFT_THRESHOLD:
            if p["scale"] < 0:
                raise ValueError("scale must be nonnegative")

    # convenience constructors

    @classmethod
    def mmse_bg(cls, rho, signal_variance=None):
        return cls(DenoiserKind.MMSE_BG, {"rho": rho, "signal_variance": signal_variance or 1.0 / rho})

    @classmethod
    def sure_let(cls, transform="DCT", beta1=2.0, beta2=4.0, shape=None):
        return cls(DenoiserKind.SURE_LET, {"transform": transform, "beta1": beta1, "beta2": beta2, "shape": shape})

    @classmethod
    def svt(cls, shape, grid_size=256, threshold=None):
        return cls(DenoiserKind.SVT, {"shape": tuple(shape), "grid_size": grid_size, "threshold": threshold})

    @classmethod
    def black_box(cls, denoiser=None, name=None, delta=None, n_probes=1, seed=0, divergence_fn=None, **factory_args):
        params = {"denoiser": denoiser, "name": name, "delta": delta, "n_probes": n_probes, "seed": seed}
        return cls(DenoiserKind.BLACK_BOX, {**params, "divergence_fn": divergence_fn, **factory_args})

    @classmethod
    def soft_threshold(cls, scale=1.0):
        return cls(DenoiserKind.SOFT_THRESHOLD, {"scale": scale})

    @property
    def prior(self):
        return dn.BernoulliGaussianPrior(self.params["rho"], self.params["signal_variance"])

    def let_params(self, tau_sq):
        p = self.params
        return dn.LetKernelParams.for_noise(tau_sq, p["beta1"], p["beta2"], p["transform"], p["shape"])

    def to_dict(self):
        params = {k: v for k, v in self.params.items() if k not in ("denoiser", "divergence_fn")}
        if self.kind is DenoiserKind.BLACK_BOX:
            if params.get("name") is None or self.params["divergence_fn"] is not None:
                raise ValueError("only registered black-box denoisers can be serialized")
        for key in ("shape",):
            if params.get(key) is not None:
                params[key] = list(params[key])
        return {"kind": self.kind.value, "params": params}

    @classmethod
    def from_dict(cls, d):
        params = dict(d.get("params", {}))
        if params.get("shape") is not None:
            params["shape"] = tuple(params["shape"])
        return cls(DenoiserKind(d["kind"]), params)


@dataclass
class ExtrinsicResult:
    x_ext: np.ndarray
    divergence: float
    alpha: float
    c: float
    sure: float
    # denoiser output D(r) and the extrinsic map with every coefficient frozen
    d: np.ndarray = field(default=None, repr=False)
    frozen: object = field(default=None, repr=False)
    info: dict = field(default_factory=dict)

    def to_dict(self, include_vector=False):
        out = {"divergence": self.divergence, "alpha": self.alpha, "c": self.c, "sure": self.sure, **self.info}
        if include_vector:
            out["x_ext"] = self.x_ext.tolist()
        return out


def mc_divergence(fn, r, delta=None, n_probes=1, rng=None):
    """Monte-Carlo divergence ``E <N, (fn(r + delta N) - fn(r)) / delta>``."""
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("input must be finite")
    if delta is None:
        delta = max(float(np.max(np.abs(r))), 1.0) * 1e-3
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    rng = np.random.default_rng(0) if rng is None else rng
    base = fn(r)
    total = 0.0
    for _ in range(n_probes):
        probe = rng.standard_normal(r.shape)
        total += float(probe @ (fn(r + delta * probe) - base)) / delta
    return total / n_probes


def sure_of_map(d_out, r, tau_sq, divergence):
    """Stein's unbiased estimate of ``|d_out - x|^2 / n``."""
    d_out = np.asarray(d_out, dtype=float)
    r = np.asarray(r, dtype=float)
    if d_out.shape != r.shape:
        raise ValueError(f"length mismatch: {d_out.shape} vs {r.shape}")
    if not tau_sq > 0:
        raise ValueError(f"tau_sq must be positive, got {tau_sq}")
    n = r.size
    return float(np.sum((d_out - r) ** 2) / n + 2.0 * tau_sq * divergence / n - tau_sq)


def _as_matrix(r, shape):
    return np.asarray(r, dtype=float).reshape(shape, order="F")


def bind(spec, r, tau_sq, rng=None):
    """Fix the data-dependent parameters of ``spec`` at input ``r``.

    Returns ``(fn, d, divergence)``: a fixed-parameter denoiser, its output
    ``d = fn(r)`` and the divergence of ``fn`` at ``r`` (analytic where a
    closed form exists, Monte-Carlo otherwise).
    """
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("input must be finite")
    if not tau_sq > 0:
        raise ValueError(f"tau_sq must be positive, got {tau_sq}")
    p = spec.params
    kind = spec.kind

    if kind is DenoiserKind.MMSE_BG:
        prior = spec.prior

        def fn(z):
            return dn.bg_posterior(z, tau_sq, prior)[0]

        mean, var = dn.bg_posterior(r, tau_sq, prior)
        return fn, mean, float(var.sum() / tau_sq)

    if kind is DenoiserKind.SOFT_THRESHOLD:
        threshold = p["scale"] * np.sqrt(tau_sq)

        def fn(z):
            return dn.soft_threshold(z, threshold)

        return fn, fn(r), dn.soft_threshold_divergence(r, threshold)

    if kind is DenoiserKind.SURE_LET:
        params = spec.let_params(tau_sq)
        est, theta, div = dn.let_denoise(r, tau_sq, params)

        def fn(z):
            return dn.let_apply(z, theta, params)

        return fn, est, div

    if kind is DenoiserKind.SVT:
        shape = tuple(p["shape"])
        R = _as_matrix(r, shape)
        if p["threshold"] is None:
            est, threshold, div = dn.svt_sure_denoise(R, tau_sq, p["grid_size"])
        else:
            threshold = p["threshold"]
            est = dn.svt(R, threshold)
            sigma = np.linalg.svd(R, compute_uv=False)
            div = dn.svt_divergence(sigma, threshold, *shape)

        def fn(z):
            return dn.svt(_as_matrix(z, shape), threshold).ravel(order="F")

        return fn, est.ravel(order="F"), float(div)

    # black box
    user = p["denoiser"]

    def fn(z):
        return np.asarray(user(z, tau_sq), dtype=float)

    d = fn(r)
    if p["divergence_fn"] is not None:
        return fn, d, float(p["divergence_fn"](r, tau_sq))
    rng = np.random.default_rng(p["seed"]) if rng is None else rng
    div = mc_divergence(fn, r, p["delta"], p["n_probes"], rng)
    return fn, d, div


def denoise(spec, r, tau_sq, rng=None):
    """Plain denoiser output ``D(r)`` (the a posteriori estimate)."""
    return bind(spec, r, tau_sq, rng)[1]


def divergence(spec, r, tau_sq, rng=None):
    """``div D(r)``: analytic for closed-form kinds, Monte-Carlo for black boxes."""
    return bind(spec, r, tau_sq, rng)[2]


def _generic_extrinsic(fn, d, div, r, tau_sq):
    n = r.size
    alpha = div / n
    u = d - alpha * r
    unorm = float(u @ u)
    rnorm = float(r @ r)
    # only the part of u orthogonal to r carries information: for a linear
    # denoiser u is zero (exact divergence) or parallel to r (Monte-Carlo).
    # At n = 1 every direction is parallel to r, so only u = 0 counts there.
    u_perp = u - (float(r @ u) / rnorm) * r if rnorm > 0 and n > 1 else u
    if float(u_perp @ u_perp) <= (DEGENERATE_RTOL**2) * max(float(d @ d), rnorm, np.finfo(float).tiny):
        raise DegenerateExtrinsic("extrinsic direction d - alpha*r vanishes (linear denoiser?)", u)
    c = float(r @ u) / unorm
    x_ext = c * u

    def frozen(z):
        return c * (fn(z) - alpha * np.asarray(z, dtype=float))

    sure = float(np.sum((x_ext - r) ** 2) / n - tau_sq)
    return ExtrinsicResult(x_ext, float(div), alpha, c, sure, d, frozen)


def extrinsic_denoise(spec, r, tau_sq, rng=None):
    """Divergence-free extrinsic estimate of ``x`` from ``r = x + tau * e``.

    SURE_LET and (threshold-free) SVT specs use their joint closed-form
    optimizations; every other kind goes through the generic construction.
    Raises :class:`DegenerateExtrinsic` when ``D(r) - alpha r`` vanishes.
    """
    r = np.asarray(r, dtype=float)
    if not tau_sq > 0:
        raise ValueError(f"tau_sq must be positive, got {tau_sq}")
    if not np.all(np.isfinite(r)):
        raise ValueError("input must be finite")
    n = r.size
    p = spec.params

    if spec.kind is DenoiserKind.SURE_LET:
        params = spec.let_params(tau_sq)
        theta, x_ext, sure, kdiv = dn.let_extrinsic_solve(r, tau_sq, params)
        div = float(theta @ kdiv)
        d = dn.let_apply(r, theta, params)

        def frozen(z):
            return dn.let_apply(z, theta, params, kdiv)

        return ExtrinsicResult(x_ext, div, div / n, 1.0, sure, d, frozen, {"theta": theta.tolist()})

    if spec.kind is DenoiserKind.SVT and p["threshold"] is None:
        shape = tuple(p["shape"])
        res = dn.svt_extrinsic(_as_matrix(r, shape), tau_sq, p["grid_size"])
        alpha = res.divergence / n
        threshold, c = res.threshold, res.c

        def frozen(z):
            z = np.asarray(z, dtype=float)
            return c * (dn.svt(_as_matrix(z, shape), threshold).ravel(order="F") - alpha * z)

        return ExtrinsicResult(
            res.x_ext.ravel(order="F"),
            res.divergence,
            alpha,
            c,
            res.sure,
            res.d.ravel(order="F"),
            frozen,
            {"threshold": threshold},
        )

    fn, d, div = bind(spec, r, tau_sq, rng)
    return _generic_extrinsic(fn, d, div, r, tau_sq)
