"""Turbo-CS (MMSE Module B) and D-Turbo-CS (generic extrinsic Module B).

Both engines share Module A, the closed-form LMMSE extrinsic step for
sensing operators with orthonormal rows.  The engines never look at the
true signal; when the caller passes ``truth`` it is used only to fill the
per-iteration metric fields of the trace.
"""

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import denoisers as dn
from . import extrinsic as ext
from . import metrics
from .errors import DegenerateExtrinsic, SolveFailure

V_FLOOR = 1e-9
V_CAP_FACTOR = 1e6


@dataclass(frozen=True)
class StoppingRule:
    epsilon: float = 1e-4
    max_iters: int = 30

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


def relative_change(x_now, x_prev):
    ref = float(x_prev @ x_prev)
    diff = float(np.sum((x_now - x_prev) ** 2))
    if ref == 0:
        return 0.0 if diff == 0 else np.inf
    return diff / ref


def stopping_check(x_now, x_prev, rule, t):
    """True once ``|x(t) - x(t-1)|^2 / |x(t-1)|^2 <= epsilon`` or ``t >= T``."""
    if t >= rule.max_iters:
        return True
    if x_prev is None:
        return False
    x_now = np.asarray(x_now, dtype=float)
    x_prev = np.asarray(x_prev, dtype=float)
    if x_now.shape != x_prev.shape:
        raise ValueError("iterates differ in length")
    return relative_change(x_now, x_prev) <= rule.epsilon


@dataclass
class IterationRecord:
    t: int
    v_A_pri: float
    v_A_ext: float
    v_B_ext: float
    residual_norm: float
    rel_change: float = None
    v_B_post: float = None
    alpha: float = None
    c: float = None
    sure: float = None
    nmse: float = None  # dB, of the output estimate x_B^post
    nmse_pri: float = None  # dB, of x_B^pri (Module A output)
    nmse_ext: float = None  # dB, of x_B^ext (Module B extrinsic output)
    psnr: float = None
    err_skew: float = None
    err_kurt: float = None
    clamped: list = field(default_factory=list)


@dataclass
class RecoveryTrace:
    records: list = field(default_factory=list)
    x_hat: np.ndarray = None
    converged: bool = False
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def series(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def jsonl_lines(self):
        for rec in self.records:
            d = asdict(rec)
            yield json.dumps({k: _jsonable(v) for k, v in d.items()}, sort_keys=True)

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for line in self.jsonl_lines():
                fh.write(line + "\n")


def _jsonable(v):
    if isinstance(v, float) or isinstance(v, np.floating):
        return metrics.finite_or_none(v)
    return v


def module_a_extrinsic(op, y, x_pri, v_pri, sigma_sq):
    """LMMSE extrinsic estimate for ``A A^T = I``.

    ``x_ext = x_pri + (n/m) A^T (y - A x_pri)`` and
    ``v_ext = (n/m - 1) v_pri + (n/m) sigma^2``.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (op.m,):
        raise ValueError(f"measurement must have shape ({op.m},), got {y.shape}")
    ratio = op.n / op.m
    x_ext = x_pri + ratio * op.adjoint(y - op.apply(x_pri))
    v_ext = (ratio - 1.0) * v_pri + ratio * sigma_sq
    return x_ext, v_ext


def residual_variance(op, y, x_ext, sigma_sq):
    """Unclamped ``(|y - A x_ext|^2 - m sigma^2) / m``."""
    res = y - op.apply(x_ext)
    return (float(res @ res) - op.m * sigma_sq) / op.m


def estimate_v_ext_B(op, y, x_B_ext, sigma_sq, v_floor=V_FLOOR):
    """Residual-based extrinsic variance of Module B, floored at ``v_floor``."""
    return max(residual_variance(op, y, x_B_ext, sigma_sq), v_floor)


class _Clamp:
    def __init__(self, floor, cap):
        self.floor, self.cap = floor, cap

    def __call__(self, name, v, log):
        if not np.isfinite(v) or v < self.floor:
            log.append(name)
            return self.floor
        if v > self.cap:
            log.append(name)
            return self.cap
        return float(v)


def _fill_truth(rec, truth, x_hat, x_b_pri, v_b_pri, x_b_ext, psnr_max):
    if truth is None:
        return
    rec.nmse = metrics.nmse(x_hat, truth)
    rec.nmse_pri = metrics.nmse(x_b_pri, truth)
    rec.nmse_ext = metrics.nmse(x_b_ext, truth)
    if psnr_max is not None:
        rec.psnr = metrics.psnr(x_hat, truth, psnr_max)
    rec.err_skew, rec.err_kurt = metrics.error_moments((x_b_pri - truth) / np.sqrt(v_b_pri))


def run_turbo_cs(op, y, sigma_sq, prior, stop=StoppingRule(), *, truth=None, psnr_max=None,
                 v_floor=V_FLOOR, callback=None):
    """Turbo-CS with the Bernoulli-Gaussian MMSE denoiser in Module B.

    Module B's extrinsic message comes from Gaussian division of the
    posterior by the prior message.  ``callback(t, state)`` receives a dict
    with the current iterates after every iteration.
    """
    y = np.asarray(y, dtype=float)
    n = op.n
    energy = prior.second_moment
    clamp = _Clamp(v_floor, V_CAP_FACTOR * energy)
    trace = RecoveryTrace()
    x_a_pri = np.zeros(n)
    v_a_pri = clamp("v_A_pri", energy, [])
    x_prev = None

    for t in range(1, stop.max_iters + 1):
        clamped = []
        x_b_pri, v_b_pri = module_a_extrinsic(op, y, x_a_pri, v_a_pri, sigma_sq)
        v_b_pri = clamp("v_A_ext", v_b_pri, clamped)

        x_post, var = dn.bg_posterior(x_b_pri, v_b_pri, prior)
        v_post = float(np.mean(var))
        precision = 1.0 / v_post - 1.0 / v_b_pri if v_post > 0 else np.inf
        if v_post > 0 and precision > 0:
            v_b_ext = 1.0 / precision
            x_b_ext = v_b_ext * (x_post / v_post - x_b_pri / v_b_pri)
            v_b_ext = clamp("v_B_ext", v_b_ext, clamped)
        else:
            msg = f"iteration {t}: posterior variance {v_post:.3e} >= prior {v_b_pri:.3e}; passing posterior on"
            trace.warnings.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            x_b_ext = x_post
            v_b_ext = clamp("v_B_ext", v_post, clamped)

        res = y - op.apply(x_b_ext)
        rec = IterationRecord(t, v_a_pri, v_b_pri, v_b_ext, float(np.linalg.norm(res)), v_B_post=v_post,
                              alpha=v_post / v_b_pri, clamped=clamped)
        if x_prev is not None:
            rec.rel_change = relative_change(x_post, x_prev)
        _fill_truth(rec, truth, x_post, x_b_pri, v_b_pri, x_b_ext, psnr_max)
        trace.records.append(rec)
        if callback is not None:
            callback(t, {"x_B_pri": x_b_pri, "v_B_pri": v_b_pri, "x_B_post": x_post, "x_B_ext": x_b_ext})

        x_a_pri, v_a_pri = x_b_ext, v_b_ext
        done = stopping_check(x_post, x_prev, stop, t)
        x_prev = x_post
        if done:
            trace.converged = rec.rel_change is not None and rec.rel_change <= stop.epsilon
            break

    trace.x_hat = x_prev
    return trace


def initial_variance(op, y, sigma_sq):
    """Energy-matched ``E|x|^2/n`` guess: ``|y|^2 / m - sigma^2``."""
    return float(y @ y) / op.m - sigma_sq


def run_d_turbo_cs(op, y, sigma_sq, spec, stop=StoppingRule(), *, truth=None, psnr_max=None,
                   v_init=None, v_floor=V_FLOOR, seed=0, callback=None):
    """D-Turbo-CS: Module A plus a divergence-free extrinsic denoiser.

    Module B's extrinsic variance is the residual estimate
    ``(|y - A x_B^ext|^2 - m sigma^2) / m``.  The output is the plain
    denoiser estimate ``D(x_B^pri)`` of the last iteration.
    """
    y = np.asarray(y, dtype=float)
    n = op.n
    rng = np.random.default_rng(seed)
    energy = initial_variance(op, y, sigma_sq) if v_init is None else v_init
    energy = max(energy, v_floor)
    clamp = _Clamp(v_floor, V_CAP_FACTOR * energy)
    folded = spec.kind in (ext.DenoiserKind.SURE_LET, ext.DenoiserKind.SVT)

    trace = RecoveryTrace()
    x_a_pri = np.zeros(n)
    v_a_pri = energy
    x_prev = None

    for t in range(1, stop.max_iters + 1):
        clamped = []
        x_b_pri, v_b_pri = module_a_extrinsic(op, y, x_a_pri, v_a_pri, sigma_sq)
        v_b_pri = clamp("v_A_ext", v_b_pri, clamped)
        try:
            res_ext = ext.extrinsic_denoise(spec, x_b_pri, v_b_pri, rng)
            x_post = ext.denoise(spec, x_b_pri, v_b_pri, rng) if folded else res_ext.d
        except (DegenerateExtrinsic, SolveFailure) as exc:
            exc.trace = trace
            trace.x_hat = x_prev
            trace.warnings.append(f"iteration {t}: {exc}")
            raise
        x_b_ext = res_ext.x_ext
        v_b_ext = clamp("v_B_ext", residual_variance(op, y, x_b_ext, sigma_sq), clamped)

        res = y - op.apply(x_b_ext)
        rec = IterationRecord(t, v_a_pri, v_b_pri, v_b_ext, float(np.linalg.norm(res)), alpha=res_ext.alpha,
                              c=res_ext.c, sure=res_ext.sure, clamped=clamped)
        if x_prev is not None:
            rec.rel_change = relative_change(x_post, x_prev)
        _fill_truth(rec, truth, x_post, x_b_pri, v_b_pri, x_b_ext, psnr_max)
        trace.records.append(rec)
        if callback is not None:
            callback(t, {"x_B_pri": x_b_pri, "v_B_pri": v_b_pri, "x_B_post": x_post, "x_B_ext": x_b_ext})

        x_a_pri, v_a_pri = x_b_ext, v_b_ext
        done = stopping_check(x_post, x_prev, stop, t)
        x_prev = x_post
        if done:
            trace.converged = rec.rel_change is not None and rec.rel_change <= stop.epsilon
            break

    trace.x_hat = x_prev
    return trace
