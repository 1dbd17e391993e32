"""MSE evolution: the scalar recursion predicting D-Turbo-CS per iteration.

    tau^2(t) = (n/m - 1) v(t) + (n/m) sigma^2
    v(t+1)   = E |D_ext(x + tau(t) e) - x|^2 / n

The expectation is a Monte-Carlo average over ``mc_trials`` noise draws,
and over fresh signal draws when a prior is given instead of a signal.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import denoisers as dn
from . import extrinsic as ext


@dataclass
class EvolutionTrace:
    tau_sq: list = field(default_factory=list)
    v: list = field(default_factory=list)
    v_post: list = field(default_factory=list)  # MSE of the plain denoiser output
    t_max: int = 0
    mc_trials: int = 0
    terminated_early: bool = False

    @property
    def predicted_nmse(self):
        """``v(t) / v(0)`` for ``t = 0 .. len(v) - 1``."""
        v = np.asarray(self.v, dtype=float)
        return v / v[0]

    def to_dict(self):
        return {
            "tau_sq": list(map(float, self.tau_sq)),
            "v": list(map(float, self.v)),
            "v_post": list(map(float, self.v_post)),
            "t_max": self.t_max,
            "mc_trials": self.mc_trials,
            "terminated_early": self.terminated_early,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def write_csv(self, path):
        """Rows ``t, tau_sq, v``; ``tau_sq`` is empty where no step followed."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "tau_sq", "v"])
            for t, v in enumerate(self.v):
                tau = repr(float(self.tau_sq[t])) if t < len(self.tau_sq) else ""
                writer.writerow([t, tau, repr(float(v))])


def mmse_extrinsic(r, tau_sq, prior):
    """Module-B extrinsic message of Turbo-CS (posterior / prior Gaussian division).

    Returns ``(x_ext, x_post)``.
    """
    x_post, var = dn.bg_posterior(r, tau_sq, prior)
    v_post = float(np.mean(var))
    v_ext = 1.0 / (1.0 / v_post - 1.0 / tau_sq)
    return v_ext * (x_post / v_post - r / tau_sq), x_post


def _extrinsic_pair(spec, r, tau_sq, rng, mmse_combining):
    if mmse_combining and spec.kind is ext.DenoiserKind.MMSE_BG:
        return mmse_extrinsic(r, tau_sq, spec.prior)
    res = ext.extrinsic_denoise(spec, r, tau_sq, rng)
    if spec.kind in (ext.DenoiserKind.SURE_LET, ext.DenoiserKind.SVT):
        return res.x_ext, ext.denoise(spec, r, tau_sq, rng)
    return res.x_ext, res.d


def extrinsic_mse(n, tau_sq, spec, reference, mc_trials, seed=(0, 0), mmse_combining=True):
    """One recursion step: Monte-Carlo ``E |D_ext(x + tau e) - x|^2 / n`` at a given ``tau^2``.

    Returns the extrinsic MSE and the MSE of the plain denoiser output.
    Trial ``k`` uses the stream seeded by ``(*seed, k)``.
    """
    sampler = reference if isinstance(reference, dn.BernoulliGaussianPrior) else None
    x_fixed = None if sampler is not None else np.asarray(reference, dtype=float).ravel(order="F")
    seed = tuple(np.atleast_1d(seed).tolist())
    errs = np.empty(mc_trials)
    post_errs = np.empty(mc_trials)
    for k in range(mc_trials):
        rng = np.random.default_rng([*seed, k])
        x = sampler.sample(n, rng) if sampler is not None else x_fixed
        r = x + np.sqrt(tau_sq) * rng.standard_normal(n)
        x_ext, x_post = _extrinsic_pair(spec, r, tau_sq, rng, mmse_combining)
        errs[k] = np.sum((x_ext - x) ** 2) / n
        post_errs[k] = np.sum((x_post - x) ** 2) / n
    return float(errs.sum() / mc_trials), float(post_errs.sum() / mc_trials)


def evolve(n, m, sigma_sq, spec, reference, t_max, mc_trials=32, seed=0, mmse_combining=True):
    """Run the MSE-evolution recursion for ``t_max`` steps.

    ``reference`` is either a fixed signal vector of length ``n`` or a
    :class:`~dturbo.denoisers.BernoulliGaussianPrior` to sample from.
    With ``mmse_combining`` (default) an MMSE_BG spec follows Turbo-CS's
    Gaussian-division extrinsic; otherwise every spec uses the generic
    divergence-free construction, as D-Turbo-CS does.

    Trial ``k`` of step ``t`` draws from its own stream seeded by
    ``(seed, t, k)``, so results do not depend on evaluation order.
    """
    if t_max < 1:
        raise ValueError("t_max must be at least 1")
    if mc_trials < 1:
        raise ValueError("mc_trials must be at least 1")
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got n={n}, m={m}")
    sampler = reference if isinstance(reference, dn.BernoulliGaussianPrior) else None
    if sampler is None:
        x_fixed = np.asarray(reference, dtype=float).ravel(order="F")
        if x_fixed.size != n:
            raise ValueError(f"reference signal has {x_fixed.size} entries, expected {n}")
        v = float(x_fixed @ x_fixed) / n
    else:
        v = sampler.second_moment

    trace = EvolutionTrace(v=[v], t_max=t_max, mc_trials=mc_trials)
    ratio = n / m
    for t in range(t_max):
        tau_sq = (ratio - 1.0) * v + ratio * sigma_sq
        if not tau_sq > 0:
            trace.terminated_early = True
            break
        v, v_post = extrinsic_mse(n, tau_sq, spec, reference, mc_trials, (seed, t), mmse_combining)
        trace.tau_sq.append(tau_sq)
        trace.v.append(v)
        trace.v_post.append(v_post)
    return trace


def compare_evolution_to_simulation(trace, runs, field="nmse_ext", horizon=None):
    """Per-iteration gap in dB between simulated and predicted NMSE.

    ``gap(t) = 10 log10(mean_runs NMSE_sim(t)) - 10 log10(v(t) / v(0))``
    for ``t = 1 .. horizon``, where iteration ``t`` of a run is compared
    with ``v(t)``.  Simulated NMSEs (stored in dB on the records) are
    averaged on a linear scale.
    """
    available = len(trace.v) - 1
    lengths = [len(run.records) for run in runs]
    if horizon is None:
        if any(length != available for length in lengths):
            raise ValueError(f"horizon mismatch: evolution has {available} steps, runs have {lengths}")
        horizon = available
    elif horizon > available or any(length < horizon for length in lengths):
        raise ValueError(f"horizon {horizon} exceeds evolution ({available}) or run lengths {lengths}")
    if not runs:
        raise ValueError("need at least one simulated run")
    predicted = trace.predicted_nmse[1 : horizon + 1]
    sim = np.array([[getattr(rec, field) for rec in run.records[:horizon]] for run in runs], dtype=float)
    sim_linear = np.mean(10.0 ** (sim / 10.0), axis=0)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(sim_linear) - 10.0 * np.log10(predicted)
