"""Experiment configuration and the recovery / evolution harness.

A configuration is a JSON object::

    {
      "experiment": "SPARSE_BG" | "IMAGE" | "LOWRANK" | "EVOLUTION",
      "signal":    {...},    # depends on the experiment, see SignalConfig
      "operator":  {"rate": 0.5, "transform": "DCT", "variant": "PLAIN", "seed": 0},
      "denoiser":  {"kind": "SURE_LET", "params": {...}},
      "engine":    "d_turbo" | "turbo",
      "noise":     {"variance": 0.0, "seed": 0},
      "stopping":  {"epsilon": 1e-4, "max_iters": 20},
      "evolution": {"mc_trials": 32, "seed": 0, "horizon": 20},
      "seed": 0,
      "output_dir": "out"
    }

Only ``experiment``, ``signal`` and ``operator.rate`` (or ``operator.m``)
are required.  For EVOLUTION, ``signal.kind`` names the signal family.
"""

import copy
import csv
import json
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from . import metrics, pgm, phantoms
from .denoisers import BernoulliGaussianPrior
from .errors import ConfigError
from .evolution import compare_evolution_to_simulation, evolve
from .extrinsic import DenoiserKind, DenoiserSpec
from .sensing import MeasurementModel, Variant, build_operator, rows_for_rate
from .transforms import TransformKind
from .turbo import StoppingRule, run_d_turbo_cs, run_turbo_cs

FIXTURE_IMAGE = "fixture256.pgm"


class ExperimentKind(str, Enum):
    SPARSE_BG = "SPARSE_BG"
    IMAGE = "IMAGE"
    LOWRANK = "LOWRANK"
    EVOLUTION = "EVOLUTION"


# iteration caps per denoiser kind when the config gives none
DEFAULT_MAX_ITERS = {
    DenoiserKind.SURE_LET: 20,
    DenoiserKind.BLACK_BOX: 30,
    DenoiserKind.SVT: 30,
    DenoiserKind.MMSE_BG: 30,
    DenoiserKind.SOFT_THRESHOLD: 30,
}


def fixture_image_path():
    return resources.files("dturbo") / "data" / FIXTURE_IMAGE


def load_image(path):
    """Grayscale image as a 2D float array; PGM natively, other formats via Pillow."""
    if str(path) == "fixture":
        path = fixture_image_path()
    path = Path(str(path))
    if path.suffix.lower() in (".pgm", ".pnm", ""):
        return pgm.read_pgm(path).astype(float)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=float)


def _section(d, key, path, required=False):
    value = d.get(key)
    if value is None:
        if required:
            raise ConfigError("missing required section", f"{path}{key}")
        return {}
    if not isinstance(value, dict):
        raise ConfigError("expected an object", f"{path}{key}")
    return value


def _number(d, key, path, default=None, kind=float, low=None, high=None, low_open=False):
    if key not in d or d[key] is None:
        if default is None:
            raise ConfigError("missing required field", f"{path}{key}")
        return default
    value = d[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", f"{path}{key}")
    if kind is int and value != int(value):
        raise ConfigError(f"expected an integer, got {value!r}", f"{path}{key}")
    value = kind(value)
    if low is not None and (value < low or (low_open and value == low)):
        raise ConfigError(f"must be {'>' if low_open else '>='} {low}, got {value}", f"{path}{key}")
    if high is not None and value > high:
        raise ConfigError(f"must be <= {high}, got {value}", f"{path}{key}")
    return value


def _choice(d, key, path, enum, default):
    value = d.get(key, default)
    try:
        return enum(value)
    except ValueError:
        options = ", ".join(e.value for e in enum)
        raise ConfigError(f"{value!r} is not one of {options}", f"{path}{key}") from None


@dataclass
class ExperimentConfig:
    experiment: ExperimentKind
    signal: dict
    operator: dict
    denoiser: dict = None
    engine: str = "d_turbo"
    noise: dict = field(default_factory=lambda: {"variance": 0.0, "seed": 0})
    stopping: dict = field(default_factory=dict)
    evolution: dict = None
    seed: int = 0
    output_dir: str = "out"

    def to_dict(self):
        d = asdict(self)
        d["experiment"] = self.experiment.value
        return d

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError("unknown field", unknown[0])
        cfg = cls(
            experiment=_choice(raw, "experiment", "", ExperimentKind, None),
            signal=copy.deepcopy(_section(raw, "signal", "", required=True)),
            operator=copy.deepcopy(_section(raw, "operator", "", required=True)),
            denoiser=copy.deepcopy(raw.get("denoiser")),
            engine=raw.get("engine", "d_turbo"),
            noise={"variance": 0.0, "seed": 0, **_section(raw, "noise", "")},
            stopping=dict(_section(raw, "stopping", "")),
            evolution=copy.deepcopy(raw.get("evolution")),
            seed=raw.get("seed", 0),
            output_dir=raw.get("output_dir", "out"),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(raw)

    @property
    def signal_kind(self):
        if self.experiment is ExperimentKind.EVOLUTION:
            return _choice(self.signal, "kind", "signal.", ExperimentKind, None)
        return self.experiment

    def validate(self):
        kind = self.signal_kind
        if kind is ExperimentKind.EVOLUTION:
            raise ConfigError("must name SPARSE_BG, IMAGE or LOWRANK", "signal.kind")
        s = self.signal
        if kind is ExperimentKind.SPARSE_BG:
            _number(s, "n", "signal.", kind=int, low=1)
            _number(s, "rho", "signal.", low=0, high=1, low_open=True)
        elif kind is ExperimentKind.IMAGE:
            path = s.get("path", "fixture")
            if path != "fixture" and not Path(path).is_file():
                raise ConfigError(f"file not found: {path}", "signal.path")
        else:
            _number(s, "n1", "signal.", kind=int, low=1)
            _number(s, "n2", "signal.", kind=int, low=1)
            _number(s, "rank", "signal.", kind=int, low=1)
        o = self.operator
        if "m" not in o:
            _number(o, "rate", "operator.", low=0, high=1, low_open=True)
        else:
            _number(o, "m", "operator.", kind=int, low=1)
        _choice(o, "transform", "operator.", TransformKind, "DCT")
        _choice(o, "variant", "operator.", Variant, "PLAIN")
        _number(self.noise, "variance", "noise.", low=0)
        _number(self.stopping, "epsilon", "stopping.", default=1e-4, low=0, low_open=True)
        if "max_iters" in self.stopping:
            _number(self.stopping, "max_iters", "stopping.", kind=int, low=1)
        if self.engine not in ("d_turbo", "turbo"):
            raise ConfigError(f"{self.engine!r} is not one of d_turbo, turbo", "engine")
        if self.engine == "turbo" and kind is not ExperimentKind.SPARSE_BG:
            raise ConfigError("the MMSE engine needs a SPARSE_BG signal", "engine")
        if self.evolution is not None:
            _number(self.evolution, "mc_trials", "evolution.", default=32, kind=int, low=1)
        try:
            self.denoiser_spec(self.signal_shape())
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc), "denoiser") from None

    def signal_shape(self):
        kind = self.signal_kind
        if kind is ExperimentKind.SPARSE_BG:
            return (int(self.signal["n"]),)
        if kind is ExperimentKind.LOWRANK:
            return (int(self.signal["n1"]), int(self.signal["n2"]))
        return None  # known after loading the image

    def denoiser_spec(self, shape):
        kind = self.signal_kind
        raw = self.denoiser
        if raw is None:
            if kind is ExperimentKind.SPARSE_BG:
                raw = {"kind": "MMSE_BG"} if self.engine == "turbo" else {"kind": "SURE_LET",
                                                                          "params": {"transform": "IDENTITY"}}
            elif kind is ExperimentKind.IMAGE:
                raw = {"kind": "SURE_LET", "params": {"transform": "HAAR"}}
            else:
                raw = {"kind": "SVT"}
        raw = copy.deepcopy(raw)
        if not isinstance(raw, dict) or "kind" not in raw:
            raise ValueError("denoiser must be an object with a 'kind'")
        params = raw.setdefault("params", {})
        dkind = DenoiserKind(raw["kind"])
        if dkind is DenoiserKind.MMSE_BG and kind is ExperimentKind.SPARSE_BG:
            rho = float(self.signal["rho"])
            params.setdefault("rho", rho)
            params.setdefault("signal_variance", 1.0 / rho)
        if shape is not None and len(shape) == 2 and "shape" not in params:
            if dkind in (DenoiserKind.SURE_LET, DenoiserKind.SVT, DenoiserKind.BLACK_BOX):
                params["shape"] = list(shape)
        if dkind is DenoiserKind.BLACK_BOX:
            params.setdefault("seed", self.seed)
        if shape is None and dkind in (DenoiserKind.SVT, DenoiserKind.BLACK_BOX):
            params.setdefault("shape", [1, 1])  # validation only; the real shape comes with the image
        return DenoiserSpec.from_dict(raw)

    def stopping_rule(self, spec):
        return StoppingRule(
            float(self.stopping.get("epsilon", 1e-4)),
            int(self.stopping.get("max_iters", DEFAULT_MAX_ITERS[spec.kind])),
        )


@dataclass
class Problem:
    """A generated or loaded instance ready for recovery."""

    x: np.ndarray
    shape: tuple
    op: object
    y: np.ndarray
    spec: DenoiserSpec
    stop: StoppingRule
    prior: BernoulliGaussianPrior = None
    psnr_max: float = None


def generate_signal(config):
    """Return ``(x, shape, prior)`` with ``x`` flattened column-major."""
    kind = config.signal_kind
    s = config.signal
    seed = int(s.get("seed", config.seed))
    if kind is ExperimentKind.SPARSE_BG:
        rho = float(s["rho"])
        return phantoms.sparse_bg(int(s["n"]), rho, seed), (int(s["n"]),), BernoulliGaussianPrior.unit_energy(rho)
    if kind is ExperimentKind.IMAGE:
        path = s.get("path", "fixture")
        try:
            img = load_image(path)
        except OSError as exc:
            raise OSError(f"cannot read image {path}: {exc}") from exc
        return img.ravel(order="F"), img.shape, None
    X = phantoms.low_rank(int(s["n1"]), int(s["n2"]), int(s["rank"]), seed)
    return X.ravel(order="F"), X.shape, None


def build_problem(config):
    x, shape, prior = generate_signal(config)
    n = x.size
    o = config.operator
    m = int(o["m"]) if "m" in o else rows_for_rate(n, float(o["rate"]))
    if m > n:
        raise ConfigError(f"m={m} exceeds n={n}", "operator.m")
    try:
        op = build_operator(n, m, o.get("transform", "DCT"), o.get("variant", "PLAIN"), int(o.get("seed", config.seed)))
    except ValueError as exc:
        raise ConfigError(str(exc), "operator") from None
    model = MeasurementModel(op, float(config.noise["variance"]), int(config.noise.get("seed", config.seed)))
    y = model.measure(x)
    spec = config.denoiser_spec(shape if len(shape) == 2 else None)
    psnr_max = 255.0 if config.signal_kind is ExperimentKind.IMAGE else None
    return Problem(x, shape, op, y, spec, config.stopping_rule(spec), prior, psnr_max)


def recover(config, problem=None, callback=None):
    """Run the configured engine on a problem; returns ``(problem, trace, seconds)``."""
    problem = build_problem(config) if problem is None else problem
    sigma_sq = float(config.noise["variance"])
    start = time.perf_counter()
    if config.engine == "turbo":
        prior = problem.spec.prior
        trace = run_turbo_cs(problem.op, problem.y, sigma_sq, prior, problem.stop, truth=problem.x,
                             psnr_max=problem.psnr_max, callback=callback)
    else:
        trace = run_d_turbo_cs(problem.op, problem.y, sigma_sq, problem.spec, problem.stop, truth=problem.x,
                               psnr_max=problem.psnr_max, seed=config.seed, callback=callback)
    return problem, trace, time.perf_counter() - start


def run_evolution(config, problem=None, horizon=None):
    problem = build_problem(config) if problem is None else problem
    ev_cfg = config.evolution or {}
    horizon = int(ev_cfg.get("horizon", horizon or problem.stop.max_iters))
    reference = problem.prior if problem.prior is not None else problem.x
    mmse = config.engine == "turbo"
    return evolve(problem.op.n, problem.op.m, float(config.noise["variance"]), problem.spec, reference, horizon,
                  mc_trials=int(ev_cfg.get("mc_trials", 32)), seed=int(ev_cfg.get("seed", config.seed)),
                  mmse_combining=mmse)


@dataclass
class MetricsReport:
    final_nmse_db: float
    final_psnr_db: float
    seconds: float
    iterations: int
    converged: bool
    trace_path: str
    experiment: str
    n: int
    m: int
    warnings: list = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        d.update(converged=bool(self.converged), iterations=int(self.iterations), n=int(self.n), m=int(self.m))
        d["final_nmse_db"] = metrics.finite_or_none(self.final_nmse_db)
        d["final_psnr_db"] = metrics.finite_or_none(self.final_psnr_db)
        # infinities are serialized as null and flagged
        d["nmse_infinite"] = bool(self.final_nmse_db is not None and np.isinf(self.final_nmse_db))
        d["psnr_infinite"] = bool(self.final_psnr_db is not None and np.isinf(self.final_psnr_db))
        return d


def _write_curve(path, trace, evolution=None):
    predicted = None
    if evolution is not None:
        predicted = 10.0 * np.log10(np.maximum(evolution.predicted_nmse, np.finfo(float).tiny))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["t", "nmse_db", "nmse_pri_db", "nmse_ext_db", "psnr_db", "v_A_ext", "v_B_ext"]
        if predicted is not None:
            header.append("predicted_nmse_db")
        writer.writerow(header)
        for rec in trace.records:
            row = [rec.t, rec.nmse, rec.nmse_pri, rec.nmse_ext, rec.psnr, rec.v_A_ext, rec.v_B_ext]
            if predicted is not None:
                row.append(predicted[rec.t] if rec.t < predicted.size else None)
            writer.writerow(["" if v is None else repr(float(v)) if not isinstance(v, int) else v for v in row])


def run_experiment(config, output_dir=None):
    """Generate, measure, recover and write artifacts; returns the metrics report.

    Writes ``metrics.json``, ``trace.jsonl``, ``curve.csv`` and, for images,
    ``recovered.pgm``.  EVOLUTION configs write ``evolution.csv`` only
    (plus ``metrics.json`` with the predicted final NMSE).
    """
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = build_problem(config)

    if config.experiment is ExperimentKind.EVOLUTION:
        start = time.perf_counter()
        ev = run_evolution(config, problem)
        ev.write_csv(out / "evolution.csv")
        final = float(10 * np.log10(ev.predicted_nmse[-1])) if ev.v[-1] > 0 else -np.inf
        report = MetricsReport(final, None, time.perf_counter() - start, len(ev.tau_sq), bool(not ev.terminated_early),
                               str(out / "evolution.csv"), config.experiment.value, problem.op.n, problem.op.m)
        _write_json(out / "metrics.json", report.to_dict())
        return report

    problem, trace, seconds = recover(config, problem)
    trace_path = out / "trace.jsonl"
    trace.write_jsonl(trace_path)
    evolution = None
    if config.evolution is not None:
        evolution = run_evolution(config, problem, horizon=len(trace))
        evolution.write_csv(out / "evolution.csv")
    _write_curve(out / "curve.csv", trace, evolution)
    if config.signal_kind is ExperimentKind.IMAGE:
        pgm.save_pgm(out / "recovered.pgm", trace.x_hat, problem.shape)
    last = trace.records[-1]
    report = MetricsReport(last.nmse, last.psnr, seconds, len(trace), bool(trace.converged), str(trace_path),
                           config.experiment.value, problem.op.n, problem.op.m, list(trace.warnings))
    _write_json(out / "metrics.json", report.to_dict())
    return report


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def evolution_gaps(config, n_runs=10):
    """Evolution-vs-simulation gaps (dB) averaged over ``n_runs`` seeded instances."""
    runs = []
    ev = None
    for k in range(n_runs):
        cfg = copy.deepcopy(config)
        cfg.signal["seed"] = int(config.signal.get("seed", config.seed)) + k
        cfg.operator["seed"] = int(config.operator.get("seed", config.seed)) + k
        cfg.noise["seed"] = int(config.noise.get("seed", config.seed)) + k
        cfg.seed = config.seed + k
        problem, trace, _ = recover(cfg)
        runs.append(trace)
        if ev is None:
            ev = run_evolution(config, problem, horizon=len(trace))
    horizon = min(len(ev.v) - 1, *(len(r) for r in runs))
    return ev, runs, compare_evolution_to_simulation(ev, runs, horizon=horizon)
