"""Turbo compressed sensing with generic extrinsic denoisers."""

from .denoisers import BernoulliGaussianPrior, LetKernelParams
from .errors import ConfigError, DegenerateExtrinsic, PGMError, SolveFailure
from .evolution import EvolutionTrace, compare_evolution_to_simulation, evolve
from .extrinsic import DenoiserKind, DenoiserSpec, ExtrinsicResult, extrinsic_denoise
from .sensing import MeasurementModel, SensingOperator, Variant, build_operator
from .transforms import TransformKind
from .turbo import RecoveryTrace, StoppingRule, run_d_turbo_cs, run_turbo_cs

__version__ = "0.1.0"
