"""Partial orthogonal sensing operators ``A = S W`` and ``A = S W Theta``.

``W`` is an orthonormal transform (DCT-II or Haar) applied through a fast
algorithm, ``S`` keeps ``m`` of its rows and the optional ``Theta`` is a
random +/-1 diagonal.  Rows of ``A`` are orthonormal, so ``A A^T = I``.
No dense matrix is ever formed except by :meth:`SensingOperator.materialize`.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import transforms
from .transforms import TransformKind


class Variant(str, Enum):
    PLAIN = "PLAIN"  # A1 = S W
    SIGN_FLIPPED = "SIGN_FLIPPED"  # A2 = S W Theta


def _seed_streams(seed):
    rows_ss, signs_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(rows_ss), np.random.default_rng(signs_ss)


@dataclass(frozen=True, eq=False)
class SensingOperator:
    n: int
    m: int
    transform_kind: TransformKind
    variant: Variant
    seed: int
    row_selection: np.ndarray = field(repr=False)
    sign_diagonal: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.row_selection.setflags(write=False)
        if self.sign_diagonal is not None:
            self.sign_diagonal.setflags(write=False)

    @property
    def rate(self):
        return self.m / self.n

    def _check(self, v, size, what):
        v = np.asarray(v, dtype=float)
        if v.shape != (size,):
            raise ValueError(f"{what} must have shape ({size},), got {v.shape}")
        return v

    def apply(self, x):
        """Return ``A x``."""
        x = self._check(x, self.n, "signal")
        if self.sign_diagonal is not None:
            x = x * self.sign_diagonal
        return transforms.forward(x, self.transform_kind)[self.row_selection]

    def adjoint(self, y):
        """Return ``A^T y``."""
        y = self._check(y, self.m, "measurement")
        full = np.zeros(self.n)
        full[self.row_selection] = y
        x = transforms.inverse(full, self.transform_kind)
        if self.sign_diagonal is not None:
            x *= self.sign_diagonal
        return x

    def materialize(self):
        """Dense ``m x n`` matrix, built column by column (small ``n`` only)."""
        if self.n > 4096:
            raise ValueError("refusing to materialize an operator with n > 4096")
        eye = np.eye(self.n)
        return np.column_stack([self.apply(e) for e in eye])

    def to_dict(self):
        return {
            "n": self.n,
            "m": self.m,
            "transform": self.transform_kind.value,
            "variant": self.variant.value,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return build_operator(d["n"], d["m"], d["transform"], d["variant"], d["seed"])


def build_operator(n, m, transform_kind=TransformKind.DCT, variant=Variant.PLAIN, seed=0):
    """Draw a seeded partial orthogonal operator.

    Row selection and sign diagonal come from independent child streams
    of ``seed``, so the same seed gives the same rows for both variants.
    """
    transform_kind = TransformKind(transform_kind)
    variant = Variant(variant)
    if transform_kind is TransformKind.IDENTITY:
        raise ValueError("sensing transform must be DCT or HAAR")
    n, m = int(n), int(m)
    if n < 1 or not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got n={n}, m={m}")
    transforms.check_supported(transform_kind, n)
    rows_rng, signs_rng = _seed_streams(seed)
    rows = rows_rng.permutation(n)[:m]
    signs = None
    if variant is Variant.SIGN_FLIPPED:
        signs = signs_rng.choice(np.array([-1.0, 1.0]), size=n)
    return SensingOperator(n, m, transform_kind, variant, seed, rows, signs)


def rows_for_rate(n, rate):
    """Number of measurements for a rate ``m/n``: ``ceil(rate * n)``, at least 1."""
    if not 0 < rate <= 1:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    return max(1, int(np.ceil(rate * n - 1e-9)))


@dataclass(frozen=True)
class MeasurementModel:
    operator: SensingOperator
    noise_variance: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        if not self.noise_variance >= 0:
            raise ValueError(f"noise_variance must be >= 0, got {self.noise_variance}")

    def measure(self, x):
        """``y = A x + w`` with seeded white Gaussian ``w`` of variance sigma^2."""
        y = self.operator.apply(x)
        if self.noise_variance > 0:
            rng = np.random.default_rng(self.noise_seed)
            y = y + np.sqrt(self.noise_variance) * rng.standard_normal(y.shape)
        return y


def measure(model, x):
    return model.measure(x)
