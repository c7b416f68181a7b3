"""Shared types: empirical measures, the diagonal-Gaussian reference, seeded
random streams, and the resolved run configuration."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniformly weighted empirical measure on n atoms in R^d.

    Atoms are stored as an (n, d) array. All estimators downstream treat the
    measure as (1/n) sum_i delta_{x_i}; there are no per-atom weights.
    """

    atoms: np.ndarray  # (n, d)

    def __post_init__(self) -> None:
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim != 2:
            raise ValueError(f"atoms must have shape (n, d), got ndim={atoms.ndim}")
        if atoms.shape[0] < 1:
            raise ValueError("an empirical measure needs at least one atom")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atoms must be finite")
        object.__setattr__(self, "atoms", atoms)

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def with_atoms(self, atoms: np.ndarray) -> "EmpiricalMeasure":
        return EmpiricalMeasure(atoms)


def make_empirical(points: Any) -> EmpiricalMeasure:
    """Build an empirical measure from array-like points.

    A 1-d input of length n is treated as n scalar atoms, shape (n, 1).
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return EmpiricalMeasure(arr)


@dataclass(frozen=True)
class DiagonalGaussian:
    """Reference distribution N(mean, diag(variances)) on R^d."""

    mean: np.ndarray  # (d,)
    variances: np.ndarray  # (d,)

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if mean.ndim != 1 or var.shape != mean.shape:
            raise ValueError("mean and variances must be 1-d arrays of equal length")
        if np.any(var <= 0.0) or not np.all(np.isfinite(var)):
            raise ValueError("variances must be positive and finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variances", var)

    @classmethod
    def standard(cls, dim: int) -> "DiagonalGaussian":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def isotropic(cls, dim: int, variance: float, mean: float = 0.0) -> "DiagonalGaussian":
        return cls(np.full(dim, mean), np.full(dim, variance))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_grad(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the log density, broadcasting over leading axes."""
        return -(np.asarray(x, dtype=float) - self.mean) / self.variances

    def log_grad_jacobian(self) -> np.ndarray:
        """Jacobian of the log-density gradient; constant -diag(1/variances)."""
        return -np.diag(1.0 / self.variances)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + np.sqrt(self.variances) * rng.standard_normal((n, self.dim))


def ref_log_grad(ref: DiagonalGaussian, x: np.ndarray) -> np.ndarray:
    """Log-density gradient of the reference at x; shape follows x."""
    return ref.log_grad(x)


def _label_words(label: Any) -> list[int]:
    # Stable across processes: hash the repr bytes, not id-based Python hash.
    digest = hashlib.sha256(repr(label).encode("utf8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def seeded_stream(seed: int, *labels: Any) -> np.random.Generator:
    """Counter-based generator for a (seed, labels...) address.

    Streams for distinct label tuples are statistically independent and do
    not depend on creation order, so per-particle substreams can be drawn
    from in any schedule without changing results.
    """
    entropy: list[int] = [int(seed) & 0xFFFFFFFF]
    for label in labels:
        entropy.extend(_label_words(label))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


_SAMPLERS = ("mfld", "vgd", "kgdd", "greedy")
_OPTIMIZERS = ("euler", "adam")


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration for one sampler run or experiment arm.

    The kernel / loss / reference mappings hold already-validated settings in
    plain dict form so the configuration survives round trips to disk
    unchanged.
    """

    seed: int
    dimension: int
    n_particles: int
    step_size: float
    n_steps: int
    sampler: str = "mfld"
    optimizer: str = "euler"
    kernel: Mapping[str, Any] = field(default_factory=dict)
    loss: Mapping[str, Any] = field(default_factory=dict)
    reference: Mapping[str, Any] = field(default_factory=dict)
    output_dir: str | None = None

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if not np.isfinite(self.step_size) or self.step_size <= 0.0:
            raise ValueError("step_size must be positive and finite")
        if self.sampler not in _SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}; choose from {_SAMPLERS}")
        if self.optimizer not in _OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; choose from {_OPTIMIZERS}")
