# core/geometry.py

"""Vector-geometry kernels for gradient surgery.

All functions are pure: they never mutate their inputs and identical
inputs produce bit-identical outputs.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DimensionError, ValidationError

NORM_TOLERANCE = 1e-12
TARGET_CLAMP = 0.99


@dataclass(frozen=True, eq=False)
class GradVector:
    """Flat gradient of one task restricted to one parameter group."""
    values: np.ndarray
    group_id: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise DimensionError(
                f"Gradient for group '{self.group_id}' must be one-dimensional, "
                f"got shape {values.shape}")
        if values.size == 0:
            raise ValidationError(f"Gradient for group '{self.group_id}' is empty")
        if not np.all(np.isfinite(values)):
            raise ValidationError(
                f"Gradient for group '{self.group_id}' contains NaN or Inf")
        values.flags.writeable = False
        object.__setattr__(self, 'values', values)

    def __len__(self) -> int:
        return self.values.size

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def with_values(self, values: Union[np.ndarray, Sequence[float]]) -> 'GradVector':
        """Return a new vector in the same group."""
        return GradVector(values, self.group_id)


@dataclass(frozen=True)
class CosineResult:
    """Cosine similarity of two gradients."""
    value: float
    degenerate: bool = False


@dataclass(frozen=True)
class KernelResult:
    """Output of a surgery kernel plus the flags it raised."""
    vector: GradVector
    skipped: bool = False
    clamped: bool = False
    warning: Optional[str] = None


def _check_lengths(a: GradVector, b: GradVector):
    if len(a) != len(b):
        raise DimensionError(
            f"Length mismatch in group '{a.group_id}': {len(a)} != {len(b)}")


def _clamp_unit(value: float) -> float:
    return min(1.0, max(-1.0, value))


def cosine(a: GradVector, b: GradVector,
           norm_tolerance: float = NORM_TOLERANCE) -> CosineResult:
    """Cosine similarity clamped to [-1, 1]; degenerate inputs give 0."""
    _check_lengths(a, b)
    norm_a = a.norm
    norm_b = b.norm
    if min(norm_a, norm_b) < norm_tolerance:
        return CosineResult(0.0, degenerate=True)
    value = float(np.dot(a.values, b.values)) / (norm_a * norm_b)
    return CosineResult(_clamp_unit(value))


def pcgrad_project(g_i: GradVector, g_j: GradVector,
                   norm_tolerance: float = NORM_TOLERANCE) -> KernelResult:
    """Project g_i onto the normal plane of g_j."""
    _check_lengths(g_i, g_j)
    norm_j = g_j.norm
    if norm_j < norm_tolerance:
        return KernelResult(g_i, skipped=True,
                            warning="reference gradient below norm tolerance")
    coeff = float(np.dot(g_i.values, g_j.values)) / (norm_j * norm_j)
    return KernelResult(g_i.with_values(g_i.values - coeff * g_j.values))


def bound_target(target: float, target_clamp: float = TARGET_CLAMP) -> float:
    """Clip a similarity target into [-target_clamp, target_clamp]."""
    return min(target_clamp, max(-target_clamp, target))


def vaccine_align(g_i: GradVector, g_j: GradVector, target: float,
                  norm_tolerance: float = NORM_TOLERANCE,
                  target_clamp: float = TARGET_CLAMP) -> KernelResult:
    """Move g_i inside span{g_i, g_j} until its cosine with g_j equals target.

    Uses g_i' = g_i + a2 * g_j with the coefficient on g_i fixed at 1.
    A target of 0 reproduces pcgrad_project.
    """
    _check_lengths(g_i, g_j)
    if not math.isfinite(target):
        raise ValidationError(f"Similarity target must be finite, got {target!r}")

    norm_i = g_i.norm
    norm_j = g_j.norm
    if min(norm_i, norm_j) < norm_tolerance:
        return KernelResult(g_i, skipped=True,
                            warning="gradient below norm tolerance")

    bounded = bound_target(target, target_clamp)
    clamped = bounded != target
    warning = None
    if clamped:
        warning = f"target {target!r} clamped to {bounded!r}"

    phi = cosine(g_i, g_j, norm_tolerance).value
    sin_target = math.sqrt(1.0 - bounded * bounded)
    sin_phi = math.sqrt(1.0 - phi * phi)
    a2 = norm_i * (bounded * sin_phi - phi * sin_target) / (norm_j * sin_target)

    aligned = g_i.with_values(g_i.values + a2 * g_j.values)
    return KernelResult(aligned, clamped=clamped, warning=warning)


def rescale_to_norm(g: GradVector, norm: float,
                    norm_tolerance: float = NORM_TOLERANCE) -> KernelResult:
    """Scale g to the requested norm, keeping its direction."""
    if not math.isfinite(norm) or norm < 0:
        raise ValidationError(f"Target norm must be finite and >= 0, got {norm!r}")
    current = g.norm
    if current < norm_tolerance:
        return KernelResult(g, skipped=True,
                            warning="gradient below norm tolerance")
    return KernelResult(g.with_values(g.values * (norm / current)))


def theorem_a(phi: float, target: float) -> float:
    """sin(angle - target_angle) / sin(target_angle) expressed in cosines.

    This is the alteration magnitude bounded by the convex convergence
    guarantee; it is non-negative whenever target >= phi.
    """
    phi = _clamp_unit(phi)
    sin_target = math.sqrt(1.0 - target * target)
    return (target * math.sqrt(1.0 - phi * phi) - phi * sin_target) / sin_target
