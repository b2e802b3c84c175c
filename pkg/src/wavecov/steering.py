"""Nominal steering vectors and the ellipsoidal perturbation model.

The steering entry of element m at point r is
    exp(-j 2 pi f_c ||theta_m - r|| / c) * sqrt(d_ref / ||theta_m - r||),
a phase delay from the travel time plus spherical-spreading attenuation.
Perturbations live in the weighted-norm ball  a~^H W a~ <= eps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .geometry import ArrayGeometry, ConfigurationError, RegionGrids, _as_position

__all__ = [
    "SingularityError",
    "SteeringVector",
    "UncertaintyModel",
    "SteeringField",
    "nominal_steering",
    "build_steering_field",
    "uncertainty_ball_membership",
]


class SingularityError(ValueError):
    """A field point coincides with an array element."""


@dataclass(frozen=True)
class SteeringVector:
    """Complex array response at a single field point."""

    entries: np.ndarray
    location: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=complex).ravel()
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "location", _as_position(self.location))

    def __len__(self) -> int:
        return self.entries.size


@dataclass(frozen=True)
class UncertaintyModel:
    """Weighted-norm ball of steering perturbations.

    weight_diagonal: positive diagonal of the M x M weight matrix W.
    epsilon: squared-norm bound; either a scalar or a callable of position.
    """

    weight_diagonal: np.ndarray
    epsilon: Union[float, Callable[[np.ndarray], float]] = 0.25

    def __post_init__(self):
        w = np.asarray(self.weight_diagonal, dtype=float).ravel()
        if w.size < 1 or np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ConfigurationError("weight diagonal must be strictly positive")
        w.setflags(write=False)
        object.__setattr__(self, "weight_diagonal", w)
        if not callable(self.epsilon) and self.epsilon < 0:
            raise ConfigurationError("epsilon must be nonnegative")

    @classmethod
    def identity(cls, m: int, epsilon: Union[float, Callable] = 0.25):
        return cls(weight_diagonal=np.ones(m), epsilon=epsilon)

    @property
    def weight_matrix(self) -> np.ndarray:
        return np.diag(self.weight_diagonal)

    def epsilon_at(self, r) -> float:
        if callable(self.epsilon):
            eps = float(self.epsilon(_as_position(r)))
        else:
            eps = float(self.epsilon)
        if eps < 0:
            raise ConfigurationError(f"epsilon must be nonnegative, got {eps} at {r}")
        return eps

    def weighted_norm_sq(self, a_tilde: np.ndarray) -> float:
        a_tilde = np.asarray(a_tilde, dtype=complex).ravel()
        return float(np.real(np.sum(self.weight_diagonal * np.abs(a_tilde) ** 2)))


def nominal_steering(geometry: ArrayGeometry, r) -> SteeringVector:
    """Ideal-propagation steering vector at point r."""
    r = _as_position(r)
    dist = np.linalg.norm(geometry.elements - r[None, :], axis=1)
    if np.any(dist <= 0.0):
        raise SingularityError(f"field point {r} coincides with an array element")
    phase = -2.0 * np.pi * geometry.carrier_frequency * dist / geometry.sound_speed
    entries = np.exp(1j * phase) * np.sqrt(geometry.amplitude_reference / dist)
    return SteeringVector(entries=entries, location=r)


@dataclass(frozen=True)
class SteeringField:
    """Nominal steering vectors over both grids plus the uncertainty model.

    Vector order follows the canonical grid ordering: healthy points first,
    then tumor points.
    """

    geometry: ArrayGeometry
    grids: RegionGrids
    healthy_vectors: tuple
    tumor_vectors: tuple
    uncertainty: UncertaintyModel

    @property
    def element_count(self) -> int:
        return self.geometry.element_count

    def vector_at_center(self) -> SteeringVector:
        return nominal_steering(self.geometry, self.grids.tumor_center)

    def as_matrix(self) -> np.ndarray:
        """(M, N_S + N_T) matrix, columns in canonical grid order."""
        vecs = list(self.healthy_vectors) + list(self.tumor_vectors)
        return np.stack([v.entries for v in vecs], axis=1)

    def export_matrix(self, path) -> None:
        """Write rows = elements, columns = grid points, entries "re,im"."""
        mat = self.as_matrix()
        with open(path, "w") as fh:
            for row in mat:
                fh.write(
                    "\t".join(f"{v.real:.17e},{v.imag:.17e}" for v in row) + "\n"
                )


def build_steering_field(
    geometry: ArrayGeometry,
    grids: RegionGrids,
    uncertainty: Optional[UncertaintyModel] = None,
) -> SteeringField:
    """Evaluate nominal steering on every control point and attach the model."""
    if uncertainty is None:
        uncertainty = UncertaintyModel.identity(geometry.element_count, epsilon=0.0)
    if uncertainty.weight_diagonal.size != geometry.element_count:
        raise ConfigurationError("weight diagonal length must equal element count")
    healthy = tuple(nominal_steering(geometry, p) for p in grids.healthy_points)
    tumor = tuple(nominal_steering(geometry, p) for p in grids.tumor_points)
    return SteeringField(
        geometry=geometry,
        grids=grids,
        healthy_vectors=healthy,
        tumor_vectors=tumor,
        uncertainty=uncertainty,
    )


def uncertainty_ball_membership(a_tilde, model: UncertaintyModel, r) -> bool:
    """True iff the perturbation lies in the ball at r (1e-12 absolute slack)."""
    a_tilde = np.asarray(a_tilde, dtype=complex).ravel()
    if a_tilde.size != model.weight_diagonal.size:
        raise ConfigurationError("perturbation length must equal element count")
    return model.weighted_norm_sq(a_tilde) <= model.epsilon_at(r) + 1e-12
