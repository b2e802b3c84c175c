"""Beampattern evaluation, waveform synthesis, and region-level reporting.

Power values are linear; decibel values use 20*log10(p) to match the
amplitude-style convention of the reference figures (10*log10 is available
behind a flag). Zero power maps to -inf dB and serializes as "-inf".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .steering import SteeringField, SteeringVector

__all__ = [
    "DesignIntegrityError",
    "PowerMap",
    "WaveformBlock",
    "ReportTable",
    "beampattern_at",
    "nominal_power_map",
    "perturbed_power_map",
    "synthesize_waveforms",
    "region_report",
    "to_db",
    "from_db",
]

DB_CONVENTIONS = {"20log10": 20.0, "10log10": 10.0}


class DesignIntegrityError(ValueError):
    pass


def to_db(p, convention: str = "20log10") -> np.ndarray:
    factor = DB_CONVENTIONS[convention]
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        return factor * np.log10(p)


def from_db(db, convention: str = "20log10") -> np.ndarray:
    factor = DB_CONVENTIONS[convention]
    return np.power(10.0, np.asarray(db, dtype=float) / factor)


def beampattern_at(r_mat, a_hat) -> float:
    """Delivered power a^H R a; the imaginary residue (roundoff only, R being
    Hermitian) is clamped away."""
    a = np.asarray(
        a_hat.entries if isinstance(a_hat, SteeringVector) else a_hat,
        dtype=complex,
    ).ravel()
    r_mat = np.asarray(r_mat, dtype=complex)
    val = complex(a.conj() @ r_mat @ a)
    return float(val.real)


@dataclass(frozen=True)
class PowerMap:
    """Per-grid-point power, healthy points first then tumor points."""

    positions: np.ndarray
    values: np.ndarray
    n_healthy: int
    scenario: str  # nominal | worst_case
    solutions: Optional[tuple] = None
    design_tag: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if np.any(values < -1e-12):
            raise DesignIntegrityError("power values must be nonnegative")
        values = np.maximum(values, 0.0)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        positions = np.asarray(self.positions, dtype=float)
        positions.setflags(write=False)
        object.__setattr__(self, "positions", positions)

    @property
    def healthy_values(self) -> np.ndarray:
        return self.values[: self.n_healthy]

    @property
    def tumor_values(self) -> np.ndarray:
        return self.values[self.n_healthy:]

    def db(self, convention: str = "20log10") -> np.ndarray:
        return to_db(self.values, convention)

    def export(self, path, convention: str = "20log10") -> None:
        """Delimited text: x_mm, y_mm, p_linear, p_dB, scenario."""
        db = self.db(convention)
        with open(path, "w") as fh:
            fh.write("x_mm\ty_mm\tp_linear\tp_dB\tscenario\n")
            for pos, p, d in zip(self.positions, self.values, db):
                d_str = "-inf" if np.isneginf(d) else f"{d:.12e}"
                fh.write(
                    f"{pos[0] * 1e3:.6f}\t{pos[1] * 1e3:.6f}\t"
                    f"{p:.12e}\t{d_str}\t{self.scenario}\n"
                )

    def export_perturbations(self, path) -> None:
        """Per point: position, p_worst, multiplier, case (worst maps only)."""
        if self.solutions is None:
            raise DesignIntegrityError("map carries no perturbation data")
        with open(path, "w") as fh:
            fh.write("x_mm\ty_mm\tp_worst\tmultiplier\tcase\n")
            for pos, sol in zip(self.positions, self.solutions):
                fh.write(
                    f"{pos[0] * 1e3:.6f}\t{pos[1] * 1e3:.6f}\t"
                    f"{sol.power:.12e}\t{sol.multiplier:.12e}\t{sol.case}\n"
                )


def nominal_power_map(design, field: SteeringField) -> PowerMap:
    """Beampattern under the nominal (unperturbed) steering vectors."""
    r_mat = design.covariance if hasattr(design, "covariance") else np.asarray(
        design, dtype=complex)
    vecs = list(field.healthy_vectors) + list(field.tumor_vectors)
    values = np.array([beampattern_at(r_mat, v) for v in vecs])
    return PowerMap(
        positions=np.vstack([field.grids.healthy_points,
                             field.grids.tumor_points]),
        values=np.maximum(values, 0.0),
        n_healthy=field.grids.n_healthy,
        scenario="nominal",
    )


def perturbed_power_map(design, field: SteeringField,
                        reference: PowerMap) -> PowerMap:
    """Beampattern under a fixed perturbation scenario taken from another map.

    The perturbations stored in `reference` (one per grid point, healthy
    first) are applied to the nominal steering vectors and the design is
    evaluated at a_hat + a~.  This realizes the shared "perturbed" scenario
    of the summary table: the worst perturbations certified for one design
    define the physical mismatch under which every design is compared.
    """
    if reference.solutions is None:
        raise DesignIntegrityError("reference map carries no perturbation data")
    r_mat = design.covariance if hasattr(design, "covariance") else np.asarray(
        design, dtype=complex)
    vecs = list(field.healthy_vectors) + list(field.tumor_vectors)
    if len(vecs) != len(reference.solutions):
        raise DesignIntegrityError(
            "reference map and field disagree on grid size")
    values = np.array([
        beampattern_at(r_mat, np.asarray(v.entries) + sol.perturbation)
        for v, sol in zip(vecs, reference.solutions)
    ])
    return PowerMap(
        positions=reference.positions,
        values=np.maximum(values, 0.0),
        n_healthy=reference.n_healthy,
        scenario="perturbed",
        solutions=reference.solutions,
    )


@dataclass(frozen=True)
class WaveformBlock:
    """Synthesized baseband snapshots realizing a target covariance."""

    samples: np.ndarray  # (N, M) complex
    target_covariance: np.ndarray

    @property
    def sample_covariance(self) -> np.ndarray:
        x = self.samples
        return x.T @ x.conj() / x.shape[0]

    def export(self, path) -> None:
        """N x 2M reals, interleaved re,im per channel."""
        n, m = self.samples.shape
        out = np.empty((n, 2 * m))
        out[:, 0::2] = self.samples.real
        out[:, 1::2] = self.samples.imag
        np.savetxt(path, out, fmt="%.12e", delimiter="\t")


def _psd_sqrt(r_mat: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    vals, vecs = np.linalg.eigh(r_mat)
    if vals.min() < -tol * max(1.0, vals.max()):
        raise DesignIntegrityError(
            f"covariance has eigenvalue {vals.min():.3e} below -{tol:.0e}")
    vals = np.maximum(vals, 0.0)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def synthesize_waveforms(design, n_samples: int, seed: int = 0) -> WaveformBlock:
    """Draw x(n) = R^(1/2) w(n) with w circularly-symmetric unit Gaussians.

    The Hermitian PSD square root is used; tiny negative eigenvalues from
    solver noise are clamped at zero, anything worse raises.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    r_mat = design.covariance if hasattr(design, "covariance") else np.asarray(
        design, dtype=complex)
    m = r_mat.shape[0]
    root = _psd_sqrt(r_mat)
    rng = np.random.default_rng(seed)
    w = (rng.standard_normal((n_samples, m))
         + 1j * rng.standard_normal((n_samples, m))) / np.sqrt(2.0)
    x = w @ root.T  # row n is R^(1/2) w(n)
    return WaveformBlock(samples=x, target_covariance=r_mat)


@dataclass(frozen=True)
class ReportTable:
    """Average region power per scenario, the quantitative summary table."""

    rows: Tuple[Tuple[str, float, float], ...]  # (label, tumor_db, healthy_db)
    convention: str
    average: str  # db-of-mean | mean-of-db

    def export(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("scenario\ttumor_region_db\thealthy_region_db\n")
            for label, t_db, s_db in self.rows:
                t_str = "-inf" if np.isneginf(t_db) else f"{t_db:.2f}"
                s_str = "-inf" if np.isneginf(s_db) else f"{s_db:.2f}"
                fh.write(f"{label}\t{t_str}\t{s_str}\n")

    def as_dict(self) -> dict:
        return {
            "convention": self.convention,
            "average": self.average,
            "rows": [
                {"scenario": l, "tumor_db": t, "healthy_db": s}
                for l, t, s in self.rows
            ],
        }


def _region_average(values: np.ndarray, convention: str, average: str) -> float:
    if average == "db-of-mean":
        return float(to_db(np.mean(values), convention))
    if average == "mean-of-db":
        return float(np.mean(to_db(values, convention)))
    raise ValueError(f"unknown averaging convention {average!r}")


def region_report(maps: Sequence[Tuple[str, PowerMap]], grids=None,
                  convention: str = "20log10",
                  average: str = "db-of-mean") -> ReportTable:
    """Average power per region for each labeled map.

    The default averages in the linear domain and converts (energy mean);
    mean-of-db averages the per-point decibel values instead.
    """
    rows = []
    for label, pmap in maps:
        rows.append((
            label,
            _region_average(pmap.tumor_values, convention, average),
            _region_average(pmap.healthy_values, convention, average),
        ))
    return ReportTable(rows=tuple(rows), convention=convention,
                       average=average)
