"""Array layouts and control-point grids for transmit power shaping.

Positions are 3D numpy arrays in meters throughout; 2D problems use z = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConfigurationError",
    "ArrayGeometry",
    "RegionGrids",
    "build_curvilinear_array",
    "build_region_grids",
]


class ConfigurationError(ValueError):
    """Raised when geometry or grid parameters are inconsistent."""


def _as_position(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).ravel()
    if p.size == 2:
        p = np.append(p, 0.0)
    if p.size != 3:
        raise ConfigurationError(f"position must have 2 or 3 coordinates, got {p.size}")
    return p


@dataclass(frozen=True)
class ArrayGeometry:
    """An array of transducer elements plus the propagation constants.

    elements: (M, 3) element positions in meters.
    carrier_frequency: carrier in Hz.
    sound_speed: propagation speed in m/s.
    amplitude_reference: distance (m) at which the spreading amplitude is 1.
        The spreading factor of an element at distance d is
        sqrt(amplitude_reference / d); the default of 1 m reduces to the
        plain 1/sqrt(d) law with d in meters.
    """

    elements: np.ndarray
    carrier_frequency: float
    sound_speed: float
    amplitude_reference: float = 1.0

    def __post_init__(self):
        elements = np.atleast_2d(np.asarray(self.elements, dtype=float))
        if elements.shape[1] == 2:
            elements = np.hstack([elements, np.zeros((elements.shape[0], 1))])
        if elements.shape[1] != 3:
            raise ConfigurationError("elements must be (M, 2) or (M, 3)")
        elements = elements.copy()
        elements.setflags(write=False)
        object.__setattr__(self, "elements", elements)
        if not (self.carrier_frequency > 0 and np.isfinite(self.carrier_frequency)):
            raise ConfigurationError("carrier_frequency must be positive and finite")
        if not (self.sound_speed > 0 and np.isfinite(self.sound_speed)):
            raise ConfigurationError("sound_speed must be positive and finite")
        if not (self.amplitude_reference > 0 and np.isfinite(self.amplitude_reference)):
            raise ConfigurationError("amplitude_reference must be positive and finite")
        d = np.linalg.norm(elements[:, None, :] - elements[None, :, :], axis=-1)
        np.fill_diagonal(d, np.inf)
        if d.min() <= 0.0:
            raise ConfigurationError("element positions must be pairwise distinct")

    @property
    def element_count(self) -> int:
        return self.elements.shape[0]

    @property
    def wavelength(self) -> float:
        return self.sound_speed / self.carrier_frequency

    def to_dict(self) -> dict:
        return {
            "elements_m": self.elements.tolist(),
            "carrier_frequency_hz": self.carrier_frequency,
            "sound_speed_m_per_s": self.sound_speed,
            "amplitude_reference_m": self.amplitude_reference,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArrayGeometry":
        return cls(
            elements=np.asarray(d["elements_m"], dtype=float),
            carrier_frequency=float(d["carrier_frequency_hz"]),
            sound_speed=float(d["sound_speed_m_per_s"]),
            amplitude_reference=float(d.get("amplitude_reference_m", 1.0)),
        )


@dataclass(frozen=True)
class RegionGrids:
    """Discrete control points for the healthy and target regions.

    healthy_points / tumor_points: (N, 3) positions in meters.
    tumor_center: representative center of the target region.
    tumor_radius: membership radius used to split the lattice.
    """

    healthy_points: np.ndarray
    tumor_points: np.ndarray
    tumor_center: np.ndarray
    tumor_radius: float = field(default=0.0)

    def __post_init__(self):
        hp = np.atleast_2d(np.asarray(self.healthy_points, dtype=float))
        tp = np.atleast_2d(np.asarray(self.tumor_points, dtype=float))
        for arr, name in ((hp, "healthy_points"), (tp, "tumor_points")):
            if arr.shape[1] == 2:
                arr = np.hstack([arr, np.zeros((arr.shape[0], 1))])
            if arr.shape[1] != 3 or arr.shape[0] < 1:
                raise ConfigurationError(f"{name} must be a nonempty (N, 2|3) array")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "tumor_center", _as_position(self.tumor_center))
        # the two point sets must be disjoint
        d = np.linalg.norm(
            self.healthy_points[:, None, :] - self.tumor_points[None, :, :], axis=-1
        )
        if d.min() <= 1e-12:
            raise ConfigurationError("healthy and tumor point sets overlap")

    @property
    def n_healthy(self) -> int:
        return self.healthy_points.shape[0]

    @property
    def n_tumor(self) -> int:
        return self.tumor_points.shape[0]

    @property
    def all_points(self) -> np.ndarray:
        """Healthy points followed by tumor points (the canonical ordering)."""
        return np.vstack([self.healthy_points, self.tumor_points])

    def to_dict(self) -> dict:
        return {
            "healthy_points_m": self.healthy_points.tolist(),
            "tumor_points_m": self.tumor_points.tolist(),
            "tumor_center_m": self.tumor_center.tolist(),
            "tumor_radius_m": self.tumor_radius,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegionGrids":
        return cls(
            healthy_points=np.asarray(d["healthy_points_m"], dtype=float),
            tumor_points=np.asarray(d["tumor_points_m"], dtype=float),
            tumor_center=np.asarray(d["tumor_center_m"], dtype=float),
            tumor_radius=float(d.get("tumor_radius_m", 0.0)),
        )


def build_curvilinear_array(
    arc_radius: float,
    element_count: int,
    spacing: float,
    carrier_frequency: float,
    sound_speed: float,
    arc_center=(0.0, 0.0, 0.0),
    center_angle: float = -np.pi / 2.0,
    amplitude_reference: float = 1.0,
) -> ArrayGeometry:
    """Place elements along a circular arc with uniform arc-length spacing.

    The array is symmetric about `center_angle` (measured from the +x axis,
    counterclockwise, in the xy-plane) on a circle of radius `arc_radius`
    about `arc_center`. Raises ConfigurationError if the elements do not fit
    on a semicircle.
    """
    if element_count < 1:
        raise ConfigurationError("element_count must be >= 1")
    if spacing <= 0:
        raise ConfigurationError("spacing must be positive")
    if arc_radius <= 0:
        raise ConfigurationError("arc_radius must be positive")
    if element_count * spacing > np.pi * arc_radius:
        raise ConfigurationError(
            f"{element_count} elements at {spacing} m spacing exceed the "
            f"semicircular arc of radius {arc_radius} m"
        )
    center = _as_position(arc_center)
    offsets = (np.arange(element_count) - (element_count - 1) / 2.0) * (
        spacing / arc_radius
    )
    angles = center_angle + offsets
    elements = center[None, :] + arc_radius * np.stack(
        [np.cos(angles), np.sin(angles), np.zeros_like(angles)], axis=1
    )
    return ArrayGeometry(
        elements=elements,
        carrier_frequency=carrier_frequency,
        sound_speed=sound_speed,
        amplitude_reference=amplitude_reference,
    )


def build_region_grids(
    tumor_center,
    tumor_radius: float,
    box_width: float,
    box_height: float,
    grid_spacing: float,
) -> RegionGrids:
    """Rectangular lattice split into tumor / healthy point sets.

    The lattice is centered on `tumor_center` with the given spacing; the
    number of columns/rows is floor(width/spacing)+1 etc., so a 64 mm x 40 mm
    box at 4 mm spacing yields a 17 x 11 lattice. Points with distance
    <= tumor_radius from the center (boundary inclusive) form the tumor set.
    """
    if grid_spacing <= 0:
        raise ConfigurationError("grid_spacing must be positive")
    if tumor_radius >= min(box_width, box_height) / 2.0:
        raise ConfigurationError("tumor_radius must fit inside the box")
    center = _as_position(tumor_center)
    half_cols = int(np.floor(box_width / 2.0 / grid_spacing + 1e-9))
    half_rows = int(np.floor(box_height / 2.0 / grid_spacing + 1e-9))
    xs = center[0] + grid_spacing * np.arange(-half_cols, half_cols + 1)
    ys = center[1] + grid_spacing * np.arange(-half_rows, half_rows + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    points = np.stack(
        [gx.ravel(), gy.ravel(), np.full(gx.size, center[2])], axis=1
    )
    dist = np.linalg.norm(points - center[None, :], axis=1)
    in_tumor = dist <= tumor_radius + 1e-12
    tumor = points[in_tumor]
    healthy = points[~in_tumor]
    if tumor.shape[0] < 1 or healthy.shape[0] < 1:
        raise ConfigurationError("both regions must contain at least one point")
    return RegionGrids(
        healthy_points=healthy,
        tumor_points=tumor,
        tumor_center=center,
        tumor_radius=tumor_radius,
    )
