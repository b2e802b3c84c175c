import numpy as np
import pytest

from wavecov.geometry import RegionGrids, build_curvilinear_array
from wavecov.steering import UncertaintyModel, build_steering_field


def make_small_field(m=6, epsilon=0.002, n_healthy=5, weight=None):
    """A desk-scale instance: short arc, one healthy line, two tumor points."""
    geometry = build_curvilinear_array(
        arc_radius=0.05,
        element_count=m,
        spacing=0.0015,
        carrier_frequency=5e5,
        sound_speed=1500.0,
        amplitude_reference=0.001,
    )
    healthy = np.array(
        [[x, 0.010, 0.0] for x in np.linspace(-0.02, 0.02, n_healthy)])
    tumor = np.array([[0.0, 0.034, 0.0], [0.004, 0.034, 0.0]])
    grids = RegionGrids(
        healthy_points=healthy,
        tumor_points=tumor,
        tumor_center=np.array([0.0, 0.034, 0.0]),
        tumor_radius=0.008,
    )
    model = UncertaintyModel(
        weight_diagonal=np.ones(m) if weight is None else np.asarray(weight),
        epsilon=epsilon,
    )
    return build_steering_field(geometry, grids, uncertainty=model)


@pytest.fixture
def small_field():
    return make_small_field()


def random_covariance(rng, m, gamma=1.0):
    """Random member of the equal-diagonal PSD set."""
    x = rng.standard_normal((m, 2 * m)) + 1j * rng.standard_normal((m, 2 * m))
    r = x @ x.conj().T
    d = np.sqrt(np.real(np.diag(r)))
    r = r / np.outer(d, d) * (gamma / m)
    np.fill_diagonal(r, gamma / m)
    # renormalizing the diagonal keeps PSD: D^-1/2 R D^-1/2 is a congruence
    return r
