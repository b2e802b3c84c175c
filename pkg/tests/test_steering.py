import numpy as np
import pytest

from wavecov.geometry import ArrayGeometry
from wavecov.steering import (
    SingularityError,
    UncertaintyModel,
    nominal_steering,
    uncertainty_ball_membership,
)


def _single_element(amplitude_reference=1.0):
    return ArrayGeometry(
        elements=np.array([[0.0, 0.0, 0.0]]),
        carrier_frequency=5e5,
        sound_speed=1500.0,
        amplitude_reference=amplitude_reference,
    )


def test_amplitude_inverse_sqrt_distance():
    geom = _single_element()
    vec = nominal_steering(geom, (0.0, 0.05, 0.0))
    assert abs(vec.entries[0]) == pytest.approx(np.sqrt(1.0 / 0.05))
    assert abs(abs(vec.entries[0]) - 4.4721) < 1e-3


def test_amplitude_reference_scaling():
    # the reference distance is a global scalar on the amplitudes
    v1 = nominal_steering(_single_element(1.0), (0.0, 0.05, 0.0))
    v2 = nominal_steering(_single_element(0.001), (0.0, 0.05, 0.0))
    assert abs(v2.entries[0]) == pytest.approx(
        abs(v1.entries[0]) * np.sqrt(0.001))


def test_phase_matches_propagation_delay():
    geom = _single_element()
    d = 0.03
    vec = nominal_steering(geom, (0.0, d, 0.0))
    expected = -2.0 * np.pi * geom.carrier_frequency * d / geom.sound_speed
    assert np.angle(vec.entries[0]) == pytest.approx(
        np.angle(np.exp(1j * expected)))


def test_singularity_raises():
    geom = _single_element()
    with pytest.raises(SingularityError):
        nominal_steering(geom, (0.0, 0.0, 0.0))


def test_uncertainty_model_norm_and_membership():
    model = UncertaintyModel(weight_diagonal=np.array([1.0, 4.0]),
                             epsilon=0.5)
    a = np.array([0.3, 0.2j])
    assert model.weighted_norm_sq(a) == pytest.approx(0.09 + 4 * 0.04)
    assert uncertainty_ball_membership(a, model, (0, 0, 0))
    assert not uncertainty_ball_membership(3.0 * a, model, (0, 0, 0))


def test_position_dependent_epsilon():
    model = UncertaintyModel(
        weight_diagonal=np.ones(2),
        epsilon=lambda r: 0.1 * float(np.linalg.norm(r)))
    assert model.epsilon_at((3.0, 4.0, 0.0)) == pytest.approx(0.5)


def test_field_shapes_and_center(small_field):
    assert small_field.element_count == 6
    assert len(small_field.healthy_vectors) == 5
    assert len(small_field.tumor_vectors) == 2
    center = small_field.vector_at_center()
    assert np.allclose(center.location, small_field.grids.tumor_center)
    mat = small_field.as_matrix()
    assert mat.shape == (6, 7)
    assert np.allclose(mat[:, 5], small_field.tumor_vectors[0].entries)


def test_export_matrix_round_trip(tmp_path, small_field):
    path = tmp_path / "steering.txt"
    small_field.export_matrix(path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 6  # one row per element
    parsed = np.array([
        [complex(float(p.split(",")[0]), float(p.split(",")[1]))
         for p in ln.split("\t")]
        for ln in lines
    ])
    assert np.allclose(parsed, small_field.as_matrix(), atol=1e-15)


def test_weight_positive_required():
    with pytest.raises(ValueError):
        UncertaintyModel(weight_diagonal=np.array([1.0, 0.0]), epsilon=0.1)
