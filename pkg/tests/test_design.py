import numpy as np
import pytest

from wavecov.design import (
    CovarianceDesign,
    DesignIntegrityError,
    default_healthy_weights,
    design_nominal_eq5,
    design_nominal_generalized,
    design_robust,
    design_sum_energy_robust,
    design_weighted_robust,
)
from wavecov.worstcase import max_power_over_ball, min_power_over_ball

from conftest import make_small_field


@pytest.fixture(scope="module")
def field():
    return make_small_field()


def test_all_variants_optimal_and_valid(field):
    designs = [
        design_nominal_eq5(field, 0.7, 1.0),
        design_nominal_generalized(field, 0.7, 1.0),
        design_robust(field, 0.7, 1.0),
        design_weighted_robust(field, 0.7),
        design_sum_energy_robust(field, 0.7),
    ]
    for d in designs:
        assert d.status == "optimal"
        d.validate()  # Hermitian / pinned diagonal / PSD / trace


def test_robustness_costs_objective(field):
    nominal = design_nominal_generalized(field, 0.7, 1.0)
    robust = design_robust(field, 0.7, 1.0)
    assert robust.t <= nominal.t + 1e-6


def test_worst_case_certifies_robust_constraints(field):
    d = design_robust(field, 0.7, 1.0)
    model = field.uncertainty
    w = model.weight_diagonal
    for vec in field.healthy_vectors:
        hi = max_power_over_ball(d.covariance, vec, w,
                                 model.epsilon_at(vec.location))
        assert hi.power <= d.power_level - d.t + 1e-6
    for vec in field.tumor_vectors:
        lo = min_power_over_ball(d.covariance, vec, w,
                                 model.epsilon_at(vec.location))
        hi = max_power_over_ball(d.covariance, vec, w,
                                 model.epsilon_at(vec.location))
        assert lo.power >= (1 - 0.7) * d.power_level - 1e-6
        assert hi.power <= (1 + 0.7) * d.power_level + 1e-6


def test_weighted_variant_respects_weighted_caps(field):
    d = design_weighted_robust(field, 0.7)
    weights = default_healthy_weights(field)
    model = field.uncertainty
    for vec, wgt in zip(field.healthy_vectors, weights):
        hi = max_power_over_ball(d.covariance, vec, model.weight_diagonal,
                                 model.epsilon_at(vec.location))
        assert hi.power <= d.t * wgt + 1e-6


def test_sum_energy_point_levels_cover_worst_case(field):
    d = design_sum_energy_robust(field, 0.7)
    assert d.point_levels is not None
    assert d.point_levels.size == field.grids.n_healthy
    assert d.t == pytest.approx(float(np.sum(d.point_levels)), rel=1e-8)
    model = field.uncertainty
    for vec, cap in zip(field.healthy_vectors, d.point_levels):
        hi = max_power_over_ball(d.covariance, vec, model.weight_diagonal,
                                 model.epsilon_at(vec.location))
        assert hi.power <= cap + 1e-6


def test_infeasible_is_typed_not_raised(field):
    big_eps = make_small_field(epsilon=0.5)
    d = design_robust(big_eps, 0.05, 1.0)
    assert d.status == "infeasible"
    assert np.all(np.isnan(d.covariance.real))
    with pytest.raises(DesignIntegrityError):
        d.validate()


def test_serialization_round_trip(field):
    d = design_robust(field, 0.7, 1.0)
    back = CovarianceDesign.from_dict(d.to_dict())
    assert np.array_equal(back.covariance, d.covariance)
    assert back.t == d.t
    assert back.power_level == d.power_level
    assert back.variant == d.variant
    back.validate()


def test_default_weights_profile(field):
    w = default_healthy_weights(field)
    assert w.size == field.grids.n_healthy
    assert np.all(w >= 1.0)
    # the farthest healthy point gets the loosest cap
    d = np.linalg.norm(field.grids.healthy_points
                       - field.grids.tumor_center[None, :], axis=1)
    assert np.argmax(w) == np.argmax(d)


def test_exchange_path_matches_monolithic(field, monkeypatch):
    import wavecov.design as design_mod

    mono = design_robust(field, 0.7, 1.0)
    # force the large-scale path on the small instance
    monkeypatch.setattr(design_mod, "_monolithic_size",
                        lambda f, v: 10_000)
    exch = design_robust(field, 0.7, 1.0)
    assert exch.status == "optimal"
    exch.validate()
    assert "exchange_rounds" in exch.solver_info
    # certified-feasible incumbent within the accepted gap of the true optimum
    gap_allow = max(1e-4, design_mod._GAP_REL
                    * max(abs(mono.t), abs(mono.power_level)))
    assert exch.t <= mono.t + 1e-4
    assert exch.t >= mono.t - gap_allow - 1e-6
    # the returned design satisfies the robust constraints exactly
    model = field.uncertainty
    w = model.weight_diagonal
    for vec in field.healthy_vectors:
        hi = max_power_over_ball(exch.covariance, vec, w,
                                 model.epsilon_at(vec.location))
        assert hi.power <= exch.power_level - exch.t + 1e-6
    for vec in field.tumor_vectors:
        eps = model.epsilon_at(vec.location)
        lo = min_power_over_ball(exch.covariance, vec, w, eps)
        hi = max_power_over_ball(exch.covariance, vec, w, eps)
        assert lo.power >= (1 - 0.7) * exch.power_level - 1e-6
        assert hi.power <= (1 + 0.7) * exch.power_level + 1e-6


def test_exchange_path_weighted_variant(field, monkeypatch):
    import wavecov.design as design_mod

    mono = design_weighted_robust(field, 0.7)
    monkeypatch.setattr(design_mod, "_monolithic_size",
                        lambda f, v: 10_000)
    exch = design_weighted_robust(field, 0.7)
    assert exch.status == "optimal"
    exch.validate()
    weights = default_healthy_weights(field)
    model = field.uncertainty
    for vec, wgt in zip(field.healthy_vectors, weights):
        hi = max_power_over_ball(exch.covariance, vec, model.weight_diagonal,
                                 model.epsilon_at(vec.location))
        assert hi.power <= exch.t * wgt + 1e-5
    gap_allow = max(1e-4, design_mod._GAP_REL * abs(mono.power_level))
    assert exch.t >= mono.t - 1e-4
    assert exch.t <= mono.t + gap_allow + 1e-6


def test_exchange_infeasible_is_typed(monkeypatch):
    import wavecov.design as design_mod

    big_eps = make_small_field(epsilon=0.5)
    monkeypatch.setattr(design_mod, "_monolithic_size",
                        lambda f, v: 10_000)
    d = design_robust(big_eps, 0.05, 1.0)
    assert d.status == "infeasible"
