import numpy as np
import pytest

from wavecov.lmi import LmiBlock
from wavecov.solver import (
    AssemblyError,
    SdpProblem,
    SolverOptions,
    assemble,
    covariance_from_values,
    r_psd_block,
    solve,
    verify_solution,
)

from conftest import make_small_field


def _corr_problem(sense="max"):
    # extremize t subject to [[1, t], [t, 1]] >= 0  ->  t* = +/-1
    block = LmiBlock.from_coefficients(
        constant=np.eye(2, dtype=complex),
        coeffs={"t": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)},
    )
    return SdpProblem(var_names=["t"], objective={"t": 1.0}, sense=sense,
                      blocks=[block])


@pytest.mark.parametrize("backend", ["cvxopt", "scs"])
def test_toy_sdp_exact_optimum(backend):
    tol = 1e-7 if backend == "cvxopt" else 1e-4
    for sense, target in (("max", 1.0), ("min", -1.0)):
        sol = solve(_corr_problem(sense), SolverOptions(backend=backend))
        assert sol.status == "optimal"
        assert sol.backend == backend
        assert sol.objective == pytest.approx(target, abs=tol)


@pytest.mark.parametrize("backend", ["cvxopt", "scs"])
def test_linear_rows_and_nonneg(backend):
    # min x subject to x - 2 >= 0, x declared nonnegative
    blk = LmiBlock(1, np.array([[-2.0]], dtype=complex), ["x"],
                   np.array([0]), np.array([0]), np.array([0]),
                   np.array([1.0 + 0j]))
    prob = SdpProblem(var_names=["x"], objective={"x": 1.0}, sense="min",
                      blocks=[blk], nonneg=["x"])
    sol = solve(prob, SolverOptions(backend=backend))
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(2.0, abs=1e-4)


@pytest.mark.parametrize("backend", ["cvxopt", "scs"])
def test_infeasible_status(backend):
    lo = LmiBlock(1, np.array([[-1.0]], dtype=complex), ["x"],
                  np.array([0]), np.array([0]), np.array([0]),
                  np.array([1.0 + 0j]))   # x >= 1
    hi = LmiBlock(1, np.array([[-1.0]], dtype=complex), ["x"],
                  np.array([0]), np.array([0]), np.array([0]),
                  np.array([-1.0 + 0j]))  # x <= -1
    prob = SdpProblem(var_names=["x"], objective={"x": 1.0}, sense="min",
                      blocks=[lo, hi])
    sol = solve(prob, SolverOptions(backend=backend))
    assert sol.status == "infeasible"


@pytest.mark.parametrize("backend", ["cvxopt", "scs"])
def test_unbounded_status(backend):
    blk = LmiBlock(1, np.zeros((1, 1), dtype=complex), ["t"],
                   np.array([0]), np.array([0]), np.array([0]),
                   np.array([1.0 + 0j]))  # t >= 0
    prob = SdpProblem(var_names=["t"], objective={"t": 1.0}, sense="max",
                      blocks=[blk])
    sol = solve(prob, SolverOptions(backend=backend))
    assert sol.status == "unbounded"


def test_assemble_structure():
    field = make_small_field()
    prob = assemble(field, "robust", delta=0.7, gamma=1.0)
    n_s, n_t, m = 5, 2, 6
    assert len(prob.blocks) == n_s + 2 * n_t + 1
    assert prob.blocks[-1].dim == m  # the PSD block for R comes last
    assert prob.sense == "max" and prob.objective == {"t": 1.0}
    # variables: off-diagonal re/im + t + P + one multiplier per constraint
    assert prob.n_vars == m * (m - 1) + 2 + (n_s + 2 * n_t)
    assert prob.pinned == {f"R[{i},{i}]": 1.0 / m for i in range(m)}
    assert len(prob.nonneg) == n_s + 2 * n_t


def test_assemble_rejects_bad_parameters():
    field = make_small_field()
    with pytest.raises(AssemblyError):
        assemble(field, "robust", delta=1.5, gamma=1.0)
    with pytest.raises(AssemblyError):
        assemble(field, "robust", delta=0.5, gamma=-1.0)
    with pytest.raises(AssemblyError):
        assemble(field, "no_such_variant", delta=0.5, gamma=1.0)
    with pytest.raises(AssemblyError):
        assemble(field, "weighted_robust", delta=0.5, gamma=1.0)  # no P


def test_backend_agreement_on_robust_design():
    field = make_small_field()
    prob = assemble(field, "robust", delta=0.7, gamma=1.0)
    sol_ip = solve(prob, SolverOptions(backend="cvxopt"))
    sol_fo = solve(prob, SolverOptions(backend="scs", scs_eps=1e-8))
    assert sol_ip.status == sol_fo.status == "optimal"
    assert sol_ip.objective == pytest.approx(sol_fo.objective, abs=2e-5)


def test_verify_solution_is_independent():
    field = make_small_field()
    prob = assemble(field, "robust", delta=0.7, gamma=1.0)
    sol = solve(prob, SolverOptions(backend="cvxopt"))
    report = verify_solution(prob, sol.values)
    assert report["feasible"]
    assert report["min_eig"] >= -1e-7
    # corrupt the solution: verification must notice
    bad = dict(sol.values)
    bad["t"] = bad["t"] + 1.0
    assert not verify_solution(prob, bad)["feasible"]


def test_problem_export_load_round_trip(tmp_path):
    field = make_small_field(m=4, n_healthy=3)
    prob = assemble(field, "robust", delta=0.6, gamma=1.0)
    path = tmp_path / "problem.txt"
    prob.export(path)
    back = SdpProblem.load(path)
    assert back.var_names == prob.var_names
    assert back.sense == prob.sense
    assert back.objective == prob.objective
    assert back.nonneg == prob.nonneg
    s0 = solve(prob, SolverOptions(backend="cvxopt"))
    s1 = solve(back, SolverOptions(backend="cvxopt"))
    assert s0.objective == pytest.approx(s1.objective, abs=1e-8)


def test_covariance_reconstruction():
    values = {"Rre[0,1]": 0.2, "Rim[0,1]": -0.1}
    r = covariance_from_values(values, 2, 1.0)
    assert r[0, 0] == pytest.approx(0.5)
    assert r[0, 1] == pytest.approx(0.2 - 0.1j)
    assert np.allclose(r, r.conj().T)


def test_r_psd_block_single_element():
    blk = r_psd_block(1, 2.0)
    assert blk.dim == 1
    assert blk.min_eigenvalue({}) == pytest.approx(2.0)
