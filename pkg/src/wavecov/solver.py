"""SDP assembly and solving for the covariance design problems.

The problems are kept in LMI form: a linear objective over named scalar
variables subject to affine Hermitian blocks being PSD plus sign constraints
on the multipliers. The diagonal of R is pinned to gamma / M structurally
(the diagonal entries are constants, not variables), so membership in the
equal-element-power covariance set is exact by construction rather than
enforced numerically.

Two interchangeable backends sit behind ``solve``: CVXOPT's interior-point
conic solver (tight tolerances, small problems) and SCS (first-order, scales
to the full-size scenario). Complex blocks are embedded as real symmetric
blocks of twice the size before either backend sees them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import lmi
from .lmi import LmiBlock, r_variable_names
from .steering import SteeringField

__all__ = [
    "AssemblyError",
    "SolverOptions",
    "SdpProblem",
    "SdpSolution",
    "assemble",
    "solve",
    "verify_solution",
    "covariance_from_values",
    "VARIANTS",
]

VARIANTS = (
    "nominal_eq5",
    "nominal_generalized",
    "robust",
    "weighted_robust",
    "sum_energy_robust",
)


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    gap_tol: float = 1e-7
    feas_tol: float = 1e-6
    max_iter: int = 200_000
    backend: str = "auto"  # auto | cvxopt | scs
    scs_eps: float = 1e-6
    # accept SCS "solved (inaccurate)" terminations as optimal; only safe
    # when the caller certifies the result independently
    accept_inaccurate: bool = False

    def pick_backend(self, n_vars: int) -> str:
        if self.backend != "auto":
            return self.backend
        return "cvxopt" if n_vars <= 600 else "scs"


@dataclass
class SdpProblem:
    """Linear objective + affine LMI blocks + multiplier sign constraints.

    pinned records the structurally-eliminated equalities R_mm = gamma / M;
    they hold exactly for every candidate point by construction.
    """

    var_names: List[str]
    objective: Dict[str, float]
    sense: str  # "max" | "min"
    blocks: List[LmiBlock]
    nonneg: List[str] = field(default_factory=list)
    pinned: Dict[str, float] = field(default_factory=dict)
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sense not in ("max", "min"):
            raise AssemblyError("sense must be 'max' or 'min'")
        declared = set(self.var_names)
        if set(self.objective) - declared:
            raise AssemblyError("objective references undeclared variables")
        if set(self.nonneg) - declared:
            raise AssemblyError("nonneg references undeclared variables")
        referenced = set()
        for blk in self.blocks:
            used = set(blk.var_names) - declared
            if used:
                raise AssemblyError(f"block references undeclared variables {used}")
            referenced |= set(np.asarray(blk.var_names)[
                np.unique(blk.vidx)] if len(blk.vidx) else [])
        referenced |= set(self.nonneg)
        unused = declared - referenced
        if unused:
            raise AssemblyError(f"variables never referenced: {sorted(unused)}")

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    def index(self, name: str) -> int:
        return self.var_names.index(name)

    def objective_value(self, values: Mapping[str, float]) -> float:
        return sum(c * values[n] for n, c in self.objective.items())

    def export(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("# sdp-problem v1\n")
            fh.write("#sense " + self.sense + "\n")
            for n, c in self.objective.items():
                fh.write(f"#objective {n} {c:.17e}\n")
            for n in self.nonneg:
                fh.write(f"#nonneg {n}\n")
            for n in self.var_names:
                fh.write(f"#variable {n}\n")
            lmi.write_blocks(fh, self.blocks)

    @classmethod
    def load(cls, path) -> "SdpProblem":
        sense, objective, nonneg, var_names = "max", {}, [], []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#sense"):
                    sense = line.split()[1]
                elif line.startswith("#objective"):
                    _, n, c = line.split()
                    objective[n] = float(c)
                elif line.startswith("#nonneg"):
                    nonneg.append(line.split()[1])
                elif line.startswith("#variable"):
                    var_names.append(line.split()[1])
        blocks = lmi.import_blocks(path)
        return cls(var_names=var_names, objective=objective, sense=sense,
                   blocks=blocks, nonneg=nonneg)


@dataclass
class SdpSolution:
    status: str  # optimal | infeasible | unbounded | numerical_failure
    values: Dict[str, float]
    objective: Optional[float]
    gap: Optional[float]
    block_min_eigs: Optional[List[float]] = None
    backend: str = ""
    iterations: Optional[int] = None


def r_psd_block(m: int, gamma: float) -> LmiBlock:
    """R itself as an affine PSD block (diagonal pinned to gamma / m)."""
    if m == 1:
        return LmiBlock(1, np.array([[gamma]], dtype=complex), [], [], [], [], [])
    names = r_variable_names(m)
    k, l = np.triu_indices(m, k=1)
    npair = k.size
    re_idx = 2 * np.arange(npair)
    im_idx = re_idx + 1
    vidx = np.concatenate([re_idx, re_idx, im_idx, im_idx])
    rows = np.concatenate([k, l, k, l])
    cols = np.concatenate([l, k, l, k])
    vals = np.concatenate([
        np.ones(npair), np.ones(npair),
        1j * np.ones(npair), -1j * np.ones(npair),
    ])
    return LmiBlock(m, (gamma / m) * np.eye(m), names, vidx, rows, cols, vals)


def _scalar_difference_block(coef_plus, const_plus, coef_minus, const_minus,
                             m, extra_coeffs, extra_const=0.0) -> LmiBlock:
    """1x1 block: (p_plus - p_minus) + extra >= 0 in the R variables."""
    names = r_variable_names(m)
    vals = (coef_plus - coef_minus).astype(complex)
    extra = list(extra_coeffs.keys())
    vidx = np.concatenate([np.arange(len(names)),
                           len(names) + np.arange(len(extra))])
    vals = np.concatenate([vals, np.array([extra_coeffs[n] for n in extra],
                                          dtype=complex)])
    keep = vals != 0
    const = const_plus - const_minus + extra_const
    nkeep = int(keep.sum())
    return LmiBlock(1, np.array([[const]], dtype=complex), names + extra,
                    vidx[keep], np.zeros(nkeep, dtype=int),
                    np.zeros(nkeep, dtype=int), vals[keep])


def _power_row(a: np.ndarray, gamma: float):
    """Linear-in-R representation of a^H R a: (coefficients, constant)."""
    _, _, coefs = lmi._power_coefficients(a)
    const = (gamma / a.size) * float(np.real(a.conj() @ a))
    return coefs, const


def assemble(
    field: SteeringField,
    variant: str,
    *,
    delta: float,
    gamma: float,
    power_level: Optional[float] = None,
    weights: Optional[np.ndarray] = None,
) -> SdpProblem:
    """Build the SDP for one of the design variants.

    Block ordering is deterministic: healthy points by index, then the tumor
    lower bounds, then the tumor upper bounds, then the PSD block for R.
    """
    if variant not in VARIANTS:
        raise AssemblyError(f"unknown variant {variant!r}")
    if not (0.0 <= delta < 1.0):
        raise AssemblyError("delta must satisfy 0 <= delta < 1")
    if gamma <= 0:
        raise AssemblyError("gamma must be positive")
    m = field.element_count
    grids = field.grids
    model = field.uncertainty
    n_s, n_t = grids.n_healthy, grids.n_tumor
    rnames = r_variable_names(m)
    blocks: List[LmiBlock] = []
    nonneg: List[str] = []

    def eps_for(vec, forced=None):
        return 0.0 if forced is not None else model.epsilon_at(vec.location)

    if variant == "nominal_eq5":
        a0 = field.vector_at_center().entries
        coef0, const0 = _power_row(a0, gamma)
        var_names = rnames + ["t"]
        objective, sense = {"t": 1.0}, "max"
        for vec in field.healthy_vectors:
            coef, const = _power_row(vec.entries, gamma)
            blocks.append(_scalar_difference_block(
                coef0, const0, coef, const, m, {"t": -1.0}))
        for vec in field.tumor_vectors:
            coef, const = _power_row(vec.entries, gamma)
            blocks.append(_scalar_difference_block(
                coef, const, (1 - delta) * coef0, (1 - delta) * const0, m, {}))
        for vec in field.tumor_vectors:
            coef, const = _power_row(vec.entries, gamma)
            blocks.append(_scalar_difference_block(
                (1 + delta) * coef0, (1 + delta) * const0, coef, const, m, {}))
    elif variant in ("robust", "nominal_generalized"):
        forced_zero = variant == "nominal_generalized"
        var_names = rnames + ["t", "P"]
        objective, sense = {"t": 1.0}, "max"
        for i, vec in enumerate(field.healthy_vectors):
            eps = 0.0 if forced_zero else model.epsilon_at(vec.location)
            bn = f"betaS[{i}]"
            blk = lmi.healthy_point_block(vec, model, gamma, beta_name=bn,
                                          eps=eps)
            blocks.append(blk)
            if blk.multiplier:
                nonneg.append(bn)
        for j, vec in enumerate(field.tumor_vectors):
            eps = 0.0 if forced_zero else model.epsilon_at(vec.location)
            bn = f"betaT1[{j}]"
            blk = lmi.tumor_lower_block(vec, model, gamma, delta,
                                        beta_name=bn, eps=eps)
            blocks.append(blk)
            if blk.multiplier:
                nonneg.append(bn)
        for j, vec in enumerate(field.tumor_vectors):
            eps = 0.0 if forced_zero else model.epsilon_at(vec.location)
            bn = f"betaT2[{j}]"
            blk = lmi.tumor_upper_block(vec, model, gamma, delta,
                                        beta_name=bn, eps=eps)
            blocks.append(blk)
            if blk.multiplier:
                nonneg.append(bn)
        var_names = var_names + nonneg
    elif variant in ("weighted_robust", "sum_energy_robust"):
        if power_level is None or power_level <= 0:
            raise AssemblyError(f"{variant} requires a positive fixed power_level")
        if variant == "weighted_robust":
            if weights is None:
                weights = np.ones(n_s)
            weights = np.asarray(weights, dtype=float).ravel()
            if weights.size != n_s or np.any(weights <= 0):
                raise AssemblyError("weights must be positive, one per healthy point")
            t_names = ["t"] * n_s
            objective = {"t": 1.0}
            scalars = ["t"]
        else:
            t_names = [f"t[{i}]" for i in range(n_s)]
            objective = {n: 1.0 for n in t_names}
            scalars = t_names
        sense = "min"
        for i, vec in enumerate(field.healthy_vectors):
            w_i = weights[i] if variant == "weighted_robust" else 1.0
            bn = f"betaS[{i}]"
            blk = lmi.healthy_point_block(
                vec, model, gamma, beta_name=bn,
                corner_coeffs={t_names[i]: w_i})
            blocks.append(blk)
            if blk.multiplier:
                nonneg.append(bn)
        for j, vec in enumerate(field.tumor_vectors):
            bn = f"betaT1[{j}]"
            blk = lmi.tumor_lower_block(vec, model, gamma, delta,
                                        beta_name=bn, power_level=power_level)
            blocks.append(blk)
            if blk.multiplier:
                nonneg.append(bn)
        for j, vec in enumerate(field.tumor_vectors):
            bn = f"betaT2[{j}]"
            blk = lmi.tumor_upper_block(vec, model, gamma, delta,
                                        beta_name=bn, power_level=power_level)
            blocks.append(blk)
            if blk.multiplier:
                nonneg.append(bn)
        var_names = rnames + scalars + nonneg
    else:  # pragma: no cover
        raise AssemblyError(variant)

    blocks.append(r_psd_block(m, gamma))
    pinned = {f"R[{i},{i}]": gamma / m for i in range(m)}
    meta = {"variant": variant, "delta": delta, "gamma": gamma, "M": m,
            "n_healthy": n_s, "n_tumor": n_t, "power_level": power_level}
    return SdpProblem(var_names=list(var_names), objective=objective,
                      sense=sense, blocks=blocks, nonneg=nonneg,
                      pinned=pinned, meta=meta)


# ---------------------------------------------------------------------------
# canonicalization to real conic form
# ---------------------------------------------------------------------------

def _svec_index(r, c, d):
    """Index into the column-stacked lower triangle (r >= c)."""
    return c * d - (c * (c - 1)) // 2 + (r - c)


def _svec_dense(mat: np.ndarray) -> np.ndarray:
    d = mat.shape[0]
    out = np.empty(d * (d + 1) // 2)
    idx = 0
    sq2 = math.sqrt(2.0)
    for c in range(d):
        out[idx] = mat[c, c]
        n = d - c - 1
        out[idx + 1: idx + 1 + n] = mat[c + 1:, c] * sq2
        idx += n + 1
    return out


def _canonicalize(problem: SdpProblem):
    """Split blocks into linear rows and embedded PSD blocks with triplets
    mapped onto the global variable indexing."""
    var_index = {n: i for i, n in enumerate(problem.var_names)}
    lin_rows = []   # (coeff dict over global idx, const)
    psd = []        # (dim, const dense, vidx_global, rows, cols, vals) real
    for blk in problem.blocks:
        gmap = np.array([var_index[n] for n in blk.var_names], dtype=np.int64) \
            if blk.var_names else np.zeros(0, dtype=np.int64)
        if blk.dim == 1:
            const = float(blk.constant[0, 0].real)
            coeffs = {}
            for vi, v in zip(blk.vidx, blk.vals):
                gi = int(gmap[vi])
                coeffs[gi] = coeffs.get(gi, 0.0) + float(v.real)
            lin_rows.append((coeffs, const))
        else:
            rb = blk.to_real()
            psd.append((rb.dim, np.real(rb.constant),
                        gmap[rb.vidx] if len(rb.vidx) else rb.vidx,
                        rb.rows, rb.cols, np.real(rb.vals)))
    for name in problem.nonneg:
        lin_rows.append(({var_index[name]: 1.0}, 0.0))
    return lin_rows, psd


def _objective_vector(problem: SdpProblem) -> np.ndarray:
    c = np.zeros(problem.n_vars)
    sign = -1.0 if problem.sense == "max" else 1.0
    for n, v in problem.objective.items():
        c[problem.index(n)] = sign * v
    return c


def _solve_scs(problem: SdpProblem, options: SolverOptions) -> SdpSolution:
    import scs

    lin_rows, psd = _canonicalize(problem)
    n = problem.n_vars
    rows_i, cols_i, data = [], [], []
    b_parts = []
    row0 = 0
    for coeffs, const in lin_rows:
        for gi, v in coeffs.items():
            rows_i.append(row0)
            cols_i.append(gi)
            data.append(-v)
        b_parts.append(np.array([const]))
        row0 += 1
    s_dims = []
    sq2 = math.sqrt(2.0)
    for dim, const, vidx, prows, pcols, pvals in psd:
        keep = prows >= pcols
        r, c, v, gi = prows[keep], pcols[keep], pvals[keep].copy(), vidx[keep]
        v[r > c] *= sq2
        sidx = _svec_index(r, c, dim) + row0
        rows_i.extend(sidx.tolist())
        cols_i.extend(gi.tolist())
        data.extend((-v).tolist())
        b_parts.append(_svec_dense(const))
        nsvec = dim * (dim + 1) // 2
        row0 += nsvec
        s_dims.append(dim)
    A = sp.csc_matrix(
        (np.array(data), (np.array(rows_i, dtype=np.int64),
                          np.array(cols_i, dtype=np.int64))),
        shape=(row0, n),
    )
    b = np.concatenate(b_parts) if b_parts else np.zeros(0)
    cvec = _objective_vector(problem)
    cone = {"l": len(lin_rows), "s": s_dims}
    data_d = {"A": A, "b": b, "c": cvec}
    slvr = scs.SCS(data_d, cone, eps_abs=options.scs_eps,
                   eps_rel=options.scs_eps, max_iters=options.max_iter,
                   verbose=False)
    sol = slvr.solve()
    info = sol["info"]
    status_raw = info["status"].lower()
    x = np.asarray(sol["x"], dtype=float)
    if status_raw == "solved":
        status = "optimal"
    elif status_raw.startswith("solved") and options.accept_inaccurate:
        # reached max_iters at reduced accuracy; callers that certify
        # feasibility independently (the exchange method) opt in to this
        status = "optimal"
    elif "infeasible" in status_raw:
        status = "infeasible"
    elif "unbounded" in status_raw:
        status = "unbounded"
    else:
        status = "numerical_failure"
    values = {nm: float(x[i]) for i, nm in enumerate(problem.var_names)} \
        if x.size == n and np.all(np.isfinite(x)) else {}
    obj = problem.objective_value(values) if values and status in (
        "optimal", "numerical_failure") else None
    gap = abs(info.get("gap", np.nan))
    return SdpSolution(status=status, values=values, objective=obj,
                       gap=None if math.isnan(gap) else float(gap),
                       backend="scs", iterations=int(info.get("iter", -1)))


def _solve_cvxopt(problem: SdpProblem, options: SolverOptions) -> SdpSolution:
    from cvxopt import matrix, solvers, spmatrix

    lin_rows, psd = _canonicalize(problem)
    n = problem.n_vars
    cvec = matrix(_objective_vector(problem))
    if lin_rows:
        li, lj, lv = [], [], []
        hl = []
        for ri, (coeffs, const) in enumerate(lin_rows):
            for gi, v in coeffs.items():
                li.append(ri)
                lj.append(gi)
                lv.append(-v)
            hl.append(const)
        Gl = spmatrix(lv, li, lj, (len(lin_rows), n))
        hl = matrix(hl)
    else:
        Gl = spmatrix([], [], [], (0, n))
        hl = matrix(np.zeros((0, 1)))
    Gs, hs = [], []
    for dim, const, vidx, prows, pcols, pvals in psd:
        flat = (pcols * dim + prows).astype(int)  # column-major vec index
        Gs.append(spmatrix((-pvals).tolist(), flat.tolist(), vidx.tolist(),
                           (dim * dim, n)))
        hs.append(matrix(const))
    opts = {"show_progress": False, "maxiters": min(options.max_iter, 1000),
            "abstol": options.gap_tol, "reltol": max(options.gap_tol, 1e-9),
            "feastol": min(options.feas_tol, 1e-7)}
    try:
        sol = solvers.sdp(cvec, Gl, hl, Gs, hs, options=opts)
    except (ZeroDivisionError, ArithmeticError, ValueError):
        return SdpSolution(status="numerical_failure", values={},
                           objective=None, gap=None, backend="cvxopt")
    status_raw = sol["status"]
    if status_raw == "optimal":
        status = "optimal"
    elif status_raw == "primal infeasible":
        status = "infeasible"
    elif status_raw == "dual infeasible":
        status = "unbounded"
    else:
        status = "numerical_failure"
    values = {}
    if sol["x"] is not None:
        x = np.asarray(sol["x"]).ravel()
        if x.size == n and np.all(np.isfinite(x)):
            values = {nm: float(x[i]) for i, nm in enumerate(problem.var_names)}
    obj = problem.objective_value(values) if values and status in (
        "optimal", "numerical_failure") else None
    gap = sol.get("gap")
    return SdpSolution(status=status, values=values, objective=obj,
                       gap=None if gap is None else float(gap),
                       backend="cvxopt", iterations=sol.get("iterations"))


def solve(problem: SdpProblem,
          options: Optional[SolverOptions] = None) -> SdpSolution:
    """Solve an assembled problem with the selected backend and attach the
    independently-verified per-block minimum eigenvalues."""
    options = options or SolverOptions()
    backend = options.pick_backend(problem.n_vars)
    if backend == "scs":
        solution = _solve_scs(problem, options)
    elif backend == "cvxopt":
        solution = _solve_cvxopt(problem, options)
    else:
        raise AssemblyError(f"unknown backend {backend!r}")
    if solution.values:
        report = verify_solution(problem, solution.values, options.feas_tol)
        solution.block_min_eigs = report["block_min_eigs"]
    return solution


def verify_solution(problem: SdpProblem, values: Mapping[str, float],
                    feas_tol: float = 1e-6) -> dict:
    """Re-evaluate every block and sign constraint from the raw problem data.

    Independent of any solver internals: blocks are reconstructed from their
    stored triplets and checked with a dense eigensolver.
    """
    eigs = [blk.min_eigenvalue(values) for blk in problem.blocks]
    nonneg_viol = max((0.0 - values[n] for n in problem.nonneg), default=0.0)
    scale_viol = max((-e for e in eigs), default=0.0)
    return {
        "block_min_eigs": eigs,
        "min_eig": min(eigs) if eigs else 0.0,
        "nonneg_violation": max(0.0, nonneg_viol),
        "feasible": scale_viol <= feas_tol and nonneg_viol <= feas_tol,
    }


def covariance_from_values(values: Mapping[str, float], m: int,
                           gamma: float) -> np.ndarray:
    """Rebuild the Hermitian covariance from the named scalar variables."""
    r = np.diag(np.full(m, gamma / m)).astype(complex)
    for k in range(m):
        for l in range(k + 1, m):
            z = values.get(f"Rre[{k},{l}]", 0.0) + 1j * values.get(
                f"Rim[{k},{l}]", 0.0)
            r[k, l] = z
            r[l, k] = z.conjugate()
    return r
