"""S-procedure machinery: robust quadratic constraints as affine LMI blocks.

A robust constraint "f0(x) >= 0 whenever f1(x) >= 0" over complex x is
replaced by a single linear matrix inequality with a fresh nonnegative
multiplier. The design constraints (healthy-point power cap, tumor power
band) are emitted as (M+1) x (M+1) Hermitian blocks affine in the decision
scalars: the off-diagonal real/imag parts of the covariance R, the gap t,
the level P, and the per-block multiplier.

A degenerate perturbation ball (eps = 0) breaks the strict-interior
requirement of the multiplier lemma; those constraints are emitted as plain
1 x 1 scalar blocks instead, so the robust pipeline with eps = 0 reproduces
the deterministic problem exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .steering import SteeringVector, UncertaintyModel

__all__ = [
    "QuadraticForm",
    "LmiBlock",
    "r_variable_names",
    "s_procedure_block",
    "s_procedure_feasible",
    "healthy_point_block",
    "tumor_lower_block",
    "tumor_upper_block",
    "complex_to_real",
    "export_blocks",
    "import_blocks",
]

_HERM_TOL = 1e-12


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class QuadraticForm:
    """f(x) = x^H A x + 2 Re(b^H x) + c with A Hermitian, c real."""

    A: np.ndarray
    b: np.ndarray
    c: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=complex))
        scale = max(1.0, np.abs(A).max())
        if np.abs(A - A.conj().T).max() > _HERM_TOL * scale:
            raise ValidationError("quadratic form matrix must be Hermitian")
        A = 0.5 * (A + A.conj().T)
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        b = np.asarray(self.b, dtype=complex).ravel()
        b.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=complex).ravel()
        return float(
            np.real(x.conj() @ self.A @ x + 2.0 * np.real(self.b.conj() @ x) + self.c)
        )

    def bordered_matrix(self) -> np.ndarray:
        """[[A, b], [b^H, c]] — the homogenized Hermitian matrix."""
        d = self.dim
        out = np.zeros((d + 1, d + 1), dtype=complex)
        out[:d, :d] = self.A
        out[:d, d] = self.b
        out[d, :d] = self.b.conj()
        out[d, d] = self.c
        return out


class LmiBlock:
    """Hermitian matrix block affine in named scalar decision variables.

    block(x) = constant + sum_v x_v * coefficient(v), stored sparsely as
    triplets (variable index, row, col, value). Every coefficient matrix and
    the constant are Hermitian, so block(x) >= 0 is a well-posed LMI.
    """

    def __init__(self, dim, constant, var_names, vidx, rows, cols, vals,
                 multiplier=None):
        self.dim = int(dim)
        self.constant = np.asarray(constant, dtype=complex).reshape(dim, dim)
        self.var_names = tuple(var_names)
        self.vidx = np.asarray(vidx, dtype=np.int64)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.vals = np.asarray(vals, dtype=complex)
        self.multiplier = multiplier
        self._index = {n: i for i, n in enumerate(self.var_names)}

    @classmethod
    def from_coefficients(cls, constant, coeffs: Mapping[str, np.ndarray],
                          multiplier=None) -> "LmiBlock":
        constant = np.atleast_2d(np.asarray(constant, dtype=complex))
        dim = constant.shape[0]
        names, vidx, rows, cols, vals = [], [], [], [], []
        for i, (name, mat) in enumerate(coeffs.items()):
            names.append(name)
            mat = np.atleast_2d(np.asarray(mat, dtype=complex))
            r, c = np.nonzero(mat)
            vidx.extend([i] * r.size)
            rows.extend(r.tolist())
            cols.extend(c.tolist())
            vals.extend(mat[r, c].tolist())
        return cls(dim, constant, names, vidx, rows, cols, vals, multiplier)

    def coefficient(self, name: str) -> np.ndarray:
        out = np.zeros((self.dim, self.dim), dtype=complex)
        mask = self.vidx == self._index[name]
        np.add.at(out, (self.rows[mask], self.cols[mask]), self.vals[mask])
        return out

    def _values_vector(self, assignment) -> np.ndarray:
        if isinstance(assignment, Mapping):
            return np.array(
                [float(assignment.get(n, 0.0)) for n in self.var_names]
            )
        x = np.asarray(assignment, dtype=float).ravel()
        if x.size != len(self.var_names):
            raise ValidationError("assignment length mismatch")
        return x

    def evaluate(self, assignment) -> np.ndarray:
        """Dense Hermitian value of the block at a decision point."""
        x = self._values_vector(assignment)
        out = self.constant.copy()
        np.add.at(out, (self.rows, self.cols), x[self.vidx] * self.vals)
        return out

    def min_eigenvalue(self, assignment) -> float:
        return float(np.linalg.eigvalsh(self.evaluate(assignment)).min())

    def to_real(self) -> "LmiBlock":
        """Real symmetric embedding [[Re, -Im], [Im, Re]] of the block."""
        d = self.dim
        const = complex_to_real(self.constant)
        r, c, v, i = self.rows, self.cols, self.vals, self.vidx
        rows = np.concatenate([r, r, r + d, r + d])
        cols = np.concatenate([c, c + d, c, c + d])
        vals = np.concatenate([v.real, -v.imag, v.imag, v.real]).astype(complex)
        vidx = np.concatenate([i, i, i, i])
        keep = vals != 0
        return LmiBlock(2 * d, const, self.var_names, vidx[keep], rows[keep],
                        cols[keep], vals[keep], self.multiplier)


def r_variable_names(m: int) -> list:
    """Canonical scalar-variable names for the off-diagonal entries of R."""
    names = []
    for k in range(m):
        for l in range(k + 1, m):
            names.append(f"Rre[{k},{l}]")
            names.append(f"Rim[{k},{l}]")
    return names


def s_procedure_block(f0: QuadraticForm, f1: QuadraticForm,
                      multiplier: str = "beta") -> LmiBlock:
    """LMI certificate block for "f0 >= 0 on the set {f1 >= 0}".

    The implication holds iff the block is PSD for some multiplier >= 0,
    provided f1 is strictly satisfiable at some point.
    """
    if f0.dim != f1.dim:
        raise ValidationError("quadratic forms must share a dimension")
    return LmiBlock.from_coefficients(
        constant=f0.bordered_matrix(),
        coeffs={multiplier: -f1.bordered_matrix()},
        multiplier=multiplier,
    )


def s_procedure_feasible(f0: QuadraticForm, f1: QuadraticForm,
                         tol: float = 1e-9) -> bool:
    """Search the multiplier line for a PSD certificate.

    min-eig of (C + beta * D) is concave in beta, so a bounded scalar
    maximization over an expanding bracket settles feasibility.
    """
    block = s_procedure_block(f0, f1)
    c0 = block.constant
    d0 = block.coefficient("beta")

    def neg_min_eig(beta):
        return -float(np.linalg.eigvalsh(c0 + beta * d0).min())

    hi = 1.0
    while neg_min_eig(hi * (1 + 1e-6)) < neg_min_eig(hi) and hi < 1e10:
        hi *= 10.0
    res = minimize_scalar(neg_min_eig, bounds=(0.0, 10.0 * hi),
                          method="bounded", options={"xatol": 1e-12})
    best = -min(res.fun, neg_min_eig(float(res.x)), neg_min_eig(0.0))
    scale = max(1.0, np.abs(c0).max(), np.abs(d0).max())
    return best >= -tol * scale


def _steering_entries(a_hat) -> np.ndarray:
    if isinstance(a_hat, SteeringVector):
        return np.asarray(a_hat.entries, dtype=complex)
    return np.asarray(a_hat, dtype=complex).ravel()


def _power_coefficients(a: np.ndarray):
    """Per-R-variable values of a^H B_v a, in r_variable_names order."""
    m = a.size
    k, l = np.triu_indices(m, k=1)
    cross = a[k].conj() * a[l]
    out = np.empty(2 * k.size)
    out[0::2] = 2.0 * cross.real
    out[1::2] = -2.0 * cross.imag
    return k, l, out


def _bordered_power_triplets(a: np.ndarray, sign: float):
    """Triplets of sign * U B_v U^H, U = [I; a^H], over the R variables.

    U R U^H = [[R, R a], [a^H R, a^H R a]] is the (M+1)-dim block carrying
    every occurrence of R in the robust constraint blocks.
    """
    m = a.size
    k, l, corner = _power_coefficients(a)
    npair = k.size
    re_idx = 2 * np.arange(npair)
    im_idx = re_idx + 1
    M = m  # border row/col index

    rows = np.concatenate([
        k, l, k, l, np.full(npair, M), np.full(npair, M), np.full(npair, M),
        k, l, k, l, np.full(npair, M), np.full(npair, M), np.full(npair, M),
    ])
    cols = np.concatenate([
        l, k, np.full(npair, M), np.full(npair, M), l, k, np.full(npair, M),
        l, k, np.full(npair, M), np.full(npair, M), l, k, np.full(npair, M),
    ])
    one = np.ones(npair)
    ak, al = a[k], a[l]
    vals = np.concatenate([
        one, one, al, ak, ak.conj(), al.conj(), corner[0::2],
        1j * one, -1j * one, 1j * al, -1j * ak, 1j * ak.conj(),
        -1j * al.conj(), corner[1::2],
    ]).astype(complex)
    vidx = np.concatenate([np.tile(re_idx, 7), np.tile(im_idx, 7)])
    return vidx, rows, cols, sign * vals


def _bordered_identity(a: np.ndarray) -> np.ndarray:
    """U U^H = [[I, a], [a^H, ||a||^2]]."""
    m = a.size
    out = np.zeros((m + 1, m + 1), dtype=complex)
    out[:m, :m] = np.eye(m)
    out[:m, m] = a
    out[m, :m] = a.conj()
    out[m, m] = np.real(a.conj() @ a)
    return out


def _scalar_power_block(a, gamma, sign, corner_coeffs, corner_const) -> LmiBlock:
    """1x1 block: sign * a^H R a + corner >= 0 (degenerate-ball constraint)."""
    m = a.size
    names = r_variable_names(m)
    _, _, coefvals = _power_coefficients(a)
    extra = list(corner_coeffs.keys())
    vidx = np.arange(len(names) + len(extra))
    vals = np.concatenate(
        [sign * coefvals, np.array([corner_coeffs[n] for n in extra])]
    ).astype(complex)
    keep = vals != 0
    const = sign * (gamma / m) * np.real(a.conj() @ a) + corner_const
    return LmiBlock(1, np.array([[const]], dtype=complex), names + extra,
                    vidx[keep], np.zeros(keep.sum(), dtype=int),
                    np.zeros(keep.sum(), dtype=int), vals[keep])


def _robust_power_block(a, model: UncertaintyModel, eps, gamma, sign,
                        corner_coeffs, corner_const, beta_name) -> LmiBlock:
    """(M+1)-dim block: multiplier certificate for the worst-case constraint
    sign * (a_hat + a~)^H R (a_hat + a~) + corner >= 0 over the ball."""
    if eps == 0.0:
        return _scalar_power_block(a, gamma, sign, corner_coeffs, corner_const)
    m = a.size
    d = m + 1
    names = r_variable_names(m)
    vidx, rows, cols, vals = _bordered_power_triplets(a, sign)

    extra = list(corner_coeffs.keys()) + [beta_name]
    extra_idx = {n: len(names) + i for i, n in enumerate(extra)}
    # corner scalars enter at (M, M)
    c_idx = [extra_idx[n] for n in corner_coeffs]
    c_val = [corner_coeffs[n] for n in corner_coeffs]
    # multiplier coefficient: diag(W) on top, -eps in the corner
    b_idx = np.full(m + 1, extra_idx[beta_name])
    b_rows = np.append(np.arange(m), m)
    b_vals = np.append(model.weight_diagonal.astype(complex), -eps)

    vidx = np.concatenate([vidx, np.asarray(c_idx, dtype=int), b_idx])
    rows = np.concatenate([rows, np.full(len(c_idx), m), b_rows])
    cols = np.concatenate([cols, np.full(len(c_idx), m), b_rows])
    vals = np.concatenate([vals, np.asarray(c_val, dtype=complex), b_vals])

    constant = sign * (gamma / m) * _bordered_identity(a)
    constant[m, m] += corner_const
    return LmiBlock(d, constant, names + extra, vidx, rows, cols, vals,
                    multiplier=beta_name)


def _resolve_eps(a_hat, model: UncertaintyModel, eps) -> float:
    if eps is not None:
        return float(eps)
    if isinstance(a_hat, SteeringVector):
        return model.epsilon_at(a_hat.location)
    if callable(model.epsilon):
        raise ValidationError(
            "position-dependent epsilon needs a SteeringVector or explicit eps"
        )
    return float(model.epsilon)


def healthy_point_block(a_hat, model: UncertaintyModel, gamma: float,
                        beta_name: str = "beta",
                        corner_coeffs: Optional[Mapping[str, float]] = None,
                        corner_const: float = 0.0,
                        eps: Optional[float] = None) -> LmiBlock:
    """Worst-case cap on healthy-point power: p(r) <= P - t over the ball.

    The default corner P - t can be overridden (e.g. t * w(r) for the
    weighted variant, or a fixed numeric cap via corner_const).
    """
    a = _steering_entries(a_hat)
    if corner_coeffs is None:
        corner_coeffs = {"P": 1.0, "t": -1.0}
    return _robust_power_block(a, model, _resolve_eps(a_hat, model, eps),
                               gamma, -1.0, dict(corner_coeffs), corner_const,
                               beta_name)


def tumor_lower_block(a_hat, model: UncertaintyModel, gamma: float,
                      delta: float, beta_name: str = "beta",
                      power_level: Optional[float] = None,
                      eps: Optional[float] = None) -> LmiBlock:
    """Worst-case floor on tumor power: p(r) >= (1 - delta) P over the ball."""
    a = _steering_entries(a_hat)
    if power_level is None:
        coeffs, const = {"P": -(1.0 - delta)}, 0.0
    else:
        coeffs, const = {}, -(1.0 - delta) * power_level
    return _robust_power_block(a, model, _resolve_eps(a_hat, model, eps),
                               gamma, +1.0, coeffs, const, beta_name)


def tumor_upper_block(a_hat, model: UncertaintyModel, gamma: float,
                      delta: float, beta_name: str = "beta",
                      power_level: Optional[float] = None,
                      eps: Optional[float] = None) -> LmiBlock:
    """Worst-case cap on tumor power: p(r) <= (1 + delta) P over the ball."""
    a = _steering_entries(a_hat)
    if power_level is None:
        coeffs, const = {"P": (1.0 + delta)}, 0.0
    else:
        coeffs, const = {}, (1.0 + delta) * power_level
    return _robust_power_block(a, model, _resolve_eps(a_hat, model, eps),
                               gamma, -1.0, coeffs, const, beta_name)


def complex_to_real(h: np.ndarray) -> np.ndarray:
    """Embed a Hermitian n x n matrix as the 2n x 2n real symmetric
    [[Re H, -Im H], [Im H, Re H]]; PSD-ness is preserved both ways and each
    eigenvalue of H appears twice in the embedding."""
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    if h.shape[0] != h.shape[1]:
        raise ValidationError("matrix must be square")
    scale = max(1.0, np.abs(h).max())
    if np.abs(h - h.conj().T).max() > 1e-10 * scale:
        raise ValidationError("matrix must be Hermitian")
    return np.block([[h.real, -h.imag], [h.imag, h.real]])


def export_blocks(blocks: Sequence[LmiBlock], path) -> None:
    """Sparse text dump: per line "block var_id row col re im".

    var_id -1 denotes the constant term; a header maps variable ids to names
    per block.
    """
    with open(path, "w") as fh:
        fh.write("# lmi-blocks v1\n")
        write_blocks(fh, blocks)


def write_blocks(fh, blocks: Sequence[LmiBlock]) -> None:
    for bi, blk in enumerate(blocks):
            fh.write(f"#block {bi} dim {blk.dim} nvars {len(blk.var_names)}\n")
            for i, n in enumerate(blk.var_names):
                fh.write(f"#var {bi} {i} {n}\n")
            r, c = np.nonzero(blk.constant)
            for rr, cc in zip(r, c):
                v = blk.constant[rr, cc]
                fh.write(f"{bi} -1 {rr} {cc} {v.real:.17e} {v.imag:.17e}\n")
            for vi, rr, cc, v in zip(blk.vidx, blk.rows, blk.cols, blk.vals):
                fh.write(f"{bi} {vi} {rr} {cc} {v.real:.17e} {v.imag:.17e}\n")


def import_blocks(path) -> list:
    """Inverse of export_blocks."""
    dims, names, triplets, consts = {}, {}, {}, {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            tag = line.split(maxsplit=1)[0]
            if tag == "#block":
                _, bi, _, dim, _, nv = line.split()
                dims[int(bi)] = int(dim)
                names.setdefault(int(bi), {})
            elif tag == "#var":
                _, bi, i, n = line.split(maxsplit=3)
                names[int(bi)][int(i)] = n
            elif line.startswith("#"):
                continue
            else:
                bi, vi, r, c, re, im = line.split()
                bi, vi = int(bi), int(vi)
                entry = (int(r), int(c), float(re) + 1j * float(im))
                if vi < 0:
                    consts.setdefault(bi, []).append(entry)
                else:
                    triplets.setdefault(bi, []).append((vi,) + entry)
    blocks = []
    for bi in sorted(dims):
        d = dims[bi]
        const = np.zeros((d, d), dtype=complex)
        for r, c, v in consts.get(bi, []):
            const[r, c] += v
        tr = triplets.get(bi, [])
        name_list = [names[bi][i] for i in sorted(names[bi])]
        blocks.append(LmiBlock(
            d, const, name_list,
            [t[0] for t in tr], [t[1] for t in tr], [t[2] for t in tr],
            [t[3] for t in tr],
        ))
    return blocks
