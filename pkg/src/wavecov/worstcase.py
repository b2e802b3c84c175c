"""Exact worst-case steering perturbations per control point.

Both extremes of the power (a_hat + a~)^H R (a_hat + a~) over the weighted
ball ||a~||_W^2 <= eps are trust-region subproblems over a single ball and
therefore globally solvable: after whitening by W^(1/2) and diagonalizing,
the stationarity conditions reduce to a monotone secular equation in the
Lagrange multiplier. Strong duality over a single ball makes the boundary
solution of the (nonconvex) maximization globally optimal, so no relaxation
gap is left behind.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .steering import SteeringField, SteeringVector, UncertaintyModel

__all__ = [
    "TrsSolution",
    "min_power_over_ball",
    "max_power_over_ball",
    "worst_case_power_map",
]

_HARD_CASE_TOL = 1e-10


@dataclass(frozen=True)
class TrsSolution:
    """Certified extremizer of the power over the perturbation ball."""

    perturbation: np.ndarray
    power: float
    multiplier: float
    kkt_residual: float
    slackness_residual: float
    case: str  # interior | boundary | hard_case

    def ball_norm_sq(self, model: UncertaintyModel) -> float:
        return model.weighted_norm_sq(self.perturbation)


def _prepare(r_mat, a_hat, w_diag):
    r_mat = np.asarray(r_mat, dtype=complex)
    a = np.asarray(
        a_hat.entries if isinstance(a_hat, SteeringVector) else a_hat,
        dtype=complex,
    ).ravel()
    w = np.asarray(w_diag, dtype=float).ravel()
    w_isqrt = 1.0 / np.sqrt(w)
    s_mat = r_mat * np.outer(w_isqrt, w_isqrt)
    s_mat = 0.5 * (s_mat + s_mat.conj().T)
    g = w_isqrt * (r_mat @ a)
    c0 = float(np.real(a.conj() @ r_mat @ a))
    mu, vecs = np.linalg.eigh(s_mat)
    g_tilde = vecs.conj().T @ g
    return r_mat, a, w, w_isqrt, mu, vecs, g_tilde, c0


def _finish(r_mat, a, w, w_isqrt, vecs, z, lam, eps, case,
            sign) -> TrsSolution:
    """Map the whitened solution back and record certificate residuals.

    sign = +1 for the minimization KKT (R + lam W) a~ = -R a_hat,
    sign = -1 for the maximization KKT (lam W - R) a~ = R a_hat.
    """
    a_tilde = w_isqrt * (vecs @ z)
    p = float(np.real(
        (a + a_tilde).conj() @ r_mat @ (a + a_tilde)))
    p = max(p, 0.0)
    grad = r_mat @ (a + a_tilde)
    if sign > 0:
        res = grad + lam * (w * a_tilde)
    else:
        res = lam * (w * a_tilde) - grad
    kkt = float(np.linalg.norm(res))
    norm_sq = float(np.real(np.sum(w * np.abs(a_tilde) ** 2)))
    return TrsSolution(
        perturbation=a_tilde,
        power=p,
        multiplier=float(lam),
        kkt_residual=kkt,
        slackness_residual=abs(lam) * abs(norm_sq - eps),
        case=case,
    )


def min_power_over_ball(r_mat, a_hat, w_diag, eps: float) -> TrsSolution:
    """Global minimum of the delivered power over the perturbation ball.

    Convex problem: either the unconstrained minimum-norm minimizer lies
    inside the ball (interior case, multiplier 0), or the multiplier solves
    the strictly decreasing secular equation on the boundary.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    r_mat, a, w, w_isqrt, mu, vecs, g_tilde, c0 = _prepare(r_mat, a_hat, w_diag)
    m = a.size
    if eps == 0.0:
        return TrsSolution(np.zeros(m, dtype=complex), max(c0, 0.0), 0.0,
                           0.0, 0.0, "interior")
    scale = max(1.0, float(np.abs(mu).max()))
    pos = mu > 1e-13 * scale
    z0 = np.zeros(m, dtype=complex)
    z0[pos] = -g_tilde[pos] / mu[pos]
    if float(np.sum(np.abs(z0) ** 2)) <= eps:
        return _finish(r_mat, a, w, w_isqrt, vecs, z0, 0.0, eps,
                       "interior", +1)

    gsq = np.abs(g_tilde) ** 2

    def norm_sq(lam):
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = gsq / (mu + lam) ** 2
        terms = np.where(gsq == 0.0, 0.0, terms)
        return float(np.sum(terms))

    hi = float(np.linalg.norm(g_tilde)) / np.sqrt(eps)
    lam = brentq(lambda l: norm_sq(l) - eps, 0.0, max(hi, 1e-300),
                 xtol=1e-16, rtol=8.9e-16, maxiter=300)
    z = -g_tilde / (mu + lam)
    return _finish(r_mat, a, w, w_isqrt, vecs, z, lam, eps, "boundary", +1)


def max_power_over_ball(r_mat, a_hat, w_diag, eps: float) -> TrsSolution:
    """Global maximum of the delivered power over the perturbation ball.

    The maximum of a convex quadratic over a ball sits on the boundary with
    multiplier at least the top eigenvalue of the whitened covariance. When
    the linear term has no component on the top eigenspace (hard case), the
    boundary is reached by adding a top-eigenvector component.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    r_mat, a, w, w_isqrt, mu, vecs, g_tilde, c0 = _prepare(r_mat, a_hat, w_diag)
    m = a.size
    if eps == 0.0:
        return TrsSolution(np.zeros(m, dtype=complex), max(c0, 0.0), 0.0,
                           0.0, 0.0, "boundary")
    mu_top = float(mu[-1])
    scale = max(1.0, float(np.abs(mu).max()))
    top = mu > mu_top - 1e-12 * scale
    g_norm = float(np.linalg.norm(g_tilde))
    gsq = np.abs(g_tilde) ** 2

    def norm_sq(lam):
        return float(np.sum(gsq / (lam - mu) ** 2))

    hard = float(np.linalg.norm(g_tilde[top])) <= _HARD_CASE_TOL * max(g_norm,
                                                                       1.0)
    if hard:
        z = np.zeros(m, dtype=complex)
        rest = ~top
        z[rest] = g_tilde[rest] / (mu_top - mu[rest])
        nsq = float(np.sum(np.abs(z) ** 2))
        if nsq <= eps:
            z[np.argmax(mu)] += np.sqrt(eps - nsq)
            return _finish(r_mat, a, w, w_isqrt, vecs, z, mu_top, eps,
                           "hard_case", -1)
        # enough curvature-free mass to reach the boundary before mu_top
        lo = mu_top
    else:
        lo = mu_top
    # regular boundary root lam > mu_top with ||z(lam)||^2 = eps
    hi = mu_top + 2.0 * g_norm / np.sqrt(eps) + 1e-30
    while norm_sq(hi) > eps:
        hi = mu_top + 2.0 * (hi - mu_top)
    shift = max(1e-16, 1e-14 * scale)
    while norm_sq(lo + shift) < eps and shift > 1e-300:
        shift *= 0.25
    if norm_sq(lo + shift) < eps:
        # numerically indistinguishable from the hard case: top up with a
        # dominant-eigenvector component to reach the boundary
        z = g_tilde / np.maximum(lo + shift - mu, shift)
        nsq = float(np.sum(np.abs(z) ** 2))
        if nsq < eps:
            z[np.argmax(mu)] += np.sqrt(eps - nsq)
        return _finish(r_mat, a, w, w_isqrt, vecs, z, mu_top, eps,
                       "hard_case", -1)
    lam = brentq(lambda l: norm_sq(l) - eps, lo + shift, hi,
                 xtol=1e-16, rtol=8.9e-16, maxiter=300)
    z = g_tilde / (lam - mu)
    return _finish(r_mat, a, w, w_isqrt, vecs, z, lam, eps, "boundary", -1)


def worst_case_power_map(design, field: SteeringField, grids=None):
    """Per-point worst-case power: maxima on the healthy grid, minima on the
    tumor grid, with the certified perturbations attached."""
    from .evaluate import PowerMap

    grids = grids if grids is not None else field.grids
    model = field.uncertainty
    w = model.weight_diagonal
    r_mat = design.covariance if hasattr(design, "covariance") else np.asarray(
        design, dtype=complex)
    healthy_sols = [
        max_power_over_ball(r_mat, vec, w, model.epsilon_at(vec.location))
        for vec in field.healthy_vectors
    ]
    tumor_sols = [
        min_power_over_ball(r_mat, vec, w, model.epsilon_at(vec.location))
        for vec in field.tumor_vectors
    ]
    return PowerMap(
        positions=np.vstack([grids.healthy_points, grids.tumor_points]),
        values=np.array([s.power for s in healthy_sols]
                        + [s.power for s in tumor_sols]),
        n_healthy=grids.n_healthy,
        scenario="worst_case",
        solutions=tuple(healthy_sols + tumor_sols),
    )
