"""Kernels and per-subdomain RBF interpolation.

A local interpolant is

    f(p) = eta(p) + sum_j w_j * phi(||p - p_j|| / R)

with eta linear.  The weights and the four polynomial coefficients solve the
symmetric saddle-point system

    [ Phi  P ] [w]   [v]
    [ P^T  0 ] [c] = [0]

where P has rows (1, x, y, z).  Internally everything is expressed in the
subdomain frame u = (p - origin) / R, which leaves the interpolant unchanged
(the side conditions force sum w = 0) and keeps the polynomial columns O(1).
"""

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgWarning, lstsq, lu_factor, lu_solve
from scipy.spatial.distance import cdist

from rbfim.core.errors import InsufficientPointsError, SingularSystemError
from rbfim.models.schemas import KernelKind

# Shape constant of the (inverse) multiquadric
MQ_SHAPE = 0.5

PIVOT_RTOL = 1e-12
RIDGE = 1e-8
REFINE_STEPS = 3
MIN_MEMBERS = 5


def kernel_eval(kind: KernelKind, r):
    """phi(r) for scalar or array `r` >= 0."""
    r = np.asarray(r, dtype=np.float64)
    if kind is KernelKind.GAUSSIAN:
        out = np.exp(-0.5 * r * r)
    elif kind is KernelKind.TRIHARMONIC:
        out = r ** 3
    elif kind is KernelKind.MULTIQUADRIC:
        out = np.sqrt(r * r + MQ_SHAPE ** 2)
    elif kind is KernelKind.INVERSE_MULTIQUADRIC:
        out = 1.0 / np.sqrt(r * r + MQ_SHAPE ** 2)
    elif kind in (KernelKind.THIN_PLATE_SPLINE, KernelKind.MULTIVARIATE_SPLINE):
        log = np.log10 if kind is KernelKind.THIN_PLATE_SPLINE else np.log
        safe = np.where(r > 0, r, 1.0)
        out = np.where(r > 0, safe * safe * log(safe), 0.0)
    else:
        raise ValueError(f"unknown kernel {kind!r}")
    return out if out.ndim else float(out)


def _poly_rows(u: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((u.shape[0], 1)), u])


@dataclass(frozen=True)
class LocalRBF:
    kernel: KernelKind
    centers: np.ndarray
    weights: np.ndarray
    poly_local: np.ndarray
    origin: np.ndarray
    scale: float
    solver: str = "lu"

    @property
    def poly(self) -> np.ndarray:
        """(a, b, c, d) of eta(p) = a x + b y + c z + d in normalized coordinates."""
        d0, a, b, c = self.poly_local
        lin = np.array([a, b, c]) / self.scale
        return np.array([lin[0], lin[1], lin[2], d0 - float(lin @ self.origin)])

    @property
    def local_centers(self) -> np.ndarray:
        return (self.centers - self.origin) / self.scale

    def evaluate(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        u = (pts - self.origin) / self.scale
        phi = kernel_eval(self.kernel, cdist(u, self.local_centers))
        return phi @ self.weights + _poly_rows(u) @ self.poly_local


def assemble_system(centers: np.ndarray, values: np.ndarray, kind: KernelKind, scale: float, origin: np.ndarray):
    """Augmented (n+4)x(n+4) matrix and right-hand side in the local frame."""
    u = (centers - origin) / scale
    n = u.shape[0]
    a = np.zeros((n + 4, n + 4))
    a[:n, :n] = kernel_eval(kind, cdist(u, u))
    p = _poly_rows(u)
    a[:n, n:] = p
    a[n:, :n] = p.T
    y = np.concatenate([np.asarray(values, dtype=np.float64), np.zeros(4)])
    return a, y


def _residual(a: np.ndarray, sol: np.ndarray, y: np.ndarray) -> float:
    resid = float(np.max(np.abs(a @ sol - y)))
    return resid if np.isfinite(resid) else np.inf


def _residual_tol(y: np.ndarray) -> float:
    return 1e-6 * (1.0 + float(np.max(np.abs(y))))


def _factor_ok(lu: np.ndarray, a_norm: float) -> bool:
    pivots = np.abs(np.diag(lu))
    return bool(np.all(np.isfinite(lu))) and pivots.min() > PIVOT_RTOL * a_norm


def solve_points(
    centers,
    values,
    kind: KernelKind = KernelKind.GAUSSIAN,
    scale: float = 1.0,
    origin=None,
) -> LocalRBF:
    """Fit the exact interpolant through (centers, values)."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    n = centers.shape[0]
    if n == 0 or values.shape[0] != n:
        raise InsufficientPointsError(f"need matching non-empty centers and values, got {n} and {values.shape[0]}")
    if not scale > 0:
        raise ValueError("scale must be positive")
    origin = centers.mean(axis=0) if origin is None else np.asarray(origin, dtype=np.float64).reshape(3)

    a, y = assemble_system(centers, values, kind, scale, origin)
    a_norm = float(np.abs(a).sum(axis=1).max())
    solver = "lu"
    sol: Optional[np.ndarray] = None

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            lu = lu_factor(a, check_finite=False)
            if _factor_ok(lu[0], a_norm):
                sol = lu_solve(lu, y, check_finite=False)
            else:
                solver = "ridge"
                a_ridge = a.copy()
                a_ridge[np.arange(n), np.arange(n)] += RIDGE
                lu = lu_factor(a_ridge, check_finite=False)
                if _factor_ok(lu[0], a_norm):
                    sol = lu_solve(lu, y, check_finite=False)
                    # refine against the unperturbed system to restore exact interpolation
                    for _ in range(REFINE_STEPS):
                        sol = sol + lu_solve(lu, y - a @ sol, check_finite=False)
                    if _residual(a, sol, y) > _residual_tol(y):
                        sol = None

    if sol is None or not np.all(np.isfinite(sol)):
        # Rank-deficient border (coplanar / collinear members): the system is
        # still consistent, take the minimum-norm solution.
        solver = "lstsq"
        sol, *_ = lstsq(a, y, cond=None, check_finite=False)
        resid = _residual(a, sol, y)
        if resid > _residual_tol(y):
            raise SingularSystemError(f"local system singular (n={n}, residual={resid:.3g})")

    return LocalRBF(
        kernel=kind,
        centers=centers,
        weights=sol[:n].copy(),
        poly_local=sol[n:].copy(),
        origin=origin,
        scale=float(scale),
        solver=solver,
    )


def solve_local(subdomain, cloud, kind: KernelKind = KernelKind.GAUSSIAN) -> LocalRBF:
    """Interpolant of `cloud`'s features over the members of `subdomain`."""
    ids = subdomain.member_ids
    if ids.size < MIN_MEMBERS:
        raise InsufficientPointsError(f"subdomain has {ids.size} members, need at least {MIN_MEMBERS}")
    return solve_points(
        cloud.positions[ids],
        cloud.features[ids],
        kind=kind,
        scale=subdomain.radius,
        origin=subdomain.center,
    )


def eval_local(rbf: LocalRBF, p):
    """Scalar for a single point, array for a batch."""
    pts = np.asarray(p, dtype=np.float64)
    out = rbf.evaluate(pts)
    return float(out[0]) if pts.ndim == 1 else out
