"""Dense matrix helpers and the discrete Lyapunov / Riccati solvers.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64.  The
solvers are deliberately simple (doubling for Lyapunov, fixed-point
iteration for the two Riccati equations); the problems handled here are
desk-sized (n <= 10).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    ConvergenceError,
    DimensionError,
    InstabilityError,
    ShapeError,
    SingularityError,
)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000

__all__ = [
    "SolverReport",
    "as_matrix",
    "as_vector",
    "spectral_radius",
    "solve_discrete_lyapunov",
    "solve_dare_kalman",
    "solve_dare_lq",
    "psd_dominates",
    "min_dominating_scale",
    "symmetrize",
]


@dataclass(frozen=True)
class SolverReport:
    """Outcome of an iterative solve."""

    iterations: int
    residual_norm: float
    converged: bool

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "residual_norm": self.residual_norm,
            "converged": self.converged,
        }


def as_matrix(a, name="matrix", shape=None):
    """Return `a` as a finite float64 2-D array.

    ``shape`` may contain ``None`` entries as wildcards.
    """
    m = np.array(a, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    if shape is not None:
        for want, got in zip(shape, m.shape):
            if want is not None and want != got:
                raise DimensionError(f"{name} has shape {m.shape}, expected {shape}")
    return m


def as_vector(v, n=None, name="vector"):
    x = np.array(v, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    if n is not None and x.shape[0] != n:
        raise DimensionError(f"{name} has length {x.shape[0]}, expected {n}")
    return x


def _square(a, name):
    m = as_matrix(a, name)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got {m.shape}")
    return m


def symmetrize(m):
    return 0.5 * (m + m.T)


def spectral_radius(A):
    """Largest eigenvalue modulus of a square matrix."""
    A = _square(A, "A")
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def _require_stable(A, name):
    rho = spectral_radius(A)
    if rho >= 1.0:
        raise InstabilityError(f"spectral radius of {name} is {rho:.6g} >= 1", radius=rho)
    return rho


def _doubling(A, W, tol, max_iter):
    # Q_k = sum_{j < 2^k} A^j W A^j'; stops once the added block is below tol.
    Q = W.copy()
    Ak = A.copy()
    for it in range(1, max_iter + 1):
        inc = Ak @ Q @ Ak.T
        Q = symmetrize(Q + inc)
        Ak = Ak @ Ak
        if np.linalg.norm(inc, "fro") <= tol or not np.any(Ak):
            return Q, it
    raise ConvergenceError(
        "Lyapunov doubling did not converge",
        SolverReport(max_iter, float(np.linalg.norm(inc, "fro")), False),
    )


def solve_discrete_lyapunov(A, W, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Solve ``Q = A Q A' + W`` for Schur-stable `A` by iterated doubling.

    Parameters
    ----------
    A : (n, n) array_like
        Stable state matrix (spectral radius < 1).
    W : (n, n) array_like
        Symmetric positive semidefinite forcing term.
    tol : float
        Frobenius tolerance on both the doubling increment and the final
        defect ``||Q - A Q A' - W||``.
    max_iter : int
        Cap on doubling steps (and on refinement sweeps).

    Returns
    -------
    Q : ndarray
    report : SolverReport
    """
    A = _square(A, "A")
    W = as_matrix(W, "W", shape=A.shape)
    _require_stable(A, "A")
    W = symmetrize(W)

    Q, iters = _doubling(A, W, tol, max_iter)
    residual = np.linalg.norm(Q - A @ Q @ A.T - W, "fro")
    # iterative refinement on the defect; rarely needs more than one sweep
    sweeps = 0
    while residual > tol and sweeps < 5:
        R = symmetrize(A @ Q @ A.T + W - Q)
        dQ, k = _doubling(A, R, tol * 1e-3, max_iter)
        Q = symmetrize(Q + dQ)
        iters += k
        sweeps += 1
        new_residual = np.linalg.norm(Q - A @ Q @ A.T - W, "fro")
        if new_residual >= residual:
            residual = new_residual
            break
        residual = new_residual
    report = SolverReport(iters, float(residual), bool(residual <= tol))
    if not report.converged:
        raise ConvergenceError(
            f"Lyapunov defect {residual:.3g} above tolerance {tol:.3g}", report
        )
    return Q, report


def _solve_spd(S, rhs, what):
    # rhs @ inv(S) for a symmetric S that must be nonsingular
    if S.size and np.linalg.cond(S) > 1e14:
        raise SingularityError(f"{what} is singular (cond={np.linalg.cond(S):.3g})")
    return np.linalg.solve(S, rhs.T).T


def solve_dare_kalman(A, C, F, E, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Filtering Riccati equation and the steady-state Kalman predictor gain.

    Iterates ``P <- A P A' - A P C' (C P C' + E E')^-1 C P A' + F F'`` from
    ``P = 0`` and returns ``(P, L, report)`` with
    ``L = A P C' (C P C' + E E')^-1``.
    """
    A = _square(A, "A")
    n = A.shape[0]
    C = as_matrix(C, "C", shape=(None, n))
    F = as_matrix(F, "F", shape=(n, None))
    E = as_matrix(E, "E", shape=(C.shape[0], None))
    FF = F @ F.T
    EE = E @ E.T

    def riccati(P):
        S = C @ P @ C.T + EE
        G = _solve_spd(S, A @ P @ C.T, "innovation covariance C P C' + E E'")
        return symmetrize(A @ P @ A.T - G @ (C @ P @ A.T) + FF), G

    P = np.zeros_like(A)
    step = np.inf
    for it in range(1, max_iter + 1):
        P_next, _ = riccati(P)
        step = np.linalg.norm(P_next - P, "fro")
        P = P_next
        if step <= tol:
            break
    else:
        raise ConvergenceError(
            "Kalman Riccati iteration did not converge",
            SolverReport(max_iter, float(step), False),
        )
    P_img, L = riccati(P)
    report = SolverReport(it, float(np.linalg.norm(P_img - P, "fro")), True)
    _require_stable(A - L @ C, "A - L C")
    return P, L, report


def solve_dare_lq(A, B, H, D_H=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Control Riccati equation and the LQ state-feedback gain.

    Iterates ``S <- A'SA - A'SB (B'SB + D_H'D_H)^-1 B'SA + H'H`` from
    ``S = 0`` and returns ``(S, K, report)`` with
    ``K = (B'SB + D_H'D_H)^-1 B'SA``.  With ``D_H`` omitted there is no
    input penalty and the resulting gain is typically deadbeat.

    At ``S = 0`` the subtracted term vanishes identically and is skipped;
    any later singular Hessian raises :class:`SingularityError`.
    """
    A = _square(A, "A")
    n = A.shape[0]
    B = as_matrix(B, "B", shape=(n, None))
    m = B.shape[1]
    H = as_matrix(H, "H", shape=(None, n))
    if D_H is None:
        R = np.zeros((m, m))
    else:
        D_H = as_matrix(D_H, "D_H", shape=(None, m))
        R = D_H.T @ D_H
    HH = H.T @ H

    def riccati(S):
        if not np.any(S) and not np.any(R):
            return HH.copy(), np.zeros((m, n))
        hess = B.T @ S @ B + R
        _check_hessian(hess)
        K = np.linalg.solve(hess, B.T @ S @ A)
        return symmetrize(A.T @ S @ A - (A.T @ S @ B) @ K + HH), K

    S = np.zeros_like(A)
    step = np.inf
    for it in range(1, max_iter + 1):
        S_next, _ = riccati(S)
        step = np.linalg.norm(S_next - S, "fro")
        S = S_next
        if step <= tol:
            break
    else:
        raise ConvergenceError(
            "LQ Riccati iteration did not converge",
            SolverReport(max_iter, float(step), False),
        )
    S_img, K = riccati(S)
    report = SolverReport(it, float(np.linalg.norm(S_img - S, "fro")), True)
    _require_stable(A - B @ K, "A - B K")
    return S, K, report


def _check_hessian(hess):
    if hess.size and np.linalg.cond(hess) > 1e14:
        raise SingularityError(
            "control Hessian B'SB + D_H'D_H is singular; "
            "add an input penalty D_H to avoid the degenerate deadbeat case"
        )


def _check_symmetric(M, tol, name):
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if M.size and np.max(np.abs(M - M.T)) > tol * scale:
        raise ShapeError(f"{name} is not symmetric")


def psd_dominates(Q, M, tol=1e-8):
    """True iff ``M <= Q`` in the Loewner order, up to ``-tol`` on eigenvalues."""
    Q = _square(Q, "Q")
    M = as_matrix(M, "M", shape=Q.shape)
    D = Q - M
    _check_symmetric(D, tol, "Q - M")
    if D.size == 0:
        return True
    return bool(np.linalg.eigvalsh(symmetrize(D))[0] >= -tol)


def min_dominating_scale(Q, M):
    """Smallest ``lam >= 0`` with ``M <= lam * Q`` for positive definite `Q`."""
    Q = symmetrize(_square(Q, "Q"))
    M = symmetrize(as_matrix(M, "M", shape=Q.shape))
    try:
        np.linalg.cholesky(Q)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("Q is not positive definite") from exc
    lam = scipy.linalg.eigh(M, Q, eigvals_only=True)[-1]
    return max(0.0, float(lam))
