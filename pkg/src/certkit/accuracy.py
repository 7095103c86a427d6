"""Precision certificates for observer-based refinements.

A certificate is a symmetric matrix ``Q`` over the stacked error
``v = (xhat - xbar, x - xhat)`` with

    Q >= Q0                         (initial domination)
    Q >= A_cl Q A_cl' + W           (invariance)

where ``W = G G'`` is the noise covariance block (zero in the
deterministic regime).  Its precision is
``eps = sqrt(trace([H H] Q [H H]'))``.

Three numbers are reported per certificate:

``eps_x0``
    precision of the reported witness ``Q``.  With the default
    ``witness="min_trace"`` this is the smallest precision any ``Q``
    satisfying both inequalities can certify (a small SDP).
``eps_sup``
    supremum over time of the exact second-moment recursion
    ``M(t+1) = A_cl M(t) A_cl' + W``, ``M(0) = Q0``; always <= ``eps_x0``.
``eps_inf``
    stationary precision from the equality Lyapunov solution.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DimensionError, InstabilityError
from .matops import (
    as_matrix,
    as_vector,
    min_dominating_scale,
    psd_dominates,
    solve_discrete_lyapunov,
    spectral_radius,
    symmetrize,
)
from .model import model_to_dict
from .refine import Interface, error_dynamics, pad_state

__all__ = [
    "PrecisionCertificate",
    "MomentTrace",
    "noise_covariance_block",
    "initial_block",
    "epsilon_from_Q",
    "moment_recursion",
    "min_trace_witness",
    "scaled_witness",
    "certify_deterministic",
    "certify_stochastic",
    "relation_check",
    "relation_check_moment",
    "verify_certificate",
    "model_hash",
]

HORIZON_CAP = 10_000
_SETTLE_TOL = 1e-9
_SETTLE_STEPS = 10


@dataclass(frozen=True, eq=False)
class PrecisionCertificate:
    Q: np.ndarray
    eps_x0: float
    eps_inf: float
    eps_sup: float
    regime: str
    interface: str
    horizon_used: int
    lam: float = 1.0
    witness: str = "min_trace"
    model_hash: str = ""
    A_cl: np.ndarray = field(default=None, repr=False)
    W: np.ndarray = field(default=None, repr=False)
    Q0: np.ndarray = field(default=None, repr=False)
    Q_inf: np.ndarray = field(default=None, repr=False)
    moments: "MomentTrace" = field(default=None, repr=False)

    def to_dict(self):
        return {
            "regime": self.regime,
            "interface": self.interface,
            "eps_x0": self.eps_x0,
            "eps_inf": self.eps_inf,
            "eps_sup": self.eps_sup,
            "lambda": self.lam,
            "witness": self.witness,
            "horizon_used": self.horizon_used,
            "Q": np.asarray(self.Q).tolist(),
            "model_hash": self.model_hash,
        }


@dataclass(frozen=True, eq=False)
class MomentTrace:
    """Output of :func:`moment_recursion`.

    ``eps[t] = sqrt(trace(H_tilde M(t) H_tilde'))`` for ``t = 0..horizon``.
    """

    eps: np.ndarray
    moments: np.ndarray

    @property
    def horizon(self):
        return len(self.eps) - 1

    @property
    def sup(self):
        return float(self.eps.max())


def model_hash(m):
    blob = json.dumps(model_to_dict(m), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def noise_covariance_block(m, L):
    """``[[L E E' L', -L E E' L'], [-L E E' L', F F' + L E E' L']]``."""
    L = as_matrix(L, "L", shape=(m.n, m.p))
    LEEL = L @ m.E @ m.E.T @ L.T
    return np.block([[LEEL, -LEEL], [-LEEL, m.F @ m.F.T + LEEL]])


def initial_block(m, xbar0, xhat0, regime="stochastic", x0=None):
    """Initial second moment of the stacked error.

    Stochastic: ``blockdiag(d d', e e' + P0)`` with ``d = xhat0 - xbar0``
    and ``e = x0 - xhat0``.  Deterministic: ``v v'`` with ``v = (d, e)``.
    `xbar0` shorter than the state is zero-padded.
    """
    n = m.n
    xbar0 = pad_state(as_vector(xbar0, name="xbar0"), n)
    xhat0 = as_vector(xhat0, n, "xhat0")
    x0 = m.x0 if x0 is None else as_vector(x0, n, "x0")
    d = xhat0 - xbar0
    e = x0 - xhat0
    if regime == "deterministic":
        v = np.concatenate([d, e])
        return np.outer(v, v)
    if regime != "stochastic":
        raise ValueError(f"unknown regime {regime!r}")
    Q0 = np.zeros((2 * n, 2 * n))
    Q0[:n, :n] = np.outer(d, d)
    Q0[n:, n:] = np.outer(e, e) + m.P0
    return Q0


def epsilon_from_Q(H, Q):
    """``sqrt(trace([H H] Q [H H]'))``."""
    H = as_matrix(H, "H")
    Q = as_matrix(Q, "Q")
    Ht = np.hstack([H, H])
    if Q.shape != (Ht.shape[1], Ht.shape[1]):
        raise DimensionError(f"Q has shape {Q.shape}, expected {(Ht.shape[1],) * 2}")
    return float(np.sqrt(max(0.0, np.trace(Ht @ Q @ Ht.T))))


def moment_recursion(A_cl, W, Q0, H_tilde, limit=None, horizon=None):
    """Propagate ``M(t+1) = A_cl M(t) A_cl' + W`` from ``M(0) = Q0``.

    Without a fixed `horizon` the recursion runs until the output trace has
    moved by less than 1e-9 for 10 consecutive steps and (when `limit`,
    the stationary trace, is given) sits within 1e-9 of it.  Hitting the
    10 000-step cap raises :class:`ConvergenceError`.
    """
    tr = lambda M: float(np.trace(H_tilde @ M @ H_tilde.T))
    M = symmetrize(np.asarray(Q0, dtype=float))
    Ms = [M]
    traces = [tr(M)]
    settled = 0
    cap = HORIZON_CAP if horizon is None else horizon
    for _ in range(cap):
        M = symmetrize(A_cl @ M @ A_cl.T + W)
        Ms.append(M)
        traces.append(tr(M))
        if horizon is not None:
            continue
        close = limit is None or abs(traces[-1] - limit) < _SETTLE_TOL
        settled = settled + 1 if abs(traces[-1] - traces[-2]) < _SETTLE_TOL and close else 0
        if settled >= _SETTLE_STEPS:
            break
    else:
        if horizon is None:
            raise ConvergenceError(f"moment recursion not settled within {cap} steps")
    eps = np.sqrt(np.maximum(np.array(traces), 0.0))
    return MomentTrace(eps, np.array(Ms))


def _repair(Q, A_cl, W, Q0):
    """Add ``c X`` with ``X - A X A' = I`` so both inequalities hold strictly."""
    Q = symmetrize(Q)
    v1 = -np.linalg.eigvalsh(symmetrize(Q - Q0))[0]
    v2 = -np.linalg.eigvalsh(symmetrize(Q - A_cl @ Q @ A_cl.T - W))[0]
    c = max(v1, v2, 0.0)
    if c == 0.0:
        return Q
    X, _ = solve_discrete_lyapunov(A_cl, np.eye(A_cl.shape[0]))
    return symmetrize(Q + (c * (1 + 1e-6) + 1e-12) * X)


def min_trace_witness(A_cl, W, Q0, H_tilde):
    """Certificate ``Q`` of least precision, by semidefinite programming.

    The solver output is nudged along the Lyapunov direction of the
    identity so that the two matrix inequalities hold in exact arithmetic
    up to rounding, not merely to solver tolerance.
    """
    import cvxpy as cp

    k = A_cl.shape[0]
    if not np.any(Q0) and not np.any(W):
        return np.zeros((k, k))
    scale = max(float(np.abs(Q0).max()), float(np.abs(W).max()))
    Q = cp.Variable((k, k), symmetric=True)
    A = A_cl
    cons = [
        Q - Q0 / scale >> 0,
        Q - A @ Q @ A.T - W / scale >> 0,
    ]
    prob = cp.Problem(cp.Minimize(cp.trace(H_tilde @ Q @ H_tilde.T)), cons)
    prob.solve(solver=cp.CLARABEL)
    if Q.value is None or prob.status not in ("optimal", "optimal_inaccurate"):
        raise ConvergenceError(f"certificate SDP failed with status {prob.status}")
    return _repair(np.asarray(Q.value) * scale, A_cl, W, Q0)


def scaled_witness(Q_inf, moments, A_cl, W, Q0):
    """Inflate the stationary solution until it dominates every tracked moment.

    Returns ``(Q, lam)``.  When ``Q_inf`` is (numerically) singular the
    witness falls back to ``Q_inf + sum_t A_cl^t Q0 A_cl'^t`` with
    ``lam = 1``, which dominates every moment and satisfies invariance with
    slack ``Q0``.
    """
    evals = np.linalg.eigvalsh(Q_inf)
    if evals[0] > 1e-12 * max(1.0, evals[-1]):
        lam = max(1.0, max(min_dominating_scale(Q_inf, M) for M in moments))
        return lam * Q_inf, lam
    gram, _ = solve_discrete_lyapunov(A_cl, Q0, tol=1e-10 * max(1.0, np.abs(Q0).max()))
    return symmetrize(Q_inf + gram), 1.0


def _certify(m, K, L, Q0, regime, interface, witness, horizon):
    es = error_dynamics(m, K, L)
    for name, blk in (("A - B K", es.A_cl[: m.n, : m.n]), ("A - L C", es.A_cl[m.n :, m.n :])):
        rho = spectral_radius(blk)
        if rho >= 1:
            raise InstabilityError(f"spectral radius of {name} is {rho:.6g} >= 1", radius=rho)
    A_cl, Ht = es.A_cl, es.H_tilde
    W = es.G @ es.G.T if regime == "stochastic" else np.zeros_like(A_cl)
    Q_inf, _ = solve_discrete_lyapunov(A_cl, W)
    eps_inf = epsilon_from_Q(m.H, Q_inf)
    moments = moment_recursion(A_cl, W, Q0, Ht, limit=eps_inf**2, horizon=horizon)

    if witness == "min_trace":
        Q, lam = min_trace_witness(A_cl, W, Q0, Ht), 1.0
    elif witness == "scaled":
        Q, lam = scaled_witness(Q_inf, moments.moments, A_cl, W, Q0)
    else:
        raise ValueError(f"unknown witness {witness!r}")
    return PrecisionCertificate(
        Q=Q,
        eps_x0=epsilon_from_Q(m.H, Q),
        eps_inf=eps_inf,
        eps_sup=moments.sup,
        regime=regime,
        interface=Interface(interface).value,
        horizon_used=moments.horizon,
        lam=float(lam),
        witness=witness,
        model_hash=model_hash(m),
        A_cl=A_cl,
        W=W,
        Q0=Q0,
        Q_inf=Q_inf,
        moments=moments,
    )


def certify_deterministic(m, K, L, Q0, witness="min_trace", horizon=None):
    """Hard bound on ``||z - zbar||`` for the noiseless closed loop.

    `m` may carry noise matrices; they are ignored.  ``K=None`` selects
    the feedforward interface.  ``eps_inf`` is zero.
    """
    interface = Interface.FEEDFORWARD if K is None else Interface.SENSOR_BASED
    Q0 = as_matrix(Q0, "Q0", shape=(2 * m.n, 2 * m.n))
    return _certify(m, K, L, Q0, "deterministic", interface, witness, horizon)


def certify_stochastic(m, K, L, xbar0, xhat0, horizon=None, witness="min_trace", x0=None):
    """Bound on ``E||z - zbar||`` for the noisy closed loop.

    ``K=None`` selects the feedforward interface.  `horizon` fixes the
    length of the moment recursion instead of running it to settlement.
    """
    interface = Interface.FEEDFORWARD if K is None else Interface.SENSOR_BASED
    Q0 = initial_block(m, xbar0, xhat0, "stochastic", x0=x0)
    return _certify(m, K, L, Q0, "stochastic", interface, witness, horizon)


def verify_certificate(cert, tol=1e-8):
    """Check both defining inequalities of a certificate's witness."""
    Q, A, W, Q0 = cert.Q, cert.A_cl, cert.W, cert.Q0
    return psd_dominates(Q, Q0, tol) and psd_dominates(Q, A @ Q @ A.T + W, tol)


def relation_check(Q, xbar, xhat, x, tol=1e-8):
    """Deterministic relation: ``v v' <= Q`` for ``v = (xhat - xbar, x - xhat)``."""
    xhat = as_vector(xhat, name="xhat")
    n = xhat.shape[0]
    xbar = pad_state(as_vector(xbar, name="xbar"), n)
    x = as_vector(x, n, "x")
    v = np.concatenate([xhat - xbar, x - xhat])
    return psd_dominates(Q, np.outer(v, v), tol)


def relation_check_moment(Q, M, tol=1e-8):
    """Stochastic relation: second moment of the stacked error ``<= Q``."""
    return psd_dominates(Q, M, tol)
