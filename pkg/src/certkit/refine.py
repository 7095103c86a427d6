"""Observer-based refinement of a state-feedback symbolic controller.

A Luenberger observer estimates the plant state from noisy outputs; an
interface function turns the symbolic input ``ubar`` into the plant
input, optionally correcting with ``K (xbar - xhat)``.  The composed
closed loop carries three copies of the state: the ideal symbolic state
``xbar``, the estimate ``xhat`` and the true plant state ``x``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError, InstabilityError, OutOfDomainError
from .matops import as_matrix, as_vector, spectral_radius
from .model import planar_submodel
from .symbolic import Mode, SymbolicController, controller_eval

__all__ = [
    "Observer",
    "Interface",
    "InterfaceFn",
    "ClosedLoopSystem",
    "ErrorSystem",
    "StepRecord",
    "observer_step",
    "interface_eval",
    "compose_closed_loop",
    "error_dynamics",
    "pad_state",
]


class Interface(str, enum.Enum):
    SENSOR_BASED = "sensor_based"
    FEEDFORWARD = "feedforward"


@dataclass(frozen=True, eq=False)
class Observer:
    """Luenberger observer gain and initial estimate."""

    L: np.ndarray
    xhat0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "L", as_matrix(self.L, "L"))
        object.__setattr__(self, "xhat0", as_vector(self.xhat0, self.L.shape[0], "xhat0"))


@dataclass(frozen=True, eq=False)
class InterfaceFn:
    """Interface ``u = ubar + K (xbar - xhat)`` or plain feedforward ``u = ubar``."""

    variant: Interface
    K: Optional[np.ndarray] = None

    def __post_init__(self):
        variant = Interface(self.variant)
        object.__setattr__(self, "variant", variant)
        if variant is Interface.SENSOR_BASED:
            if self.K is None:
                raise ValueError("sensor-based interface needs a gain K")
            object.__setattr__(self, "K", as_matrix(self.K, "K"))
        else:
            object.__setattr__(self, "K", None)

    @classmethod
    def sensor_based(cls, K):
        return cls(Interface.SENSOR_BASED, K)

    @classmethod
    def feedforward(cls):
        return cls(Interface.FEEDFORWARD)

    def gain(self, m, n):
        """The effective correction gain (zero for feedforward)."""
        return np.zeros((m, n)) if self.K is None else self.K


def observer_step(obs, m, xhat, u, y):
    """``xhat+ = A xhat + B u + L (y - C xhat)``."""
    xhat = as_vector(xhat, m.n, "xhat")
    u = as_vector(u, m.m, "u")
    y = as_vector(y, m.p, "y")
    if obs.L.shape != (m.n, m.p):
        raise DimensionError(f"L has shape {obs.L.shape}, expected {(m.n, m.p)}")
    return m.A @ xhat + m.B @ u + obs.L @ (y - m.C @ xhat)


def interface_eval(ifc, ubar, xbar, xhat):
    ubar = as_vector(ubar, name="ubar")
    if ifc.variant is Interface.FEEDFORWARD:
        return ubar.copy()
    xbar = as_vector(xbar, ifc.K.shape[1], "xbar")
    xhat = as_vector(xhat, ifc.K.shape[1], "xhat")
    if ifc.K.shape[0] != ubar.shape[0]:
        raise DimensionError(f"K has {ifc.K.shape[0]} rows, ubar has {ubar.shape[0]} entries")
    return ubar + ifc.K @ (xbar - xhat)


def pad_state(xbar, n):
    """Embed a low-dimensional symbolic state into R^n with zeros."""
    xbar = np.asarray(xbar, dtype=float).reshape(-1)
    out = np.zeros(n)
    out[: xbar.shape[0]] = xbar
    return out


@dataclass(frozen=True)
class StepRecord:
    t: int
    xbar: np.ndarray
    q: Mode
    xhat: np.ndarray
    x: np.ndarray
    ubar: np.ndarray
    u: np.ndarray
    y: np.ndarray
    z: np.ndarray
    zbar: np.ndarray


class ClosedLoopSystem:
    """Plant, observer, interface and ideal controlled model stepped together.

    `controller` is either a :class:`SymbolicController` (evaluated on the
    first ``state_grid.dim`` components of ``xbar``) or any callable
    ``(xbar, q) -> (ubar, q_next)``.
    """

    def __init__(self, plant, controller, observer, interface, xbar0, q0, x0=None):
        self.plant = plant
        self.controller = controller
        self.observer = observer
        self.interface = interface
        self.xbar0 = as_vector(xbar0, plant.n, "xbar0")
        self.q0 = q0
        self.x0 = as_vector(plant.x0 if x0 is None else x0, plant.n, "x0")
        self.reset()

    def reset(self, x0=None):
        self.t = 0
        self.xbar = self.xbar0.copy()
        self.q = self.q0
        self.xhat = self.observer.xhat0.copy()
        self.x = self.x0.copy() if x0 is None else as_vector(x0, self.plant.n, "x0")

    def _policy(self, xbar, q):
        if isinstance(self.controller, SymbolicController):
            return controller_eval(self.controller, xbar, q)
        return self.controller(xbar, q)

    def error_state(self):
        """``(xhat - xbar, x - xhat)``."""
        return self.xhat - self.xbar, self.x - self.xhat

    def step(self, w1=None, w2=None):
        """Record the current hybrid state and advance one step.

        Order: ubar and q' from the controller, u from the interface, then
        the ideal update, the plant update, the (pre-update) measurement
        and the observer update.
        """
        m = self.plant
        w1 = np.zeros(m.d1) if w1 is None else w1
        w2 = np.zeros(m.d2) if w2 is None else w2
        ubar, q_next = self._policy(self.xbar, self.q)
        ubar = np.asarray(ubar, dtype=float)
        K = self.interface.K
        u = ubar if K is None else ubar + K @ (self.xbar - self.xhat)
        y = m.C @ self.x + m.E @ w2
        rec = StepRecord(
            self.t, self.xbar, self.q, self.xhat, self.x, ubar, u, y,
            m.H @ self.x, m.H @ self.xbar,
        )
        self.xbar = m.A @ self.xbar + m.B @ ubar
        self.xhat = m.A @ self.xhat + m.B @ u + self.observer.L @ (y - m.C @ self.xhat)
        self.x = m.A @ self.x + m.B @ u + m.F @ w1
        self.q = q_next
        self.t += 1
        return rec


def compose_closed_loop(m, ctrl, obs, ifc, xbar0=None, q0=None, x0=None, check=True):
    """Wire plant, observer, interface and ideal controller together.

    ``xbar0`` defaults to the observer's initial estimate (restricted to the
    controller's grid dimensions and zero-padded), ``q0`` to the reach mode.
    """
    symbolic = isinstance(ctrl, SymbolicController)
    if xbar0 is None:
        xbar0 = obs.xhat0[: ctrl.state_grid.dim] if symbolic else obs.xhat0
    xbar0 = pad_state(xbar0, m.n)
    if q0 is None:
        q0 = Mode.REACH if symbolic else None
    if check:
        if symbolic:
            if m.n > ctrl.state_grid.dim:
                planar_submodel(m)
            if not ctrl.is_winning(xbar0[: ctrl.state_grid.dim]):
                raise OutOfDomainError(f"initial symbolic state {xbar0.tolist()} is not winning")
        for name, blk in (
            ("A - L C", m.A - obs.L @ m.C),
            ("A - B K", m.A - m.B @ ifc.gain(m.m, m.n)),
        ):
            rho = spectral_radius(blk)
            if rho >= 1:
                raise InstabilityError(f"spectral radius of {name} is {rho:.6g} >= 1", radius=rho)
    return ClosedLoopSystem(m, ctrl, obs, ifc, xbar0, q0, x0)


@dataclass(frozen=True, eq=False)
class ErrorSystem:
    """Stacked error ``(xhat - xbar, x - xhat)`` driven by ``(w1, w2)``."""

    A_cl: np.ndarray
    G: np.ndarray
    H_tilde: np.ndarray

    def step(self, v, w):
        return self.A_cl @ v + self.G @ w


def error_dynamics(m, K, L):
    """Block matrices of the congruence-transformed error dynamics.

    ``A_cl = [[A - B K, L C], [0, A - L C]]``,
    ``G = [[0, L E], [F, -L E]]``, ``H_tilde = [H, H]``.
    Pass ``K=None`` for the feedforward interface.
    """
    n = m.n
    K = np.zeros((m.m, n)) if K is None else as_matrix(K, "K", shape=(m.m, n))
    L = as_matrix(L, "L", shape=(n, m.p))
    A_cl = np.block([[m.A - m.B @ K, L @ m.C], [np.zeros((n, n)), m.A - L @ m.C]])
    LE = L @ m.E
    G = np.block([[np.zeros((n, m.d1)), LE], [m.F, -LE]])
    H_tilde = np.hstack([m.H, m.H])
    return ErrorSystem(A_cl, G, H_tilde)
