"""Linear time-invariant plant models and the two-zone building preset."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import DimensionError, StructureError
from .matops import as_matrix, as_vector, solve_dare_kalman, solve_dare_lq

__all__ = [
    "StochasticLti",
    "DeterministicLti",
    "noiseless",
    "step",
    "outputs",
    "case_study_model",
    "planar_submodel",
    "load_model",
    "model_to_dict",
    "model_from_dict",
    "PRESETS",
]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DeterministicLti:
    """Noiseless plant ``x+ = A x + B u``, ``y = C x``, ``z = H x``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    H: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(as_matrix(self.B, "B", shape=(n, None))))
        object.__setattr__(self, "C", _frozen(as_matrix(self.C, "C", shape=(None, n))))
        object.__setattr__(self, "H", _frozen(as_matrix(self.H, "H", shape=(None, n))))
        object.__setattr__(self, "x0", _frozen(as_vector(self.x0, n, "x0")))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class StochasticLti:
    """Plant with additive process and measurement noise.

    ``x+ = A x + B u + F w1``, ``y = C x + E w2``, ``z = H x`` with
    ``x(0) ~ N(x0, P0)`` and ``w1``, ``w2`` i.i.d. zero-mean unit-variance.
    ``F``, ``E`` and ``P0`` default to zero matrices.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    H: np.ndarray
    F: np.ndarray = None
    E: np.ndarray = None
    x0: np.ndarray = None
    P0: np.ndarray = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        B = as_matrix(self.B, "B", shape=(n, None))
        C = as_matrix(self.C, "C", shape=(None, n))
        H = as_matrix(self.H, "H", shape=(None, n))
        p = C.shape[0]
        F = np.zeros((n, n)) if self.F is None else as_matrix(self.F, "F", shape=(n, None))
        E = np.zeros((p, p)) if self.E is None else as_matrix(self.E, "E", shape=(p, None))
        x0 = np.zeros(n) if self.x0 is None else as_vector(self.x0, n, "x0")
        P0 = np.zeros((n, n)) if self.P0 is None else as_matrix(self.P0, "P0", shape=(n, n))
        if np.max(np.abs(P0 - P0.T), initial=0.0) > 1e-12:
            raise StructureError("P0 must be symmetric")
        if n and np.linalg.eigvalsh(P0)[0] < -1e-12:
            raise StructureError("P0 must be positive semidefinite")
        for key, val in dict(A=A, B=B, C=C, H=H, F=F, E=E, x0=x0, P0=P0).items():
            object.__setattr__(self, key, _frozen(val))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def q(self):
        return self.H.shape[0]

    @property
    def d1(self):
        return self.F.shape[1]

    @property
    def d2(self):
        return self.E.shape[1]

    def with_changes(self, **kw):
        fields = {k: getattr(self, k) for k in ("A", "B", "C", "H", "F", "E", "x0", "P0", "name")}
        fields.update(kw)
        return StochasticLti(**fields)

    def kalman_gain(self, **kw):
        """Detectability witness: ``(P, L, report)`` from the filtering DARE."""
        return solve_dare_kalman(self.A, self.C, self.F, self.E, **kw)

    def lq_gain(self, D_H=None, **kw):
        """Stabilizability witness: ``(S, K, report)`` from the control DARE."""
        return solve_dare_lq(self.A, self.B, self.H, D_H, **kw)


def noiseless(m):
    """Drop the noise terms and initial covariance of a stochastic model."""
    return DeterministicLti(A=m.A, B=m.B, C=m.C, H=m.H, x0=m.x0)


def step(m, x, u, w1=None):
    """One state update ``A x + B u + F w1``."""
    x = as_vector(x, m.n, "x")
    u = as_vector(u, m.m, "u")
    x_next = m.A @ x + m.B @ u
    if w1 is not None and hasattr(m, "F"):
        x_next = x_next + m.F @ as_vector(w1, m.F.shape[1], "w1")
    return x_next


def outputs(m, x, w2=None):
    """Measured and performance outputs ``(y, z)``; `z` is never noisy."""
    x = as_vector(x, m.n, "x")
    y = m.C @ x
    if w2 is not None and hasattr(m, "E"):
        y = y + m.E @ as_vector(w2, m.E.shape[1], "w2")
    return y, m.H @ x


def planar_submodel(m):
    """Restrict a model to its first two states for grid-based synthesis.

    The remaining states must be autonomous with respect to the first two
    and to the input (``A[2:, :2] == 0`` and ``B[2:, :] == 0``).  Their
    coupling into the first two states, ``A[:2, 2:]``, is dropped: those
    states are deviations with zero mean.
    """
    if m.n < 2:
        raise StructureError("planar submodel needs at least two states")
    if m.n > 2 and (np.any(m.A[2:, :2]) or np.any(m.B[2:, :])):
        raise StructureError(
            "states beyond the first two must be autonomous "
            "(A[2:, :2] and B[2:, :] must vanish)"
        )
    A2 = m.A[:2, :2]
    B2 = m.B[:2, :]
    C2 = np.eye(2)
    return DeterministicLti(A=A2, B=B2, C=C2, H=np.eye(2), x0=m.x0[:2])


def model_to_dict(m):
    return {key: np.asarray(getattr(m, key)).tolist() for key in ("A", "B", "C", "H", "F", "E", "x0", "P0")}


def model_from_dict(d, name=""):
    missing = [k for k in ("A", "B", "C", "H") if k not in d]
    if missing:
        raise KeyError(f"model file lacks keys {missing}")
    A = as_matrix(d["A"], "A")
    n = A.shape[0]
    C = as_matrix(d["C"], "C")
    return StochasticLti(
        A=A,
        B=d["B"],
        C=C,
        H=d["H"],
        F=d.get("F", np.zeros((n, n))),
        E=d.get("E", np.zeros((C.shape[0], C.shape[0]))),
        x0=d.get("x0", np.zeros(n)),
        P0=d.get("P0", np.zeros((n, n))),
        name=name,
    )


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh), name=str(path))


def case_study_model():
    """Two-zone building with ambient-temperature deviation as third state.

    States are zone-1 and zone-2 temperatures (degC) and the ambient
    deviation from its mean; inputs are the two radiator supply
    temperatures.  Zone 1 and the ambient are measured.
    """
    text = resources.files("certkit.data").joinpath("building.json").read_text(encoding="utf-8")
    return model_from_dict(json.loads(text), name="building")


PRESETS = {"building": case_study_model}
