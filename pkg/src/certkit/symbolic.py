"""Grid abstraction of a planar LTI model and reach-and-stay synthesis.

The abstraction over-approximates: each (state cell, input cell) pair is
mapped to every state cell meeting the axis-aligned bounding box of the
exact affine image of the cell.  Since that box is a rectangle of cells,
successor sets are stored as inclusive index ranges per axis, which makes
"successors all inside a set" an O(1) query on a 2-D prefix sum.
"""
from __future__ import annotations

import base64
import enum
import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridError, OutOfDomainError, StructureError, SynthesisInfeasible

__all__ = [
    "Grid",
    "Mode",
    "SymbolicAbstraction",
    "ReachStaySpec",
    "SymbolicController",
    "abstract",
    "synthesize_reach_stay",
    "controller_eval",
    "controller_to_dict",
    "controller_from_dict",
]

# outward inflation of image boxes; covers floating-point rounding of A x + B u
_PAD = 1e-9


class Mode(str, enum.Enum):
    REACH = "reach"
    STAY = "stay"


class Grid:
    """Uniform box grid with half-open cells ``[lo, lo + eta)``.

    The last cell along each axis is closed so that the upper bound is
    covered.  Flat indices are row-major (axis 0 slowest).
    """

    def __init__(self, lower, upper, eta):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float))
        self.eta = np.broadcast_to(np.asarray(eta, dtype=float), self.lower.shape).copy()
        if not (self.lower.shape == self.upper.shape and self.lower.ndim == 1):
            raise GridError("lower and upper bounds must be 1-D and of equal length")
        if np.any(self.upper <= self.lower) or np.any(self.eta <= 0):
            raise GridError("grid needs upper > lower and eta > 0 in every dimension")
        self.counts = np.ceil((self.upper - self.lower) / self.eta - 1e-9).astype(np.int64)
        for arr in (self.lower, self.upper, self.eta, self.counts):
            arr.setflags(write=False)
        self._axes = list(zip(self.lower.tolist(), self.upper.tolist(), self.eta.tolist(), self.counts.tolist()))

    def __repr__(self):
        return f"Grid(lower={self.lower.tolist()}, upper={self.upper.tolist()}, eta={self.eta.tolist()})"

    def __eq__(self, other):
        return (
            isinstance(other, Grid)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
            and np.array_equal(self.eta, other.eta)
        )

    @property
    def dim(self):
        return self.lower.shape[0]

    @property
    def size(self):
        return int(np.prod(self.counts))

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def axis_index(self, x):
        """Per-axis cell indices of the points in `x` (shape ``(..., dim)``).

        Points outside the grid get indices outside ``[0, counts)``.
        """
        x = np.asarray(x, dtype=float)
        idx = np.floor((x - self.lower) / self.eta).astype(np.int64)
        on_top = (x == self.upper)
        return np.where(on_top, self.counts - 1, idx)

    def flat(self, multi):
        multi = np.asarray(multi, dtype=np.int64)
        return np.ravel_multi_index(tuple(np.moveaxis(multi, -1, 0)), tuple(self.counts))

    def unflat(self, idx):
        return np.stack(np.unravel_index(np.asarray(idx), tuple(self.counts)), axis=-1)

    def cell(self, x):
        """Flat index of the cell holding `x`; raises if `x` is off the grid."""
        # scalar path, same floating-point operations as axis_index
        if len(x) != self.dim:
            raise GridError(f"point has dimension {len(x)}, grid has {self.dim}")
        flat = 0
        for v, (lo, hi, eta, count) in zip(x, self._axes):
            v = float(v)
            if not lo <= v <= hi:
                raise OutOfDomainError(f"point {list(map(float, x))} lies outside the grid {self!r}")
            i = count - 1 if v == hi else math.floor((v - lo) / eta)
            flat = flat * count + i
        return flat

    def cell_bounds(self, idx):
        multi = self.unflat(idx)
        lo = self.lower + multi * self.eta
        hi = np.minimum(lo + self.eta, self.upper)
        return lo, hi

    def centers(self):
        """Cell centers, shape ``(size, dim)``, in flat-index order."""
        lo, hi = self.cell_bounds(np.arange(self.size))
        return 0.5 * (lo + hi)

    def to_dict(self):
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist(), "eta": self.eta.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["lower"], d["upper"], d["eta"])


@dataclass(frozen=True, eq=False)
class SymbolicAbstraction:
    """Finite over-approximation of a planar model on a state/input grid.

    ``succ_lo[c, u]`` and ``succ_hi[c, u]`` are the inclusive per-axis cell
    index ranges of the successor rectangle of state cell ``c`` under input
    cell ``u``; ``out_of_domain[c, u]`` marks images leaving the grid.
    """

    state_grid: Grid
    input_grid: Grid
    succ_lo: np.ndarray
    succ_hi: np.ndarray
    out_of_domain: np.ndarray

    def successors(self, cell, inp):
        """Flat indices of the successor cells of ``(cell, inp)``."""
        if self.out_of_domain[cell, inp]:
            raise OutOfDomainError(f"pair ({cell}, {inp}) leaves the state grid")
        lo, hi = self.succ_lo[cell, inp], self.succ_hi[cell, inp]
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        return self.state_grid.flat(mesh)


@dataclass(frozen=True)
class ReachStaySpec:
    """Eventually reach the closed box ``[lower, upper]`` and stay there."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or any(b < a for a, b in zip(lo, hi)):
            raise GridError("target box must satisfy lower <= upper per dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)


@dataclass(frozen=True, eq=False)
class SymbolicController:
    """Two-mode reach/stay controller over a state grid.

    ``reach_policy`` is defined on the winning set, ``stay_policy`` on the
    controlled-invariant subset of the target; both hold input-cell
    indices, with -1 where undefined.
    """

    state_grid: Grid
    input_grid: Grid
    winning: np.ndarray
    invariant: np.ndarray
    reach_policy: np.ndarray
    stay_policy: np.ndarray
    history: dict = field(default_factory=dict)

    initial_mode = Mode.REACH

    @functools.cached_property
    def input_centers(self):
        return self.input_grid.centers()

    def is_winning(self, x):
        try:
            return bool(self.winning[self.state_grid.cell(x)])
        except OutOfDomainError:
            return False

    def in_invariant(self, x):
        try:
            return bool(self.invariant[self.state_grid.cell(x)])
        except OutOfDomainError:
            return False

    def delta(self, x, q):
        """Mode update: switch to stay once the state cell is invariant."""
        return self._delta(self.state_grid.cell(x), q)

    def _delta(self, cell, q):
        if Mode(q) is Mode.STAY or self.invariant[cell]:
            return Mode.STAY
        return Mode.REACH


def abstract(model, state_grid, input_grid):
    """Build the over-approximating abstraction of a 2-state model.

    Inputs are applied at input-cell centers.  For each state cell the
    exact affine image (a parallelogram) is enclosed by its bounding box,
    ``A c + B u +/- |A| r`` with cell center ``c`` and half-widths ``r``.
    """
    if model.A.shape != (2, 2) or state_grid.dim != 2:
        raise StructureError("abstraction requires a 2-state model and a 2-D state grid")
    if input_grid.dim != model.B.shape[1]:
        raise GridError(
            f"input grid has dimension {input_grid.dim}, model has {model.B.shape[1]} inputs"
        )
    A, B = np.asarray(model.A), np.asarray(model.B)
    lo, hi = state_grid.cell_bounds(np.arange(state_grid.size))
    center = 0.5 * (lo + hi)
    radius = 0.5 * (hi - lo)
    img_c = center @ A.T                      # (Nx, 2)
    img_r = radius @ np.abs(A).T
    drift = input_grid.centers() @ B.T        # (Nu, 2)

    box_c = img_c[:, None, :] + drift[None, :, :]
    pad = _PAD * (1.0 + np.abs(box_c))
    box_lo = box_c - img_r[:, None, :] - pad
    box_hi = box_c + img_r[:, None, :] + pad

    g = state_grid
    out = np.any(box_lo < g.lower, axis=-1) | np.any(box_hi > g.upper, axis=-1)
    dtype = np.int32 if g.counts.max() > 2**15 - 1 else np.int16
    succ_lo = np.clip(g.axis_index(box_lo), 0, g.counts - 1).astype(dtype)
    succ_hi = np.clip(g.axis_index(box_hi), 0, g.counts - 1).astype(dtype)
    return SymbolicAbstraction(g, input_grid, succ_lo, succ_hi, out)


def _target_cells(grid, spec):
    if len(spec.lower) != grid.dim:
        raise GridError("target box dimension does not match the state grid")
    lo = np.asarray(spec.lower)
    hi = np.asarray(spec.upper)
    # snap inward to whole cells
    first = np.ceil((lo - grid.lower) / grid.eta - 1e-9).astype(np.int64)
    stop = np.floor((hi - grid.lower) / grid.eta + 1e-9).astype(np.int64)
    first = np.maximum(first, 0)
    stop = np.minimum(stop, grid.counts)
    if np.any(stop <= first):
        raise SynthesisInfeasible(
            f"target box {spec.lower}..{spec.upper} contains no whole grid cell"
        )
    mask = np.zeros(tuple(grid.counts), dtype=bool)
    mask[first[0]:stop[0], first[1]:stop[1]] = True
    return mask.reshape(-1)


def _inside(abs_, member):
    """Boolean (Nx, Nu): successor rectangle lies entirely in `member`."""
    g = abs_.state_grid
    grid = member.reshape(tuple(g.counts)).astype(np.int64)
    ps = np.zeros((grid.shape[0] + 1, grid.shape[1] + 1), dtype=np.int64)
    ps[1:, 1:] = grid.cumsum(0).cumsum(1)
    lo = abs_.succ_lo.astype(np.int64)
    hi = abs_.succ_hi.astype(np.int64) + 1
    count = (
        ps[hi[..., 0], hi[..., 1]]
        - ps[lo[..., 0], hi[..., 1]]
        - ps[hi[..., 0], lo[..., 1]]
        + ps[lo[..., 0], lo[..., 1]]
    )
    area = (hi[..., 0] - lo[..., 0]) * (hi[..., 1] - lo[..., 1])
    return (count == area) & ~abs_.out_of_domain


def _first_true(ok):
    # smallest input index per row, -1 if none
    has = ok.any(axis=1)
    return np.where(has, ok.argmax(axis=1), -1), has


def synthesize_reach_stay(abs_, spec):
    """Solve the reach-and-stay game on the abstraction.

    First the maximal controlled-invariant subset ``Inv`` of the target
    (greatest fixed point), then backward reachability to ``Inv`` (least
    fixed point).  Reach-mode inputs are recorded at the iteration that
    adds a cell, so every step strictly lowers the cell's attractor layer.
    Ties go to the smallest input-cell index.
    """
    target = _target_cells(abs_.state_grid, spec)

    inv = target.copy()
    inv_sizes = [int(inv.sum())]
    while True:
        _, has = _first_true(_inside(abs_, inv))
        new = inv & has
        inv_sizes.append(int(new.sum()))
        if np.array_equal(new, inv):
            break
        inv = new
    if not inv.any():
        raise SynthesisInfeasible("no controlled-invariant cells inside the target on this grid")

    nx = abs_.state_grid.size
    stay = np.full(nx, -1, dtype=np.int64)
    choice, _ = _first_true(_inside(abs_, inv))
    stay[inv] = choice[inv]

    win = inv.copy()
    reach = stay.copy()
    layer = np.where(inv, 0, -1)
    win_sizes = [int(win.sum())]
    k = 0
    while True:
        k += 1
        choice, has = _first_true(_inside(abs_, win))
        added = has & ~win
        if not added.any():
            break
        reach[added] = choice[added]
        layer[added] = k
        win = win | added
        win_sizes.append(int(win.sum()))

    history = {"invariant_sizes": inv_sizes, "winning_sizes": win_sizes, "layers": layer}
    return SymbolicController(
        abs_.state_grid, abs_.input_grid, win, inv, reach, stay, history
    )


def controller_eval(ctrl, xbar, q):
    """Return ``(ubar, q_next)`` for the planar symbolic state `xbar`."""
    xbar = np.asarray(xbar, dtype=float).reshape(-1)[: ctrl.state_grid.dim]
    cell = ctrl.state_grid.cell(xbar)
    q = Mode(q)
    if not ctrl.winning[cell]:
        raise OutOfDomainError(f"state {xbar.tolist()} is outside the winning set")
    table = ctrl.stay_policy if q is Mode.STAY else ctrl.reach_policy
    inp = table[cell]
    if inp < 0:
        raise OutOfDomainError(f"no {q.value}-mode input defined at {xbar.tolist()}")
    return ctrl.input_centers[inp].copy(), ctrl._delta(cell, q)


def _pack(mask):
    return base64.b64encode(np.packbits(mask.astype(np.uint8)).tobytes()).decode("ascii")


def _unpack(text, size):
    bits = np.unpackbits(np.frombuffer(base64.b64decode(text), dtype=np.uint8))
    return bits[:size].astype(bool)


def controller_to_dict(ctrl):
    """JSON-ready export: grids, packed bitmaps and per-winning-cell tables."""
    win = ctrl.winning
    return {
        "state_grid": ctrl.state_grid.to_dict(),
        "input_grid": ctrl.input_grid.to_dict(),
        "cell_order": "row-major",
        "winning_bitmap": _pack(win),
        "invariant_bitmap": _pack(ctrl.invariant),
        "winning_size": int(win.sum()),
        "reach_policy": ctrl.reach_policy[win].tolist(),
        "stay_policy": ctrl.stay_policy[win].tolist(),
    }


def controller_from_dict(d):
    sg = Grid.from_dict(d["state_grid"])
    ig = Grid.from_dict(d["input_grid"])
    win = _unpack(d["winning_bitmap"], sg.size)
    inv = _unpack(d["invariant_bitmap"], sg.size)
    reach = np.full(sg.size, -1, dtype=np.int64)
    stay = np.full(sg.size, -1, dtype=np.int64)
    reach[win] = d["reach_policy"]
    stay[win] = d["stay_policy"]
    return SymbolicController(sg, ig, win, inv, reach, stay)
