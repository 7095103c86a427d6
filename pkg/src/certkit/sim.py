"""Seeded closed-loop simulation and empirical precision estimates."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NoiseSource",
    "Trajectory",
    "MonteCarloSummary",
    "simulate",
    "empirical_epsilon",
    "monte_carlo",
    "thread_cap",
]


class NoiseSource:
    """Standard-normal stream keyed by ``(seed, stream)``.

    Backed by numpy's counter-based Philox bit generator; the stream id is
    mixed in through the seed sequence's spawn key so streams are
    statistically independent.
    """

    def __init__(self, seed, stream=0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def normals(self, size):
        return self._gen.standard_normal(size)


@dataclass(eq=False)
class Trajectory:
    """Per-step record of a closed-loop run, ``horizon + 1`` rows."""

    t: np.ndarray
    xbar: np.ndarray
    q: list
    xhat: np.ndarray
    x: np.ndarray
    ubar: np.ndarray
    u: np.ndarray
    y: np.ndarray
    z: np.ndarray
    zbar: np.ndarray
    seed: int = None
    stream: int = None

    @property
    def dev(self):
        return np.linalg.norm(self.z - self.zbar, axis=1)

    def __len__(self):
        return len(self.t)

    def header(self):
        def cols(name, k):
            return [f"{name}{i + 1}" for i in range(k)]

        return (
            ["t"] + cols("xbar", self.xbar.shape[1]) + ["q"]
            + cols("xhat", self.xhat.shape[1]) + cols("x", self.x.shape[1])
            + cols("ubar", self.ubar.shape[1]) + cols("u", self.u.shape[1])
            + cols("y", self.y.shape[1]) + cols("z", self.z.shape[1])
            + cols("zbar", self.zbar.shape[1]) + ["dev"]
        )

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.header())
        dev = self.dev
        fmt = lambda row: [f"{v:.9g}" for v in row]
        for k in range(len(self)):
            w.writerow(
                [int(self.t[k])] + fmt(self.xbar[k]) + [str(self.q[k])]
                + fmt(self.xhat[k]) + fmt(self.x[k]) + fmt(self.ubar[k])
                + fmt(self.u[k]) + fmt(self.y[k]) + fmt(self.z[k])
                + fmt(self.zbar[k]) + [f"{dev[k]:.9g}"]
            )


def simulate(cls, horizon, noise):
    """Run the closed loop for `horizon` steps from its initial state.

    Draws, in order: an initial-state perturbation (only when ``P0 != 0``),
    then per step the ``d1`` process-noise values followed by the ``d2``
    measurement-noise values.  Returns ``horizon + 1`` records.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    m = cls.plant
    x0 = None
    if np.any(m.P0):
        evals, evecs = np.linalg.eigh(m.P0)
        root = evecs * np.sqrt(np.clip(evals, 0.0, None))
        x0 = cls.x0 + root @ noise.normals(m.n)
    cls.reset(x0)
    w = noise.normals((horizon + 1, m.d1 + m.d2))
    recs = [cls.step(w[k, : m.d1], w[k, m.d1 :]) for k in range(horizon + 1)]
    stack = lambda name: np.array([getattr(r, name) for r in recs])
    return Trajectory(
        t=stack("t"),
        xbar=stack("xbar"),
        q=[getattr(r.q, "value", r.q) for r in recs],
        xhat=stack("xhat"),
        x=stack("x"),
        ubar=stack("ubar"),
        u=stack("u"),
        y=stack("y"),
        z=stack("z"),
        zbar=stack("zbar"),
        seed=noise.seed,
        stream=noise.stream,
    )


def empirical_epsilon(trajs, t_lo, t_hi):
    """Root-mean-square of ``||z - zbar||`` over runs and ``t_lo <= t < t_hi``."""
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    trajs = list(trajs)
    if not trajs or t_hi <= t_lo or t_lo < 0:
        raise ValueError("empty run set or time window")
    if any(t_hi > len(tr) for tr in trajs):
        raise ValueError(f"window end {t_hi} beyond trajectory length")
    sq = np.concatenate([tr.dev[t_lo:t_hi] ** 2 for tr in trajs])
    return float(np.sqrt(sq.mean()))


@dataclass(eq=False)
class MonteCarloSummary:
    base_seed: int
    streams: list
    mean_dev: np.ndarray
    max_dev: np.ndarray
    std_dev: np.ndarray
    run_eps: dict = field(default_factory=dict)
    trajectories: list = field(default_factory=list, repr=False)

    @property
    def n_runs(self):
        return len(self.streams)

    def pooled_epsilon(self, t_lo, t_hi):
        return empirical_epsilon(self.trajectories, t_lo, t_hi)

    def to_dict(self):
        return {
            "base_seed": self.base_seed,
            "n_runs": self.n_runs,
            "streams": list(self.streams),
            "run_eps": {k: list(v) for k, v in self.run_eps.items()},
        }


def thread_cap():
    """Worker count from ``CERTKIT_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("CERTKIT_THREADS", "1")))
    except ValueError:
        return 1


def _run(args):
    cls, horizon, seed, stream = args
    return simulate(cls, horizon, NoiseSource(seed, stream))


def monte_carlo(cls, horizon, n_runs, base_seed, windows=None, workers=None):
    """Independent runs on streams ``0..n_runs-1`` of `base_seed`.

    `windows` maps a label to a ``(t_lo, t_hi)`` pair; each run's
    single-realization estimate over that window is stored in ``run_eps``.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    workers = thread_cap() if workers is None else workers
    jobs = [(cls, horizon, base_seed, s) for s in range(n_runs)]
    if workers > 1 and n_runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(_run, jobs))
    else:
        trajs = [_run(job) for job in jobs]
    devs = np.array([tr.dev for tr in trajs])
    run_eps = {
        label: [empirical_epsilon(tr, lo, hi) for tr in trajs]
        for label, (lo, hi) in (windows or {}).items()
    }
    return MonteCarloSummary(
        base_seed=base_seed,
        streams=list(range(n_runs)),
        mean_dev=devs.mean(axis=0),
        max_dev=devs.max(axis=0),
        std_dev=devs.std(axis=0, ddof=1) if n_runs > 1 else np.zeros(devs.shape[1]),
        run_eps=run_eps,
        trajectories=trajs,
    )
