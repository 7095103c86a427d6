"""Matplotlib renderings of the simulation plot data (PNG, Agg backend)."""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

golden_mean = (5 ** 0.5 - 1.0) / 2.0

params = {
    "font.family": "serif",
    "font.size": 8,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.0,
    "figure.dpi": 150,
    "svg.hashsalt": "certkit",
}


def _save(fig, path):
    # Software metadata dropped so reruns are byte-identical
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".png")
    os.close(fd)
    try:
        fig.savefig(tmp, format="png", metadata={"Software": None})
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if os.path.exists(tmp):
            os.unlink(tmp)


def plot_zone_temperatures(header, rows, path, target=None):
    """Zone-1 vs zone-2 trajectories of the three controlled loops."""
    cols = {h: [r[i] for r in rows] for i, h in enumerate(header)}
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(4.5, 4.5 * golden_mean * 1.3))
        if target is not None:
            (lo1, lo2), (hi1, hi2) = target
            ax.add_patch(plt.Rectangle((lo1, lo2), hi1 - lo1, hi2 - lo2, color="0.85", zorder=0,
                                       label="target"))
        ax.plot(cols["zbar1"], cols["zbar2"], "b-", label="ideal (state feedback)")
        ax.plot(cols["z1_feedforward"], cols["z2_feedforward"], "r-o", ms=2, markevery=5,
                label="feedforward")
        ax.plot(cols["z1_sensor_based"], cols["z2_sensor_based"], "-x", color="0.4", ms=3,
                markevery=5, label="observer-based")
        ax.set_xlabel(r"$x_1$ (zone 1, $^\circ$C)")
        ax.set_ylabel(r"$x_2$ (zone 2, $^\circ$C)")
        ax.legend(loc="lower right")
        fig.tight_layout()
        _save(fig, path)


def plot_estimation(err_header, err_rows, amb_header, amb_rows, path):
    """Upper: state-estimation error per component; lower: ambient deviation."""
    with plt.rc_context(params):
        fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(4.0, 3.2))
        t = [r[0] for r in err_rows]
        for i, name in enumerate(err_header[1:], start=1):
            top.plot(t, [r[i] for r in err_rows], label=f"$x_{i}$")
        top.set_ylabel(r"$x - \hat x$")
        top.legend(ncol=3)
        bottom.plot([r[0] for r in amb_rows], [r[1] for r in amb_rows], "b-")
        bottom.set_ylabel(f"${amb_header[1][0]}_{amb_header[1][1:]}$")
        bottom.set_xlabel("time step")
        fig.tight_layout()
        _save(fig, path)
