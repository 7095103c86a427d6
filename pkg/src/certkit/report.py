"""File outputs: atomic writers, the precision table and plot-data CSVs."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

# published values for the two-zone building, used only for side-by-side reporting
PAPER_TABLE = {
    "feedforward": {"eps_x0": 3.9618, "eps_inf": 0.4890, "eps_hat_x0_100": 1.9961, "eps_hat_inf": 0.4845},
    "sensor_based": {"eps_x0": 2.1194, "eps_inf": 0.1284, "eps_hat_x0_100": 0.5184, "eps_hat_inf": 0.1240},
}
TABLE_COLUMNS = ["eps_x0", "eps_inf", "eps_hat_x0_100", "eps_hat_inf"]


def atomic_write_text(path, text):
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def write_json(path, obj):
    atomic_write_text(path, dumps(obj))


def csv_text(header, rows, fmt="{:.9g}"):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt.format(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def trajectory_csv(traj):
    buf = io.StringIO()
    traj.write_csv(buf)
    return buf.getvalue()


def table_rows(table):
    """Rows ``(interface, source, col...)`` for computed and published values."""
    rows = []
    for iface in ("feedforward", "sensor_based"):
        for source, values in (
            ("analytic+single_seed", table[iface]),
            ("pooled_seeds", table[iface].get("pooled", {})),
            ("published", PAPER_TABLE[iface]),
        ):
            if not values:
                continue
            rows.append([iface, source] + [float(values[c]) if c in values else "" for c in TABLE_COLUMNS])
    return rows


def table_csv(table):
    return csv_text(["interface", "source"] + TABLE_COLUMNS, table_rows(table), fmt="{:.4f}")


def format_table(table):
    head = f"{'interface':<14}{'source':<22}" + "".join(f"{c:>16}" for c in TABLE_COLUMNS)
    lines = [head, "-" * len(head)]
    for row in table_rows(table):
        cells = "".join(f"{v:>16.4f}" if isinstance(v, float) else f"{v:>16}" for v in row[2:])
        lines.append(f"{row[0]:<14}{row[1]:<22}{cells}")
    return "\n".join(lines)


def zone_plot_data(ideal, sensor, feedforward, t_max):
    """Zone temperatures of the ideal, sensor-based and feedforward loops."""
    k = min(t_max + 1, len(ideal))
    header = ["t", "zbar1", "zbar2", "z1_sensor_based", "z2_sensor_based", "z1_feedforward", "z2_feedforward"]
    rows = [
        [int(ideal.t[i])] + list(ideal.zbar[i]) + list(sensor.z[i]) + list(feedforward.z[i])
        for i in range(k)
    ]
    return header, rows


def estimation_error_plot_data(traj, t_max):
    k = min(t_max + 1, len(traj))
    err = traj.x - traj.xhat
    n = err.shape[1]
    header = ["t"] + [f"e{i + 1}" for i in range(n)]
    return header, [[int(traj.t[i])] + list(err[i]) for i in range(k)]


def ambient_plot_data(traj, t_max, index=2):
    k = min(t_max + 1, len(traj))
    return ["t", f"x{index + 1}"], [[int(traj.t[i]), traj.x[i, index]] for i in range(k)]
