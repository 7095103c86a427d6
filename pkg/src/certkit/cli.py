"""``certkit`` command line: gains, synth, certify, simulate, casestudy.

Exit codes: 0 success, 1 usage/config error, 2 solver or stability
failure, 3 synthesis infeasible, 4 simulation failure, 5 case-study
acceptance check failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import report
from .accuracy import certify_deterministic, certify_stochastic, initial_block
from .errors import (
    CertkitError,
    ConvergenceError,
    InstabilityError,
    OutOfDomainError,
    SingularityError,
    SynthesisInfeasible,
)
from .matops import as_matrix, spectral_radius
from .model import PRESETS, load_model, noiseless, planar_submodel
from .refine import InterfaceFn, Observer, compose_closed_loop
from .sim import monte_carlo
from .symbolic import (
    Grid,
    ReachStaySpec,
    abstract,
    controller_from_dict,
    controller_to_dict,
    synthesize_reach_stay,
)

log = logging.getLogger("certkit")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_INFEASIBLE, EXIT_SIM, EXIT_ACCEPT = 0, 1, 2, 3, 4, 5


class UsageError(CertkitError):
    pass


@dataclass
class RunConfig:
    """Everything a run depends on; JSON-loadable, flag-overridable."""

    preset: str = "building"
    model: str = None
    state_grid: dict = field(default_factory=lambda: {"lower": [14.0, 14.0], "upper": [25.0, 25.0], "eta": [0.25, 0.25]})
    input_grid: dict = field(default_factory=lambda: {"lower": [10.0, 10.0], "upper": [30.0, 30.0], "eta": [1.0, 1.0]})
    target: dict = field(default_factory=lambda: {"lower": [20.5, 20.5], "upper": [21.0, 21.0]})
    gains: object = "kalman_lq"
    D_H: list = None
    interface: str = "sensor_based"
    regime: str = "stochastic"
    witness: str = "min_trace"
    xhat0: list = field(default_factory=lambda: [16.0, 16.0, 0.0])
    xbar0: list = None
    controller: str = None
    horizon: int = 4000
    n_runs: int = 32
    base_seed: int = 0
    out: str = "certkit-out"
    figures: bool = True

    @classmethod
    def load(cls, path=None, **overrides):
        data = {}
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise UsageError(f"config file {path} not found")
            data = json.loads(p.read_text(encoding="utf-8"))
            unknown = set(data) - {f.name for f in fields(cls)}
            if unknown:
                raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
        cfg.validate()
        return cfg

    def validate(self):
        if self.model is not None and not Path(self.model).is_file():
            raise UsageError(f"model file {self.model} not found")
        if self.model is None and self.preset not in PRESETS:
            raise UsageError(f"unknown preset {self.preset!r}; known: {sorted(PRESETS)}")
        if self.horizon < 1 or self.n_runs < 1:
            raise UsageError("horizon and n_runs must be positive")
        if self.interface not in ("sensor_based", "feedforward"):
            raise UsageError(f"unknown interface {self.interface!r}")
        if self.regime not in ("stochastic", "deterministic"):
            raise UsageError(f"unknown regime {self.regime!r}")

    def plant(self):
        return load_model(self.model) if self.model else PRESETS[self.preset]()


def _gains(cfg, m):
    """Return (K, L, info) for the configured gain mode."""
    if cfg.gains == "kalman_lq":
        P, L, rep_l = m.kalman_gain()
        D_H = None if cfg.D_H is None else np.asarray(cfg.D_H, dtype=float)
        S, K, rep_k = m.lq_gain(D_H)
        info = {"P": P, "S": S, "kalman_report": rep_l.to_dict(), "lq_report": rep_k.to_dict()}
    elif isinstance(cfg.gains, dict) and {"K", "L"} <= set(cfg.gains):
        K = as_matrix(cfg.gains["K"], "K", shape=(m.m, m.n))
        L = as_matrix(cfg.gains["L"], "L", shape=(m.n, m.p))
        info = {}
    else:
        raise UsageError("gains must be 'kalman_lq' or an object with explicit 'K' and 'L'")
    for name, blk in (("A-LC", m.A - L @ m.C), ("A-BK", m.A - m.B @ K)):
        rho = spectral_radius(blk)
        if rho >= 1:
            raise InstabilityError(f"rho({name}) = {rho:.6g} >= 1", radius=rho)
    info["rho_A_LC"] = spectral_radius(m.A - L @ m.C)
    info["rho_A_BK"] = spectral_radius(m.A - m.B @ K)
    return K, L, info


def _synth(cfg, m):
    sg = Grid(**cfg.state_grid)
    ig = Grid(**cfg.input_grid)
    abs_ = abstract(planar_submodel(noiseless(m)), sg, ig)
    return synthesize_reach_stay(abs_, ReachStaySpec(cfg.target["lower"], cfg.target["upper"]))


def _controller(cfg, m):
    if cfg.controller is not None:
        p = Path(cfg.controller)
        if not p.is_file():
            raise UsageError(f"controller file {cfg.controller} not found")
        return controller_from_dict(json.loads(p.read_text(encoding="utf-8")))
    return _synth(cfg, m)


def _xbar0(cfg, m):
    return np.asarray(cfg.xbar0 if cfg.xbar0 is not None else cfg.xhat0[:2], dtype=float)


def _certificate(cfg, m, K, L, interface):
    K_used = K if interface == "sensor_based" else None
    if cfg.regime == "deterministic":
        Q0 = initial_block(m, _xbar0(cfg, m), cfg.xhat0, "deterministic")
        return certify_deterministic(m, K_used, L, Q0, witness=cfg.witness)
    return certify_stochastic(m, K_used, L, _xbar0(cfg, m), cfg.xhat0, witness=cfg.witness)


def cmd_gains(cfg):
    m = cfg.plant()
    K, L, info = _gains(cfg, m)
    out = {"K": K, "L": L, **info}
    print(f"rho(A-LC) = {info['rho_A_LC']:.6f}")
    print(f"rho(A-BK) = {info['rho_A_BK']:.6f}")
    report.write_json(Path(cfg.out) / "gains.json", out)
    return EXIT_OK


def cmd_synth(cfg):
    m = cfg.plant()
    ctrl = _synth(cfg, m)
    xbar0 = _xbar0(cfg, m)
    data = controller_to_dict(ctrl)
    print(f"winning cells: {data['winning_size']} of {ctrl.state_grid.size}")
    print(f"invariant cells: {int(ctrl.invariant.sum())}")
    print(f"initial state {xbar0.tolist()} winning: {ctrl.is_winning(xbar0)}")
    report.write_json(Path(cfg.out) / "controller.json", data)
    return EXIT_OK


def cmd_certify(cfg):
    m = cfg.plant()
    K, L, _ = _gains(cfg, m)
    cert = _certificate(cfg, m, K, L, cfg.interface)
    print(f"{cert.regime} / {cert.interface}: eps_x0 = {cert.eps_x0:.4f}  "
          f"eps_inf = {cert.eps_inf:.4f}  (moment sup {cert.eps_sup:.4f})")
    report.write_json(Path(cfg.out) / f"certificate_{cfg.interface}.json", cert.to_dict())
    return EXIT_OK


def _closed_loop(cfg, m, ctrl, K, L, interface):
    ifc = InterfaceFn.sensor_based(K) if interface == "sensor_based" else InterfaceFn.feedforward()
    return compose_closed_loop(m, ctrl, Observer(L, cfg.xhat0), ifc, xbar0=_xbar0(cfg, m))


WINDOWS = {"x0_100": (1, 101), "inf": (100, 4000)}


def _windows(horizon):
    return {k: (lo, min(hi, horizon + 1)) for k, (lo, hi) in WINDOWS.items() if lo < min(hi, horizon + 1)}


def _simulate(cfg, m, ctrl, K, L, interface):
    cls = _closed_loop(cfg, m, ctrl, K, L, interface)
    return monte_carlo(cls, cfg.horizon, cfg.n_runs, cfg.base_seed, windows=_windows(cfg.horizon))


def _plot_files(out, sims, ctrl_target, figures, t_max=210):
    sb, ff = sims["sensor_based"].trajectories[0], sims["feedforward"].trajectories[0]
    h, rows = report.zone_plot_data(sb, sb, ff, t_max)
    report.atomic_write_text(out / "plot_zone_temperatures.csv", report.csv_text(h, rows))
    eh, erows = report.estimation_error_plot_data(sb, t_max)
    report.atomic_write_text(out / "plot_estimation_error.csv", report.csv_text(eh, erows))
    ah, arows = report.ambient_plot_data(sb, t_max)
    report.atomic_write_text(out / "plot_ambient_deviation.csv", report.csv_text(ah, arows))
    if figures:
        from . import plotting

        plotting.plot_zone_temperatures(h, rows, out / "fig_zone_temperatures.png", ctrl_target)
        plotting.plot_estimation(eh, erows, ah, arows, out / "fig_estimation.png")


def cmd_simulate(cfg):
    m = cfg.plant()
    ctrl = _controller(cfg, m)
    K, L, _ = _gains(cfg, m)
    out = Path(cfg.out)
    mc = _simulate(cfg, m, ctrl, K, L, cfg.interface)
    summary = mc.to_dict()
    summary.update(interface=cfg.interface, horizon=cfg.horizon,
                   pooled_eps={k: mc.pooled_epsilon(*w) for k, w in _windows(cfg.horizon).items()})
    for tr in mc.trajectories:
        report.atomic_write_text(out / "runs" / f"run_{tr.stream:03d}.csv", report.trajectory_csv(tr))
    k = min(210, cfg.horizon) + 1
    mean_rows = [[i, mc.mean_dev[i], mc.max_dev[i]] for i in range(len(mc.mean_dev))]
    report.atomic_write_text(out / "deviation_stats.csv",
                             report.csv_text(["t", "mean_dev", "max_dev"], mean_rows))
    tr = mc.trajectories[0]
    eh, erows = report.estimation_error_plot_data(tr, k - 1)
    report.atomic_write_text(out / "plot_estimation_error.csv", report.csv_text(eh, erows))
    report.write_json(out / "summary.json", summary)
    for key, val in summary["pooled_eps"].items():
        print(f"pooled eps_hat[{key}] = {val:.4f}")
    return EXIT_OK


def run_casestudy(cfg):
    """Full reproduction; returns (table, checks, artifacts)."""
    m = cfg.plant()
    checks = []

    notes = []

    def check(name, ok, detail):
        checks.append({"criterion": name, "pass": bool(ok), "detail": detail})

    t0 = time.perf_counter()
    K, L, info = _gains(cfg, m)
    L_pub = np.array([[0.5201, 0.0333], [-0.2239, 0.0262], [0.0022, 0.8196]])
    K_pub = np.array([[13.4231, 0.9615, 0.5769], [1.0417, 14.6250, 0.4167]])
    gl, gk = float(np.abs(L - L_pub).max()), float(np.abs(K - K_pub).max())
    check("gains", gl <= 1e-3 and gk <= 1e-3, f"max |L-L_pub| = {gl:.2e}, max |K-K_pub| = {gk:.2e}")

    ctrl = _synth(cfg, m)
    xbar0 = _xbar0(cfg, m)
    check("synthesis", ctrl.is_winning(xbar0) and ctrl.is_winning(m.x0[:2]),
          f"{int(ctrl.winning.sum())} winning cells; xbar0 and x0 cells winning")

    certs = {i: _certificate(replace(cfg, regime="stochastic"), m, K, L, i) for i in ("sensor_based", "feedforward")}
    sims = {i: _simulate(cfg, m, ctrl, K, L, i) for i in certs}

    table = {}
    for iface, cert in certs.items():
        mc = sims[iface]
        row = {"eps_x0": cert.eps_x0, "eps_inf": cert.eps_inf, "eps_sup": cert.eps_sup}
        row["eps_hat_x0_100"] = mc.run_eps["x0_100"][0]
        row["eps_hat_inf"] = mc.run_eps["inf"][0] if "inf" in mc.run_eps else float("nan")
        row["pooled"] = {k: mc.pooled_epsilon(*w) for k, w in _windows(cfg.horizon).items()}
        row["pooled"] = {"eps_hat_x0_100": row["pooled"].get("x0_100"),
                         "eps_hat_inf": row["pooled"].get("inf", float("nan"))}
        table[iface] = row

    for iface, eps_inf_pub, eps_x0_pub in (("sensor_based", 0.1284, 2.1194), ("feedforward", 0.4890, 3.9618)):
        r = table[iface]
        check(f"eps_inf[{iface}]", abs(r["eps_inf"] - eps_inf_pub) <= 0.005,
              f"{r['eps_inf']:.4f} vs {eps_inf_pub}")
        check(f"eps_x0[{iface}]", abs(r["eps_x0"] - eps_x0_pub) <= 0.1 * eps_x0_pub,
              f"{r['eps_x0']:.4f} vs {eps_x0_pub} (moment sup {r['eps_sup']:.4f})")
        if abs(r["eps_sup"] - eps_x0_pub) > 0.1 * eps_x0_pub:
            notes.append(
                f"eps_x0[{iface}]: moment-recursion supremum {r['eps_sup']:.4f} is "
                f"{100 * abs(r['eps_sup'] / eps_x0_pub - 1):.1f}% from the published {eps_x0_pub}; "
                f"the reported eps_x0 is the least-trace certificate ({r['eps_x0']:.4f})"
            )
        pooled = r["pooled"]["eps_hat_inf"]
        check(f"eps_hat_inf[{iface}]", abs(pooled - r["eps_inf"]) <= 0.1 * r["eps_inf"],
              f"pooled {pooled:.4f} vs analytic {r['eps_inf']:.4f}")
    for col in report.TABLE_COLUMNS:
        sb, ff = table["sensor_based"][col], table["feedforward"][col]
        check(f"ordering[{col}]", sb < ff, f"{sb:.4f} < {ff:.4f}")
    if "inf" in sims["sensor_based"].run_eps:
        per_seed = all(a < b for a, b in zip(sims["sensor_based"].run_eps["inf"], sims["feedforward"].run_eps["inf"]))
        check("ordering[per_seed]", per_seed, "sensor-based below feedforward in every seed's window")
    elapsed = time.perf_counter() - t0
    return table, checks, {"notes": notes, "certs": certs, "sims": sims, "ctrl": ctrl, "K": K, "L": L, "elapsed": elapsed}


def cmd_casestudy(cfg):
    table, checks, art = run_casestudy(cfg)
    log.info("case study computed in %.1f s", art["elapsed"])
    out = Path(cfg.out)
    report.atomic_write_text(out / "table1.csv", report.table_csv(table))
    report.atomic_write_text(out / "table1.txt", report.format_table(table) + "\n")
    report.write_json(out / "gains.json", {"K": art["K"], "L": art["L"]})
    report.write_json(out / "controller.json", controller_to_dict(art["ctrl"]))
    for iface, cert in art["certs"].items():
        report.write_json(out / f"certificate_{iface}.json", cert.to_dict())
    report.write_json(out / "acceptance.json", {"checks": checks, "notes": art["notes"]})
    target = (cfg.target["lower"], cfg.target["upper"])
    _plot_files(out, art["sims"], target, cfg.figures)
    print(report.format_table(table))
    print()
    for c in checks:
        print(f"[{'PASS' if c['pass'] else 'FAIL'}] {c['criterion']}: {c['detail']}")
    for note in art["notes"]:
        print(f"[NOTE] {note}")
    failed = [c for c in checks if not c["pass"]]
    if failed:
        print(f"first failed criterion: {failed[0]['criterion']}", file=sys.stderr)
        return EXIT_ACCEPT
    return EXIT_OK


COMMANDS = {
    "gains": cmd_gains,
    "synth": cmd_synth,
    "certify": cmd_certify,
    "simulate": cmd_simulate,
    "casestudy": cmd_casestudy,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="certkit", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--preset", help="built-in model name (default: building)")
    ap.add_argument("--model", help="JSON model file")
    ap.add_argument("--controller", help="controller JSON from 'certkit synth'")
    ap.add_argument("--interface", choices=["sensor_based", "feedforward"])
    ap.add_argument("--regime", choices=["stochastic", "deterministic"])
    ap.add_argument("--witness", choices=["min_trace", "scaled"])
    ap.add_argument("--horizon", type=int)
    ap.add_argument("--runs", dest="n_runs", type=int)
    ap.add_argument("--seed", dest="base_seed", type=int)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--no-figures", dest="figures", action="store_const", const=False)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = RunConfig.load(args.config, **overrides)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SynthesisInfeasible as exc:
        print(f"synthesis infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InstabilityError, ConvergenceError, SingularityError) as exc:
        payload = getattr(exc, "report", None)
        print(f"solver failure: {exc}", file=sys.stderr)
        if payload is not None:
            print(report.dumps(payload.to_dict()), file=sys.stderr, end="")
        return EXIT_SOLVER
    except (OutOfDomainError, CertkitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIM if args.command == "simulate" else EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
