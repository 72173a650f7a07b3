"""Command line driver: construct, evolve, compare and report.

    spherecollapse construct --config run.cfg [--out DIR]
    spherecollapse evolve    --config run.cfg [--out DIR]
    spherecollapse compare   --config run.cfg [--out DIR]
    spherecollapse report    --config run.cfg [--out DIR] [--strict]

Each stage reads what the previous one wrote into the output directory
(``--out``, else $SPHERECOLLAPSE_OUT, else the config's ``out`` key).
Exit codes: 0 ok, 2 configuration or missing input, 3 numerical failure,
4 threshold failure under ``report --strict``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, check_times, dump_config, load_config
from .construction import (
    ApproxSolution,
    Cutoff,
    ExpansionResult,
    construct,
    energy_limit,
    energy_quadrature,
    tune_q2,
)
from .diagnostics import (
    FrameParams,
    G_lyapunov,
    compare,
    fit_power_law,
    gradient_norm,
    kappa_projections,
    l4_norm4,
    pseudoconformal,
)
from .errors import ConfigError, MissingData, NumericalFailure, SphereCollapseError, UnderResolved
from .evolver import (
    EvolveControls,
    discrete_energy,
    discrete_mass,
    evolve,
    grid_for_width,
    read_checkpoint,
    reduce,
    write_checkpoint,
)
from .profiles import make_rho_grid
from .report import SUMMARY_SCHEMA, validate_summary, write_plots

log = logging.getLogger("spherecollapse")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_STRICT = 0, 2, 3, 4
ENV_OUT = "SPHERECOLLAPSE_OUT"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise MissingData(f"{path} not found; run the earlier stage first")
    return json.loads(path.read_text())


# ---------------------------------------------------------------------------
# construction snapshot


def write_snapshot(result: ExpansionResult, out: Path) -> None:
    lines = [
        f"# N={result.N}",
        f"# q2_input={_fmt(result.q2_input)}",
        f"# energy_target={'none' if result.energy_target is None else _fmt(result.energy_target)}",
        f"# rho_grid L={_fmt(result.grid.half_width)} n={result.grid.n} order={result.grid.order}",
        "j q_j omega_j",
    ]
    for j, (q, w) in enumerate(zip(result.q, result.omega)):
        lines.append(f"{j} {_fmt(q)} {_fmt(w)}")
    (out / "coefficients.txt").write_text("\n".join(lines) + "\n")
    ks = sorted(result.chi)
    with open(out / "chi.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["rho"] + [f"{part}_chi_{k}" for k in ks for part in ("re", "im")])
        cols = [result.grid.nodes] + [f(result.chi[k]) for k in ks for f in (np.real, np.imag)]
        for row in zip(*cols):
            wr.writerow([_fmt(x) for x in row])
    with open(out / "stages.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        names = ["k", "pairing_plus", "pairing_minus", "residual", "chi_norm", "parity_re", "parity_im", "orth_re", "orth_im"]
        wr.writerow(names)
        for st in result.stages:
            wr.writerow([st.k] + [_fmt(getattr(st, n)) for n in names[1:]])


def read_snapshot(out: Path) -> ExpansionResult:
    coef = out / "coefficients.txt"
    chi_path = out / "chi.csv"
    if not coef.exists() or not chi_path.exists():
        raise MissingData(f"no construction snapshot in {out}; run 'construct' first")
    meta = {}
    q, w = [], []
    for line in coef.read_text().splitlines():
        if line.startswith("#"):
            for kv in line[1:].split():
                if "=" in kv:
                    k, v = kv.split("=", 1)
                    meta[k] = v
        elif line and line[0].isdigit():
            _, a, b = line.split()
            q.append(float(a))
            w.append(float(b))
    grid = make_rho_grid(float(meta["L"]), int(meta["n"]), int(meta["order"]))
    with open(chi_path) as fh:
        header = next(csv.reader(fh))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[0] != grid.n:
        raise MissingData(f"{chi_path} has {data.shape[0]} rows, expected {grid.n}")
    chi = {}
    for i in range(1, len(header), 2):
        k = int(header[i].rsplit("_", 1)[1])
        chi[k] = data[:, i] + 1j * data[:, i + 1]
    target = meta.get("energy_target", "none")
    return ExpansionResult(
        N=int(meta["N"]),
        grid=grid,
        q=q,
        omega=w,
        chi=chi,
        q2_input=float(meta["q2_input"]),
        energy_target=None if target == "none" else float(target),
    )


def _approx(result: ExpansionResult, cfg: RunConfig) -> ApproxSolution:
    return ApproxSolution(result, Cutoff(*cfg.cutoff0), Cutoff(*cfg.cutoff1))


def _resolve_t0(approx: ApproxSolution, cfg: RunConfig) -> float:
    t0 = approx.t0(ratio=cfg.t0_ratio) if cfg.t0 == "runtime" else float(cfg.t0)
    check_times(cfg, t0)
    return t0


def _sample_times(cfg: RunConfig, t0: float) -> np.ndarray:
    ts = np.geomspace(cfg.eps, t0, cfg.samples)
    ts[0], ts[-1] = cfg.eps, t0
    return ts


# ---------------------------------------------------------------------------
# subcommands


def cmd_construct(cfg: RunConfig, out: Path) -> dict:
    grid = make_rho_grid(cfg.L, cfg.n, cfg.order)
    tols = dict(solvability_tol=cfg.solvability_tol, residual_tol=cfg.residual_tol)
    if cfg.q2 is None:
        tuned = tune_q2(cfg.e, cfg.N, grid, **tols)
        result, slope = tuned.result, tuned.slope
    else:
        result, slope = construct(cfg.N, grid, q2=cfg.q2, **tols), None
    approx = _approx(result, cfg)
    t0 = _resolve_t0(approx, cfg)
    write_snapshot(result, out)

    lo, hi = cfg.residual_window
    ts = np.geomspace(lo, hi, 12)
    norms = np.array([approx.residual_norms(t, 2) for t in ts])
    e_ts = np.geomspace(lo, hi, 8)
    e_vals = [energy_quadrature(approx, t) for t in e_ts]
    with open(out / "residual.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "H_L2", "t23_dr_H_L2", "t43_drr_H_L2"])
        for t, row in zip(ts, norms):
            wr.writerow([_fmt(t)] + [_fmt(x) for x in row])
    fits = [fit_power_law(ts, norms[:, k]) for k in range(3)]
    q0 = result.q[0]
    summary = {
        "N": result.N,
        "q0": q0,
        "lambda0": 1.0 / q0**2,
        "v0": q0 / 3.0,
        "q": result.q,
        "omega": result.omega,
        "q2": result.q[2],
        "q2_slope": slope,
        "energy_target": result.energy_target,
        "energy_limit": energy_limit(result),
        "energy_samples": {"t": list(e_ts), "E": e_vals},
        "k5_identity": list(result.k5_identity) if result.k5_identity else None,
        "template_defect_max": max(result.template_defect.values(), default=0.0),
        "max_pairing": max(max(s.pairing_plus, s.pairing_minus) for s in result.stages),
        "max_parity_defect": max(max(s.parity_re, s.parity_im) for s in result.stages),
        "t0": t0,
        "eps": cfg.eps,
        "residual_window": list(cfg.residual_window),
        "residual_exponents": [f.exponent for f in fits],
        "residual_target": (2 * result.N - 1) / 3.0,
    }
    _write_json(out / "construct.json", summary)
    (out / "config.used").write_text(dump_config(cfg))
    print(f"q0 = {_fmt(q0)}")
    for j, (q, w) in enumerate(zip(result.q, result.omega)):
        print(f"q_{j} = {_fmt(q)}  omega_{j} = {_fmt(w)}")
    print(f"t0 = {t0:.6g}; residual exponents " + ", ".join(f"{f.exponent:.4f}" for f in fits))
    return summary


def cmd_evolve(cfg: RunConfig, out: Path) -> dict:
    result = read_snapshot(out)
    if result.N != cfg.N:
        raise ConfigError(f"snapshot has N={result.N} but the config asks for N={cfg.N}")
    approx = _approx(result, cfg)
    t0 = _resolve_t0(approx, cfg)
    p = approx.params
    ts = _sample_times(cfg, t0)
    if cfg.direction == "backward":
        ts = ts[::-1]
    R = cfg.R if cfg.R is not None else max(4.0 * p.q(t) + 2.0 / p.lam(t) for t in ts)
    width = min(1.0 / p.lam(t) for t in ts)
    grid = grid_for_width(R, width, cfg.ppw, cfg.radial_order)
    state = reduce(approx.psi(ts[0], grid.r), grid, ts[0])
    sdir = out / "states"
    sdir.mkdir(exist_ok=True)
    for old in sdir.glob("state_*.csv"):
        old.unlink()
    states = [state]
    write_checkpoint(state, sdir / "state_000.csv")

    def keep(s):
        states.append(s)
        write_checkpoint(s, sdir / f"state_{len(states) - 1:03d}.csv")

    ctl = EvolveControls(c=cfg.c, checkpoint=keep)
    failure = None
    try:
        evolve(state, ts[1:], ctl)
    except UnderResolved as exc:
        failure = exc
    with open(out / "evolve.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "mass", "energy"])
        for s in states:
            wr.writerow([_fmt(s.t), _fmt(discrete_mass(s)), _fmt(discrete_energy(s))])
    m = [discrete_mass(s) for s in states]
    e = [discrete_energy(s) for s in states]
    psi0 = states[0].psi
    # E is a difference of two large terms near collapse; drift is also
    # reported against their sum
    scale = gradient_norm(psi0, grid) ** 2 + l4_norm4(psi0, grid)
    summary = {
        "direction": cfg.direction,
        "t_start": float(ts[0]),
        "t_end": float(ts[-1]),
        "reached": float(states[-1].t),
        "under_resolved": failure is not None,
        "samples": len(states),
        "grid": {"R": grid.R, "m": grid.m, "dr": grid.dr, "order": grid.order, "ppw": cfg.ppw},
        "c": cfg.c,
        "mass_drift": abs(m[-1] - m[0]) / m[0],
        "mass_drift_rate": abs(m[-1] - m[0]) / m[0] / max(abs(states[-1].t - states[0].t), 1e-300),
        "energy_drift": abs(e[-1] - e[0]) / (1.0 + abs(e[0])),
        "energy_drift_scaled": abs(e[-1] - e[0]) / scale,
        "energy_scale": scale,
    }
    _write_json(out / "evolve.json", summary)
    print(f"evolved {len(states) - 1} samples on m={grid.m} nodes (dr={grid.dr:.3e}), reached t={states[-1].t:.6g}")
    if failure is not None:
        raise failure
    return summary


TIMESERIES_COLUMNS = [
    "t", "mass", "energy", "momentum", "grad_norm", "x_norm", "peak_r",
    "h_L2", "h_H1", "xh_L2", "X1_h", "X2_h", "X1_ratio", "G",
    "kappa0", "kappa1", "kappa2", "kappa3", "f1_norm", "sigma", "l4_4",
]


def _states(out: Path):
    files = sorted((out / "states").glob("state_*.csv"))
    if not files:
        raise MissingData(f"no evolved states in {out / 'states'}; run 'evolve' first")
    return [read_checkpoint(f) for f in files]


def cmd_compare(cfg: RunConfig, out: Path) -> list[dict]:
    result = read_snapshot(out)
    approx = _approx(result, cfg)
    p = approx.params
    N = result.N
    rows = []
    for s in _states(out):
        grid, t = s.grid, s.t
        # psi^(N) pushed through the same w = r psi representation as the state
        psi_n = (grid.r * approx.psi(t, grid.r)) / grid.r
        psi = s.psi
        q = p.q(t)
        rep = compare(psi, psi_n, t, grid, q, approx.cutoff1)
        fp = FrameParams.from_functions(p, t)
        kap = kappa_projections(psi - psi_n, grid, fp, result.grid, approx.cutoff1)
        sigma, l44 = pseudoconformal(psi, grid, t)
        row = rep.as_dict()
        row.update(
            peak_r=float(grid.r[np.argmax(np.abs(psi))]),
            X1_ratio=rep.X1_h / t ** (2.0 * N / 3.0),
            G=G_lyapunov(psi, psi_n, grid, fp, approx.cutoff1),
            f1_norm=kap.f1_norm,
            sigma=sigma,
            l4_4=l44,
        )
        for j in range(4):
            row[f"kappa{j}"] = kap.kappa[j]
        rows.append(row)
    with open(out / "timeseries.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(TIMESERIES_COLUMNS)
        for row in rows:
            wr.writerow([_fmt(row[c]) for c in TIMESERIES_COLUMNS])
    print(f"compared {len(rows)} samples; final ||h||_X1 = {rows[-1]['X1_h']:.4e}")
    return rows


def _read_timeseries(out: Path) -> dict[str, np.ndarray]:
    path = out / "timeseries.csv"
    if not path.exists():
        raise MissingData(f"{path} not found; run 'evolve' and 'compare' first")
    with open(path) as fh:
        header = next(csv.reader(fh))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return {name: data[:, i] for i, name in enumerate(header)}


def kappa_trend_check(t: np.ndarray, kappa: np.ndarray, exponent: float, factor: float = 3.0) -> tuple[bool, float]:
    """Fit |kappa| ~ C t^exponent (exponent fixed, C by log least squares) and
    report whether every sample stays within ``factor`` of the trend."""
    mask = kappa > 0
    if mask.sum() < 2:
        return True, 0.0
    logc = np.mean(np.log(kappa[mask]) - exponent * np.log(t[mask]))
    ratio = kappa[mask] / (math.exp(logc) * t[mask] ** exponent)
    worst = float(np.max(ratio))
    return bool(worst <= factor), worst


def cmd_report(cfg: RunConfig, out: Path) -> dict:
    con = _read_json(out / "construct.json")
    evo = _read_json(out / "evolve.json")
    ts = _read_timeseries(out)
    N = int(con["N"])
    t = ts["t"]
    try:
        grad = fit_power_law(t, ts["grad_norm"])
        var = fit_power_law(t, ts["x_norm"])
        peak = fit_power_law(t, ts["peak_r"])
    except ValueError as exc:  # e.g. a run stopped early by UnderResolved
        raise MissingData(f"{out / 'timeseries.csv'} cannot support rate fits: {exc}") from None
    kap = np.max(np.abs(np.vstack([ts[f"kappa{j}"] for j in range(4)])), axis=0)
    k_ok, k_worst = kappa_trend_check(t[1:], kap[1:], (2 * N + 1) / 3.0)
    d_sigma = np.gradient(ts["sigma"], t, edge_order=2)
    pc = np.abs(d_sigma[1:-1] - 2.0 * t[1:-1] * ts["l4_4"][1:-1]) / np.abs(2.0 * t[1:-1] * ts["l4_4"][1:-1])
    h0 = max(ts["h_L2"][0], ts["X1_h"][0], abs(ts["G"][0]))
    checks = {  # plain bools for the JSON schema
        "q0": abs(con["q0"] - 12.0 ** (1.0 / 6.0)) <= 1e-10,
        "residual_exponents": all(x >= con["residual_target"] - 0.1 for x in con["residual_exponents"]),
        "gradient_exponent": -0.73 <= grad.exponent <= -0.60,
        "mass_drift": evo["mass_drift"] <= 1e-8,
        "energy_drift": evo["energy_drift_scaled"] <= 1e-6,
        "h_zero_at_eps": h0 == 0.0 and float(kap[0]) == 0.0,
        "X1_ratio_finite": bool(np.all(np.isfinite(ts["X1_ratio"]))),
        "kappa_trend": k_ok,
        "pseudoconformal": bool(np.max(pc) <= 0.05),
    }
    if con.get("energy_target") is not None:
        checks["energy_limit"] = abs(con["energy_limit"] - con["energy_target"]) <= 1e-3
    checks = {k: bool(v) for k, v in checks.items()}
    summary = {
        "version": __version__,
        "N": N,
        "eps": float(t[0]),
        "t_end": float(t[-1]),
        "t0": con["t0"],
        "q0": con["q0"],
        "q2": con["q2"],
        "energy_limit": con["energy_limit"],
        "energy_target": con.get("energy_target"),
        "residual_exponents": con["residual_exponents"],
        "fits": {
            "gradient": {"exponent": grad.exponent, "amplitude": grad.amplitude, "residual": grad.residual},
            "variance": {"exponent": var.exponent, "amplitude": var.amplitude, "residual": var.residual},
            "peak_radius": {"exponent": peak.exponent, "amplitude": peak.amplitude, "residual": peak.residual},
        },
        "mass_drift": evo["mass_drift"],
        "mass_drift_rate": evo["mass_drift_rate"],
        "energy_drift": evo["energy_drift"],
        "energy_drift_scaled": evo["energy_drift_scaled"],
        "sup_X1_ratio": float(np.max(ts["X1_ratio"])),
        "kappa_trend_worst": k_worst,
        "pseudoconformal_max_defect": float(np.max(pc)),
        "G_min": float(np.min(ts["G"])),
        "checks": checks,
        "passed": all(checks.values()),
    }
    validate_summary(summary)
    _write_json(out / "summary.json", summary)
    write_plots(out, N, ts, states_dir=out / "states")
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return summary


COMMANDS = {"construct": cmd_construct, "evolve": cmd_evolve, "compare": cmd_compare, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spherecollapse", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="key = value run configuration")
    ap.add_argument("--out", help=f"output directory (overrides ${ENV_OUT} and the config)")
    ap.add_argument("--strict", action="store_true", help="report: exit 4 if any check fails")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        out = Path(args.out or os.environ.get(ENV_OUT) or cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        res = COMMANDS[args.command](cfg, out)
    except (ConfigError, MissingData) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnderResolved as exc:
        where = "" if exc.reached_time is None else f" (reached t={exc.reached_time:.6g})"
        print(f"numerical failure: {exc}{where}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NumericalFailure, SphereCollapseError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if args.command == "report" and args.strict and not res["passed"]:
        return EXIT_STRICT
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
