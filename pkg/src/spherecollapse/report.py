"""Summary schema and SVG figures for the ``report`` subcommand."""
from __future__ import annotations

from pathlib import Path

import jsonschema
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evolver import read_checkpoint  # noqa: E402

_num = {"type": "number"}
_fit = {
    "type": "object",
    "required": ["exponent", "amplitude", "residual"],
    "properties": {"exponent": _num, "amplitude": _num, "residual": _num},
}

SUMMARY_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "spherecollapse run summary",
    "type": "object",
    "required": [
        "version", "N", "eps", "t_end", "t0", "q0", "q2", "energy_limit", "residual_exponents",
        "fits", "mass_drift", "mass_drift_rate", "energy_drift", "energy_drift_scaled", "sup_X1_ratio",
        "kappa_trend_worst", "pseudoconformal_max_defect", "G_min", "checks", "passed",
    ],
    "properties": {
        "version": {"type": "string"},
        "N": {"type": "integer", "minimum": 2},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "t_end": {"type": "number", "exclusiveMinimum": 0},
        "t0": {"type": "number", "exclusiveMinimum": 0},
        "q0": _num,
        "q2": _num,
        "energy_limit": _num,
        "energy_target": {"type": ["number", "null"]},
        "residual_exponents": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3},
        "fits": {
            "type": "object",
            "required": ["gradient", "variance", "peak_radius"],
            "properties": {"gradient": _fit, "variance": _fit, "peak_radius": _fit},
        },
        "mass_drift": {"type": "number", "minimum": 0},
        "mass_drift_rate": {"type": "number", "minimum": 0},
        "energy_drift": {"type": "number", "minimum": 0},
        "energy_drift_scaled": {"type": "number", "minimum": 0},
        "sup_X1_ratio": {"type": "number", "minimum": 0},
        "kappa_trend_worst": {"type": "number", "minimum": 0},
        "pseudoconformal_max_defect": {"type": "number", "minimum": 0},
        "G_min": _num,
        "checks": {"type": "object", "additionalProperties": {"type": "boolean"}},
        "passed": {"type": "boolean"},
    },
    "additionalProperties": False,
}


def validate_summary(summary: dict) -> None:
    jsonschema.validate(summary, SUMMARY_SCHEMA)


_RC = {"svg.hashsalt": "spherecollapse", "svg.fonttype": "none", "figure.figsize": (6.0, 4.0)}


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def _loglog(t, y, guide_exp, ylabel, label, path, guide_label):
    fig, ax = plt.subplots()
    ax.loglog(t, y, "o-", ms=3, label=label)
    g = y[-1] * (t / t[-1]) ** guide_exp
    ax.loglog(t, g, "k--", lw=0.8, label=guide_label)
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.legend()
    _save(fig, path)


def write_plots(out: Path, N: int, ts: dict, states_dir: Path | None = None, max_profiles: int = 5) -> list[Path]:
    out = Path(out)
    t = ts["t"]
    paths = []
    with plt.rc_context(_RC):
        p = out / "rates.svg"
        _loglog(t, ts["grad_norm"], -2.0 / 3.0, "||grad psi||", "evolved", p, "t^(-2/3)")
        paths.append(p)
        p = out / "radius.svg"
        _loglog(t, ts["peak_r"], 1.0 / 3.0, "peak radius", "evolved", p, "t^(1/3)")
        paths.append(p)
        p = out / "h_norms.svg"
        mask = ts["X1_h"] > 0
        fig, ax = plt.subplots()
        ax.loglog(t[mask], ts["X1_h"][mask], "o-", ms=3, label="||h||_X1")
        ax.loglog(t[mask], ts["h_L2"][mask], "s-", ms=3, label="||h||_L2")
        ax.loglog(t[mask], t[mask] ** (2.0 * N / 3.0), "k--", lw=0.8, label=f"t^({2 * N}/3)")
        ax.set_xlabel("t")
        ax.legend()
        _save(fig, p)
        paths.append(p)
        if states_dir is not None:
            files = sorted(Path(states_dir).glob("state_*.csv"))
            if files:
                pick = sorted({int(round(x)) for x in np.linspace(0, len(files) - 1, min(max_profiles, len(files)))})
                fig, ax = plt.subplots()
                for i in pick:
                    s = read_checkpoint(files[i])
                    ax.plot(s.grid.r, np.abs(s.psi), lw=0.8, label=f"t={s.t:.3g}")
                ax.set_xlabel("r")
                ax.set_ylabel("|psi|")
                ax.legend()
                p = out / "profiles.svg"
                _save(fig, p)
                paths.append(p)
    return paths
