"""Run configuration: a flat ``key = value`` text format with defaults.

Blank lines and ``#`` comments are ignored.  Unknown keys, malformed values
and constraint violations raise ConfigError with the offending line number.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

FIT_SPAN = 10.0  # rate fits need samples spanning a decade in t


def _float(text: str) -> float:
    x = float(text)
    if not math.isfinite(x):
        raise ValueError(f"non-finite value {text!r}")
    return x


def _opt_float(text: str) -> float | None:
    return None if text.lower() in ("none", "auto", "") else _float(text)


def _pair(text: str) -> tuple[float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated numbers, got {text!r}")
    return (_float(parts[0]), _float(parts[1]))


def _t0(text: str) -> str | float:
    return "runtime" if text.lower() == "runtime" else _float(text)


def _direction(text: str) -> str:
    if text not in ("forward", "backward"):
        raise ValueError(f"direction must be forward or backward, got {text!r}")
    return text


@dataclass(frozen=True)
class RunConfig:
    N: int = 3
    e: float = 0.0
    q2: float | None = None  # fixed q2 instead of energy tuning
    eps: float = 3e-5
    t0: str | float = "runtime"
    t0_ratio: float = 0.2  # runtime policy: ||chi(t0)||_inf <= ratio * ||phi||_inf
    L: float = 20.0
    n: int = 4097
    order: int = 6  # rho-grid stencil
    R: float | None = None  # outer radius; auto = 4 q(t_end) + 2 / lambda(t_end)
    ppw: int = 16  # radial cells per layer width 1/lambda(eps)
    radial_order: int = 6  # the 2nd-order discrete soliton mismatch swamps h at 16 ppw
    c: float = 0.1
    samples: int = 16
    solvability_tol: float = 1e-6
    residual_tol: float = 1e-8
    residual_window: tuple[float, float] = (1e-6, 1e-5)
    cutoff0: tuple[float, float] = (0.5, 0.75)
    cutoff1: tuple[float, float] = (0.8, 0.95)
    direction: str = "forward"
    out: str = "out"


_PARSERS = {
    "N": int,
    "e": _float,
    "q2": _opt_float,
    "eps": _float,
    "t0": _t0,
    "t0_ratio": _float,
    "L": _float,
    "n": int,
    "order": int,
    "R": _opt_float,
    "ppw": int,
    "radial_order": int,
    "c": _float,
    "samples": int,
    "solvability_tol": _float,
    "residual_tol": _float,
    "residual_window": _pair,
    "cutoff0": _pair,
    "cutoff1": _pair,
    "direction": _direction,
    "out": str,
}
assert set(_PARSERS) == {f.name for f in fields(RunConfig)}


def _constraints(cfg: RunConfig) -> list[tuple[str, str]]:
    bad = []
    if cfg.N < 2:
        bad.append(("N", f"N must be >= 2, got {cfg.N}"))
    if not cfg.eps > 0:
        bad.append(("eps", f"eps must be positive, got {cfg.eps}"))
    if isinstance(cfg.t0, float) and not cfg.eps < cfg.t0:
        bad.append(("eps", f"need eps < t0, got eps={cfg.eps} and t0={cfg.t0}"))
    elif isinstance(cfg.t0, float) and not cfg.t0 >= FIT_SPAN * cfg.eps * (1 - 1e-12):
        bad.append(("t0", f"need t0 >= {FIT_SPAN:g} eps so rate fits span a decade, got eps={cfg.eps} and t0={cfg.t0}"))
    if not 0 < cfg.t0_ratio < 1:
        bad.append(("t0_ratio", "t0_ratio must lie in (0, 1)"))
    if not cfg.L > 0:
        bad.append(("L", f"L must be positive, got {cfg.L}"))
    if cfg.n < 3 or cfg.n % 2 == 0:
        bad.append(("n", f"n must be odd and >= 3, got {cfg.n}"))
    if cfg.order not in (2, 4, 6, 8):
        bad.append(("order", f"order must be 2, 4, 6 or 8, got {cfg.order}"))
    if cfg.radial_order not in (2, 4, 6):
        bad.append(("radial_order", f"radial_order must be 2, 4 or 6, got {cfg.radial_order}"))
    if cfg.R is not None and not cfg.R > 0:
        bad.append(("R", f"R must be positive, got {cfg.R}"))
    if cfg.ppw < 16:
        bad.append(("ppw", f"ppw must be >= 16 to resolve the layer, got {cfg.ppw}"))
    if not cfg.c > 0:
        bad.append(("c", f"c must be positive, got {cfg.c}"))
    if cfg.samples < 8:
        bad.append(("samples", f"need at least 8 samples for rate fits, got {cfg.samples}"))
    for key in ("solvability_tol", "residual_tol"):
        if not getattr(cfg, key) > 0:
            bad.append((key, f"{key} must be positive"))
    lo, hi = cfg.residual_window
    if not 0 < lo < hi:
        bad.append(("residual_window", "residual_window needs 0 < lo < hi"))
    for key in ("cutoff0", "cutoff1"):
        a, b = getattr(cfg, key)
        if not 0 < a < b:
            bad.append((key, f"{key} needs 0 < plateau < support"))
    if cfg.cutoff1[0] < cfg.cutoff0[1]:
        bad.append(("cutoff1", "cutoff1 plateau must cover the cutoff0 support"))
    return bad


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values = {}
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first on line {lines[key]})")
        try:
            values[key] = _PARSERS[key](val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
        lines[key] = lineno
    cfg = replace(RunConfig(), **values)
    problems = _constraints(cfg)
    if problems:
        key, msg = problems[0]
        if key in lines:
            raise ConfigError(f"{source}:{lines[key]}: {msg}")
        raise ConfigError(f"{source}: {msg} (default value of {key})")
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def check_times(cfg: RunConfig, t0: float) -> None:
    """Runtime check once t0 is known (the runtime policy is resolved late)."""
    if not cfg.eps < t0:
        raise ConfigError(f"need eps < t0, got eps={cfg.eps!r} and t0={t0!r} (policy {cfg.t0})")
    if not t0 >= FIT_SPAN * cfg.eps * (1 - 1e-12):
        raise ConfigError(f"need t0 >= {FIT_SPAN:g} eps so rate fits span a decade, got eps={cfg.eps!r} and t0={t0!r}")


def dump_config(cfg: RunConfig) -> str:
    out = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join(repr(x) for x in v)
        elif v is None:
            v = "auto" if f.name == "R" else "none"
        elif isinstance(v, float):
            v = repr(v)
        out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"
