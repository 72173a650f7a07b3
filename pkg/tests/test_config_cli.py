import csv
import json

import jsonschema
import numpy as np
import pytest

from spherecollapse.cli import TIMESERIES_COLUMNS, kappa_trend_check, main, read_snapshot
from spherecollapse.config import RunConfig, check_times, dump_config, load_config, parse_config
from spherecollapse.errors import ConfigError
from spherecollapse.report import SUMMARY_SCHEMA, validate_summary

SMALL = """\
# quick N=2 scenario
N = 2
eps = 3e-5
t0 = 3e-4
samples = 8
c = 0.4
"""


def test_minimal_config_defaults():
    cfg = parse_config("N = 3\ne = 0\neps = 0.02\n")
    assert cfg.N == 3 and cfg.e == 0.0 and cfg.eps == 0.02
    assert cfg.t0 == "runtime" and cfg.ppw == RunConfig().ppw


def test_n1_rejected():
    with pytest.raises(ConfigError, match=":1:"):
        parse_config("N = 1\n")


def test_eps_above_t0_rejected():
    with pytest.raises(ConfigError, match="eps < t0"):
        parse_config("eps = 0.2\nt0 = 0.1\n")


def test_short_window_rejected():
    with pytest.raises(ConfigError, match="decade"):
        parse_config("eps = 1e-4\nt0 = 5e-4\n")
    with pytest.raises(ConfigError, match="decade"):
        check_times(parse_config("eps = 1e-4\n"), 5e-4)


@pytest.mark.parametrize("text, where", [
    ("N = 3\nfoo = 1\n", ":2:"),
    ("N = 3\nN = 2\n", ":2:"),
    ("\n\nN three\n", ":3:"),
    ("c = abc\n", ":1:"),
    ("eps = nan\n", ":1:"),
    ("cutoff0 = 0.5\n", ":1:"),
    ("direction = sideways\n", ":1:"),
])
def test_config_errors_carry_line(text, where):
    with pytest.raises(ConfigError, match=where):
        parse_config(text)


def test_dump_roundtrip():
    cfg = parse_config("N = 2\ne = 1\nR = 5\nresidual_window = 1e-6, 1e-5\n")
    assert parse_config(dump_config(cfg)) == cfg
    assert parse_config(dump_config(RunConfig())) == RunConfig()


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")
    assert main(["construct", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 2


def test_kappa_trend_check():
    t = np.geomspace(1e-5, 1e-4, 8)
    ok, worst = kappa_trend_check(t, 3 * t ** (5 / 3), 5 / 3)
    assert ok and worst == pytest.approx(1.0)
    k = 3 * t ** (5 / 3)
    k[-1] *= 20
    assert not kappa_trend_check(t, k, 5 / 3)[0]


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("small")
    cfg = d / "small.cfg"
    cfg.write_text(SMALL)
    out = d / "out"
    codes = {c: main([c, "--config", str(cfg), "--out", str(out)]) for c in ("construct", "evolve", "compare")}
    codes["report"] = main(["report", "--config", str(cfg), "--out", str(out), "--strict"])
    return cfg, out, codes


def test_pipeline_exit_codes(small_run):
    _, _, codes = small_run
    assert codes == {"construct": 0, "evolve": 0, "compare": 0, "report": 0}


def test_construct_outputs(small_run):
    _, out, _ = small_run
    con = json.loads((out / "construct.json").read_text())
    assert abs(con["q0"] - 12 ** (1 / 6)) <= 1e-10
    assert all(x >= 1.0 - 0.1 for x in con["residual_exponents"])
    res = read_snapshot(out)
    assert res.N == 2 and sorted(res.chi) == list(range(1, 7))


def test_compare_zero_at_eps(small_run):
    _, out, _ = small_run
    with open(out / "timeseries.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == TIMESERIES_COLUMNS
    first = rows[0]
    for k in ("h_L2", "h_H1", "xh_L2", "X1_h", "X2_h", "G", "kappa0", "kappa1", "kappa2", "kappa3"):
        assert float(first[k]) == 0.0


def test_summary_and_plots(small_run):
    _, out, _ = small_run
    summary = json.loads((out / "summary.json").read_text())
    validate_summary(summary)
    assert summary["passed"]
    assert -0.73 <= summary["fits"]["gradient"]["exponent"] <= -0.60
    for name in ("rates.svg", "radius.svg", "h_norms.svg", "profiles.svg"):
        assert (out / name).read_text().startswith("<?xml")


def test_schema_rejects_extra_keys():
    with pytest.raises(jsonschema.ValidationError):
        validate_summary({"version": "x"})
    assert SUMMARY_SCHEMA["additionalProperties"] is False


def test_report_without_evolve(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL)
    assert main(["report", "--config", str(cfg), "--out", str(tmp_path / "empty")]) == 2
    assert "not found" in capsys.readouterr().err


def test_compare_without_states(small_run, tmp_path):
    cfg, out, _ = small_run
    for name in ("coefficients.txt", "chi.csv"):
        (tmp_path / name).write_bytes((out / name).read_bytes())
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_env_out_override(small_run, tmp_path, monkeypatch):
    cfg, _, _ = small_run
    target = tmp_path / "via_env"
    monkeypatch.setenv("SPHERECOLLAPSE_OUT", str(target))
    text = SMALL + f"out = {tmp_path / 'ignored'}\n"
    c2 = tmp_path / "c2.cfg"
    c2.write_text(text)
    assert main(["construct", "--config", str(c2)]) == 0
    assert (target / "coefficients.txt").exists()
    assert not (tmp_path / "ignored").exists()


def test_n3_extends_n2_table(small_run, tmp_path):
    _, out, _ = small_run
    c3 = tmp_path / "n3.cfg"
    c3.write_text(SMALL.replace("N = 2", "N = 3"))
    assert main(["construct", "--config", str(c3), "--out", str(tmp_path / "n3")]) == 0

    def rows(p):
        return [ln for ln in p.read_text().splitlines() if not ln.startswith("#")]

    r2, r3 = rows(out / "coefficients.txt"), rows(tmp_path / "n3" / "coefficients.txt")
    assert len(r3) == len(r2) + 1
    assert r3[: len(r2)] == r2
