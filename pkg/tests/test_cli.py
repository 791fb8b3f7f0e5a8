import csv
import json
import math
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neumann_uc import cli, config, expr, plotting, report
from neumann_uc.experiment import run_experiment

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = """
[domain]
extents = 0, 1
[grid]
n = 129
[time]
T = 1.0
dt = 1e-3
[suites]
run = energy
"""


# --------------------------------------------------------------------------
# expressions


@pytest.mark.parametrize("text,want", [("1 + 0.5*x", 1.25), ("sin(pi*x)**2", 1.0), ("-x/2", -0.25),
                                       ("exp(0)", 1.0), ("2", 2.0)])
def test_expression_values(text, want):
    f = expr.compile_expression(text)
    assert f(np.array([[0.5]]))[0] == pytest.approx(want)


@pytest.mark.parametrize("text", ["__import__('os')", "x.real", "y", "log(x)", "[x]", "x if x else 1",
                                  "sin(x, x)", "lambda: 1", "1 +"])
def test_expression_rejected(text):
    with pytest.raises(expr.ExpressionError):
        expr.compile_expression(text)


def test_expression_2d_and_broadcast():
    f = expr.compile_expression("x*y", dim=2)
    X = np.stack(np.meshgrid([0.0, 1.0], [2.0, 3.0], indexing="ij"))
    assert np.allclose(f(X), X[0] * X[1])
    assert expr.compile_expression("3", 2)(X).shape == (2, 2)


def test_expression_floating_point_error():
    with pytest.raises(expr.ExpressionError):
        expr.compile_expression("1/(x - x)")(np.array([[0.5]]))


# --------------------------------------------------------------------------
# configuration


def test_minimal_config_parses():
    cfg = config.parse_config(MINIMAL)
    assert cfg.suites == ("energy",) and cfg.n == 129 and cfg.dim == 1


def test_case_sensitive_coefficients():
    cfg = config.parse_config(MINIMAL + "[coefficients]\nA = 2\na = -1\n")
    c = cfg.coefficients()
    assert np.allclose(c.A, 2.0) and np.isclose(c.a_inf, 1.0)


@pytest.mark.parametrize("extra,fieldname", [
    ("[regions]\nomega_tilde = 0.5, 1.2\n", "regions.omega_tilde"),
    ("[regions]\nomega_tilde = 0.2, 0.8\n", "regions.omega_tilde"),
    ("[regions]\nE = 0.5, 1.5\n", "regions.E"),
    ("[coefficients]\nA = log(x)\n", "coefficients.A"),
    ("[runs]\nfit = mode:0 mode:1\n", "runs.fit"),
    ("[runs]\nobserve = wave:1\n", "runs.observe"),
    ("[output]\nformat = xml\n", "output.format"),
    ("[carleman]\nh = 0.5\n", "carleman.h"),
    ("[bogus]\nx = 1\n", "bogus"),
])
def test_config_error_names_field(extra, fieldname):
    with pytest.raises(config.ConfigError) as ei:
        config.parse_config(MINIMAL + extra)
    assert ei.value.field.startswith(fieldname)


def test_unknown_suite():
    with pytest.raises(config.ConfigError, match="suites.run"):
        config.parse_config(MINIMAL.replace("run = energy", "run = everything"))


def test_bad_dt():
    with pytest.raises(config.ConfigError, match="time.dt"):
        config.parse_config(MINIMAL.replace("dt = 1e-3", "dt = 0.3"))


@pytest.mark.parametrize("name", ["heat_minimal", "variable", "square"])
def test_shipped_configs_validate(name):
    cfg = config.load_config(CONFIGS / f"{name}.ini")
    config.validate(cfg)


def test_overrides_revalidate():
    cfg = config.default_config()
    assert cfg.with_overrides(n=65, seed=None).n == 65
    with pytest.raises(config.ConfigError):
        cfg.with_overrides(n=4)


# --------------------------------------------------------------------------
# report serialisation


def _bundle(k):
    b = report.ReportBundle(environment={"python": "x"})
    for i in range(k):
        b.add(report.CheckRecord("s", f"c{i}", "pass", {"i": i},
                                 residuals={"r": 0.1 * i + 1e-17, "inf": math.inf}, constants={"K": np.float64(3.3)}))
    return b


def test_empty_bundle_json(tmp_path):
    p = report.emit_report(report.ReportBundle(), tmp_path)[0]
    d = json.loads(Path(p).read_text())
    assert d["checks"] == [] and d["summary"]["n_checks"] == 0


def test_csv_rows(tmp_path):
    p = report.emit_report(_bundle(5), tmp_path, "csv")[0]
    rows = list(csv.reader(open(p)))
    assert tuple(rows[0]) == report.CSV_COLUMNS and len(rows) == 6


def test_json_roundtrip_exact(tmp_path):
    b = _bundle(4)
    p = report.emit_report(b, tmp_path)[0]
    back = report.load_report(p)
    for rec, d in zip(b.sorted_records(), back["checks"]):
        assert d["residuals"]["r"] == rec.residuals["r"]
        assert d["residuals"]["inf"] == math.inf
        assert d["constants"]["K"] == 3.3


@settings(max_examples=50, deadline=None)
@given(st.floats(allow_nan=False))
def test_float_roundtrip(v):
    assert report.from_jsonable(json.loads(report.dumps({"v": v}))) == {"v": v}


def test_duplicate_and_bad_status():
    b = _bundle(1)
    with pytest.raises(ValueError):
        b.add(report.CheckRecord("s", "c0", "pass"))
    with pytest.raises(ValueError):
        report.CheckRecord("s", "x", "maybe")


def test_timestamp_kept_out_of_report(tmp_path):
    ps = report.emit_report(_bundle(2), tmp_path, timestamp="2020-01-01T00:00:00+00:00")
    assert "2020" not in Path(ps[0]).read_text()
    assert "2020" in Path(ps[1]).read_text()


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        report.emit_report(_bundle(1), blocker / "sub")


# --------------------------------------------------------------------------
# orchestration and plots


def test_minimal_run_two_energy_checks(tmp_path):
    b = run_experiment(config.parse_config(MINIMAL), out_dir=str(tmp_path))
    assert [r.name for r in b.sorted_records()] == ["energy_H1", "energy_L2"]
    assert b.all_passed


def test_every_requested_suite_has_a_record(tmp_path):
    cfg = config.parse_config(MINIMAL.replace("run = energy", "run = weights energy solve"))
    b = run_experiment(cfg, out_dir=str(tmp_path))
    assert {r.suite for r in b.records} == {"weights", "energy", "solve"}


def test_plots_and_empty_trace_notice(tmp_path):
    from types import SimpleNamespace

    b = run_experiment(config.parse_config(MINIMAL.replace("run = energy", "run = weights")),
                       out_dir=str(tmp_path))
    empty = SimpleNamespace(t=np.zeros(0), y=np.zeros(0), N=np.zeros(0))
    b.traces["trace_empty"] = ("trace", empty)
    paths = plotting.render_plots(b, tmp_path)
    assert (tmp_path / "weights.svg").exists() and not (tmp_path / "trace_empty.svg").exists()
    assert len(paths) == 1 and any("trace_empty" in n for n in b.notices)


def test_trace_plot_has_two_curves(tmp_path):
    from types import SimpleNamespace

    t = np.linspace(0.01, 1, 100)
    tr = SimpleNamespace(t=t, y=np.exp(-t), N=1 + t)
    p = plotting.plot_trace(tr, tmp_path / "t.svg")
    assert p is not None and Path(p).read_text().count("<path") >= 2


# --------------------------------------------------------------------------
# command line


def _cli(tmp_path, *args):
    return cli.main([*args, "--out", str(tmp_path), "--no-plots"])


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text(MINIMAL + "[regions]\nomega = 0.3, 1.5\n")
    assert cli.main(["all", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "regions.omega" in capsys.readouterr().err


def test_cli_missing_config_file(tmp_path):
    assert _cli(tmp_path, "solve", "--config", str(tmp_path / "none.ini")) == 2


def test_cli_bad_grid_override(tmp_path):
    assert _cli(tmp_path, "solve", "--grid-n", "3") == 2


@pytest.mark.parametrize("cmd", ["solve", "weights", "verify-energy", "frequency", "verify-interpolation",
                                 "verify-observability"])
def test_cli_subcommands(tmp_path, cmd, capsys):
    assert _cli(tmp_path, cmd, "--grid-n", "65", "--dt", "2e-3") == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "report:" in out
    d = report.load_report(tmp_path / "report.json")
    suite = cli.COMMANDS[cmd][0]
    assert d["checks"] and {c["suite"] for c in d["checks"]} == {suite}


def test_cli_identities_with_small_grids(tmp_path):
    ini = tmp_path / "id.ini"
    ini.write_text(MINIMAL.replace("run = energy", "run = identities") + "[identities]\nns = 65, 129, 257\n")
    assert cli.main(["verify-identities", "--config", str(ini), "--out", str(tmp_path), "--no-plots"]) == 0


def test_cli_csv_format(tmp_path):
    assert _cli(tmp_path, "verify-energy", "--format", "csv") == 0
    assert (tmp_path / "report.csv").exists() and (tmp_path / "run_meta.json").exists()


def test_cli_seed_changes_random_runs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["verify-energy", "--out", str(a), "--no-plots"])
    cli.main(["verify-energy", "--out", str(b), "--no-plots", "--seed", "7"])
    assert (a / "report.json").read_bytes() != (b / "report.json").read_bytes()


def test_cli_failure_exit_code(tmp_path, monkeypatch):
    from neumann_uc import experiment

    def broken(ctx, bundle):
        bundle.add(report.CheckRecord("energy", "forced", "fail"))

    monkeypatch.setitem(experiment._SUITE_FUNCS, "energy", broken)
    assert _cli(tmp_path, "verify-energy") == 1


def test_cli_determinism_small(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        cli.main(["frequency", "--out", str(d), "--grid-n", "65", "--dt", "2e-3"])
    for name in sorted(os.listdir(a)):
        if name != "run_meta.json":
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
