import json
import math
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from qrt_memory import cli
from qrt_memory import experiments as ex
from qrt_memory.config import (ConfigError, dump_config, load_config, load_config_text, load_preset,
                               parse_config, preset_names)
from qrt_memory.model import n_thermal

QUICK = dict(numerics={"grid_n": 9, "convergence": {"enabled": False}})


def cfg_from(kind, **sections):
    data = {"version": 1, "kind": kind}
    data.update(QUICK)
    data.update(sections)
    return parse_config(data)


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def test_all_presets_load_and_roundtrip():
    names = preset_names()
    for required in ("fig1", "fig2", "fig2-tf30", "fig3", "fig4", "fig5"):
        assert required in names
    for name in names:
        cfg = load_preset(name)
        assert cfg.version == 1 and cfg.name == name
        assert parse_config(dump_config(cfg)) == cfg


def test_unknown_key_is_an_error_with_line_number():
    text = textwrap.dedent("""\
        version: 1
        kind: landscape
        times: {t_max: 2, grid_n: 3}
        model:
          gamma: 0.1
          colour: red
        """)
    with pytest.raises(ConfigError) as info:
        load_config_text(text, "cfg.yaml")
    assert "cfg.yaml:6: model.colour" in str(info.value)


@pytest.mark.parametrize("snippet,where", [
    ("model:\n  gamma: -1\n", "cfg.yaml:5: model.gamma"),
    ("model:\n  omega0: [4.0, 4.5]\n", "cfg.yaml:5: model.omega0"),
    ("protocol:\n  axes: [z, w]\n", "cfg.yaml:5: protocol.axes"),
    ("protocol:\n  initial_state: up\n", "cfg.yaml:5: protocol.initial_state"),
    ("numerics:\n  grid_n: 1\n", "cfg.yaml:5: numerics.grid_n"),
    ("output:\n  format: xml\n", "cfg.yaml:5: output.format"),
])
def test_field_errors_point_at_their_line(snippet, where):
    text = "version: 1\nkind: landscape\ntimes: {t_max: 2, grid_n: 3}\n" + snippet
    with pytest.raises(ConfigError) as info:
        load_config_text(text, "cfg.yaml")
    assert where in str(info.value)


def test_kind_version_and_syntax_errors():
    with pytest.raises(ConfigError, match="kind"):
        load_config_text("version: 1\nkind: bogus\n")
    with pytest.raises(ConfigError, match="version"):
        load_config_text("version: 2\nkind: landscape\ntimes: {t_max: 1, grid_n: 2}\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config_text("kind: [landscape\n")
    with pytest.raises(ConfigError, match="empty"):
        load_config_text("")
    with pytest.raises(ConfigError, match="mapping"):
        load_config_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="unknown preset"):
        load_preset("fig9")


def test_kind_specific_invariants():
    with pytest.raises(ConfigError, match="needs protocol.times"):
        cfg_from("perturbation-sweep", model={"lambda": [0.0, 0.1]})
    with pytest.raises(ConfigError, match="cannot sweep lambda"):
        cfg_from("avg-heatmap", model={"lambda": [0.0, 0.1]})
    with pytest.raises(ConfigError, match="3 measurement axes"):
        cfg_from("three-time-compare")
    with pytest.raises(ConfigError, match="must not be empty"):
        cfg_from("temperature-compare", temperatures=[])
    with pytest.raises(ConfigError, match="non-decreasing"):
        cfg_from("perturbation-sweep", protocol={"axes": ["z", "x"], "times": [2, 1]})
    with pytest.raises(ConfigError):
        cfg_from("avg-heatmap", model={"omega0": {"start": 4, "stop": 5, "num": 0}})


def test_beta_accepts_inf_spellings():
    for spelling in ("inf", "Infinity", None):
        cfg = cfg_from("avg-heatmap", model={"beta": spelling})
        assert math.isinf(cfg.model.beta)
    assert dump_config(cfg)["model"]["beta"] == "inf"


def test_load_config_from_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("version: 1\nkind: landscape\ntimes: {t_max: 1, grid_n: 2}\n")
    assert load_config(path).kind == "landscape"
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------


def test_landscape_two_by_two_is_a_triangle():
    table = ex.run_landscape(cfg_from("landscape", times={"t_max": 1.0, "grid_n": 2}))
    assert table.columns == ["t1", "t2", "eps_qrt"]
    assert [(r[0], r[1]) for r in table.rows] == [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
    assert not np.isnan(table.column("eps_qrt")).any()


def test_landscape_without_coupling_vanishes():
    cfg = cfg_from("landscape", model={"lambda": 0.0}, times={"t_max": 10.0, "grid_n": 6})
    assert ex.run_landscape(cfg).column("eps_qrt").max() <= 1e-9


def test_avg_heatmap_single_point_and_columns():
    cfg = cfg_from("avg-heatmap", t_f=4.0)
    table = ex.run_avg_heatmap(cfg)
    assert table.columns == ["omega0", "gamma", "eps_avg", "n_avg"] and len(table) == 1
    cfg2 = cfg_from("avg-heatmap", t_f=4.0, quantities=["n_avg"],
                    model={"omega0": [4.0, 5.0], "gamma": {"start": 0.1, "stop": 0.3, "num": 3}})
    table2 = ex.run_avg_heatmap(cfg2)
    assert table2.columns == ["omega0", "gamma", "n_avg"] and len(table2) == 6
    # row order: omega0 outer, gamma inner
    assert [r[:2] for r in table2.rows][:3] == [[4.0, 0.1], [4.0, 0.2], [4.0, 0.3]]


def test_divisibility_heatmap_matches_avg_heatmap_n_column():
    m = {"omega0": [4.0, 4.5]}
    a = ex.run_divisibility_heatmap(cfg_from("divisibility-heatmap", t_f=4.0, model=m))
    b = ex.run_avg_heatmap(cfg_from("avg-heatmap", t_f=4.0, model=m, quantities=["n_avg"]))
    assert a.rows == b.rows


def test_perturbation_sweep_zero_coupling_row():
    cfg = cfg_from("perturbation-sweep", model={"lambda": [0.0, 0.05]},
                   protocol={"initial_state": "+", "axes": ["z", "x"], "times": [5.0, 10.0]},
                   numerics={"quadrature_n": 41, "convergence": {"enabled": False}})
    table = ex.run_perturbation_sweep(cfg)
    assert table.columns == ["lambda", "eps_qrt", "eps_lambda2"]
    assert table.rows[0] == [0.0, pytest.approx(0.0, abs=1e-13), pytest.approx(0.0, abs=1e-13)]
    assert table.rows[1][2] < table.rows[1][1]


def test_temperature_compare_infinite_beta_equals_avg_heatmap():
    m = {"omega0": [4.0, 4.5], "gamma": [0.1, 0.2]}
    temp = ex.run_temperature_compare(cfg_from("temperature-compare", t_f=4.0, model=m,
                                               temperatures=[{"beta": "inf", "n_max": 8}]))
    avg = ex.run_avg_heatmap(cfg_from("avg-heatmap", t_f=4.0, model=m, quantities=["eps_avg"]))
    assert temp.column("eps_avg").tolist() == avg.column("eps_avg").tolist()
    assert temp.columns[:3] == ["beta", "n_beta", "n_max"]


def test_temperature_compare_reports_occupation():
    cfg = cfg_from("temperature-compare", t_f=2.0,
                   temperatures=[{"beta": 0.25, "n_max": 13}, {"beta": 0.154, "n_max": 20}])
    table = ex.run_temperature_compare(cfg)
    assert table.column("n_beta").tolist() == [n_thermal(4.5, 0.25), n_thermal(4.5, 0.154)]
    assert table.column("n_max").tolist() == [13.0, 20.0]


def test_temperature_compare_surfaces_truncation_error():
    from qrt_memory.model import FockTruncationError
    cfg = cfg_from("temperature-compare", t_f=2.0, temperatures=[{"beta": 0.154, "n_max": 2}])
    with pytest.raises(FockTruncationError) as info:
        ex.run_temperature_compare(cfg)
    assert info.value.beta == 0.154


def test_three_time_compare_zero_coupling():
    cfg = cfg_from("three-time-compare", t_f=3.0, model={"lambda": 0.0},
                   protocol={"axes": ["z", "z", "z"]}, numerics={"grid_n": 5, "convergence": {"enabled": False}})
    table = ex.run_three_time_compare(cfg)
    assert table.columns == ["omega0", "gamma", "eps2_commuting", "eps3_commuting",
                             "eps2_noncommuting", "eps3_noncommuting"]
    assert max(table.rows[0][2:]) <= 1e-12


def test_runner_checks_kind():
    with pytest.raises(ConfigError):
        ex.run_landscape(cfg_from("avg-heatmap"))


# ---------------------------------------------------------------------------
# convergence checks
# ---------------------------------------------------------------------------


def test_check_convergence_zero_coupling_is_exact():
    cfg = cfg_from("avg-heatmap", t_f=3.0, model={"lambda": 0.0}, quantities=["eps_avg"])
    report = ex.check_convergence(cfg)
    assert report.passed and report.max_deviation == 0.0


def test_check_convergence_fig1_preset_passes():
    report = ex.check_convergence(load_preset("fig1"))
    assert report.passed and report.max_deviation < 1e-6


def test_check_convergence_undersized_cutoff_fails_with_diagnostic():
    cfg = cfg_from("avg-heatmap", t_f=3.0, quantities=["eps_avg"], model={"beta": 0.154, "n_max": 2})
    report = ex.check_convergence(cfg)
    assert not report.passed
    assert "beta=0.154" in report.message and "increase n_max" in report.message
    assert report.points[0]["error"]


def test_run_raises_when_check_fails():
    cfg = parse_config({"version": 1, "kind": "landscape", "times": {"t_max": 4.0, "grid_n": 3},
                        "model": {"omega0": 1.0, "eta": 1.0, "gamma": 0.05, "lambda": 0.8, "n_max": 1},
                        "protocol": {"initial_state": "1"},
                        "numerics": {"convergence": {"tol": 1e-6, "points": 1}}})
    with pytest.raises(ex.ConvergenceFailure) as info:
        ex.run_experiment(cfg)
    assert not info.value.report.passed


# ---------------------------------------------------------------------------
# output and determinism
# ---------------------------------------------------------------------------


def test_format_number():
    assert ex.format_number(0.5) == "0.5"
    assert ex.format_number(0.0) == "0.0"
    assert ex.format_number(1e-3) == "0.001"
    assert ex.format_number(2.5e-4) == "2.5000000000000001e-04"
    assert ex.format_number(-7.1e-9) == "-7.0999999999999999e-09"
    assert ex.format_number(float("nan")) == "nan" and ex.format_number(math.inf) == "inf"
    for x in (1 / 3, 2.5e-4, 1e-17, 123456.789):
        assert float(ex.format_number(x)) == x


def test_csv_and_json_roundtrip():
    cfg = cfg_from("temperature-compare", t_f=2.0, temperatures=[{"beta": "inf", "n_max": 8}])
    table = ex.run_experiment(cfg)
    csv = table.to_csv()
    lines = csv.splitlines()
    assert lines[0] == "beta,n_beta,n_max,omega0,gamma,eps_avg"
    assert len(lines) == 2 and lines[1].startswith("inf,0.0,8.0,")
    back = ex.ResultTable.from_csv(csv)
    assert back.columns == table.columns and back.rows == table.rows
    j = ex.ResultTable.from_json(table.to_json())
    assert j.rows == table.rows and j.metadata == table.metadata
    assert ex.config_from_table(j) == cfg
    for key in ("config", "code_version", "convergence", "clipped", "conditioning_flags"):
        assert key in j.metadata


def test_result_table_rejects_ragged_rows():
    with pytest.raises(ValueError):
        ex.ResultTable(["a", "b"], [[1.0]])


def test_rerun_from_metadata_is_bit_identical():
    cfg = load_preset("fig1")
    first = ex.run_experiment(cfg)
    again = ex.run_experiment(ex.config_from_table(ex.ResultTable.from_json(first.to_json())))
    assert first.to_csv() == again.to_csv() and first.to_json() == again.to_json()


def test_worker_pool_keeps_grid_order():
    cfg = cfg_from("avg-heatmap", t_f=3.0, quantities=["eps_avg"],
                   model={"omega0": [4.0, 4.5, 5.0], "gamma": [0.1, 0.2]})
    serial = ex.run_experiment(cfg, workers=1)
    pooled = ex.run_experiment(cfg, workers=2)
    assert serial.to_csv() == pooled.to_csv()


def test_resolve_workers_precedence(monkeypatch):
    monkeypatch.delenv(ex.WORKERS_ENV, raising=False)
    assert ex.resolve_workers() == 1
    monkeypatch.setenv(ex.WORKERS_ENV, "3")
    assert ex.resolve_workers() == 3
    assert ex.resolve_workers(2) == 2
    monkeypatch.setenv(ex.WORKERS_ENV, "many")
    with pytest.raises(ConfigError):
        ex.resolve_workers()
    with pytest.raises(ConfigError):
        ex.resolve_workers(0)


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


def _write(tmp_path, text, name="c.yaml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return str(path)


def test_cli_run_csv_and_json(tmp_path, capsys):
    path = _write(tmp_path, """\
        version: 1
        kind: landscape
        times: {t_max: 1.0, grid_n: 3}
        """)
    assert cli.main(["run", "--config", path]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "t1,t2,eps_qrt" and len(out.splitlines()) == 7
    dest = tmp_path / "o.json"
    assert cli.main(["run", "--config", path, "--format", "json", "--out", str(dest), "--workers", "1"]) == 0
    doc = json.loads(dest.read_text())
    assert doc["columns"] == ["t1", "t2", "eps_qrt"] and doc["metadata"]["convergence"]["passed"]


def test_cli_exit_codes(tmp_path, capsys):
    bad = _write(tmp_path, "version: 1\nkind: landscape\ntimes: {t_max: 1, grid_n: 3}\nextra: 1\n", "bad.yaml")
    assert cli.main(["run", "--config", bad]) == 2
    assert "bad.yaml:4: extra" in capsys.readouterr().err
    small = _write(tmp_path, """\
        version: 1
        kind: avg-heatmap
        model: {beta: 0.154, n_max: 2}
        quantities: [eps_avg]
        """, "small.yaml")
    assert cli.main(["check", "--config", small]) == 3
    assert cli.main(["run", "--config", small]) == 3
    assert "beta=0.154" in capsys.readouterr().err
    assert cli.main(["run"]) == 2  # neither --config nor --preset
    assert cli.main(["run", "--preset", "nope"]) == 2
    assert cli.main(["check", "--preset", "fig1"]) == 0
    assert cli.main(["presets"]) == 0


def test_console_script_entry_point(tmp_path):
    path = _write(tmp_path, "version: 1\nkind: landscape\ntimes: {t_max: 1.0, grid_n: 2}\n")
    proc = subprocess.run([sys.executable, "-m", "qrt_memory.cli", "run", "--config", path],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("t1,t2,eps_qrt\n")


def test_probability_columns_in_unit_interval():
    m = {"omega0": [3.5, 4.5], "gamma": [0.01, 0.5]}
    tables = [
        ex.run_avg_heatmap(cfg_from("avg-heatmap", t_f=6.0, model=m, quantities=["eps_avg"])),
        ex.run_three_time_compare(cfg_from("three-time-compare", t_f=4.0, model=m,
                                           protocol={"axes": ["z", "z", "z"]},
                                           numerics={"grid_n": 5, "convergence": {"enabled": False}})),
        ex.run_landscape(cfg_from("landscape", model={"lambda": 0.4}, times={"t_max": 8.0, "grid_n": 9})),
    ]
    for table in tables:
        for name in table.columns:
            if name.startswith("eps"):
                col = table.column(name)
                assert ((col >= 0) & (col <= 1)).all(), name
