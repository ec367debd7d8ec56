import csv
import json

import pytest

from pieh2.cli import EXIT_INFEASIBLE, EXIT_INPUT, EXIT_OK, build_parser, fixture_path, main

from test_synth import ode_plant


def run(args, tmp_path):
    return main([*args, "--out", str(tmp_path)])


def test_convert_writes_pie_and_report(tmp_path, capsys):
    assert run(["convert", str(fixture_path("eb_beam.ini"))], tmp_path) == EXIT_OK
    pie = json.loads((tmp_path / "pie.json").read_text())
    report = json.loads((tmp_path / "convert.json").read_text())
    assert report["schema_version"] == 1 and report["validation"]["ok"]
    assert pie["T"]
    assert "validation ok" in capsys.readouterr().out


def test_convert_csv_has_header(tmp_path):
    assert main(["convert", str(fixture_path("react_diff.ini")), "--out", str(tmp_path), "--format", "csv"]) == 0
    with (tmp_path / "convert.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert rows and set(rows[0]) >= {"operator", "param", "value"}


def test_h2norm_primal_and_dual_on_pie_json(tmp_path):
    path = str(fixture_path("ode_embed.json"))
    for extra in ([], ["--dual"]):
        assert run(["h2norm", path, *extra], tmp_path) == EXIT_OK
        out = json.loads((tmp_path / "h2norm.json").read_text())
        assert out["gamma"] == pytest.approx(2 ** -0.5, abs=1e-4)
        assert out["form"] == ("dual" if extra else "primal")


def test_stability_exit_codes(tmp_path):
    assert run(["stability", str(fixture_path("heat_dirichlet.ini")), "--degree", "1"], tmp_path) == EXIT_OK
    assert run(["stability", str(fixture_path("react_diff.ini")), "--degree", "1"], tmp_path) == EXIT_INFEASIBLE


def test_controller_then_simulate(tmp_path):
    plant = tmp_path / "plant.json"
    plant.write_text(ode_plant().to_json())
    assert run(["controller", str(plant)], tmp_path) == EXIT_OK
    gain = tmp_path / "controller_gain.json"
    assert json.loads(gain.read_text())["kind"] == "controller"
    assert run(["simulate", str(plant), "--gain", str(gain), "--tend", "8"], tmp_path) == EXIT_OK
    meta = json.loads((tmp_path / "simulate.json").read_text())
    gamma = json.loads((tmp_path / "controller.json").read_text())["gamma"]
    assert meta["loop"] == "controller" and meta["h2_estimate"] <= 1.05 * gamma
    assert (tmp_path / "trajectory.csv").read_text().startswith("t")


def test_sdpa_export_flag(tmp_path):
    target = tmp_path / "prob.dat-s"
    assert run(["h2norm", str(fixture_path("ode_embed.json")), "--sdpa-out", str(target)], tmp_path) == EXIT_OK
    assert target.is_file()


@pytest.mark.parametrize("argv", [
    ["h2norm"],
    ["h2norm", "x.ini", "--degree", "two"],
    ["frobnicate"],
    ["repro", "zz"],
    ["simulate", "x.ini", "--format", "xml"],
])
def test_argument_errors_exit_3(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == EXIT_INPUT


def test_input_errors_exit_3(tmp_path, capsys):
    assert run(["convert", str(tmp_path / "missing.ini")], tmp_path) == EXIT_INPUT
    bad = tmp_path / "bad.ini"
    bad.write_text("[domain]\na = 0\nb = 1\n[states]\ncount = 1\norder = 2\n[bcs]\nrows = 1, 0\n")
    assert run(["convert", str(bad)], tmp_path) == EXIT_INPUT
    assert "bad.ini:" in capsys.readouterr().err
    assert run(["h2norm", str(fixture_path("ode_embed.json")), "--eps", "-1"], tmp_path) == EXIT_INPUT
    assert run(["h2norm", str(fixture_path("ode_embed.json")), "--solver", "nope"], tmp_path) == EXIT_INPUT


def test_parser_lists_all_commands():
    text = build_parser().format_help()
    for cmd in ("convert", "h2norm", "stability", "estimator", "controller", "simulate", "repro"):
        assert cmd in text
