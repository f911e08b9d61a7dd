import csv
import json

import numpy as np
import pytest

from voidfwi.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from voidfwi.grid import build_grid
from voidfwi.io import read_field, write_field

TINY = ["grid.extent_x_mm=10", "grid.extent_y_mm=5", "grid.element_size_mm=1",
        "geometry.void_mm=circle(5, 2.5, 1)", "array.count=4", "time.duration_s=4e-6",
        "reference.same_as_inversion=true", "inversion.max_iterations=2",
        "inversion.snapshot_iterations=1, 2"]


def _sets(items):
    return [a for s in items for a in ("--set", s)]


def test_no_command_is_a_usage_error(capsys):
    assert main([]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_missing_config_prints_usage(capsys, tmp_path):
    assert main(["forward", "--out", str(tmp_path)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "usage: voidfwi forward" in err and "--config or --preset" in err
    assert main(["forward", "--config", str(tmp_path / "nope.cfg")]) == EXIT_USAGE


def test_config_errors_exit_with_usage_code(capsys, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[grid]\ndegree = two\n")
    assert main(["forward", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_USAGE
    assert f"{bad}:2:10" in capsys.readouterr().err
    assert main(["forward", "--preset", "interface1d_p4", "--set", "grid.bogus=1"]) == EXIT_USAGE
    assert main(["forward", "--preset", "interface1d_p4", "--threads", "0"]) == EXIT_USAGE


def test_runtime_failures_exit_one(capsys, tmp_path):
    args = ["forward", "--preset", "interface1d_p1", "--out", str(tmp_path), "--set", "time.delta_t_s=1"]
    assert main(args) == EXIT_FAILURE
    assert "UnstableTimeStep" in capsys.readouterr().err


def test_forward_interface_study(tmp_path):
    assert main(["forward", "--preset", "interface1d_p4", "--out", str(tmp_path)]) == EXIT_OK
    for tag in ("rho", "c", "rhoc"):
        for t in ("0.5", "2.1", "3.5"):
            f = read_field(tmp_path / f"{tag}_t{t}.field")
            assert f.name == "u" and f.grid.degree == 4
    with open(tmp_path / "errors.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["tag"] for r in rows} == {"rho", "c", "rhoc"}
    rho = next(r for r in rows if r["tag"] == "rho")
    assert float(rho["relative_l2_error"]) < 0.01
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    paths = {a["path"] for a in manifest["artifacts"]}
    assert "errors.csv" in paths and "config.resolved.cfg" in paths and len(paths) == 11


def test_export(tmp_path):
    g = build_grid(2, (2.0, 1.0), 0.5, 1)
    field = write_field(tmp_path / "g.field", g, np.arange(g.n_nodes, dtype=float))
    out = tmp_path / "out"
    args = ["export", "--preset", "desk_circle_rho", "--field", str(field), "--format", "vtk_legacy_ascii",
            "--out", str(out)]
    assert main(args) == EXIT_OK
    assert (out / "g.vtk").read_text().startswith("# vtk DataFile Version 3.0\n")
    assert main(["export", "--preset", "desk_circle_rho", "--out", str(out)]) == EXIT_USAGE


def test_observe_then_invert(tmp_path, capsys):
    obs_dir, inv_dir = tmp_path / "obs", tmp_path / "inv"
    assert main(["observe", "--preset", "desk_circle_rho", "--out", str(obs_dir)] + _sets(TINY)) == EXIT_OK
    assert (obs_dir / "recordings" / "source_003.csv").exists()
    args = ["invert", "--preset", "desk_circle_rho", "--out", str(inv_dir),
            "--observations", str(obs_dir / "observations.npz"), "--threads", "2"] + _sets(TINY)
    assert main(args) == EXIT_OK
    out = capsys.readouterr().out
    assert "iteration   2" in out
    with open(inv_dir / "convergence.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 and float(rows[0]["normalized"]) == 1.0
    assert float(rows[-1]["normalized"]) < 1.0
    assert (inv_dir / "snapshots" / "gamma_iter002.field").exists()
    final = read_field(inv_dir / "gamma_final.field")
    assert final.values.min() >= 0.0 and final.values.max() <= 1.2


@pytest.mark.parametrize("flag", ["--help", "--version"])
def test_help_and_version(flag, capsys):
    with pytest.raises(SystemExit) as info:
        main([flag])
    assert info.value.code == 0
