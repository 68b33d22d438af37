import json

import pytest

from h2xlda.cli import build_parser, main
from h2xlda.commands import COMMANDS
from h2xlda.operations.tables import read_csv
from h2xlda.tests.conftest import TINY_TREE


def tiny_overrides():
    overrides = []
    for section, values in TINY_TREE.items():
        for key, value in values.items():
            overrides += ["--set", f"{section}.{key}={value}"]
    return overrides


def test_every_command_has_a_subparser():
    parser = build_parser()
    for name in COMMANDS:
        options = vars(parser.parse_args([name, "--set", "a.b=1"] + (["m.json"] if name == "replay" else [])))
        assert options["command"] == name
        assert options["overrides"] == ["a.b=1"]


def test_version():
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0


def test_missing_required_settings(output_root, capsys):
    """Config problems are reported before any output directory is created."""
    assert main(["solve"]) == 2
    err = capsys.readouterr().err
    assert "config error: system.alpha: is required" in err
    assert not output_root.exists()


def test_bad_override_value(output_root):
    code = main(["solve", "--set", "system.alpha=0.93", "--set", "system.bond_length=2", "--set", "solver.preconditioner=ilu"])
    assert code == 2
    assert not output_root.exists()


def test_malformed_override(output_root):
    assert main(["soliton", "--set", "soliton.step"]) == 2


def test_missing_config_file(tmp_path, output_root):
    assert main(["soliton", "-c", str(tmp_path / "nope.yaml")]) == 2


def test_replay_refuses_a_replay_manifest(tmp_path, output_root):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"manifest_version": 1, "config": {"command": "replay"}}))
    assert main(["replay", str(path)]) == 2


@pytest.mark.slow
def test_soliton_command(tmp_path):
    assert main(["soliton", "-o", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "soliton" / "profile.csv")
    phi = [float(r["phi"]) for r in rows]
    assert phi[0] > 0
    assert all(a >= b for a, b in zip(phi, phi[1:]))
    data = json.loads((tmp_path / "soliton" / "soliton.json").read_text())
    assert data["mass"] == pytest.approx(1.0, rel=1e-9)
    assert data["M0"] > 0
    manifest = json.loads((tmp_path / "soliton" / "manifest.json").read_text())
    assert "profile.csv" in manifest["outputs"]


@pytest.mark.slow
def test_solve_then_replay(tmp_path):
    """A replayed manifest reproduces the branch table byte for byte."""
    args = ["solve", "-o", str(tmp_path), "--set", "system.alpha=0.93", "--set", "system.bond_length=2.0"]
    args += tiny_overrides() + ["--set", "output.vtk=false"]
    code = main(args)
    assert code in (0, 3)

    directory = tmp_path / "solve"
    first = (directory / "branches.csv").read_text()
    summary = json.loads((directory / "summary.json").read_text())
    assert summary["bond_length"] == 2.0
    assert (directory / f"state_{summary['states'][0]['init']}.npz").exists()
    assert not list(directory.glob("*.vtk"))

    manifest = directory / "manifest.json"
    assert json.loads(manifest.read_text())["config"]["command"] == "solve"
    assert main(["replay", str(manifest), "-o", str(tmp_path)]) == code
    assert (directory / "branches.csv").read_text() == first


@pytest.mark.slow
def test_sweep_command(tmp_path):
    args = ["sweep", "-o", str(tmp_path), "--set", "sweep.fixed=alpha", "--set", "sweep.value=0.93"]
    args += ["--set", "sweep.grid=[2.0]", "--set", "sweep.inits=[delocalized]"] + tiny_overrides()
    assert main(args) in (0, 3)
    rows = read_csv(tmp_path / "sweep" / "branches.csv")
    assert len(rows) == 1
    assert float(rows[0]["bond_length"]) == 2.0
    summary = json.loads((tmp_path / "sweep" / "summary.json").read_text())
    assert summary["points"][0]["init"] == "delocalized"


@pytest.mark.slow
def test_hessian_command(tmp_path):
    args = ["hessian", "-o", str(tmp_path), "--set", "system.alpha=0.0", "--set", "system.bond_length=2.0"]
    args += tiny_overrides() + ["--set", "scf.tol_energy=1e-9", "--set", "scf.max_iterations=400"]
    code = main(args)
    assert code in (0, 3)
    data = json.loads((tmp_path / "hessian" / "hessian.json").read_text())
    assert data["scf"]["converged"] == (data["hessian"] is not None)


def test_dataclass_value_errors_are_config_errors(output_root):
    """A value the parameter classes reject maps to the config exit code."""
    assert main(["soliton", "--set", "soliton.r_max=5"]) == 2


def test_manifest_records_the_command_line_flags(tmp_path, monkeypatch):
    from h2xlda.commands.sweep import Command

    seen = {}

    def handle(self, **options):
        self.setup(options)
        seen.update(options)
        self.finish()
        return 0

    monkeypatch.setattr(Command, "handle", handle)
    args = ["sweep", "-o", str(tmp_path), "--hessian", "--workers", "2", "--set", "sweep.fixed=alpha"]
    args += ["--set", "sweep.value=0.93", "--set", "sweep.grid=[2.0]"]
    assert main(args) == 0
    config = json.loads((tmp_path / "sweep" / "manifest.json").read_text())["config"]
    assert config["command"] == "sweep"
    assert config["options"] == {"hessian": True, "workers": 2}

    seen.clear()
    assert main(["replay", str(tmp_path / "sweep" / "manifest.json"), "-o", str(tmp_path / "again")]) == 0
    assert seen["hessian"] is True
    assert seen["workers"] == 2
    assert (tmp_path / "again" / "sweep" / "manifest.json").exists()


@pytest.mark.slow
def test_sweep_with_hessian_replays_with_hessian(tmp_path):
    args = ["sweep", "-o", str(tmp_path), "--hessian", "--set", "sweep.fixed=alpha", "--set", "sweep.value=0.0"]
    args += ["--set", "sweep.grid=[2.0]", "--set", "sweep.inits=[delocalized]"] + tiny_overrides()
    args += ["--set", "scf.tol_energy=1e-9", "--set", "scf.max_iterations=400"]
    assert main(args) == 0
    first = read_csv(tmp_path / "sweep" / "branches.csv")
    assert first[0]["converged"] == "true"
    assert first[0]["n_negative_eigs"] != ""

    replayed = tmp_path / "replayed"
    assert main(["replay", str(tmp_path / "sweep" / "manifest.json"), "-o", str(replayed)]) == 0
    again = read_csv(replayed / "sweep" / "branches.csv")
    assert again[0]["n_negative_eigs"] == first[0]["n_negative_eigs"]


@pytest.mark.slow
def test_phase_command(tmp_path):
    args = ["phase", "-o", str(tmp_path), "--set", "phase.alpha_grid=[0.93]", "--set", "phase.bond_grid=[2.0, 3.0]"]
    args += ["--set", "phase.inits=[delocalized, antiferro]", "--set", "phase.hessian=false"] + tiny_overrides()
    assert main(args) in (0, 4)
    rows = read_csv(tmp_path / "phase" / "phase.csv")
    assert [float(r["alpha"]) for r in rows] == [0.93]
    assert rows[0]["status"] in ("open", "closed")
    data = json.loads((tmp_path / "phase" / "phase.json").read_text())
    assert set(data) >= {"polyline", "open"}
    assert read_csv(tmp_path / "phase" / "branches.csv")


@pytest.mark.slow
def test_compare_command(tmp_path):
    args = ["compare", "-o", str(tmp_path), "--set", "compare.alphas=[10.0]", "--set", "compare.bond_length=2.0"]
    args += ["--set", "soliton.extra_local_rounds=0"] + tiny_overrides()
    code = main(args)
    assert code in (0, 3)
    data = json.loads((tmp_path / "compare" / "rescale.json").read_text())
    assert data["bond_length"] == 2.0
    assert len(data["reports"]) + len(data["unconverged"]) == 1
    for report in data["reports"]:
        assert len(report["center_errors"]) == 2
