from __future__ import annotations

import json

import numpy as np
import pytest

from ilaclab import cli, experiments, montecarlo
from ilaclab.config import ExperimentConfig
from ilaclab.eigensolver import ConvergenceError, eig_symmetric
from ilaclab.experiments import VerificationFailure, run_experiment
from ilaclab.lattice import BoxSpec, PotentialDistribution, build_laplacian
from ilaclab.spectral import dos_estimate


def _write(tmp_path, text, name="cfg.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


SMALL = """
[experiment]
kind = {kind}
realizations = 3
[box]
dimension = 1
side_length = 16
[distribution]
kind = {dist}
{extra}
"""


def small_config(tmp_path, kind, dist="uniform", extra="a1 = 0\nb1 = 1", section=""):
    return _write(tmp_path, SMALL.format(kind=kind, dist=dist, extra=extra) + section, f"{kind}.ini")


def test_zero_potential_single_realization_matches_dos_estimate(tmp_path):
    cfg = ExperimentConfig("dos", BoxSpec(1, 9), PotentialDistribution.bernoulli(0, 0), realizations=1)
    run_experiment(cfg, tmp_path)
    box = cfg.box
    expected = dos_estimate(eig_symmetric(build_laplacian(box)), box)
    assert (tmp_path / "dos_plus.csv").read_text() == expected.to_csv()
    assert (tmp_path / "dos_minus.csv").read_text() == expected.to_csv()


def test_manifest_contents(tmp_path):
    cfg = ExperimentConfig("ilac", BoxSpec(1, 10), realizations=2, master_seed=7)
    manifest = run_experiment(cfg, tmp_path)
    data = json.loads((tmp_path / "manifest.json").read_text())
    assert data["seeds"] == [[7, 0], [7, 1]]
    assert data["config"]["box"]["boundary"] == "dirichlet"
    assert ExperimentConfig.from_ini(data["config_ini"]) == cfg
    assert set(data["outputs"]) == {"ilac.csv", "ilac.meta.json"}
    assert data["outputs"] == manifest.outputs
    assert "wall_seconds" in data["timing"]


@pytest.mark.parametrize("kind", ["dos", "rho", "ilac", "tails", "verify21", "corners", "verify31"])
def test_digests_stable_across_workers(tmp_path, kind):
    cfg = ExperimentConfig(kind, BoxSpec(1, 12), realizations=4, master_seed=3)
    first = run_experiment(cfg, tmp_path / "a").outputs
    again = run_experiment(cfg.with_overrides(workers=2), tmp_path / "b").outputs
    assert first == again and first


def test_histograms_written(tmp_path):
    cfg = ExperimentConfig("dos", BoxSpec(1, 12), realizations=2, params={"bins": 5})
    run_experiment(cfg, tmp_path)
    lines = (tmp_path / "dos_hist.csv").read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,n_plus,n_minus" and len(lines) == 6
    total = sum(float(line.split(",")[2]) for line in lines[1:])
    assert total == pytest.approx(1.0)


def test_corners_outputs_two_band(tmp_path):
    cfg = ExperimentConfig(
        "corners", BoxSpec(1, 16), PotentialDistribution.two_interval((0, 1), (9, 10)), realizations=2
    )
    manifest = run_experiment(cfg, tmp_path)
    assert manifest.verification["passed"]
    header = (tmp_path / "theorem22_bounds.csv").read_text().splitlines()[0]
    assert header == "corner,a,ilac_increment,bound,holds"
    t23 = json.loads((tmp_path / "theorem23.json").read_text())
    # b1+ + b1- = -4 exceeds both mixed lower sums (-5), so the chain fails here
    assert t23["chain"][:3] == ["-14", "-4", "-5"] and not t23["ordering_holds"]
    reports = json.loads((tmp_path / "corners.json").read_text())
    assert all(set(r) == {"corner", "is_good", "K", "witness"} for r in reports)


def test_cli_runs_and_prints(tmp_path, capsys):
    path = small_config(tmp_path, "dos")
    code = cli.main(["dos", "--config", path, "--out", str(tmp_path / "out"), "--seed", "4"])
    assert code == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["config"]["experiment"]["master_seed"] == "4"


def test_cli_print_config(capsys):
    assert cli.main(["tails", "--print-config", "--realizations", "7"]) == 0
    out = capsys.readouterr().out
    assert "[tails]" in out and "realizations = 7" in out


@pytest.mark.parametrize(
    "argv",
    [
        ["dos", "--config", "/no/such/file.ini"],
        ["dos", "--workers", "0"],
        ["frobnicate"],
        ["dos", "--seed", "abc"],
        [],
    ],
)
def test_cli_usage_errors(argv, tmp_path):
    with pytest.raises(SystemExit) as info:
        raise SystemExit(cli.main(argv))
    assert info.value.code == 1


def test_cli_kind_mismatch(tmp_path):
    path = small_config(tmp_path, "ilac")
    assert cli.main(["dos", "--config", path]) == 1


def test_cli_numerical_failure(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise ConvergenceError(2, 50)

    monkeypatch.setattr(montecarlo, "eig_symmetric", boom)
    path = small_config(tmp_path, "rho")
    assert cli.main(["rho", "--config", path, "--out", str(tmp_path / "o")]) == 2


def test_cli_verification_failure(tmp_path, monkeypatch):
    monkeypatch.setattr(experiments, "theorem22_bound", lambda *args: -1.0)
    path = small_config(tmp_path, "corners")
    assert cli.main(["corners", "--config", path, "--out", str(tmp_path / "o")]) == 3
    # files are still written for inspection
    assert (tmp_path / "o" / "theorem22_bounds.csv").exists()


def test_verification_failure_carries_manifest(tmp_path, monkeypatch):
    monkeypatch.setattr(experiments, "theorem22_bound", lambda *args: -1.0)
    with pytest.raises(VerificationFailure) as info:
        run_experiment(ExperimentConfig("corners", BoxSpec(1, 10), realizations=1), tmp_path)
    assert not info.value.manifest.verification["passed"]


def test_cli_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["dos", "--realizations", "1", "--out", str(blocker / "sub")]) == 1


def test_covariance_cli(tmp_path):
    section = "[covariance]\ntorus_dimension = 1\ntorus_size = 8\nfamilies = 5\n"
    path = small_config(tmp_path, "covariance", section=section)
    assert cli.main(["covariance", "--config", path, "--out", str(tmp_path / "c")]) == 0
    checks = json.loads((tmp_path / "c" / "covariance.json").read_text())
    assert len(checks) == 1 + 5 + 10
    assert all(c["pass"] for c in checks)


def test_verify21_summary(tmp_path):
    cfg = ExperimentConfig("verify21", BoxSpec(1, 40), realizations=3)
    run_experiment(cfg, tmp_path)
    summary = json.loads((tmp_path / "verify21.json").read_text())
    assert summary["passed"] and summary["excluded"] == 0
    assert summary["edges"]["E_plus"] == -2.0 and summary["edges"]["E_minus"] == -3.0
    rows = (tmp_path / "verify21.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 20


def test_dos_local_estimator(tmp_path):
    cfg = ExperimentConfig("dos", BoxSpec(2, 5), realizations=2, params={"estimator": "local_at_site"})
    run_experiment(cfg, tmp_path)
    meta = json.loads((tmp_path / "dos_plus.meta.json").read_text())
    assert meta["estimator"] == "local_at_site"
    assert meta["total_mass"] == pytest.approx(1.0)
    assert np.isclose(sum(float(l.split(",")[1]) for l in (tmp_path / "dos_plus.csv").read_text().splitlines()[1:]), 1.0)
