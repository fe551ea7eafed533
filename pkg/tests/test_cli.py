import csv
import json

import numpy as np
import pytest

from stochscf import cli, dftb


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_gen_files_and_suffix(workdir):
    assert cli.main(["gen", "--lattice", "honeycomb", "--atoms", "32", "--seed", "7", "-o", "sys"]) == 0
    assert sorted(p.name for p in (workdir / "sys").iterdir()) == sorted(dftb.SYSTEM_FILES)
    assert cli.main(["gen", "--lattice", "honeycomb", "--atoms", "32", "--seed", "7", "-o", "sys"]) == 0
    for f in dftb.SYSTEM_FILES:
        assert (workdir / "sys" / f).read_bytes() == (workdir / "sys-2" / f).read_bytes()


def test_gen_error_codes(workdir):
    assert cli.main(["gen", "--overlap", "0.9", "-o", "bad"]) == 3
    assert cli.main(["gen", "--atoms", "0", "-o", "bad"]) == 2
    assert cli.main(["gen", "--lattice", "cubic", "-o", "bad"]) == 2


def test_scf_exact_chain(workdir):
    assert cli.main(["gen", "--lattice", "chain", "--atoms", "2", "--beta", "2", "--hubbard", "4", "-o", "c2"]) == 0
    assert cli.main(["scf-exact", "c2", "-o", "ex", "--tol", "1e-11"]) == 0
    doc = json.loads((workdir / "ex" / "qstar.json").read_text())
    assert doc["converged"] and doc["residual_inf"] <= 1e-11
    system = dftb.load_system(workdir / "c2")
    model = dftb.SCCModel(system)
    w = np.linalg.eigvalsh(model.build_A(np.array(doc["q"])))
    assert sum(doc["q"]) == pytest.approx(system.occupation(w).sum(), abs=1e-9)
    manifest = json.loads((workdir / "ex" / "manifest.json").read_text())
    assert manifest["exit_status"] == 0 and "qstar.json" in manifest["outputs"]


def test_scf_exact_zero_iterations(workdir):
    cli.main(["gen", "--atoms", "4", "-o", "s"])
    assert cli.main(["scf-exact", "s", "-o", "ex", "--max-iter", "0"]) == 4
    assert (workdir / "ex" / "trace.csv").read_text() == "n,a_n,res_proxy_inf,wall_ms\n"


def test_missing_system_is_invalid(workdir):
    assert cli.main(["scf-exact", "nowhere", "-o", "ex"]) == 3


@pytest.fixture
def sys16(workdir):
    assert cli.main(["gen", "--atoms", "16", "--beta", "2", "--hubbard", "4", "-o", "s16"]) == 0
    assert cli.main(["scf-exact", "s16", "-o", "ex"]) == 0
    return workdir


def test_stochastic_simple_schedule_column(sys16):
    assert cli.main(["scf-stochastic", "s16", "--scheme", "simple", "--ell", "8", "--seed", "1",
                     "--max-iter", "200", "--warmup", "0", "--block-size", "50", "-o", "run",
                     "--qstar", "ex/qstar.json"]) == 0
    rows = _rows(sys16 / "run" / "trace.csv")
    a = [float(r["a_n"]) for r in rows]
    assert all(x > 0 for x in a)
    assert a[0] == 0.005 and a[199] == pytest.approx(min(1 / 450, 0.005))
    assert all(r["err_inf"] for r in rows)
    doc = json.loads((sys16 / "run" / "averaged.json").read_text())
    assert len(doc["averaged"]) == 16 and len(doc["block_means"]) == 4


def test_stochastic_linear_uniform(sys16):
    assert cli.main(["scf-stochastic", "s16", "--scheme", "linear", "--m", "3", "--b", "uniform", "--ell", "4",
                     "--max-iter", "60", "--warmup", "10", "-o", "lin"]) == 0
    rows = _rows(sys16 / "lin" / "trace.csv")
    for r in rows[10:]:
        assert [float(r[f"b_{i}"]) for i in (1, 2, 3)] == [1 / 3] * 3


def test_stochastic_anderson_rows_sum_to_one(sys16):
    assert cli.main(["scf-stochastic", "s16", "--scheme", "anderson", "--m", "3", "--ell", "4",
                     "--max-iter", "80", "--warmup", "5", "-o", "and"]) == 0
    rows = _rows(sys16 / "and" / "trace.csv")
    bs = np.array([[float(r[f"b_{i}"]) for i in (1, 2, 3)] for r in rows[5:]])
    assert np.max(np.abs(bs.sum(axis=1) - 1)) <= 1e-12
    assert np.ptp(bs[:, 0]) > 0


def test_stochastic_bad_flags(sys16):
    assert cli.main(["scf-stochastic", "s16", "--scheme", "linear", "--m", "2", "--b", "0.5,0.4", "-o", "x"]) == 2
    assert cli.main(["scf-stochastic", "s16", "--scheme", "linear", "--m", "2", "--b", "0.5", "-o", "x"]) == 2


def test_stochastic_divergence_exit(workdir):
    cli.main(["gen", "--atoms", "4", "-o", "s"])
    code = cli.main(["scf-stochastic", "s", "--ell", "4", "--max-iter", "50", "--warmup", "0",
                     "--damping-a", "1e200", "--damping-offset", "1", "--damping-slope", "0", "--damping-cap", "none",
                     "-o", "div"])
    assert code == 5
    assert (workdir / "div" / "trace.csv").exists()
    assert json.loads((workdir / "div" / "manifest.json").read_text())["exit_status"] == 5


def test_config_file_flags_win(sys16):
    (sys16 / "run.json").write_text(json.dumps({"max_iter": 30, "ell": 4, "seed": 9, "warmup": 0}))
    assert cli.main(["scf-stochastic", "s16", "--config", "run.json", "--max-iter", "20", "-o", "cf"]) == 0
    m = json.loads((sys16 / "cf" / "manifest.json").read_text())
    assert m["config"]["max_iter"] == 20 and m["config"]["ell"] == 4 and m["seed"] == 9
    (sys16 / "bad.json").write_text(json.dumps({"nonsense": 1}))
    assert cli.main(["scf-stochastic", "s16", "--config", "bad.json", "-o", "cf"]) == 2


def test_sweep_empty_ells(sys16):
    assert cli.main(["sweep-ell", "s16", "--ells", ""]) == 2


def test_help_returns_zero(capsys):
    assert cli.main(["--help"]) == 0
    assert "scf-stochastic" in capsys.readouterr().out


def test_stability_and_complexity(workdir):
    assert cli.main(["stability-mc", "--preset", "scalar-half", "--paths", "50", "--seed", "1", "-o", "mc"]) == 0
    rep = json.loads((workdir / "mc" / "report.json").read_text())
    assert rep["bound"] >= rep["exit_probability"]
    assert cli.main(["stability-mc", "--paths", "0", "-o", "mc0"]) == 2
    assert cli.main(["stability-mc", "--preset", "nope", "-o", "mc1"]) == 2
    assert cli.main(["complexity", "--deterministic", "--epsilons", "0.1,0.001,1e-5", "--seeds", "0",
                     "--max-iter", "500", "-o", "cx"]) == 0
    rep = json.loads((workdir / "cx" / "report.json").read_text())
    assert rep["log_fit_r2"] > 0.99
