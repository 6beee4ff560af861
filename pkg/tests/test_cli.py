import csv
import io
import os
import subprocess
import sys

import pytest

from ossbb import __version__
from ossbb.cli import RunConfig, run


def parse(text):
    comments = [l for l in text.splitlines() if l.startswith("#")]
    body = [l for l in text.splitlines() if l and not l.startswith("#")]
    return comments, list(csv.DictReader(io.StringIO("\n".join(body))))


def invoke(capsys, *argv):
    code = run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_price_defaults(capsys):
    code, out, _ = invoke(capsys, "price", "--estimator", "oss_bb", "--set", "sim.n_paths=20000")
    assert code == 0
    comments, rows = parse(out)
    assert len(rows) == 1
    row = rows[0]
    assert row["estimator"] == "oss_bb" and int(row["N"]) == 64 and int(row["M"]) == 20000
    assert 0.0 < float(row["mean"]) < 0.1
    assert f"# ossbb {__version__}" in comments
    assert "# seed = 0" in comments
    for key in ("option.S0 = 1.0", "option.B = 1.1", "option.K = 1.0", "model.r = 0.05", "model.vol = 0.2"):
        assert f"# {key}" in comments


def test_csv_row_reruns_bit_exactly(capsys, tmp_path):
    argv = ("price", "--seed", "5", "--set", "sim.n_paths=5000", "--set", "sim.n_steps=16")
    _, first, _ = invoke(capsys, *argv)
    cfg = tmp_path / "run.ini"
    cfg.write_text("[sim]\nseed = 5\nn_paths = 5000\nn_steps = 16\n")
    _, second, _ = invoke(capsys, "price", "--config", str(cfg))
    assert parse(first)[1] == parse(second)[1]


def test_missing_required_key_names_it(capsys):
    code, _, err = invoke(capsys, "price", "--set", "model.kind=cev")
    assert code == 2
    assert "model.beta" in err


def test_unknown_key_rejected(capsys, tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[sim]\nbogus = 3\n")
    code, _, err = invoke(capsys, "price", "--config", str(cfg))
    assert code == 2 and "sim.bogus" in err


@pytest.mark.parametrize("argv", [
    ("price", "--set", "sim.n_paths=abc"),
    ("price", "--set", "option.K=2.0"),
    ("price", "--set", "nodot=1"),
    ("price", "--threads", "0"),
    ("mlmc", "--eps", "-1"),
    ("frobnicate",),
])
def test_config_errors_exit_2(capsys, argv):
    assert invoke(capsys, *argv)[0] == 2


def test_numerical_failure_exit_1(capsys):
    code, _, err = invoke(capsys, "mlmc", "--eps", "4e-4", "--set", "mlmc.max_level=0")
    assert code == 1 and "error" in err


def test_cev_price_runs(capsys):
    code, out, _ = invoke(capsys, "price", "--set", "model.kind=cev", "--set", "model.beta=0.8",
                          "--set", "sim.n_paths=2000", "--set", "sim.n_steps=8")
    assert code == 0 and float(parse(out)[1][0]["mean"]) > 0


def test_oracle_reference_case(capsys):
    code, out, _ = invoke(capsys, "oracle")
    assert code == 0
    vals = {r["quantity"]: float(r["value"]) for r in parse(out)[1]}
    assert vals["up_and_out_call"] == pytest.approx(0.0011861405278910109, rel=1e-12)
    assert vals["delta"] < 0 and vals["gamma"] < 0


def test_oracle_rejects_cev(capsys):
    assert invoke(capsys, "oracle", "--set", "model.kind=cev", "--set", "model.beta=0.5")[0] == 2


def test_greeks_routes(capsys):
    base = ("--set", "sim.n_paths=4000", "--set", "sim.n_steps=8", "--set", "greeks.components=S0,vol")
    code, out, _ = invoke(capsys, "greeks", *base)
    rows = parse(out)[1]
    assert code == 0 and [r["component"] for r in rows] == ["S0", "vol"]
    for order in ("first_fd", "second_fd", "second_fd_of_pathwise"):
        code, out, _ = invoke(capsys, "greeks", *base, "--set", f"greeks.order={order}",
                              "--set", "greeks.step=1e-3")
        assert code == 0 and len(parse(out)[1]) == 2


def test_mlmc_summary(capsys):
    code, out, _ = invoke(capsys, "mlmc", "--eps", "1e-3")
    comments, rows = parse(out)
    assert code == 0
    assert list(rows[0]) == ["level", "h_l", "M_l", "mean_Yl", "var_Yl", "cost"]
    summary = [c for c in comments if c.startswith("# summary:")]
    assert summary and "price=" in summary[0] and "total_cost=" in summary[0]


def test_converge_small_grid(capsys):
    code, out, _ = invoke(capsys, "converge", "--estimator", "baseline", "--set", "converge.n_grid=4,8,16",
                          "--set", "converge.M=100000", "--set", "converge.M_cap=400000")
    comments, rows = parse(out)
    assert code == 0
    assert [int(r["N"]) for r in rows] == [4, 8, 16]
    assert {"estimator", "N", "h", "mean", "bias", "std_error"} <= set(rows[0])
    assert any(c.startswith("# summary: slope=") for c in comments)


def test_fig3_columns(capsys):
    code, out, _ = invoke(capsys, "figures", "fig3", "--set", "figures.s0_grid=0.9,1.0",
                          "--set", "figures.gamma_paths=2000", "--set", "sim.n_steps=8")
    rows = parse(out)[1]
    assert code == 0 and len(rows) == 2
    assert {"S0", "gamma_bb", "gamma_oss", "reference_gamma"} <= set(rows[0])


def test_fig4_and_fig1(capsys):
    code, out, _ = invoke(capsys, "figures", "fig4", "--set", "figures.levels=0,1,2",
                          "--set", "figures.level_paths=2000")
    assert code == 0 and [int(r["level"]) for r in parse(out)[1]] == [0, 1, 2]
    code, out, _ = invoke(capsys, "figures", "fig1", "--set", "figures.m_grid=500,1000",
                          "--set", "sim.n_steps=8")
    rows = parse(out)[1]
    assert code == 0 and len(rows) == 4 and {"mse", "cpu_time"} <= set(rows[0])


def test_out_file(capsys, tmp_path):
    path = tmp_path / "o.csv"
    code, out, _ = invoke(capsys, "oracle", "--out", str(path))
    assert code == 0 and out == ""
    assert "up_and_out_call" in path.read_text()


def test_runconfig_overrides_file(tmp_path):
    cfg = tmp_path / "a.ini"
    cfg.write_text("[sim]\nseed = 3\n[option]\nK = 0.95\n")
    rc = RunConfig.load(str(cfg), ["sim.seed=9"])
    assert rc.sim().seed == 9 and rc.option().K == 0.95


def test_output_identical_across_thread_counts(tmp_path):
    env = {**os.environ, "NUMBA_NUM_THREADS": "4"}
    outs = []
    for threads in (1, 4):
        path = tmp_path / f"t{threads}.csv"
        subprocess.run([sys.executable, "-m", "ossbb", "price", "--seed", "3", "--threads", str(threads),
                        "--set", "sim.n_paths=150000", "--set", "sim.n_steps=16", "--out", str(path)],
                       check=True, env=env, capture_output=True)
        outs.append(path.read_text())
    assert outs[0] == outs[1]
