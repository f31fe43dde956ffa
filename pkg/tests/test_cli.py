import csv
import json
import math
import re

import pytest

from momentband.cli import main
from momentband.data import save_dataset
from momentband.sim import DgpSpec, generate_full


@pytest.fixture(scope="module")
def toy_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("data") / "toy.csv"
    draw = generate_full(DgpSpec(kind="linear_cate", noise_scale=0.4), 400, seed=4)
    save_dataset(draw.dataset, p)
    return str(p)


def run(args):
    return main(args)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


FAST = ["--set", "trees=150", "--set", "replicates=40",
        "--set", "nuisance_trees=80"]


def test_fit_conditional_mean_minimal(toy_csv, tmp_path, capsys):
    out = tmp_path / "fit"
    code = run(["fit", "--data", toy_csv, "--out", str(out), "--seed", "1",
                "--moment", "conditional_mean", "--treatment", "",
                "--grid", "0:1:6", *FAST])
    assert code == 0
    rows = read_csv(out / "estimates.csv")
    assert len(rows) == 7
    assert rows[0] == ["x1", "theta_hat", "denominator", "support_size", "status"]
    assert all(r[-1] == "ok" for r in rows[1:])
    text = capsys.readouterr().out
    assert "statuses" in text


def test_unknown_config_key_exits_2(toy_csv, tmp_path, capsys):
    code = run(["fit", "--data", toy_csv, "--out", str(tmp_path / "x"),
                "--set", "bogus_key=1"])
    assert code == 2
    err = capsys.readouterr().err
    doc = json.loads(err.strip().splitlines()[-1])
    assert doc["error"] == "ConfigError"
    assert "bogus_key" in doc["message"]


def test_default_bn_is_five_percent(toy_csv, tmp_path):
    out = tmp_path / "fit"
    assert run(["fit", "--data", toy_csv, "--out", str(out), "--seed", "2",
                "--grid", "0:1:4", *FAST]) == 0
    meta = read_json(out / "fit.json")
    assert meta["bn"] == 0.05
    assert meta["forest_config"]["b"] == math.ceil(0.05 * 400)


def test_band_defaults_alpha_and_replicates(toy_csv, tmp_path):
    out = tmp_path / "band"
    assert run(["band", "--data", toy_csv, "--out", str(out), "--seed", "3",
                "--grid", "0:1:4", "--set", "trees=150",
                "--set", "nuisance_trees=80"]) == 0
    doc = read_json(out / "band.json")
    assert doc["alpha"] == 0.1
    assert doc["B"] == 200
    rows = read_csv(out / "band.csv")
    for r in rows[1:]:
        if r[-1] == "ok":
            theta, lo, hi = float(r[1]), float(r[2]), float(r[3])
            assert lo <= theta <= hi


def test_band_from_bundle_matches_inline(toy_csv, tmp_path):
    fit_dir = tmp_path / "fit"
    inline_dir = tmp_path / "inline"
    bundle_dir = tmp_path / "frombundle"
    common = ["--data", toy_csv, "--seed", "9", "--grid", "0:1:5", *FAST]
    assert run(["fit", "--out", str(fit_dir), *common]) == 0
    assert run(["band", "--out", str(inline_dir), *common]) == 0
    assert run(["band", "--fit", str(fit_dir), "--out", str(bundle_dir),
                "--data", toy_csv, "--seed", "9", *FAST]) == 0
    assert (inline_dir / "band.csv").read_bytes() == \
        (bundle_dir / "band.csv").read_bytes()


def test_rerun_byte_identical_apart_from_timestamp(toy_csv, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["band", "--data", toy_csv, "--seed", "5", "--grid", "0:1:4", *FAST]
    assert run([*args, "--out", str(a)]) == 0
    assert run([*args, "--out", str(b)]) == 0
    assert (a / "band.csv").read_bytes() == (b / "band.csv").read_bytes()
    strip = lambda p: re.sub(rb'"created_at": "[^"]*"', b'', p.read_bytes())
    assert strip(a / "band.json") == strip(b / "band.json")


def test_heatmap_grids_for_2d_queries(toy_csv, tmp_path):
    out = tmp_path / "heat"
    assert run(["band", "--data", toy_csv, "--out", str(out), "--seed", "6",
                "--grid", "0:1:3;0:1:3", "--conditioning", "z1,z2", *FAST]) == 0
    for name in ("heat_theta.csv", "heat_lower.csv", "heat_upper.csv"):
        rows = read_csv(out / name)
        assert rows[0] == ["x1", "x2", "value"]
        assert len(rows) == 10


def test_simulate_cell_grid_and_seed_echo(tmp_path):
    out = tmp_path / "sim"
    code = run(["simulate", "--out", str(out), "--seed", "11",
                "--set", "base_n=240", "--set", "multipliers=1,1.5",
                "--set", "regimes=const:0.1,fixed_b:0.1",
                "--set", "sim_reps=2", "--set", "grid_resolution=3",
                "--set", "trees=120", "--set", "replicates=30",
                "--set", "nuisance_trees=60"])
    assert code == 0
    rows = read_csv(out / "coverage.csv")
    assert len(rows) == 5  # header + 2x2 cells
    doc = read_json(out / "coverage.json")
    assert doc["master_seed"] == 11
    assert "failures" in doc


def test_simulate_counts_failures(tmp_path):
    out = tmp_path / "simfail"
    code = run(["simulate", "--out", str(out), "--seed", "12",
                "--set", "base_n=40", "--set", "multipliers=1",
                "--set", "regimes=const:0.1", "--set", "sim_reps=2",
                "--set", "grid_resolution=3"])
    assert code == 0
    rows = read_csv(out / "coverage.csv")
    header, row = rows[0], rows[1]
    assert row[header.index("failures")] == "2"


def test_crossfit_mode_end_to_end(toy_csv, tmp_path):
    fit_dir = tmp_path / "cffit"
    band_dir = tmp_path / "cfband"
    common = ["--data", toy_csv, "--seed", "21", "--grid", "0:1:4",
              "--mode", "crossfit", "--scheme", "kfold",
              "--set", "kfold_k=2", "--set", "trees=120",
              "--set", "replicates=30", "--set", "nuisance_trees=60"]
    assert run(["fit", "--out", str(fit_dir), *common]) == 0
    meta = read_json(fit_dir / "fit.json")
    assert len(meta["folds"]) == 2
    assert run(["band", "--fit", str(fit_dir), "--out", str(band_dir),
                "--data", toy_csv, "--seed", "21"]) == 0
    rows = read_csv(band_dir / "band.csv")
    for r in rows[1:]:
        if r[-1] == "ok":
            assert float(r[2]) <= float(r[1]) <= float(r[3])


def test_independent_split_scheme(toy_csv, tmp_path):
    out = tmp_path / "split"
    assert run(["fit", "--data", toy_csv, "--out", str(out), "--seed", "22",
                "--grid", "0:1:4", "--scheme", "independent_split", *FAST]) == 0
    meta = read_json(out / "fit.json")
    assert meta["n_estimation"] == 200  # half of 400 held out for nuisances


def test_knn_kernel_end_to_end(toy_csv, tmp_path):
    out = tmp_path / "knn"
    assert run(["band", "--data", toy_csv, "--out", str(out), "--seed", "23",
                "--grid", "0:1:4", "--set", "kernel=knn", "--set", "knn_k=15",
                *FAST]) == 0
    rows = read_csv(out / "band.csv")
    assert all(r[-1] == "ok" for r in rows[1:])


def test_ustat_additive_zero_residual(tmp_path, capsys):
    out = tmp_path / "ustat"
    code = run(["ustat", "--out", str(out), "--seed", "1",
                "--set", "ustat_kernel=additive", "--set", "ustat_n=12",
                "--set", "ustat_b=2", "--set", "ustat_reps=10"])
    assert code == 0
    rows = read_csv(out / "ustat_report.csv")
    header = rows[0]
    assert "variance_check_ok" in header
    q50 = float(rows[1][header.index("resid_q50")])
    assert abs(q50) <= 1e-12


def test_ustat_budget_overflow_exits_3(tmp_path, capsys):
    code = run(["ustat", "--out", str(tmp_path / "u"), "--seed", "1",
                "--set", "ustat_n=40", "--set", "ustat_b=12",
                "--set", "budget=1000"])
    assert code == 3
    doc = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert doc["error"] == "BudgetExceeded"
    assert "budget" in doc["message"]


def test_strict_odd_n_exits_4(tmp_path, capsys):
    p = tmp_path / "odd.csv"
    draw = generate_full(DgpSpec(kind="linear_cate", noise_scale=0.4), 401, seed=13)
    save_dataset(draw.dataset, p)
    code = run(["fit", "--data", str(p), "--out", str(tmp_path / "o"),
                "--seed", "1", "--grid", "0:1:3", "--set", "odd_n=strict",
                *FAST])
    assert code == 4
    doc = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert doc["error"] == "OddN"


def test_missing_data_flag_exits_2(capsys):
    assert run(["fit", "--out", "/tmp/nowhere"]) == 2


def test_help_documents_config_keys(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    text = capsys.readouterr().out
    for key in ("bn", "replicates", "ustat_law", "regimes", "odd_n"):
        assert key in text
