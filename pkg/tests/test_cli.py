import csv
import json

import numpy as np
import pytest
from helpers import toy_config

from dmpot.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main
from dmpot.data_model import write_csv
from dmpot.simulate import simulate_panel

TINY = {
    "mcmc": {"chains": 1, "iterations": 80, "thin": 2, "feasibility_draws": 20_000},
    "products": {"max_draws": 10, "grid_points": 16, "tail_points": 4},
}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def toy_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    panel, _ = simulate_panel(toy_config(n_days=8000, seed=2))
    with open(root / "panel.csv", "w", newline="") as fh:
        write_csv(panel, fh)
    cfg = {**TINY, "data": "panel.csv", "thresholds": [100.0, 150.0], "zeta": "full", "run_length": 1}
    return root, write_json(root / "run.json", cfg)


@pytest.fixture(scope="module")
def lookalike_fit(tmp_path_factory):
    root = tmp_path_factory.mktemp("look")
    cfg = write_json(root / "tiny.json", TINY)
    out = root / "fit"
    assert main(["fit", "--config", cfg, "--out", str(out)]) == EXIT_OK
    return root, out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_lookalike_fit_writes_all_pair_files(lookalike_fit):
    _, out = lookalike_fit
    assert len(list(out.glob("angular_*.csv"))) == 6
    assert len(list(out.glob("tail_*_given_*.csv"))) == 12
    assert len(read_rows(out / "chi.csv")) == 6
    for name in ("posterior.csv", "diagnostics.json", "draws.json", "fit.json", "return_levels.csv"):
        assert (out / name).is_file()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["software"]["name"] == "dmpot" and manifest["seeds"]["mcmc"] == 0


def test_manifest_rerun_is_byte_identical(lookalike_fit):
    root, out = lookalike_fit
    again = root / "again"
    assert main(["fit", "--config", str(out / "manifest.json"), "--out", str(again)]) == EXIT_OK
    a = json.loads((out / "manifest.json").read_text())
    b = json.loads((again / "manifest.json").read_text())
    assert a["outputs"] == b["outputs"] and a["config_sha256"] == b["config_sha256"]


def test_fit_directory_commands(lookalike_fit, tmp_path):
    _, out = lookalike_fit
    for cmd, produced in (("summarize", "summary.csv"), ("return-levels", "return_levels.csv"), ("chi", "chi.csv"),
                          ("loglik", "loglik.json")):
        dest = tmp_path / cmd
        assert main([cmd, "--fit", str(out), "--out", str(dest)]) == EXIT_OK
        assert (dest / produced).is_file()
    ll = json.loads((tmp_path / "loglik" / "loglik.json").read_text())
    assert np.isfinite(ll["log_lik"]) and ll["plug_in"] == "maximum-posterior"


def test_simulate_command(tmp_path):
    assert main(["simulate", "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["simulate", "--out", str(tmp_path / "b")]) == EXIT_OK
    assert (tmp_path / "a" / "panel.csv").read_bytes() == (tmp_path / "b" / "panel.csv").read_bytes()
    truth = json.loads((tmp_path / "a" / "truth.json").read_text())
    assert truth["seed"] == 20101231


def test_decluster_command(toy_files, tmp_path):
    root, cfg = toy_files
    assert main(["decluster", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    info = json.loads((tmp_path / "summary.json").read_text())
    rows = read_rows(tmp_path / "clusters.csv")
    assert len(rows) == 2 * info["n_clusters"] > 0
    assert info["below_days"] + info["cluster_days"] + info["missing_days"] + info["undetermined_days"] == 8000


def test_recent_only_truncates(tmp_path):
    cfg = write_json(tmp_path / "c.json", {})
    assert main(["decluster", "--config", cfg, "--out", str(tmp_path / "full")]) == EXIT_OK
    assert main(["decluster", "--config", cfg, "--recent-only", "--out", str(tmp_path / "recent")]) == EXIT_OK
    full = json.loads((tmp_path / "full" / "summary.json").read_text())
    recent = json.loads((tmp_path / "recent" / "summary.json").read_text())
    assert full["n_days"] == 148401
    assert recent["n_days"] == 148401 - 104937
    first = min(r["start_date"] for r in read_rows(tmp_path / "recent" / "clusters.csv"))
    assert first >= "1892-01-01"


def test_seed_flag_changes_output(toy_files, tmp_path):
    _, cfg = toy_files
    assert main(["fit", "--config", cfg, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["fit", "--config", cfg, "--seed", "5", "--out", str(tmp_path / "b")]) == EXIT_OK
    a = (tmp_path / "a" / "posterior.csv").read_bytes()
    b = (tmp_path / "b" / "posterior.csv").read_bytes()
    assert a != b
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seeds"]["mcmc"] == 5


@pytest.mark.parametrize(
    "config, code",
    [
        ({"mcmc": {"chains": 0}}, EXIT_CONFIG),
        ({"unknown_key": 1}, EXIT_CONFIG),
        ({"data": "missing.csv", "thresholds": [1.0]}, EXIT_CONFIG),
        ({"thresholds": [1.0, 2.0]}, EXIT_CONFIG),
        ({"mcmc": {"iterations": 10, "burn_in": 10}}, EXIT_CONFIG),
    ],
)
def test_config_errors(tmp_path, config, code):
    cfg = write_json(tmp_path / "c.json", config)
    assert main(["decluster" if "iterations" not in str(config) else "fit", "--config", cfg,
                 "--out", str(tmp_path)]) == code


def test_bad_data_file_is_a_data_error(tmp_path):
    (tmp_path / "bad.csv").write_text("date,site,kind,value,lower,upper\n2000-01-01,A,1,,,\n")
    cfg = write_json(tmp_path / "c.json", {"data": "bad.csv", "thresholds": [1.0]})
    assert main(["decluster", "--config", cfg, "--out", str(tmp_path)]) == EXIT_DATA


def test_threshold_above_everything_is_a_data_error(toy_files, tmp_path):
    root, _ = toy_files
    cfg = write_json(root / "high.json", {**TINY, "data": "panel.csv", "thresholds": [1e9, 1e9], "zeta": "full"})
    assert main(["fit", "--config", cfg, "--out", str(tmp_path)]) == EXIT_DATA


def test_empty_posterior_reports_no_retained_draws(toy_files, tmp_path, capsys):
    _, cfg = toy_files
    out = tmp_path / "fit"
    assert main(["fit", "--config", cfg, "--out", str(out)]) == EXIT_OK
    draws = json.loads((out / "draws.json").read_text())
    for ch in draws["chains"]:
        ch["draws"] = []
    (out / "draws.json").write_text(json.dumps(draws))
    assert main(["chi", "--fit", str(out), "--out", str(tmp_path / "chi")]) == EXIT_NUMERIC
    assert "no retained draws" in capsys.readouterr().err


def test_missing_fit_directory(tmp_path):
    assert main(["chi", "--fit", str(tmp_path / "nothing"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_lrt_needs_both_fits(lookalike_fit, tmp_path):
    _, out = lookalike_fit
    assert main(["loglik", "--regional-fit", str(out), "--out", str(tmp_path)]) == EXIT_CONFIG


@pytest.mark.slow
def test_experiment_grid(tmp_path):
    from dmpot.cli import _merge, load_config, run_experiment_grid

    cfg = _merge(load_config(None), {"mcmc": {"chains": 1, "iterations": 1500, "thin": 5, "seed": 1},
                                     "products": {"max_draws": 20, "grid_points": 16, "tail_points": 4}})
    res = run_experiment_grid(cfg, tmp_path)
    assert res["errors"] == {}
    assert sorted(res["results"]) == ["local-full", "local-recent", "regional-full", "regional-recent"]
    rows = read_rows(tmp_path / "comparison.csv")
    cells = {}
    for r in rows:
        cells.setdefault((r["site"], r["T_years"]), []).append(r["variant"])
    assert all(len(v) == 4 for v in cells.values())
    sd = {
        name: {k: v.std() for k, v in r.selected.marginal_scalars().items() if k.startswith("xi_")}
        for name, r in res["results"].items()
    }
    narrower = sum(sd["local-full"][k] < sd["local-recent"][k] for k in sd["local-full"])
    assert narrower >= 3
    assert set(res["lrt"]) == {"full", "recent"}
    assert 0.0 <= res["lrt"]["full"]["p_value"] <= 1.0
