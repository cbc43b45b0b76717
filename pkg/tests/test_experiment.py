import csv
import json
import logging

import numpy as np
import pytest

from ckli import cli, experiment
from ckli.config import parse_config
from ckli.io import read_field, read_observations, write_observations
from ckli.gpr import ObservationSet
from ckli.kernels import KernelSpec

SMALL = """
name = "small"
methods = ["cKLI", "cKLI-theta", "MAP"]

[grid]
nx = 8
ny = 8

[kernel]
family = "Matern52"
sigma = 1.0
length = 0.3

[observations]
n_y = 8
n_u = 10

[pickle]
n_xi = 10
n_eta = 12
subsample_factor = 2

[ensemble]
n_ens = 60

[run]
replicas = 2
seed = 5
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(SMALL)
    return p


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_cli_run_deterministic(cfg_path, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", "--config", str(cfg_path), "--replicas", "1", "--seed", "3", "--out", str(a)]) == 0
    assert cli.main(["run", "--config", str(cfg_path), "--replicas", "1", "--seed", "3", "--out", str(b)]) == 0
    ta, tb = _tree(a), _tree(b)
    assert ta == tb
    assert any(k.endswith("replica_0.json") for k in ta)


def test_cache_and_threads_do_not_change_results(cfg_path, tmp_path):
    cold, warm, threaded = tmp_path / "cold", tmp_path / "warm", tmp_path / "thr"
    cache = tmp_path / "cache"
    base = ["run", "--config", str(cfg_path), "--out"]
    assert cli.main(base + [str(cold), "--cache", str(cache)]) == 0
    n_cached = len(list(cache.glob("ens_*.npz")))
    assert n_cached >= 2
    assert cli.main(base + [str(warm), "--cache", str(cache)]) == 0
    assert len(list(cache.glob("ens_*.npz"))) == n_cached
    assert cli.main(base + [str(threaded), "--threads", "2"]) == 0
    assert _tree(cold) == _tree(warm) == _tree(threaded)


def test_outputs_and_provenance(cfg_path, tmp_path):
    out = tmp_path / "res"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    cfg = parse_config(SMALL)
    run = out / cfg.run_id
    data = json.loads((run / "replica_1.json").read_text())
    assert data["provenance"]["config_hash"] == cfg.config_hash()
    assert data["provenance"]["seed"] == 6
    assert set(data["provenance"]["versions"]) >= {"ckli", "numpy", "scipy"}
    assert set(data["metrics"]) == {
        "cKLI/Full", "cKLI/Subsampled", "cKLI-theta/Full", "cKLI-theta/Subsampled", "MAP/Full",
    }
    for f in (run / "fields").glob("*.csv"):
        head = f.read_text().splitlines()[0]
        assert head.startswith("# config_hash=" + cfg.config_hash())
        assert read_field(f).shape == (8, 8)
    lines = (run / "report.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    rows = list(csv.DictReader(line for line in lines if not line.startswith("#")))
    assert {"Full_median", "Subsampled_median", "Full_q25", "Full_q75"} <= set(rows[0])
    methods = {r["method"] for r in rows}
    assert methods == {"cKLI", "cKLI-theta", "MAP"}
    for r in rows:
        if r["method"] != "MAP":
            assert r["Subsampled_median"] != ""
        float(r["Full_median"])  # '.' decimal
        assert "," not in r["Full_median"]


def test_report_quantiles():
    rs = []
    for k, (a, b) in enumerate([(0.1, 0.3), (0.2, 0.1), (0.4, 0.5)]):
        r = experiment.ReplicaResult(k, k)
        r.metrics = {"cKLI/Full": {"y_rel_l2": a}, "MAP/Full": {"y_rel_l2": b}}
        rs.append(r)
    rows = {r["method"]: r for r in experiment.aggregate(rs)}
    assert rows["cKLI"]["Full_median"] == 0.2
    assert rows["cKLI"]["Full_q25"] == pytest.approx(0.15)
    assert rows["cKLI"]["beats_baseline"] == 2
    assert rows["MAP"]["beats_baseline"] is None


def test_sweep_single_value_and_cap(cfg_path, tmp_path, caplog):
    cfg = parse_config(SMALL).with_overrides(replicas=2, methods=("cKLI", "MAP"))
    rows = experiment.sweep_nxi(cfg, [7])
    assert [r["method"] for r in rows] == ["cKLI", "MAP"]
    assert rows[0]["n_xi_used"] == 7 and rows[0]["n"] == 2
    with caplog.at_level(logging.WARNING):
        gaussian = cfg.with_overrides(methods=("cKLI",), n_y_obs=0, kernel=KernelSpec("Gaussian", 1.0, 0.5))
        capped = experiment.sweep_nxi(gaussian, [64])
    assert capped[0]["n_xi_used"] != 64
    assert "only" in caplog.text
    out = tmp_path / "sw"
    assert cli.main(["sweep", "--config", str(cfg_path), "--nxi", "4", "8", "--replicas", "1", "--out", str(out)]) == 0
    text = next(out.rglob("sweep_nxi.csv")).read_text().splitlines()
    assert text[0].startswith("# config_hash=")
    assert text[3] == "n_xi,n_xi_used,method,median,q25,q75,n"
    assert len(text) == 4 + 2 * 3


def test_sweep_error_trend():
    cfg = parse_config(SMALL.replace("length = 0.3", "length = 0.5").replace("n_ens = 60", "n_ens = 400"))
    cfg = cfg.with_overrides(nx=16, ny=16, n_y_obs=30, n_u_obs=30, n_eta=60, replicas=3, methods=("cKLI",))
    rows = experiment.sweep_nxi(cfg, [6, 15, 40])
    med = [r["median"] for r in rows]
    assert med[-1] <= med[0]


def test_replica_errors_carry_seed(cfg_path, tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise RuntimeError("forward failure")

    monkeypatch.setattr(experiment, "map_invert", boom)
    cfg = parse_config(SMALL).with_overrides(methods=("MAP",))
    with pytest.raises(experiment.ReplicaError, match=r"replica 0 \(seed 5\)") as info:
        experiment.run_replica(cfg, 0)
    assert info.value.seed == 5
    code = cli.main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "x")])
    assert code == 1
    assert "seed 5" in capsys.readouterr().err


def test_cli_config_error(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text('name = "b"\n[grid]\nnx = 1\n')
    assert cli.main(["run", "--config", str(p)]) == 2
    assert f"{p}:3: grid.nx" in capsys.readouterr().err


def test_show_config(cfg_path, capsys):
    assert cli.main(["show-config", "--config", str(cfg_path)]) == 0
    assert parse_config(capsys.readouterr().out) == parse_config(SMALL)


def test_observation_csv_roundtrip(tmp_path):
    obs = ObservationSet(np.array([[0.1, 0.2], [0.5, 0.75]]), np.array([1.5, -0.25]), np.diag([0.0, 0.01]))
    write_observations(tmp_path / "o.csv", obs)
    back = read_observations(tmp_path / "o.csv")
    np.testing.assert_array_equal(back.locations, obs.locations)
    np.testing.assert_array_equal(back.values, obs.values)
    np.testing.assert_array_equal(back.noise_cov, obs.noise_cov)
    (tmp_path / "p.csv").write_text("x1,x2,value\n0.5,0.5,2.0\n")
    assert read_observations(tmp_path / "p.csv").noise_cov[0, 0] == 0.0
    (tmp_path / "q.csv").write_text("x1,x2,value\n0.5,oops,2.0\n")
    with pytest.raises(ValueError, match="q.csv:2"):
        read_observations(tmp_path / "q.csv")
