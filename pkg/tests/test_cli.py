import json

import numpy as np
import pytest

from deeprank.cli import config_from_dict, main, replicate, ConfigError
from deeprank.data import load_csv
from deeprank.network import forward_batch, load_checkpoint


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_simulate_shape_and_determinism(workdir):
    assert main(["simulate", "--model", "M1", "--n", "100", "--p", "15", "--seed", "7", "--out", "a.csv"]) == 0
    ds = load_csv("a.csv")
    assert ds.X.shape == (100, 15) and ds.delta is None
    assert (workdir / "a.csv").read_text().splitlines()[0].split(",") == [f"x{j}" for j in range(1, 16)] + ["y"]
    truth = json.loads((workdir / "a.truth.json").read_text())
    assert truth["important"] == list(range(15)) and truth["seed"] == 7
    main(["simulate", "--model", "M1", "--n", "100", "--seed", "7", "--out", "b.csv"])
    assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()


def test_simulate_censored_has_delta(workdir):
    assert main(["simulate", "--model", "M5", "--n", "50", "--out", "c.csv"]) == 0
    assert load_csv("c.csv").delta is not None


def test_simulate_errors(workdir, capsys):
    assert main(["simulate", "--model", "M9"]) == 1
    assert main(["simulate", "--p", "10"]) == 1
    assert "p must be at least 15" in capsys.readouterr().err


def test_usage_errors_exit_one(workdir):
    assert main(["train", "--bogus"]) == 1
    assert main([]) == 1


def test_train_evaluate_select(workdir):
    main(["simulate", "--model", "M1", "--n", "200", "--seed", "1", "--out", "d.csv"])
    rc = main(["--seed", "2", "train", "--data", "d.csv", "--epochs", "8", "--lambda", "0",
               "--out-dir", "run"])
    assert rc == 0
    sel = json.loads((workdir / "run/selection.json").read_text())
    assert sorted(s["index"] for s in sel) == list(range(15))
    assert all(s["norm"] > 0 for s in sel)
    norms = [s["norm"] for s in sel]
    assert norms == sorted(norms, reverse=True)
    assert sel[0]["name"] == f"x{sel[0]['index'] + 1}"
    history = json.loads((workdir / "run/history.json").read_text())
    assert [h["epoch"] for h in history] == list(range(1, len(history) + 1))

    assert main(["evaluate", "--checkpoint", "run/checkpoint.json", "--data", "d.csv",
                 "--truth", "d.truth.json", "--top-k", "10", "--out", "rep.json"]) == 0
    rep = json.loads((workdir / "rep.json").read_text())
    assert rep["spearman"] > 0 and "c_index" not in rep
    assert "top_10" in rep
    assert main(["select", "--checkpoint", "run/checkpoint.json", "--out", "sel.json"]) == 0
    assert json.loads((workdir / "sel.json").read_text()) == sel


def test_evaluate_censored_reports_c_index(workdir):
    main(["simulate", "--model", "M5", "--n", "200", "--p", "20", "--out", "s.csv"])
    assert main(["train", "--data", "s.csv", "--epochs", "3", "--out-dir", "run"]) == 0
    assert main(["evaluate", "--checkpoint", "run/checkpoint.json", "--data", "s.csv",
                 "--truth", "s.truth.json", "--out", "r.json"]) == 0
    rep = json.loads((workdir / "r.json").read_text())
    assert "c_index" in rep and "spearman" not in rep
    assert {"top_10", "top_20"} <= set(rep)


def test_evaluate_dimension_mismatch(workdir):
    main(["simulate", "--n", "100", "--out", "a.csv"])
    main(["simulate", "--n", "100", "--p", "16", "--out", "b.csv"])
    assert main(["train", "--data", "a.csv", "--epochs", "2", "--out-dir", "run"]) == 0
    assert main(["evaluate", "--checkpoint", "run/checkpoint.json", "--data", "b.csv"]) == 2


def test_lse_history_decreases(workdir):
    main(["simulate", "--n", "300", "--out", "a.csv"])
    assert main(["train", "--data", "a.csv", "--loss", "lse", "--epochs", "20", "--lr", "0.01",
                 "--patience", "20", "--out-dir", "run"]) == 0
    h = json.loads((workdir / "run/history.json").read_text())
    assert h[-1]["train_objective"] < h[0]["train_objective"]


def test_tuning_grid_writes_table(workdir):
    main(["simulate", "--n", "200", "--out", "a.csv"])
    assert main(["train", "--data", "a.csv", "--epochs", "2", "--lambda-grid", "0", "10",
                 "--out-dir", "run"]) == 0
    table = json.loads((workdir / "run/tune.json").read_text())
    assert [r["lambda"] for r in table] == [0.0, 10.0]


def test_config_errors(workdir, capsys):
    assert main(["train", "--config", "missing.json"]) == 1
    assert "missing.json" in capsys.readouterr().err
    (workdir / "bad.json").write_text('{"simulate":\n {"model": "M1",}}')
    assert main(["train", "--config", "bad.json"]) == 1
    assert "bad.json:2:" in capsys.readouterr().err
    (workdir / "two.json").write_text('{"simulate": {}, "data": "x.csv"}')
    assert main(["train", "--config", "two.json"]) == 1
    (workdir / "unk.json").write_text('{"simulate": {"modle": "M1"}}')
    assert main(["train", "--config", "unk.json"]) == 1
    assert "modle" in capsys.readouterr().err


def test_data_errors(workdir):
    (workdir / "d.csv").write_text("a,b\n1,2\n")
    assert main(["train", "--data", "d.csv"]) == 2
    assert main(["train", "--data", "nothere.csv"]) == 2
    tied = "a,y\n" + "".join(f"{i},1\n" for i in range(30))
    (workdir / "t.csv").write_text(tied)
    assert main(["train", "--data", "t.csv", "--epochs", "1"]) == 2


def test_numeric_failure_exit_three(workdir, monkeypatch):
    import deeprank.cli as cli
    from deeprank.train import NumericalError

    def boom(*a, **k):
        raise NumericalError("non-finite training loss at epoch 1")

    monkeypatch.setattr(cli, "fit", boom)
    main(["simulate", "--n", "50", "--out", "a.csv"])
    assert main(["train", "--data", "a.csv"]) == 3


SMALL = {"simulate": {"model": "M1", "n_train": 120, "n_valid": 60, "n_test": 60},
         "train": {"max_epochs": 4}, "seed": 3}


def test_replicate_single_has_zero_sd():
    out = replicate(config_from_dict({**SMALL, "replicates": 1}))
    row = out["replicates"][0]
    assert row["seed"] == 3
    for k, v in out["aggregate"].items():
        assert v == {"mean": float(row[k]), "sd": 0.0}


def test_replicate_seeds_and_determinism(workdir):
    cfg_path = workdir / "c.json"
    cfg_path.write_text(json.dumps({**SMALL, "replicates": 3, "output_dir": "out"}))
    assert main(["replicate", "--config", str(cfg_path)]) == 0
    first = (workdir / "out/replicate.json").read_bytes()
    assert main(["replicate", "--config", str(cfg_path), "--jobs", "2"]) == 0
    assert (workdir / "out/replicate.json").read_bytes() == first
    doc = json.loads(first)
    assert [r["seed"] for r in doc["replicates"]] == [3, 3 + 10007, 3 + 2 * 10007]


def test_replicate_failure_names_seed(workdir, capsys):
    cfg = {**SMALL, "simulate": {**SMALL["simulate"], "model": "M5"}, "train": {"loss": "lse"}}
    (workdir / "c.json").write_text(json.dumps(cfg))
    assert main(["replicate", "--config", "c.json"]) == 2
    assert "seed 3" in capsys.readouterr().err


def test_replicate_needs_simulate(workdir):
    main(["simulate", "--n", "50", "--out", "a.csv"])
    assert main(["replicate", "--data", "a.csv"]) == 1


def test_checkpoint_carries_evaluation_state(workdir):
    main(["simulate", "--n", "150", "--out", "a.csv"])
    main(["train", "--data", "a.csv", "--epochs", "3", "--out-dir", "run"])
    arch, params, doc = load_checkpoint(workdir / "run/checkpoint.json")
    assert set(doc) >= {"calibration", "names", "standardizer", "format_version"}
    assert arch.input_dim == 15 and len(doc["standardizer"]["mean"]) == 15
    assert np.all(np.isfinite(forward_batch(params, np.zeros((2, 15)))[0]))


def test_config_roundtrip():
    cfg = config_from_dict({**SMALL, "arch": {"hidden_widths": [], "dropout_rate": 0.0}})
    assert cfg.architecture(15).depth == 0
    assert config_from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        config_from_dict({**SMALL, "train": {"loss": "hinge"}})
