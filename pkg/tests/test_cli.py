import json

import numpy as np
import pytest

from ondev_lct.model import checkpoint
from ondev_lct.cli import main

SMALL_MODEL = {"embed_dim": 32, "heads": 2, "stem_channels": 16, "bottleneck_shrink": 16, "num_bottlenecks": 2,
               "input_shape": [12, 12, 1], "num_classes": 10}


def write_config(tmp_path, **sections):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(sections))
    return str(path)


def synth(n=128, test_n=64, **kw):
    return {"name": "synthetic", "n": n, "test_n": test_n, "shape": [12, 12, 1], "task_seed": 0, **kw}


def lines(path):
    return [json.loads(x) for x in path.read_text().splitlines()]


# -- inspect ---------------------------------------------------------------

def test_inspect_variant_budget(capsys):
    assert main(["inspect", "--variant", "OnDev-LCT-1/1", "--input", "32x32x3", "--classes", "10"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert abs(doc["trainable_params"] - 210_000) <= 0.15 * 210_000
    assert doc["macs"] > 0 and doc["variant"] == "OnDev-LCT-1/1"


def test_inspect_accepts_off_grid_encoder_count(tmp_path, capsys):
    cfg = write_config(tmp_path, model={"num_encoders": 3, "mlp_ratio": 1, "input_shape": [32, 32, 3]})
    assert main(["inspect", "--config", cfg]) == 0
    three = json.loads(capsys.readouterr().out)["trainable_params"]
    main(["inspect", "--variant", "OnDev-LCT-2/1", "--input", "32x32x3"])
    two = json.loads(capsys.readouterr().out)["trainable_params"]
    main(["inspect", "--variant", "OnDev-LCT-4/1", "--input", "32x32x3"])
    four = json.loads(capsys.readouterr().out)["trainable_params"]
    assert three - two == four - three


def test_malformed_json_exits_2_without_outputs(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"model": "OnDev-LCT-1/1",')
    out = tmp_path / "out"
    assert main(["train", "--config", str(bad), "--out", str(out)]) == 2
    assert "config" in capsys.readouterr().err
    assert not out.exists()


@pytest.mark.parametrize("doc", [
    {"model": "OnDev-LCT-3/1"},
    {"model": {"embed_dim": 128, "colour": "red"}},
    {"model": "OnDev-LCT-1/1", "extra": 1},
    {"model": "OnDev-LCT-1/1", "train": {"momentum": 0.9}},
])
def test_schema_violations_exit_2(tmp_path, doc, capsys):
    assert main(["inspect", "--config", write_config(tmp_path, **doc)]) == 2
    assert capsys.readouterr().err.startswith("ondev-lct:")


# -- train -----------------------------------------------------------------

def smoke_config(tmp_path, out="run"):
    return write_config(tmp_path, model=SMALL_MODEL, data=synth(128, 64),
                        train={"epochs": 100, "max_steps": 200, "batch_size": 32, "lr": 3e-3},
                        output=str(tmp_path / out), seed=0)


def test_train_smoke_overfits_and_writes_artifacts(tmp_path):
    assert main(["train", "--config", smoke_config(tmp_path)]) == 0
    run = tmp_path / "run"
    log = lines(run / "metrics.jsonl")
    assert log[-1]["train_acc"] >= 0.99
    assert sum(1 for _ in log) * 4 <= 200
    resolved = json.loads((run / "config.resolved.json").read_text())
    assert resolved["train"]["lr"] == 3e-3 and resolved["model"]["embed_dim"] == 32
    model = checkpoint.load(run / "final.ckpt")
    assert model.config.input_shape == (12, 12, 1)


def test_train_rerun_is_byte_identical_and_clobber_safe(tmp_path, capsys):
    cfg = write_config(tmp_path, model=SMALL_MODEL, data=synth(48, 16), train={"epochs": 2, "batch_size": 16},
                       output=str(tmp_path / "a"), seed=3)
    assert main(["train", "--config", cfg]) == 0
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/metrics.jsonl").read_bytes() == (tmp_path / "b/metrics.jsonl").read_bytes()
    before = (tmp_path / "a/metrics.jsonl").read_bytes()
    assert main(["train", "--config", cfg]) == 5
    assert "--force" in capsys.readouterr().err
    assert (tmp_path / "a/metrics.jsonl").read_bytes() == before
    assert main(["train", "--config", cfg, "--force"]) == 0
    assert (tmp_path / "a/metrics.jsonl").read_bytes() == before


def test_resolved_config_reproduces_run(tmp_path):
    cfg = write_config(tmp_path, model=SMALL_MODEL, data=synth(32, 16), train={"epochs": 1, "batch_size": 16},
                       output=str(tmp_path / "a"), seed=1)
    assert main(["train", "--config", cfg, "--lr", "2e-3"]) == 0
    echo = tmp_path / "a/config.resolved.json"
    assert main(["train", "--config", str(echo), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/metrics.jsonl").read_bytes() == (tmp_path / "b/metrics.jsonl").read_bytes()
    assert json.loads(echo.read_text())["train"]["lr"] == 2e-3


def test_flags_and_env_seed_precedence(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, model=SMALL_MODEL, data=synth(32, 16), train={"epochs": 1, "batch_size": 16},
                       seed=1)
    monkeypatch.setenv("LCT_SEED", "9")
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "env")]) == 0
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "flag"), "--seed", "4"]) == 0
    assert json.loads((tmp_path / "env/config.resolved.json").read_text())["seed"] == 9
    assert json.loads((tmp_path / "flag/config.resolved.json").read_text())["seed"] == 4
    monkeypatch.setenv("LCT_SEED", "nine")
    assert main(["inspect", "--config", cfg]) == 2


def test_missing_data_exits_3(tmp_path):
    cfg = write_config(tmp_path, data={"name": "mnist", "dir": str(tmp_path / "nowhere")}, output=str(tmp_path / "o"))
    assert main(["train", "--config", cfg]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_exits_4_with_partial_log(tmp_path):
    cfg = write_config(tmp_path, model=SMALL_MODEL, data=synth(64, 16),
                       train={"epochs": 30, "batch_size": 64, "lr": 1e12, "optimizer": "adam"},
                       output=str(tmp_path / "o"))
    assert main(["train", "--config", cfg]) == 4
    log = tmp_path / "o/metrics.jsonl"
    assert len(lines(log)) >= 1
    assert all(np.isfinite(r["train_loss"]) for r in lines(log))


# -- fed -------------------------------------------------------------------

def fed_config(tmp_path, out, **fed):
    base = {"partition": {"num_clients": 4, "beta": 1e6, "min_samples_per_client": 5}, "rounds": 5,
            "local_epochs": 1}
    return write_config(tmp_path, model=SMALL_MODEL, data=synth(160, 80, signal=1.5),
                        train={"batch_size": 32, "lr": 3e-3}, fed={**base, **fed}, output=str(tmp_path / out))


def test_fed_writes_round_log_and_summary(tmp_path):
    assert main(["fed", "--config", fed_config(tmp_path, "f")]) == 0
    out = tmp_path / "f"
    records = lines(out / "rounds.jsonl")
    assert [r["round"] for r in records] == [1, 2, 3, 4, 5]
    assert all(r["clients"] == [0, 1, 2, 3] for r in records)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["rounds"] == 5 and summary["window"] == 5
    assert set(summary) >= {"run_medians", "median_of_run_medians", "best_run_median", "best_round_median"}
    checkpoint.load(out / "final.ckpt")


def test_fed_fifty_clients_ten_per_round(tmp_path):
    cfg = write_config(tmp_path, model=SMALL_MODEL, data=synth(600, 40), train={"batch_size": 16, "max_steps": 1},
                       fed={"partition": {"min_samples_per_client": 2}, "local_epochs": 1},
                       output=str(tmp_path / "f"))
    assert main(["fed", "--config", cfg, "--clients", "50", "--per-round", "10", "--rounds", "3",
                 "--beta", "5"]) == 0
    for r in lines(tmp_path / "f/rounds.jsonl"):
        assert len(r["clients"]) == len(set(r["clients"])) == 10
        assert all(0 <= c < 50 for c in r["clients"])


@pytest.mark.slow
def test_fed_heterogeneity_ordering_over_three_seeds(tmp_path):
    med = {}
    for beta in ("0.1", "5"):
        cfg = write_config(tmp_path, model=SMALL_MODEL, data=synth(400, 200, signal=1.5),
                           train={"batch_size": 32, "lr": 3e-3},
                           fed={"partition": {"num_clients": 4, "min_samples_per_client": 5}, "local_epochs": 1},
                           output=str(tmp_path / beta))
        assert main(["fed", "--config", cfg, "--beta", beta, "--rounds", "5", "--seeds", "0,1,2"]) == 0
        med[beta] = json.loads((tmp_path / beta / "summary.json").read_text())["median_of_run_medians"]
    assert med["5"] >= med["0.1"] - 0.02


# -- partition ---------------------------------------------------------------

def part_config(tmp_path, out, classes=10, n=1000, beta=0.1, clients=10):
    data = {"name": "synthetic", "n": n, "test_n": 0, "shape": [4, 4, 1], "num_classes": classes}
    return write_config(tmp_path, data=data, fed={"partition": {"num_clients": clients, "beta": beta}},
                        model={"input_shape": [4, 4, 1], "num_classes": classes}, output=str(tmp_path / out),
                        seed=5)


def test_partition_outputs_and_determinism(tmp_path):
    cfg = part_config(tmp_path, "p")
    assert main(["partition", "--config", cfg]) == 0
    assert main(["partition", "--config", cfg, "--out", str(tmp_path / "q")]) == 0
    a, b = tmp_path / "p", tmp_path / "q"
    assert (a / "partition.json").read_bytes() == (b / "partition.json").read_bytes()
    stats = json.loads((a / "stats.json").read_text())
    assert [sum(row) for row in stats["histogram"]] == stats["sizes"]
    assert sum(stats["sizes"]) == 1000
    assert any(e > 0 for e in stats["empty_classes"])
    csv = (a / "partition.csv").read_text().splitlines()
    assert len(csv) == 11 and csv[0].startswith("client,size,")


def test_partition_error_exits_6(tmp_path):
    cfg = part_config(tmp_path, "p", n=30, clients=10)
    assert main(["partition", "--config", cfg]) == 6


# -- eval ------------------------------------------------------------------

def test_eval_reports_checkpoint_accuracy(tmp_path, capsys):
    assert main(["train", "--config", smoke_config(tmp_path)]) == 0
    capsys.readouterr()
    cfg = write_config(tmp_path, model=SMALL_MODEL, data=synth(128, 64), output=str(tmp_path / "ev"))
    assert main(["eval", "--config", cfg, "--checkpoint", str(tmp_path / "run/final.ckpt")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["n"] == 64 and 0.0 <= doc["top1"] <= 1.0
    assert json.loads((tmp_path / "ev/eval.json").read_text()) == doc
    assert main(["eval", "--config", cfg, "--checkpoint", str(tmp_path / "missing.ckpt")]) == 3
