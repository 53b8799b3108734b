"""End-to-end command-line tests on miniature configurations."""

import json
import os

import numpy as np
import pytest

from actf import cli
from actf import data as D
from actf import model as M


TINY = {
    "task": "direction4",
    "frames": 4,
    "height": 16,
    "width": 16,
    "train_per_class": 2,
    "eval_per_class": 2,
    "noise": 0.0,
    "conv1_channels": 3,
    "out_channels": 8,
    "sketch_dim": 32,
    "epochs": 1,
    "batch_size": 4,
    "lr0": 0.01,
    "seed": 0,
}


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def test_train_writes_outputs(tmp_path, tiny_cfg):
    out = str(tmp_path / "out")
    rc = cli.main(["train", "--config", tiny_cfg, "--out", out])
    assert rc == 0
    for name in ("checkpoint.ckpt", "train_report.tsv", "metrics.tsv"):
        assert os.path.exists(os.path.join(out, name)), name
    lines = open(os.path.join(out, "metrics.tsv")).read().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1].startswith("# seed=")
    assert lines[2].split("\t") == ["variant", "train_acc", "eval_acc"]


def test_train_zero_epochs_checkpoint_is_init(tmp_path, tiny_cfg):
    out = str(tmp_path / "out")
    rc = cli.main(["train", "--config", tiny_cfg, "--out", out,
                   "--epochs", "0"])
    assert rc == 0
    loaded = M.load_checkpoint(os.path.join(out, "checkpoint.ckpt"))
    dims = M.ModelDims(frames=4, height=16, width=16, conv1_channels=3,
                       out_channels=8, sketch_dim=32, n_classes=4)
    init = M.init_params(dims, 0, "full")
    for (na, ta), (nb, tb) in zip(M.named_tensors(init),
                                  M.named_tensors(loaded)):
        assert na == nb
        np.testing.assert_array_equal(ta.data.astype(np.float32),
                                      tb.data.astype(np.float32))


def test_train_determinism_byte_identical(tmp_path, tiny_cfg):
    outs = []
    for run in ("a", "b"):
        out = str(tmp_path / run)
        assert cli.main(["train", "--config", tiny_cfg, "--out", out]) == 0
        outs.append(out)
    for name in ("metrics.tsv", "train_report.tsv", "checkpoint.ckpt"):
        a = open(os.path.join(outs[0], name), "rb").read()
        b = open(os.path.join(outs[1], name), "rb").read()
        assert a == b, name


def test_flag_overrides_config(tmp_path, tiny_cfg):
    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    assert cli.main(["train", "--config", tiny_cfg, "--out", out_a]) == 0
    assert cli.main(["train", "--config", tiny_cfg, "--out", out_b,
                     "--seed", "3"]) == 0
    hash_a = open(os.path.join(out_a, "metrics.tsv")).readline()
    hash_b = open(os.path.join(out_b, "metrics.tsv")).readline()
    assert hash_a != hash_b


def test_eval_from_checkpoint(tmp_path, tiny_cfg):
    out = str(tmp_path / "out")
    assert cli.main(["train", "--config", tiny_cfg, "--out", out]) == 0
    eval_out = str(tmp_path / "eval")
    rc = cli.main(["eval", "--checkpoint",
                   os.path.join(out, "checkpoint.ckpt"),
                   "--config", tiny_cfg, "--out", eval_out])
    assert rc == 0
    acc = open(os.path.join(eval_out, "per_class_accuracy.tsv")).read()
    assert acc.splitlines()[2].split("\t")[0] == "class"
    fw = open(os.path.join(eval_out, "fusion_weights.tsv")).read()
    rows = [l.split("\t") for l in fw.splitlines()[3:]]
    # delta and epsilon are post-softmax, so each row sums to 1
    for r in rows:
        assert float(r[3]) + float(r[4]) == pytest.approx(1.0, abs=1e-9)


def test_eval_manifest_round_trip(tmp_path, tiny_cfg):
    out = str(tmp_path / "out")
    assert cli.main(["train", "--config", tiny_cfg, "--out", out]) == 0
    ds = D.generate(D.SyntheticTask(kind="direction4", frames=4, height=16,
                                    width=16, per_class=2, seed=9))
    manifest = D.save_dataset(tmp_path / "data", ds)
    rc = cli.main(["eval", "--checkpoint",
                   os.path.join(out, "checkpoint.ckpt"),
                   "--manifest", manifest, "--out", str(tmp_path / "ev")])
    assert rc == 0


def test_eval_refuses_conflicting_dims(tmp_path, tiny_cfg):
    out = str(tmp_path / "out")
    assert cli.main(["train", "--config", tiny_cfg, "--out", out]) == 0
    # speed2 has 2 classes; the checkpoint head has 4
    rc = cli.main(["eval", "--checkpoint",
                   os.path.join(out, "checkpoint.ckpt"),
                   "--config", tiny_cfg, "--task", "speed2",
                   "--out", str(tmp_path / "ev")])
    assert rc == 2


def test_eval_missing_checkpoint(tmp_path):
    rc = cli.main(["eval", "--checkpoint", str(tmp_path / "nope.ckpt"),
                   "--out", str(tmp_path / "ev")])
    assert rc == 2


def test_unknown_config_key(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"learning_rate": 0.1}))
    rc = cli.main(["train", "--config", str(bad),
                   "--out", str(tmp_path / "out")])
    assert rc == 2


def test_malformed_config_json(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    rc = cli.main(["train", "--config", str(bad),
                   "--out", str(tmp_path / "out")])
    assert rc == 2


def test_unknown_flag_usage_error(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["train", "--warp-speed", "9"])
    assert e.value.code == 2


def test_missing_subcommand_usage_error():
    with pytest.raises(SystemExit) as e:
        cli.main([])
    assert e.value.code == 2


def test_ablate_covers_all_variants(tmp_path, tiny_cfg):
    out = str(tmp_path / "out")
    rc = cli.main(["ablate", "--config", tiny_cfg, "--out", out])
    assert rc == 0
    lines = open(os.path.join(out, "ablation.tsv")).read().splitlines()
    variants = [l.split("\t")[0] for l in lines[3:]]
    assert variants == list(M.VARIANTS)


def test_sketchbench_writes_table(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"input_dim": 16,
                               "output_dims": [32, 64],
                               "trials": 20, "seed": 0}))
    out = str(tmp_path / "out")
    rc = cli.main(["sketchbench", "--config", str(cfg), "--out", out])
    assert rc == 0
    lines = open(os.path.join(out, "sketchbench.tsv")).read().splitlines()
    assert lines[2].split("\t")[0] == "d"
    assert len(lines) == 5


def test_gradcheck_exits_zero():
    assert cli.main(["gradcheck", "--out", ""]) == 0
