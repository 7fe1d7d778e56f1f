"""End-to-end command coverage on a micro configuration."""

import json

import numpy as np
import pytest

from proxylab import cli
from proxylab.errors import NumericalError
from proxylab.storage import load_checkpoint, load_dataset

MICRO_CFG = """\
seed = 11
data.num_classes = 4
data.side = 4
data.train_per_class = 20
data.test_per_class = 8
data.noise_sigma = 0.05
data.class_offset_scale = 0.02
model.embed_dim = 8
model.target.hidden_dims = 8
model.proxy.hidden_dims = 10,10
pretrain.epochs = 6
pretrain.lr = 0.01
pretrain.proxy_epochs = 4
pretrain.proxy_lr = 0.01
pretrain.batch_size = 32
train.warmup_epochs = 1
train.hpt_epochs = 1
train.batch_size = 32
train.log_eval_samples = 16
attack.train.steps = 1
attack.eval.steps = 2
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Config file plus generated data and both pretrained checkpoints."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "micro.cfg"
    cfg.write_text(MICRO_CFG, encoding="utf-8")
    out = root / "out"
    base = ["--config", str(cfg), "--out", str(out)]
    assert cli.main(["gen-data", *base]) == 0
    train = out / "data" / "in_domain_train.dsb"
    for role in ("vanilla_target", "proxy"):
        assert cli.main(["pretrain", *base, "--data", str(train),
                         "--role", role]) == 0
    return {"root": root, "cfg": cfg, "out": out, "train": train,
            "test": out / "data" / "in_domain_test.dsb",
            "vanilla": out / "checkpoints" / "vanilla.ckb",
            "proxy": out / "checkpoints" / "proxy.ckb"}


def base_args(w, out=None):
    return ["--config", str(w["cfg"]), "--out", str(out or w["out"])]


def test_gen_data_artifacts(workdir):
    data_dir = workdir["out"] / "data"
    names = sorted(p.name for p in data_dir.iterdir())
    assert names == ["downstream_brightness.dsb", "downstream_jitter.dsb",
                     "downstream_permuted.dsb", "in_domain_test.dsb",
                     "in_domain_train.dsb"]
    train = load_dataset(workdir["train"])
    assert train.num_samples == 4 * 20
    manifest = json.loads((workdir["out"] / "manifest_gen_data.json").read_text())
    assert manifest["seed"] == 11
    assert len(manifest["artifacts"]) == 5


def test_gen_data_deterministic(workdir, tmp_path):
    assert cli.main(["gen-data", *base_args(workdir, tmp_path)]) == 0
    for p in sorted((tmp_path / "data").iterdir()):
        twin = workdir["out"] / "data" / p.name
        assert p.read_bytes() == twin.read_bytes(), p.name


def test_gen_data_dry_run(workdir, tmp_path, capsys):
    out = tmp_path / "never"
    assert cli.main(["gen-data", *base_args(workdir, out), "--dry-run"]) == 0
    assert "would write" in capsys.readouterr().out
    assert not out.exists()


def test_pretrain_outputs(workdir):
    model = load_checkpoint(workdir["vanilla"])
    assert model.image_spec.input_dim == 16
    log = (workdir["out"] / "logs" / "pretrain_vanilla.csv").read_text()
    lines = log.strip().splitlines()
    assert lines[0] == "epoch,stage,loss,clean_acc,adv_acc,param_dist"
    assert len(lines) == 1 + 6  # one row per epoch
    assert all(line.split(",")[1] == "pretrain" for line in lines[1:])


def test_pretrain_seed_override(workdir, tmp_path):
    assert cli.main(["pretrain", *base_args(workdir, tmp_path), "--seed", "99",
                     "--data", str(workdir["train"]),
                     "--role", "vanilla_target"]) == 0
    a = load_checkpoint(tmp_path / "checkpoints" / "vanilla.ckb")
    b = load_checkpoint(workdir["vanilla"])
    assert any(not np.array_equal(x, y)
               for x, y in zip(a.param_arrays(), b.param_arrays()))
    manifest = json.loads(
        (tmp_path / "manifest_pretrain_vanilla_target.json").read_text())
    assert manifest["seed"] == 99
    assert "seed = 99" in manifest["config"]


@pytest.mark.parametrize("method", cli.FINETUNE_METHODS)
def test_finetune_methods(workdir, tmp_path, method):
    assert cli.main(["finetune", *base_args(workdir, tmp_path),
                     "--method", method,
                     "--vanilla", str(workdir["vanilla"]),
                     "--proxy", str(workdir["proxy"]),
                     "--data", str(workdir["train"])]) == 0
    ckpt = tmp_path / "checkpoints" / f"{method}.ckb"
    model = load_checkpoint(ckpt)
    vanilla = load_checkpoint(workdir["vanilla"])
    assert any(not np.array_equal(x, y)
               for x, y in zip(model.param_arrays(), vanilla.param_arrays()))
    lines = (tmp_path / "logs" / f"finetune_{method}.csv").read_text().strip().splitlines()
    stages = [line.split(",")[1] for line in lines[1:]]
    if method == "hpt_gpd":
        assert stages == ["warmup", "hpt"]
    else:
        assert stages == [method] * 2


def test_eval_command(workdir, tmp_path, capsys):
    assert cli.main(["eval", *base_args(workdir, tmp_path),
                     "--ckpt", str(workdir["vanilla"]),
                     "--data", str(workdir["test"]),
                     str(workdir["out"] / "data" / "downstream_jitter.dsb")]) == 0
    out = capsys.readouterr().out
    assert "in_domain_test:" in out and "jitter:" in out
    doc = json.loads((tmp_path / "reports" / "eval_vanilla.json").read_text())
    assert [r["dataset_id"] for r in doc["vanilla"]] == ["in_domain_test", "jitter"]
    csv = (tmp_path / "reports" / "eval_vanilla.csv").read_text().splitlines()
    assert csv[0] == "model,dataset,clean_acc,adv_acc"
    assert len(csv) == 3


def test_transfer_matrix_command(workdir, tmp_path, capsys):
    assert cli.main(["transfer-matrix", *base_args(workdir, tmp_path),
                     "--ckpts", str(workdir["vanilla"]), str(workdir["proxy"]),
                     "--data", str(workdir["test"])]) == 0
    assert capsys.readouterr().out.startswith("forger:vanilla,proxy")
    doc = json.loads((tmp_path / "reports" / "transfer_matrix.json").read_text())
    assert doc["model_ids"] == ["vanilla", "proxy"]
    assert len(doc["matrix"]) == 2 and len(doc["matrix"][0]) == 2


def test_bound_check_command(workdir, tmp_path, capsys):
    for kind in ("l1_prob", "kl"):
        assert cli.main(["bound-check", *base_args(workdir, tmp_path),
                         "--target", str(workdir["vanilla"]),
                         "--proxy", str(workdir["proxy"]),
                         "--data", str(workdir["test"]),
                         "--loss-kind", kind]) == 0
        doc = json.loads((tmp_path / "reports" / f"bound_{kind}.json").read_text())
        assert doc["loss_kind"] == kind
    assert doc["schema_version"] == 1
    out = capsys.readouterr().out
    assert "rhs_theorem1" in out and "rhs_theorem2" in out
    l1 = json.loads((tmp_path / "reports" / "bound_l1_prob.json").read_text())
    assert l1["holds_1"] and l1["holds_2"]


def test_pipeline_dry_run(workdir, tmp_path, capsys):
    out = tmp_path / "never"
    assert cli.main(["pipeline", *base_args(workdir, out), "--dry-run"]) == 0
    text = capsys.readouterr().out
    for phase in ("gen_data", "pretrain_vanilla", "finetune_hpt_gpd", "summary"):
        assert f"would run: {phase}" in text
    assert not out.exists()


def test_pipeline_end_to_end(workdir, tmp_path):
    out = tmp_path / "run"
    assert cli.main(["pipeline", *base_args(workdir, out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    for rel in manifest["artifacts"]:
        assert (out / rel).exists(), rel
    assert [p["name"] for p in manifest["phases"]] == [
        "gen_data", "pretrain_vanilla", "pretrain_proxy",
        "finetune_hpt_gpd", "finetune_aft", "finetune_naive_rt", "finetune_ard",
        "evaluate", "transfer_matrix", "bound_check", "summary"]

    summary = json.loads((out / "reports" / "summary.json").read_text())
    assert [m["method"] for m in summary["methods"]] == [
        "vanilla", "proxy", "hpt_gpd", "aft", "naive_rt", "ard"]
    assert summary["downstream_domains"] == ["jitter", "brightness", "permuted"]

    tm = json.loads((out / "reports" / "transfer_matrix.json").read_text())
    assert tm["model_ids"] == ["vanilla", "proxy", "hpt_gpd", "naive_rt"]

    bounds = json.loads((out / "reports" / "bound_checks.json").read_text())
    assert len(bounds) == 2 * 4 * 2  # targets x eval sets x loss kinds
    assert all(b["holds_1"] and b["holds_2"]
               for b in bounds if b["loss_kind"] == "l1_prob")

    evals = json.loads((out / "reports" / "eval.json").read_text())
    assert set(evals) == {"vanilla", "proxy", "hpt_gpd", "aft", "naive_rt", "ard"}
    assert all(len(v) == 4 for v in evals.values())


def test_exit_code_config_error(workdir, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("data.sides = 4\n", encoding="utf-8")
    assert cli.main(["gen-data", "--config", str(bad),
                     "--out", str(tmp_path)]) == 2


def test_exit_code_io_errors(workdir, tmp_path):
    # missing input file
    assert cli.main(["pretrain", *base_args(workdir, tmp_path),
                     "--data", str(tmp_path / "nope.dsb"),
                     "--role", "proxy"]) == 3
    # corrupt checkpoint
    garbage = tmp_path / "junk.ckb"
    garbage.write_bytes(b"NOTMAGIC" + b"\0" * 64)
    assert cli.main(["eval", *base_args(workdir, tmp_path),
                     "--ckpt", str(garbage),
                     "--data", str(workdir["test"])]) == 3


def test_exit_code_contract_error(workdir, tmp_path):
    # dataset geometry does not match the checkpoint
    other_cfg = tmp_path / "wide.cfg"
    other_cfg.write_text(MICRO_CFG.replace("data.side = 4", "data.side = 5"),
                         encoding="utf-8")
    wide_out = tmp_path / "wide"
    assert cli.main(["gen-data", "--config", str(other_cfg),
                     "--out", str(wide_out)]) == 0
    assert cli.main(["finetune", *base_args(workdir, tmp_path),
                     "--method", "aft",
                     "--vanilla", str(workdir["vanilla"]),
                     "--proxy", str(workdir["proxy"]),
                     "--data", str(wide_out / "data" / "in_domain_train.dsb")]) == 2


def test_exit_code_numerical_error(workdir, tmp_path, monkeypatch):
    def blow_up(*a, **k):
        raise NumericalError("non-finite loss in stage 'pretrain' epoch 0 batch 0")

    monkeypatch.setattr(cli.training, "pretrain_clean", blow_up)
    assert cli.main(["pretrain", *base_args(workdir, tmp_path),
                     "--data", str(workdir["train"]),
                     "--role", "vanilla_target"]) == 4
