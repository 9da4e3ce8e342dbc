"""CLI subcommands: exit codes, overrides, artifacts."""

import functools

import numpy as np
import pytest
import yaml

import condensery.tensor as T
from condensery import cli
from condensery.data import load_synthetic
from condensery.errors import ConfigError


def blob_config(tmp_path, **extra):
    cfg = {
        "output_dir": str(tmp_path / "run"),
        "seed": 3,
        "dataset": {"kind": "blobs", "num_classes": 3, "n_train_per_class": 30,
                    "n_test_per_class": 20, "shape": [1, 8, 8], "spread": 0.15},
        "arch": {"type": "convnet", "blocks": 2, "channels": 4},
        "condense": {"ipc": 1, "n_per_class": 8, "gamma": 2, "l_out": 3, "l_in": 3,
                     "max_outer_iters": 5, "query_size": 12},
        "eval": {"protocol": "desk", "epochs": 5, "lr": 0.05,
                 "n_experiments": 1, "n_nets_per": 2},
    }
    cfg.update(extra)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path, cfg


def test_condense_writes_artifacts(tmp_path):
    path, cfg = blob_config(tmp_path)
    assert cli.main(["condense", "--config", str(path)]) == 0
    out = tmp_path / "run"
    assert (out / "synthetic.cnd").exists()
    assert (out / "metrics.csv").exists()
    assert (out / "manifest.json").exists()
    assert (out / "config.yaml").exists()
    synth = load_synthetic(out / "synthetic.cnd")
    assert synth.ipc == 1 and synth.num_classes == 3


def test_condense_missing_dataset_path(tmp_path, capsys):
    path, _ = blob_config(tmp_path, dataset={"kind": "idx", "train_images": "/nope.idx"})
    code = cli.main(["condense", "--config", str(path)])
    assert code == 2
    err = capsys.readouterr().err
    assert "train_labels" in err or "train_images" in err


def test_set_override_precedence(tmp_path):
    path, _ = blob_config(tmp_path)
    cfg = cli.load_config(str(path), ["condense.lambda1=0.05"])
    assert cfg["condense"]["lambda1"] == 0.05
    cfg = cli.load_config(str(path), ["condense.lambda1=0.2", "seed=9"])
    assert cfg["condense"]["lambda1"] == 0.2
    assert cfg["seed"] == 9


def test_unknown_config_key_rejected(tmp_path):
    path, _ = blob_config(tmp_path, typo_section={"a": 1})
    with pytest.raises(ConfigError, match="typo_section"):
        cli.load_config(str(path), [])


def test_eval_round_trip_matches_memory(tmp_path, capsys):
    path, cfg = blob_config(tmp_path)
    assert cli.main(["condense", "--config", str(path)]) == 0
    synth_path = tmp_path / "run" / "synthetic.cnd"
    assert cli.main(["eval", str(synth_path), "--config", str(path)]) == 0
    out1 = (tmp_path / "run" / "eval.csv").read_text()
    # in-memory evaluation of the same loaded container is bit-identical
    from condensery.cli import build_arch, build_datasets, _eval_protocol_params
    full = cli.load_config(str(path), [])
    _, test = build_datasets(full)
    arch = build_arch(full, test.image_shape, test.num_classes)
    n_exp, n_nets, ecfg = _eval_protocol_params(full)
    from condensery.evaluate import evaluate_protocol
    rep = evaluate_protocol(load_synthetic(synth_path), arch, test, n_exp, n_nets, ecfg)
    for i, acc in enumerate(rep.accuracies):
        assert f"{i},{acc!r}" in out1


def test_eval_missing_container(tmp_path):
    path, _ = blob_config(tmp_path)
    assert cli.main(["eval", str(tmp_path / "missing.cnd"), "--config", str(path)]) == 3


def test_eval_protocol_flags(tmp_path):
    path, _ = blob_config(tmp_path)
    cfg = cli.load_config(str(path), [])
    cfg["eval"].pop("n_experiments")
    cfg["eval"].pop("n_nets_per")
    from condensery.cli import _eval_protocol_params
    cfg["eval"]["protocol"] = "desk"
    n_exp, n_nets, _ = _eval_protocol_params(cfg)
    assert (n_exp, n_nets) == (3, 5)
    cfg["eval"]["protocol"] = "paper"
    cfg["eval"].pop("epochs")
    n_exp, n_nets, ecfg = _eval_protocol_params(cfg)
    assert (n_exp, n_nets) == (5, 20)
    assert ecfg.epochs == 300


def test_coreset_random_stable(tmp_path):
    path, _ = blob_config(tmp_path)
    assert cli.main(["coreset", "random", "--config", str(path)]) == 0
    first = (tmp_path / "run" / "synthetic.cnd").read_bytes()
    assert cli.main(["coreset", "random", "--config", str(path)]) == 0
    assert (tmp_path / "run" / "synthetic.cnd").read_bytes() == first


def test_coreset_herding_invariants(tmp_path):
    path, _ = blob_config(tmp_path)
    assert cli.main(["coreset", "herding", "--config", str(path)]) == 0
    synth = load_synthetic(tmp_path / "run" / "synthetic.cnd")
    np.testing.assert_array_equal(synth.labels, [0, 1, 2])
    sel_lines = (tmp_path / "run" / "selection.csv").read_text().strip().splitlines()
    assert len(sel_lines) == 4
    idx = [int(l.split(",")[2]) for l in sel_lines[1:]]
    assert len(set(idx)) == 3


def test_coreset_output_feeds_eval(tmp_path):
    path, _ = blob_config(tmp_path)
    assert cli.main(["coreset", "kcenter", "--config", str(path)]) == 0
    synth_path = tmp_path / "run" / "synthetic.cnd"
    assert cli.main(["eval", str(synth_path), "--config", str(path)]) == 0


def test_coreset_unknown_method(tmp_path, capsys):
    path, _ = blob_config(tmp_path)
    assert cli.main(["coreset", "mystery", "--config", str(path)]) == 2
    assert "herding" in capsys.readouterr().err


def test_export_proj(tmp_path):
    path, _ = blob_config(tmp_path)
    assert cli.main(["condense", "--config", str(path)]) == 0
    out = tmp_path / "proj.csv"
    assert cli.main(["export-proj", str(tmp_path / "run" / "synthetic.cnd"),
                     "--config", str(path), "--output", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "set,class,pc1,pc2"
    assert len(lines) == 1 + 90 + 3


def test_gradcheck_clean(capsys):
    assert cli.main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "conv2d" in out and "all gradient checks passed" in out


def test_gradcheck_detects_injected_sign_flip(monkeypatch, capsys):
    real_conv = T.conv2d

    @functools.wraps(real_conv)
    def broken_conv(x, kernel, bias, stride=1, pad=0):
        out = real_conv(x, kernel, bias, stride, pad)
        orig_bw = out._backward

        def bw():
            orig_bw()
            kernel.grad *= -1.0   # injected fault
        out._backward = bw
        return out

    monkeypatch.setattr(T, "conv2d", broken_conv)
    assert cli.main(["gradcheck"]) == 1
    err = capsys.readouterr().err
    assert "conv2d" in err
