import json
import math
import os
import subprocess

import numpy as np
import pytest

import fairstamp as fs


def tiny_config():
    c = fs.ModelConfig()
    c.num_layers = 2
    c.model_dim = 16
    c.num_heads = 2
    c.vocab_size = 32
    c.max_seq_len = 12
    c.ffn_hidden_dim = 32
    c.seed = 4
    return c


def quick_pipeline(out):
    return {
        "world": {"corpus_size": 800},
        "train": {"steps": 20, "seed": 1},
        "edit": {"iterations_per_batch": 2, "prefix_count": 2},
        "continual_sets": 0,
        "out": str(out),
    }


def test_model_basics():
    m = fs.Model(tiny_config())
    logits = m.logits([1, 2, 3])
    assert logits.shape == (3, 32)
    dist = m.next_token_distribution([1, 2, 3])
    assert math.isclose(sum(dist), 1.0, rel_tol=1e-9)
    p = m.object_prob([1, 2], [3, 4])
    assert 0.0 < p < 1.0
    assert m.parameter_count() > 0


def test_fresh_stamp_is_identity():
    m = fs.Model(tiny_config())
    s = fs.Stamp(layer=1, model_dim=16, hidden_dim=8, seed=3)
    assert s.parameter_count() == 2 * 8 * 16
    assert not np.any(s.value)
    edited = fs.StampedModel(m, [s])
    probe = [5, 1, 7, 2]
    assert np.array_equal(edited.logits(probe), m.logits(probe))
    assert edited.base_unchanged()


def test_scalar_helpers():
    assert fs.icat(80.0, 60.0) == pytest.approx(64.0)
    with pytest.raises(fs.FairstampError) as info:
        fs.icat(101.0, 50.0)
    assert info.value.category == "argument"
    kl = fs.kl_divergence([0.4, 0.3, 0.2, 0.1], [0.25] * 4)
    assert kl == pytest.approx(0.10644, abs=1e-5)


def test_pipeline_and_zero_stamp_eval(tmp_path):
    cfg = quick_pipeline(tmp_path / "run")
    fs.run("all", cfg)
    for rel in ["world/bundle.jsonl", "base/manifest.json", "trace/location.json",
                "edit/telemetry.csv", "eval/report.json", "manifest.json"]:
        assert (tmp_path / "run" / rel).is_file(), rel
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert {"gen", "train-base", "trace", "edit", "eval"} <= set(manifest["stages"])

    base = fs.Model.load(str(tmp_path / "run" / "base"))
    fs.Stamp(layer=2, model_dim=base.config.model_dim, hidden_dim=8, seed=1).save(str(tmp_path / "zero"))
    cfg["inputs"] = {"stamps": str(tmp_path / "zero")}
    report = fs.run("eval", cfg)
    assert report["rs"] == 100.0
    base_report = json.loads((tmp_path / "run" / "eval" / "base_report.json").read_text())
    assert report["ss"] == base_report["ss"]


def test_missing_inputs(tmp_path):
    with pytest.raises(fs.FairstampError) as info:
        fs.run("eval", quick_pipeline(tmp_path / "nothing"))
    assert info.value.exit_code == 2
    with pytest.raises(fs.FairstampError) as info:
        fs.run("gen", {"edit": {"batch_size": 0}})
    assert info.value.exit_code == 1


@pytest.mark.skipif("FAIRSTAMP_CLI" not in os.environ, reason="command-line tool not built")
def test_cli_missing_dataset(tmp_path):
    cfg = quick_pipeline(tmp_path / "run")
    cfg["inputs"] = {"bundle": str(tmp_path / "absent.jsonl"), "base": str(tmp_path)}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    fs.Model(fs.ModelConfig()).save(str(tmp_path / "base"))
    cfg["inputs"]["base"] = str(tmp_path / "base")
    path.write_text(json.dumps(cfg))
    proc = subprocess.run([os.environ["FAIRSTAMP_CLI"], "trace", "--config", str(path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert proc.stderr.startswith("error:load:")
    assert "absent.jsonl" in proc.stderr
