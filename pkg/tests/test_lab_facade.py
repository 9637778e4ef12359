import os
import json
import importlib
import sys
import types

import numpy as np
import pytest


def _fresh(monkeypatch):
    for mod in ["avlab.lab_facade", "avlab.run", "avlab.dirs"]:
        if mod in importlib.sys.modules:
            importlib.sys.modules.pop(mod)


def _lab(tmp_path, monkeypatch, run_id="r1", **kwargs):
    _fresh(monkeypatch)
    monkeypatch.setenv("AVLAB_OUTPUT_DIR", str(tmp_path / "runs"))
    from avlab.lab_facade import Lab

    lab = Lab()
    lab.init(run_id, **kwargs)
    return lab


def test_lab_init(tmp_path, monkeypatch):
    lab = _lab(tmp_path, monkeypatch, subcommand="train", config={"train": {"steps": 1}}, seed=3, argv=["train"])

    assert lab.initialized
    assert lab.run.get_status() == "RUNNING"
    assert lab.run.get_dir() == os.path.join(str(tmp_path / "runs"), "r1")
    with open(lab.run.get_manifest_path()) as f:
        manifest = json.load(f)
    assert manifest["subcommand"] == "train"
    assert manifest["seed"] == 3
    assert manifest["config"] == {"train": {"steps": 1}}


def test_lab_methods_require_init(tmp_path, monkeypatch):
    _fresh(monkeypatch)
    from avlab.lab_facade import Lab

    lab = Lab()
    assert not lab.initialized
    with pytest.raises(RuntimeError):
        lab.log("x")
    with pytest.raises(RuntimeError):
        lab.finish()
    with pytest.raises(RuntimeError):
        _ = lab.run


def test_lab_reinit_starts_over(tmp_path, monkeypatch):
    lab = _lab(tmp_path, monkeypatch)
    lab.log("old line")
    lab.log_metrics(0, {"loss": 1.0})
    lab.finish("done")

    lab.init("r1")
    assert lab.run.get_status() == "RUNNING"
    with open(lab.run.get_log_path()) as f:
        assert f.read() == ""
    with open(lab.run.get_metrics_path()) as f:
        assert f.read() == ""


def test_lab_log_and_progress(tmp_path, monkeypatch):
    lab = _lab(tmp_path, monkeypatch)
    lab.log("hello")
    lab.update_progress(40)
    with open(lab.run.get_log_path()) as f:
        assert f.read() == "hello\n"
    assert lab.run.get_progress() == 40


def test_lab_log_metrics(tmp_path, monkeypatch):
    lab = _lab(tmp_path, monkeypatch)
    lab.log_metrics(0, {"loss": 0.5, "expert": None})
    lab.log_metrics(1, {"loss": 0.25, "expert": "video_low"})
    with open(lab.run.get_metrics_path()) as f:
        rows = [json.loads(line) for line in f]
    assert rows == [
        {"step": 0, "loss": 0.5, "expert": None},
        {"step": 1, "loss": 0.25, "expert": "video_low"},
    ]


def test_lab_save_artifacts(tmp_path, monkeypatch):
    lab = _lab(tmp_path, monkeypatch)
    path = lab.save_json("summary.json", {"b": 1, "a": 2})
    with open(path) as f:
        assert f.read() == '{\n  "a": 2,\n  "b": 1\n}\n'
    lab.save_jsonl("rows.jsonl", [{"x": 1}, {"x": 2}])
    ckpt = lab.save_tensors("model.ckpt", {"w": np.ones(3)}, metadata={"steps": 1})
    assert ckpt == os.path.join(lab.run.get_dir(), "checkpoints", "model.ckpt")
    blob = lab.save_tensors("latents.bin", {"x_v/0": np.zeros((2, 2))})
    assert blob == os.path.join(lab.run.get_dir(), "latents.bin")

    assert lab.run.get_run_data()["outputs"] == ["latents.bin", "model.ckpt", "rows.jsonl", "summary.json"]
    from avlab import checkpoint

    arrays, header = checkpoint.load(ckpt)
    assert np.array_equal(arrays["w"], np.ones(3))
    assert header["metadata"] == {"steps": 1}


def test_lab_finish(tmp_path, monkeypatch):
    lab = _lab(tmp_path, monkeypatch)
    lab.finish("all good", score={"final_loss": 0.1})
    data = lab.run.get_json_data()
    assert data["status"] == "COMPLETE"
    assert data["progress"] == 100
    assert data["run_data"]["completion_status"] == "success"
    assert data["run_data"]["completion_details"] == "all good"
    assert data["run_data"]["score"] == {"final_loss": 0.1}


def test_lab_error(tmp_path, monkeypatch):
    lab = _lab(tmp_path, monkeypatch)
    lab.error("went wrong")
    data = lab.run.get_json_data()
    assert data["status"] == "FAILED"
    assert data["run_data"]["completion_status"] == "failed"
    assert data["run_data"]["error_msg"] == "went wrong"


def test_lab_captures_wandb_url_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv("WANDB_URL", "https://wandb.ai/team/project/runs/abc")
    lab = _lab(tmp_path, monkeypatch)
    assert lab.run.get_run_data()["wandb_run_url"] == "https://wandb.ai/team/project/runs/abc"


def test_lab_captures_wandb_url_from_active_run(tmp_path, monkeypatch):
    logged = []
    fake = types.SimpleNamespace(run=None, log=lambda data, step=None: logged.append((step, data)))
    monkeypatch.setitem(sys.modules, "wandb", fake)

    lab = _lab(tmp_path, monkeypatch)
    assert "wandb_run_url" not in lab.run.get_run_data()

    fake.run = types.SimpleNamespace(url="https://wandb.ai/team/project/runs/late")
    lab.update_progress(10)
    assert lab.run.get_run_data()["wandb_run_url"] == "https://wandb.ai/team/project/runs/late"

    lab.log_metrics(3, {"loss": 0.5, "expert": "video_high"})
    assert logged == [(3, {"loss": 0.5})]
