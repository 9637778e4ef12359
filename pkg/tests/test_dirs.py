import os
import importlib


def _fresh_import_dirs(monkeypatch):
    for mod in ["avlab.dirs"]:
        if mod in importlib.sys.modules:
            importlib.sys.modules.pop(mod)
    from avlab import dirs  # noqa: F401

    return importlib.import_module("avlab.dirs")


def test_dirs_structure_created(monkeypatch, tmp_path):
    home = tmp_path / ".avlab_home"
    ws = tmp_path / ".avlab_ws"
    home.mkdir()
    ws.mkdir()
    monkeypatch.setenv("AVLAB_HOME_DIR", str(home))
    monkeypatch.setenv("AVLAB_WORKSPACE_DIR", str(ws))

    dirs = _fresh_import_dirs(monkeypatch)

    runs = dirs.get_runs_dir()
    assert runs == os.path.join(str(ws), "runs")
    assert os.path.isdir(runs)

    run_dir = dirs.run_dir_by_name("train-seed0")
    assert run_dir == os.path.join(runs, "train-seed0")
    assert os.path.isdir(dirs.get_checkpoints_dir(run_dir))


def test_output_dir_override(monkeypatch, tmp_path):
    out = tmp_path / "elsewhere"
    monkeypatch.setenv("AVLAB_OUTPUT_DIR", str(out))

    dirs = _fresh_import_dirs(monkeypatch)

    assert dirs.get_runs_dir() == str(out)
    assert os.path.isdir(out)
    assert dirs.run_dir_by_name("x", root=str(tmp_path)) == os.path.join(str(tmp_path), "x")


def test_run_names_are_sanitized(monkeypatch, tmp_path):
    monkeypatch.setenv("AVLAB_OUTPUT_DIR", str(tmp_path))
    dirs = _fresh_import_dirs(monkeypatch)

    path = dirs.run_dir_by_name("../../etc/passwd")
    assert os.path.dirname(path) == str(tmp_path)
    assert ".." not in os.path.basename(path)
