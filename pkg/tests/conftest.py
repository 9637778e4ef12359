import os
import sys

import pytest


@pytest.fixture(autouse=True)
def _isolate_imports_and_home(monkeypatch, tmp_path):
    """
    Ensure imports are fresh each test and HOME is isolated to tmp.
    AVLAB_* variables are cleared; individual tests set them when needed.
    """
    repo_root = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))
    src_dir = os.path.join(repo_root, "src")
    if src_dir not in sys.path:
        sys.path.insert(0, src_dir)

    # Isolate HOME to avoid touching real user dirs for default-path tests
    monkeypatch.setenv("HOME", str(tmp_path))
    for var in ("AVLAB_HOME_DIR", "AVLAB_WORKSPACE_DIR", "AVLAB_OUTPUT_DIR", "AVLAB_STORAGE_URI", "WANDB_URL"):
        monkeypatch.delenv(var, raising=False)

    # Clear modules whose import evaluates the environment
    for mod in ["avlab", "avlab.dirs", "avlab.run", "avlab.lab_facade", "avlab.cli"]:
        if mod in sys.modules:
            sys.modules.pop(mod)

    yield


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    """A fresh AVLAB_OUTPUT_DIR for tests that create runs."""
    root = tmp_path / "runs"
    root.mkdir()
    monkeypatch.setenv("AVLAB_OUTPUT_DIR", str(root))
    return root
