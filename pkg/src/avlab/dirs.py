import os

from werkzeug.utils import secure_filename

from . import storage

"""
AVLAB_HOME_DIR is the parent of the workspace directory.
By default, it is set to ~/.avlab

AVLAB_WORKSPACE_DIR is where runs, checkpoints and generated latents are stored.
By default, it is set to AVLAB_HOME_DIR/workspace

AVLAB_OUTPUT_DIR is the default output root of CLI runs.
By default, it is set to AVLAB_WORKSPACE_DIR/runs

AVLAB_STORAGE_URI points the whole tree at any fsspec URI (s3://bucket/prefix, ...).
"""

if "AVLAB_HOME_DIR" in os.environ and not storage.is_remote():
    HOME_DIR = os.environ["AVLAB_HOME_DIR"]
    if not os.path.exists(HOME_DIR):
        raise FileNotFoundError(f"Home directory {HOME_DIR} does not exist")
else:
    HOME_DIR = storage.root_uri() if storage.is_remote() else os.path.join(os.path.expanduser("~"), ".avlab")
    if not storage.is_remote():
        os.makedirs(name=HOME_DIR, exist_ok=True)


def get_workspace_dir() -> str:
    # Explicit override wins
    if "AVLAB_WORKSPACE_DIR" in os.environ and not storage.is_remote():
        value = os.environ["AVLAB_WORKSPACE_DIR"]
        if not os.path.exists(value):
            raise FileNotFoundError(f"Workspace directory {value} does not exist")
        return value

    if storage.is_remote():
        return storage.root_uri()

    path = storage.join(HOME_DIR, "workspace")
    storage.makedirs(path, exist_ok=True)
    return path


def get_runs_dir() -> str:
    """Default output root; AVLAB_OUTPUT_DIR overrides it."""
    override = os.getenv("AVLAB_OUTPUT_DIR")
    path = override if override else storage.join(get_workspace_dir(), "runs")
    storage.makedirs(path, exist_ok=True)
    return path


def run_dir_by_name(run_name: str, root: str | None = None) -> str:
    return storage.join(root or get_runs_dir(), secure_filename(str(run_name)))


def get_checkpoints_dir(run_dir: str) -> str:
    path = storage.join(run_dir, "checkpoints")
    storage.makedirs(path, exist_ok=True)
    return path
