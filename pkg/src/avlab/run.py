import hashlib
import json
import logging
import platform

import numpy as np

from . import dirs
from . import storage
from .errors import ContractError
from .labresource import BaseLabResource

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = 1
_MANIFEST_FIELDS = {"subcommand": str, "argv": list, "config": dict, "seed": int}


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def package_versions() -> dict:
    from . import __version__

    return {"avlab": __version__, "numpy": np.__version__, "python": platform.python_version()}


class Run(BaseLabResource):
    """
    One invocation of an avlab operation: its status, log and output files.

    The run directory holds `index.json` (status and run data), `output.log`,
    `manifest.json` and whatever artifacts the operation writes.
    """

    def __init__(self, run_id, root: str | None = None):
        self.id = run_id
        self.root = root

    def get_dir(self):
        """Abstract method on BaseLabResource"""
        return dirs.run_dir_by_name(self.id, self.root)

    def _default_json(self):
        return {
            "id": self.id,
            "subcommand": "",
            "run_data": {},
            "status": "NOT_STARTED",
            "progress": 0,
        }

    def get_log_path(self):
        return storage.join(self.get_dir(), "output.log")

    def get_manifest_path(self):
        return storage.join(self.get_dir(), "manifest.json")

    def get_metrics_path(self):
        return storage.join(self.get_dir(), "metrics.jsonl")

    def artifact_path(self, name: str) -> str:
        return storage.join(self.get_dir(), name)

    def update_progress(self, progress: int):
        """Update the percent complete for this run."""
        self._update_json_data_field("progress", int(progress))

    def update_status(self, status: str):
        self._update_json_data_field("status", status)

    def get_status(self):
        return self._get_json_data_field("status")

    def get_progress(self):
        return self._get_json_data_field("progress")

    def get_run_data(self):
        return self._get_json_data_field("run_data", {})

    def update_run_data_field(self, key: str, value):
        """Updates a key-value pair in the run_data JSON object."""
        run_data = dict(self.get_run_data())
        run_data[key] = value
        self._update_json_data(run_data=run_data)

    def mark_complete(self):
        self._update_json_data(status="COMPLETE", progress=100)

    def set_error_message(self, error_msg: str):
        self.update_run_data_field("error_msg", str(error_msg))

    def log_info(self, message):
        """Log a message and mirror it into the run's output.log."""
        message_str = str(message)
        logger.info(message_str)
        try:
            storage.append_text(self.get_log_path(), message_str.rstrip("\n") + "\n")
        except OSError:
            # The log file is a mirror; a write failure must not stop the run
            logger.debug("could not mirror log line to %s", self.get_log_path())

    def write_manifest(self, subcommand: str, argv: list[str], config: dict, seed: int) -> dict:
        """
        Write manifest.json. It holds everything needed to replay the run and
        nothing time dependent, so identical runs produce identical manifests.
        """
        manifest = {
            "format": MANIFEST_FORMAT,
            "subcommand": subcommand,
            "argv": list(argv),
            "config": config,
            "config_hash": config_hash(config),
            "seed": int(seed),
            "versions": package_versions(),
        }
        storage.write_text(self.get_manifest_path(), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        self._update_json_data_field("subcommand", subcommand)
        return manifest

    @staticmethod
    def read_manifest(path: str) -> dict:
        manifest = json.loads(storage.read_text(path))
        if not isinstance(manifest, dict):
            raise ContractError(f"{path} is not a manifest object")
        if manifest.get("format") != MANIFEST_FORMAT:
            raise ContractError(f"Unsupported manifest format {manifest.get('format')!r} in {path}")
        for key, kind in _MANIFEST_FIELDS.items():
            if not isinstance(manifest.get(key), kind):
                raise ContractError(f"manifest {path} needs `{key}` of type {kind.__name__}")
        if not all(isinstance(a, str) for a in manifest["argv"]):
            raise ContractError(f"manifest {path} has non-string argv entries")
        return manifest
