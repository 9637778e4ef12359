from __future__ import annotations

import json
import logging
import os
from collections.abc import Iterable, Mapping
from typing import Any

from . import checkpoint
from . import dirs
from . import storage
from .run import Run, canonical_json

logger = logging.getLogger(__name__)


class Lab:
    """
    Simple facade over Run for easy usage:

    from avlab.lab_facade import Lab
    lab = Lab()
    lab.init("train-seed0", subcommand="train", config={...}, seed=0)
    lab.log("message")
    lab.log_metrics(step, {"loss": 0.1})
    lab.finish("success")
    """

    def __init__(self) -> None:
        self._run: Run | None = None

    # ------------- lifecycle -------------
    def init(
        self,
        run_id: str,
        subcommand: str = "",
        config: dict[str, Any] | None = None,
        seed: int = 0,
        argv: Iterable[str] = (),
        root: str | None = None,
    ) -> Run:
        """
        Create (or reuse) the run directory, mark it RUNNING and write its
        manifest. Re-initializing a finished run starts it over.
        """
        self._run = Run(run_id, root)
        self._run._initialize(exist_ok=True)
        storage.write_text(self._run.get_log_path(), "")
        if storage.exists(self._run.get_metrics_path()):
            storage.write_text(self._run.get_metrics_path(), "")
        self._run.update_status("RUNNING")
        self._run.write_manifest(subcommand, list(argv), config or {}, seed)
        self._detect_and_capture_wandb_url()
        return self._run

    # ------------- convenience logging -------------
    def log(self, message: str) -> None:
        self._ensure_initialized()
        self._run.log_info(message)  # type: ignore[union-attr]
        self._check_and_capture_wandb_url()

    def log_metrics(self, step: int, metrics: Mapping[str, Any]) -> None:
        """Append one row to metrics.jsonl and mirror it to an active wandb run."""
        self._ensure_initialized()
        row = {"step": int(step), **metrics}
        storage.append_text(self._run.get_metrics_path(), canonical_json(row) + "\n")  # type: ignore[union-attr]
        try:
            import wandb

            if wandb.run is not None:
                wandb.log({k: v for k, v in metrics.items() if isinstance(v, (int, float))}, step=int(step))
        except ImportError:
            pass

    def update_progress(self, progress: int) -> None:
        """
        Update run progress and check for wandb URL detection.
        """
        self._ensure_initialized()
        self._run.update_progress(progress)  # type: ignore[union-attr]
        self._check_and_capture_wandb_url()

    # ------------- artifacts -------------
    def artifact_path(self, name: str) -> str:
        self._ensure_initialized()
        return self._run.artifact_path(name)  # type: ignore[union-attr]

    def save_json(self, name: str, payload: Any) -> str:
        path = self.artifact_path(name)
        storage.write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
        self._run.update_run_data_field("outputs", sorted({*self._outputs(), name}))  # type: ignore[union-attr]
        return path

    def save_jsonl(self, name: str, rows: Iterable[Mapping[str, Any]]) -> str:
        path = self.artifact_path(name)
        storage.write_text(path, "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows))
        self._run.update_run_data_field("outputs", sorted({*self._outputs(), name}))  # type: ignore[union-attr]
        return path

    def save_tensors(self, name: str, tensors: Mapping, dtype: str = "float64", metadata: dict | None = None) -> str:
        """Write tensors in checkpoint format; names ending in .ckpt go under checkpoints/."""
        self._ensure_initialized()
        if name.endswith(".ckpt"):
            path = storage.join(dirs.get_checkpoints_dir(self._run.get_dir()), name)  # type: ignore[union-attr]
        else:
            path = self.artifact_path(name)
        checkpoint.save(path, tensors, dtype=dtype, metadata=metadata)
        self._run.update_run_data_field("outputs", sorted({*self._outputs(), name}))  # type: ignore[union-attr]
        return path

    def _outputs(self) -> list[str]:
        return list(self._run.get_run_data().get("outputs", []))  # type: ignore[union-attr]

    # ------------- completion -------------
    def finish(self, message: str = "Run completed successfully", score: dict[str, Any] | None = None) -> None:
        """
        Mark the run as successfully completed and set completion metadata.
        """
        self._ensure_initialized()
        self._run.mark_complete()  # type: ignore[union-attr]
        self._run.update_run_data_field("completion_status", "success")  # type: ignore[union-attr]
        self._run.update_run_data_field("completion_details", message)  # type: ignore[union-attr]
        if score is not None:
            self._run.update_run_data_field("score", score)  # type: ignore[union-attr]

    def error(self, message: str = "") -> None:
        """
        Mark the run as failed and set completion metadata.
        """
        self._ensure_initialized()
        self._run.update_status("FAILED")  # type: ignore[union-attr]
        self._run.update_run_data_field("completion_status", "failed")  # type: ignore[union-attr]
        self._run.set_error_message(message)  # type: ignore[union-attr]

    # ------------- wandb -------------
    def _detect_and_capture_wandb_url(self) -> None:
        """
        Store the wandb run URL in run data when one is available, either from
        WANDB_URL or from an active wandb run in this process.
        """
        try:
            wandb_url = os.environ.get("WANDB_URL")
            if not wandb_url:
                try:
                    import wandb

                    if wandb.run is not None:
                        wandb_url = getattr(wandb.run, "url", None)
                except ImportError:
                    pass
            if wandb_url:
                self._run.update_run_data_field("wandb_run_url", wandb_url)  # type: ignore[union-attr]
                logger.info("Detected wandb run URL: %s", wandb_url)
        except Exception:
            # wandb detection is optional
            logger.debug("wandb URL detection failed", exc_info=True)

    def _check_and_capture_wandb_url(self) -> None:
        if self._run is not None and self._run.get_run_data().get("wandb_run_url"):
            return
        self._detect_and_capture_wandb_url()

    def _ensure_initialized(self) -> None:
        if self._run is None:
            raise RuntimeError("Lab not initialized. Call lab.init(...) first.")

    @property
    def initialized(self) -> bool:
        return self._run is not None

    @property
    def run(self) -> Run:
        self._ensure_initialized()
        return self._run  # type: ignore[return-value]
