"""
Command-line entry point.

Every subcommand runs inside a Run directory under the output root
(AVLAB_OUTPUT_DIR, or --output) and writes a manifest there. Replaying
a manifest with --from-manifest reproduces the run's files byte for byte.

Exit codes: 0 on success, 1 when an operation rejects its inputs, 2 on usage
errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from collections.abc import Sequence

import numpy as np

from . import checkpoint
from . import guidance
from . import storage
from .config import from_dict, load_config_file, to_dict
from .curation import (
    GATE_PROFILES,
    MetricRecord,
    apply_gates,
    gate_profile,
    process_clips,
    read_jsonl,
    retention_report,
)
from .dataset import ONSET_THRESHOLD, MATCH_TOLERANCE_S, NOISE_STD, prompt_for_classes, random_scene, synth_pair, sync_score
from .engine import (
    FIRST_FRAME_MODES,
    OPTIMIZER_PRESETS,
    PHASE_PRESETS,
    OptimizerGroups,
    SampleConfig,
    TrainConfig,
    gradcheck_model,
    loss_trend,
    phase_curriculum,
    sample_with_config,
    sweep_s_b,
    train,
)
from .errors import AvlabError, ContractError
from .lab_facade import Lab
from .metrics import (
    EloConfig,
    SpeakerTranscript,
    Vote,
    bootstrap_ci,
    bradley_terry_ratings,
    cpcer_details,
    elo_ratings,
    win_rate_matrix,
)
from .model import ConditionSet, DualTowerModel, ModelConfig
from .ropealign import TimeGrid
from .run import Run

logger = logging.getLogger(__name__)

SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "optim": OptimizerGroups,
    "sample": SampleConfig,
    "elo": EloConfig,
}

# config sections each subcommand reads
COMMAND_SECTIONS = {
    "train": ("model", "train", "optim"),
    "sample": ("model", "sample"),
    "gradcheck": ("model",),
    "synth": ("model",),
    "syncscore": ("model",),
    "window": (),
    "gate": (),
    "report": (),
    "elo": ("elo",),
    "cpcer": (),
    "sweep": ("model", "train", "optim", "sample"),
}

# argparse destinations that describe the invocation rather than the operation
_COMMON_DESTS = {"command", "config", "from_manifest", "output", "run_name", "verbose", "quiet", "seed", "handler", "progress"}

DEFAULT_SWEEP = (1.0, 2.0, 3.0, 3.5)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _float_list(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one number")
    return values


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _stage(text: str) -> tuple[str, float]:
    name, sep, value = text.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected NAME=COUNT, got {text!r}")
    try:
        return name, float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"stage count must be a number, got {value!r}") from None


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="Seed for every random draw of the run")
    common.add_argument("--config", help="JSON config file with model/train/optim/sample/elo sections")
    common.add_argument("--output", help="Output root (default: AVLAB_OUTPUT_DIR or the workspace runs dir)")
    common.add_argument("--run-name", help="Run directory name (default: <subcommand>-seed<seed>)")
    common.add_argument("--from-manifest", help="Replay the run recorded in this manifest.json")
    common.add_argument("--progress", action="store_true", help="Show progress bars")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    return common


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tiny", action="store_true", help="Start from the tiny model preset")


def _add_guidance_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--s-b", dest="s_B", type=float, help="Bridge guidance scale")
    p.add_argument("--s-t", dest="s_T", type=float, help="Text guidance scale")
    p.add_argument("--guidance", choices=guidance.GUIDANCE_MODES, help="Guidance factorization")
    p.add_argument("--n-steps", type=int, help="Sampler steps")
    p.add_argument("--checkpoint", help="model.ckpt written by `avlab train`")
    p.add_argument("--workers", type=int, help="Threads for branch evaluation")


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="avlab", description="Joint audio-video flow matching at desk scale")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True

    p = sub.add_parser("train", parents=[common], help="Train the dual-tower model on synthetic scenes")
    _add_model_flags(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--workers", type=int, help="Threads for per-sample gradients")
    p.add_argument("--phase", choices=[*PHASE_PRESETS, "curriculum"], help="Training preset, or all phases in turn")
    p.add_argument("--optimizer", choices=sorted(OPTIMIZER_PRESETS), default="toy")
    p.add_argument("--dual-experts", action="store_true", help="Split the video tower into two timestep experts")
    p.add_argument("--alternate-experts", action="store_true")
    p.add_argument("--first-frame", choices=FIRST_FRAME_MODES)
    p.add_argument("--checkpoint-dtype", choices=("float64", "float32"), default="float64")
    p.add_argument("--fast", action="store_true", help="Train in float32")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("sample", parents=[common], help="Sample audio-video latent pairs")
    _add_model_flags(p)
    _add_guidance_flags(p)
    p.add_argument("--n", type=int, default=1, help="Number of samples")
    p.add_argument("--prompt", type=_int_list, help="Event classes, e.g. 0,2,1 (default: random scenes)")
    p.add_argument("--white-frame", action="store_true", help="Condition on the constant white first frame")
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("gradcheck", parents=[common], help="Finite-difference check of the model loss")
    _add_model_flags(p)
    p.add_argument("--coords", type=int, default=6)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("synth", parents=[common], help="Generate synthetic event scenes and their latents")
    _add_model_flags(p)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--noise-std", type=float, default=NOISE_STD)
    p.add_argument("--audio-shift", type=float, default=0.0, help="Seconds to delay every audio event")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("syncscore", parents=[common], help="Score synchronization of latent pairs")
    _add_model_flags(p)
    p.add_argument("--input", required=True, help="Tensor file from `synth` or `sample`")
    p.add_argument("--threshold", type=float, default=ONSET_THRESHOLD)
    p.add_argument("--tolerance", type=float, default=MATCH_TOLERANCE_S)
    p.set_defaults(handler=cmd_syncscore)

    p = sub.add_parser("window", parents=[common], help="Cut speech windows from clip metadata")
    p.add_argument("--clips", required=True, help="JSONL with clip_id, segments and splits per clip")
    p.add_argument("--mode", choices=("multi", "single"), required=True)
    p.add_argument("--prevent-overlap", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=cmd_window)

    p = sub.add_parser("gate", parents=[common], help="Apply quality gates to per-clip metrics")
    p.add_argument("--metrics", required=True, help="JSONL of metric records")
    p.add_argument("--profile", choices=sorted(GATE_PROFILES), default="stage2")
    p.set_defaults(handler=cmd_gate)

    p = sub.add_parser("report", parents=[common], help="Retention report over curation stages")
    p.add_argument("--counts", help="JSON object of stage -> count, raw stage first")
    p.add_argument("--stage", type=_stage, action="append", default=[], help="NAME=COUNT, repeatable, raw first")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("elo", parents=[common], help="Elo ratings with bootstrap intervals")
    p.add_argument("--votes", required=True, help="JSONL of votes (model_a, model_b, outcome)")
    p.add_argument("--bootstrap", type=int, help="Bootstrap iterations")
    p.add_argument("--k", type=float, help="Elo K factor")
    p.add_argument("--bradley-terry", action="store_true", help="Also report maximum-likelihood ratings")
    p.set_defaults(handler=cmd_elo)

    p = sub.add_parser("cpcer", parents=[common], help="Speaker-permutation character error rate")
    p.add_argument("--ref", required=True, help="JSONL of reference transcripts")
    p.add_argument("--hyp", required=True, help="JSONL of hypothesis transcripts, same order")
    p.set_defaults(handler=cmd_cpcer)

    p = sub.add_parser("sweep", parents=[common], help="Sync offset over a grid of bridge guidance scales")
    _add_model_flags(p)
    _add_guidance_flags(p)
    p.add_argument("--s-b-values", type=_float_list, default=list(DEFAULT_SWEEP))
    p.add_argument("--scenes", type=int, default=16)
    p.add_argument("--steps", type=int, help="Training steps when no checkpoint is given")
    p.set_defaults(handler=cmd_sweep)
    return parser


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _present(**values) -> dict:
    return {k: v for k, v in values.items() if v is not None}


def _checkpoint_model_config(path: str) -> dict:
    _, manifest = checkpoint.load(path)
    model = manifest.get("metadata", {}).get("model")
    if not isinstance(model, dict):
        raise ContractError(f"checkpoint {path} does not record its model config")
    return model


def _section_base(section: str, args) -> dict:
    if section == "model":
        if getattr(args, "checkpoint", None):
            return _checkpoint_model_config(args.checkpoint)
        return to_dict(ModelConfig.tiny()) if getattr(args, "tiny", False) else {}
    if section == "train" and getattr(args, "phase", None) in PHASE_PRESETS:
        return dict(PHASE_PRESETS[args.phase].train_overrides)
    if section == "optim":
        return to_dict(OPTIMIZER_PRESETS[getattr(args, "optimizer", "toy")])
    return {}


def _section_flags(section: str, args) -> dict:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    if section == "model":
        return _present(seed=args.seed, dual_experts=True if get("dual_experts") else None)
    if section == "train":
        return _present(
            seed=args.seed,
            steps=get("steps"),
            batch=get("batch"),
            workers=get("workers") if args.command == "train" else None,
            alternate_experts=True if get("alternate_experts") else None,
            first_frame=get("first_frame"),
            fast=True if get("fast") else None,
        )
    if section == "sample":
        return _present(seed=args.seed, s_B=get("s_B"), s_T=get("s_T"), guidance=get("guidance"), n_steps=get("n_steps"), workers=get("workers"))
    if section == "elo":
        return _present(seed=args.seed, bootstrap_iters=get("bootstrap"), k=get("k"))
    return {}


def build_config(args, raw: dict | None = None) -> dict:
    """
    Resolve the run config: section defaults and presets, then the config
    file (or the replayed manifest), then flags. Every section is normalized
    through its dataclass so the manifest records complete values.
    """
    if raw is None:
        raw = load_config_file(args.config) if args.config else {}
    unknown = sorted(set(raw) - set(SECTIONS) - {"options"})
    if unknown:
        raise ContractError(f"unknown config sections: {', '.join(unknown)}")
    config = {}
    for section in COMMAND_SECTIONS[args.command]:
        base = _section_base(section, args)
        override = {} if section == "model" and getattr(args, "checkpoint", None) else raw.get(section, {})
        if not isinstance(override, dict):
            raise ContractError(f"config section {section!r} must be an object")
        data = _deep_merge(_deep_merge(base, override), _section_flags(section, args))
        config[section] = to_dict(from_dict(SECTIONS[section], data))
    config["options"] = {k: v for k, v in sorted(vars(args).items()) if k not in _COMMON_DESTS}
    return config


def _model(config: dict, args) -> DualTowerModel:
    model_cfg = from_dict(ModelConfig, config["model"])
    if getattr(args, "checkpoint", None):
        params = checkpoint.load_tensors(args.checkpoint, requires_grad=True)
        model = DualTowerModel(model_cfg, params)
        missing = set(DualTowerModel(model_cfg).params) - set(params)
        if missing:
            raise ContractError(f"checkpoint {args.checkpoint} lacks parameters: {sorted(missing)[:5]}")
        return model
    return DualTowerModel(model_cfg)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _fit(config: dict, lab: Lab, progress: bool, phase: str | None = None):
    model = DualTowerModel(from_dict(ModelConfig, config["model"]))
    train_cfg = from_dict(TrainConfig, config["train"])
    groups = from_dict(OptimizerGroups, config["optim"])
    lab.log(f"model has {model.parameter_count()} parameters")
    if phase == "curriculum":
        return phase_curriculum(model, train_cfg, groups, on_metrics=lab.log_metrics)
    return train(model, train_cfg, groups, on_metrics=lab.log_metrics, on_progress=lab.update_progress, progress_bar=progress)


def cmd_train(args, config: dict, lab: Lab) -> int:
    result = _fit(config, lab, args.progress, args.phase)
    model = result.model
    lab.save_tensors(
        "model.ckpt",
        model.parameters(),
        dtype=args.checkpoint_dtype,
        metadata={"model": to_dict(model.config), "steps": len(result.history)},
    )
    summary = {
        "steps": len(result.history),
        "final_loss": result.losses[-1] if result.losses else None,
        "null_text": result.null_text_total,
        "no_bridge": result.no_bridge_total,
        "parameters": model.parameter_audit(),
    }
    if len(result.losses) >= 10:
        summary["loss_first_tenth"], summary["loss_last_tenth"] = loss_trend(result.losses)
    lab.save_json("train_summary.json", summary)
    lab.log(f"trained {summary['steps']} steps, final loss {summary['final_loss']}")
    lab.finish("training complete", score={"final_loss": summary["final_loss"]})
    return 0


def cmd_sample(args, config: dict, lab: Lab) -> int:
    if args.n < 1:
        raise ContractError(f"--n must be positive, got {args.n}")
    model = _model(config, args)
    sample_cfg = from_dict(SampleConfig, config["sample"])
    mc = model.config
    rng = np.random.default_rng(args.seed)
    tensors, rows = {}, []
    for i in range(args.n):
        classes = args.prompt if args.prompt is not None else random_scene(rng).classes
        tokens = prompt_for_classes(classes, mc.text_len)
        cond = ConditionSet.t2va(tokens, mc.video.latent_dim) if args.white_frame else ConditionSet(text_tokens=tokens)
        x_v, x_a = sample_with_config(model, cond, sample_cfg, seed=sample_cfg.seed + i)
        report = sync_score(x_v, x_a, mc.grid)
        tensors[f"x_v/{i}"], tensors[f"x_a/{i}"] = x_v, x_a
        rows.append({"index": i, "classes": list(classes), "prompt": list(tokens), **report.to_dict()})
        lab.update_progress(int(100 * (i + 1) / args.n))
    lab.save_tensors("samples.bin", tensors, metadata={"count": args.n, "f_v": mc.f_v, "f_a": mc.f_a})
    lab.save_jsonl("samples.jsonl", rows)
    lab.save_json("sample_summary.json", _sync_summary(rows))
    lab.log(f"sampled {args.n} pairs with {sample_cfg.guidance} guidance (s_B={sample_cfg.s_B}, s_T={sample_cfg.s_T})")
    lab.finish("sampling complete")
    return 0


def cmd_gradcheck(args, config: dict, lab: Lab) -> int:
    model = _model(config, args)
    errors = gradcheck_model(model, coords=args.coords, seed=args.seed, eps=args.eps)
    max_err = max(errors.values())
    for name, err in errors.items():
        lab.log(f"{name}: {err:.3e}")
    lab.save_json("gradcheck.json", {"errors": errors, "max_rel_err": max_err, "tolerance": args.tol})
    print(f"max relative error: {max_err:.3e}")
    if not max_err <= args.tol:
        lab.error(f"max relative error {max_err:.3e} exceeds {args.tol:.1e}")
        return 1
    lab.finish("gradient check passed", score={"max_rel_err": max_err})
    return 0


def cmd_synth(args, config: dict, lab: Lab) -> int:
    if args.n < 1:
        raise ContractError(f"--n must be positive, got {args.n}")
    mc = from_dict(ModelConfig, config["model"])
    rng = np.random.default_rng(args.seed)
    tensors, rows = {}, []
    for i in range(args.n):
        scene = random_scene(rng)
        x_v, x_a = synth_pair(
            scene,
            mc.grid,
            rng,
            latent_dims=(mc.video.latent_dim, mc.audio.latent_dim),
            noise_std=args.noise_std,
            audio_shift_s=args.audio_shift,
            duration_s=mc.duration_s,
        )
        tensors[f"x_v/{i}"], tensors[f"x_a/{i}"] = x_v, x_a
        rows.append({"index": i, "onsets": list(scene.onsets), "classes": list(scene.classes), "prompt": list(scene.prompt_tokens(mc.text_len))})
    lab.save_tensors("synth.bin", tensors, metadata={"count": args.n, "f_v": mc.f_v, "f_a": mc.f_a})
    lab.save_jsonl("scenes.jsonl", rows)
    lab.log(f"generated {args.n} scenes (audio shift {args.audio_shift} s)")
    lab.finish("synthesis complete")
    return 0


def _sync_summary(rows: list[dict]) -> dict:
    offsets = [r["offset_error_s"] for r in rows]
    return {
        "pairs": len(rows),
        "median_offset_s": float(np.median(offsets)),
        "mean_f1": float(np.mean([r["event_f1"] for r in rows])),
        "failures": sum(r["error"] is not None for r in rows),
    }


def cmd_syncscore(args, config: dict, lab: Lab) -> int:
    arrays, manifest = checkpoint.load(args.input)
    meta = manifest.get("metadata", {})
    mc = from_dict(ModelConfig, config["model"])
    grid = TimeGrid(f_v=meta.get("f_v", mc.f_v), f_a=meta.get("f_a", mc.f_a))
    indices = sorted(int(name.split("/", 1)[1]) for name in arrays if name.startswith("x_v/"))
    if not indices:
        raise ContractError(f"{args.input} holds no x_v/<i> tensors")
    rows = []
    for i in indices:
        if f"x_a/{i}" not in arrays:
            raise ContractError(f"{args.input} has x_v/{i} without x_a/{i}")
        report = sync_score(arrays[f"x_v/{i}"], arrays[f"x_a/{i}"], grid, args.threshold, args.tolerance)
        rows.append({"index": i, **report.to_dict()})
    summary = _sync_summary(rows)
    lab.save_jsonl("syncscore.jsonl", rows)
    lab.save_json("syncscore.json", summary)
    lab.log(f"median offset {summary['median_offset_s']:.4f} s, mean F1 {summary['mean_f1']:.4f}")
    lab.finish("sync scoring complete", score=summary)
    return 0


def cmd_window(args, config: dict, lab: Lab) -> int:
    rows = read_jsonl(args.clips)
    windows = process_clips(rows, args.mode, args.seed, workers=args.workers, prevent_overlap=args.prevent_overlap)
    kinds = Counter(w["kind"] for w in windows)
    lab.save_jsonl("windows.jsonl", windows)
    lab.save_json("windows_summary.json", {"clips": len(rows), "windows": len(windows), "kinds": dict(sorted(kinds.items()))})
    lab.log(f"{len(windows)} {args.mode}-shot windows from {len(rows)} clips")
    lab.finish("windowing complete")
    return 0


def cmd_gate(args, config: dict, lab: Lab) -> int:
    cfg = gate_profile(args.profile)
    decisions = [apply_gates(MetricRecord.from_dict(row), cfg) for row in read_jsonl(args.metrics)]
    reasons = Counter(r for d in decisions for r in d.reasons)
    passed = sum(d.passed for d in decisions)
    lab.save_jsonl("decisions.jsonl", [d.to_dict() for d in decisions])
    lab.save_json("gate_summary.json", {"profile": args.profile, "total": len(decisions), "passed": passed, "reasons": dict(sorted(reasons.items()))})
    lab.log(f"{passed} of {len(decisions)} clips pass the {args.profile} gates")
    lab.finish("gating complete")
    return 0


def cmd_report(args, config: dict, lab: Lab) -> int:
    counts: dict[str, float] = {}
    if args.counts:
        data = json.loads(storage.read_text(args.counts))
        if not isinstance(data, dict):
            raise ContractError(f"{args.counts} must hold a JSON object of stage counts")
        counts.update(data)
    for name, value in args.stage:
        counts[name] = value
    if not counts:
        raise ContractError("report needs --counts or at least one --stage")
    report = retention_report(counts)
    for stage in report.stages:
        lab.log(f"{stage.stage}: {stage.percent:.2f}%")
    lab.save_json("retention.json", report.to_dict())
    lab.finish("report complete")
    return 0


def cmd_elo(args, config: dict, lab: Lab) -> int:
    votes = sorted((Vote.from_dict(row) for row in read_jsonl(args.votes)), key=lambda v: v.order)
    cfg = from_dict(EloConfig, config["elo"])
    ratings = elo_ratings(votes, cfg)
    intervals = bootstrap_ci(votes, cfg, progress_bar=args.progress)
    result = {
        "votes": len(votes),
        "ratings": ratings,
        "intervals": {m: ci.to_dict() for m, ci in intervals.items()},
        "win_rates": win_rate_matrix(votes),
    }
    if args.bradley_terry:
        result["bradley_terry"] = bradley_terry_ratings(votes, cfg)
    for model, rating in sorted(ratings.items(), key=lambda kv: (-kv[1], kv[0])):
        ci = intervals[model]
        lab.log(f"{model}: {rating:.1f} [{ci.lower:.1f}, {ci.upper:.1f}]")
    lab.save_json("elo.json", result)
    lab.finish("ratings complete")
    return 0


def _transcript(row: dict, where: str) -> tuple[str | None, SpeakerTranscript]:
    utterances = row.get("utterances", {k: v for k, v in row.items() if k != "id"})
    if not isinstance(utterances, dict) or not all(isinstance(v, str) for v in utterances.values()):
        raise ContractError(f"{where}: expected a mapping of speaker tag to text")
    return row.get("id"), SpeakerTranscript({str(k): v for k, v in utterances.items()})


def cmd_cpcer(args, config: dict, lab: Lab) -> int:
    refs, hyps = read_jsonl(args.ref), read_jsonl(args.hyp)
    if len(refs) != len(hyps):
        raise ContractError(f"{args.ref} has {len(refs)} transcripts but {args.hyp} has {len(hyps)}")
    rows, errors, length = [], 0, 0
    for n, (ref_row, hyp_row) in enumerate(zip(refs, hyps), start=1):
        ref_id, ref = _transcript(ref_row, f"{args.ref}:{n}")
        _, hyp = _transcript(hyp_row, f"{args.hyp}:{n}")
        detail = cpcer_details(ref, hyp)
        errors += detail.errors
        length += detail.length
        rows.append(
            {
                "id": ref_id if ref_id is not None else n - 1,
                "errors": detail.errors,
                "length": detail.length,
                "cpcer": detail.error_rate,
                "mapping": [list(pair) for pair in detail.mapping],
            }
        )
    total = errors / length if length else 0.0
    lab.save_jsonl("cpcer.jsonl", rows)
    lab.save_json("cpcer.json", {"transcripts": len(rows), "errors": errors, "length": length, "cpcer": total})
    print(f"cpCER: {total:.4f}")
    lab.finish("cpCER complete", score={"cpcer": total})
    return 0


def cmd_sweep(args, config: dict, lab: Lab) -> int:
    if args.checkpoint:
        model = _model(config, args)
    else:
        lab.log("no checkpoint given; training a model first")
        model = _fit(config, lab, args.progress).model
    sample_cfg = from_dict(SampleConfig, config["sample"])
    result = sweep_s_b(model, args.s_b_values, sample_cfg, n_scenes=args.scenes, seed=args.seed)
    header = "s_B\ts_T\tmedian_offset_s\tmean_f1"
    lines = [header] + [f"{r['s_B']:g}\t{r['s_T']:g}\t{r['median_offset_s']:.4f}\t{r['mean_f1']:.4f}" for r in result["rows"]]
    for line in lines:
        lab.log(line)
    lab.log(f"spearman rho: {result['spearman_rho']:.3f}")
    storage.write_text(lab.artifact_path("sweep.tsv"), "\n".join(lines) + "\n")
    lab.save_json("sweep.json", result)
    lab.finish("sweep complete", score={"spearman_rho": result["spearman_rho"]})
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _configure_logging(args) -> logging.Handler:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    package_logger = logging.getLogger("avlab")
    package_logger.addHandler(handler)
    package_logger.setLevel(level)
    return handler


def _replay_parser() -> argparse.ArgumentParser:
    """Reads only what a replay honours; everything else comes from the manifest."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--from-manifest")
    pre.add_argument("--output")
    pre.add_argument("--run-name")
    pre.add_argument("-v", "--verbose", action="store_true")
    pre.add_argument("-q", "--quiet", action="store_true")
    return pre


def _replay_args(parser: argparse.ArgumentParser, pre) -> tuple[argparse.Namespace, list[str], dict]:
    manifest = Run.read_manifest(pre.from_manifest)
    if pre.command is not None and manifest["subcommand"] != pre.command:
        raise ContractError(f"manifest {pre.from_manifest} records `{manifest['subcommand']}`, not `{pre.command}`")
    recorded = list(manifest["argv"])
    extra = []
    if pre.output:
        extra += ["--output", pre.output]
    if pre.run_name:
        extra += ["--run-name", pre.run_name]
    if pre.verbose or pre.quiet:
        extra.append("-v" if pre.verbose else "-q")
    try:
        replayed = parser.parse_args(recorded + extra)
    except SystemExit:
        raise ContractError(f"manifest {pre.from_manifest} records arguments avlab cannot parse: {recorded}") from None
    if replayed.from_manifest:
        raise ContractError("a manifest cannot itself be a replay")
    return replayed, recorded, manifest["config"]


def run(argv: Sequence[str]) -> int:
    """Parse `argv`, execute the subcommand and return its exit code."""
    parser = build_parser()
    argv = list(argv)
    try:
        pre, _ = _replay_parser().parse_known_args(argv)
        # a replay takes its required flags from the manifest
        args = None if pre.from_manifest else parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    handler = _configure_logging(args or pre)
    command = (args or pre).command or "replay"
    lab = Lab()
    try:
        raw = None
        if args is None:
            args, argv, raw = _replay_args(parser, pre)
            command = args.command
        config = build_config(args, raw)
        lab.init(
            args.run_name or f"{args.command}-seed{args.seed}",
            subcommand=args.command,
            config=config,
            seed=args.seed,
            argv=argv,
            root=args.output,
        )
        return args.handler(args, config, lab)
    except (AvlabError, OSError, json.JSONDecodeError) as exc:
        logger.error("%s failed: %s", command, exc)
        if lab.initialized:
            lab.error(str(exc))
        return 1
    finally:
        logging.getLogger("avlab").removeHandler(handler)


def main(argv: Sequence[str] | None = None) -> int:
    return run(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
