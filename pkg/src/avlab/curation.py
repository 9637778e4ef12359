"""
Clip curation over metadata: speech windows cut around scene splits, quality
gates, and retention accounting.

Inputs are the outputs of external tools (voice activity segments, scene split
times, per-clip quality scores); nothing here touches media.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import storage
from .errors import ContractError, DomainError

logger = logging.getLogger(__name__)

SEGMENT_DURATION = 8.05
WINDOW_SECONDS = 8
SCHEMA_VERSION = 1

MULTI_SHOT = "multi_shot"
SINGLE_SHOT = "single_shot"


@dataclass(frozen=True)
class SpeechSegment:
    start: float
    end: float

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ContractError(f"speech segment needs 0 <= start < end, got ({self.start}, {self.end})")


@dataclass(frozen=True)
class SceneSplits:
    times: tuple[float, ...]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ContractError(f"scene splits must be strictly increasing, got {self.times}")

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class ClipWindow:
    start: float
    kind: str
    duration: float = SEGMENT_DURATION
    # bounds of the uniform draw; equal when the start was not drawn
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        if self.start < 0:
            raise ContractError(f"window start must be non-negative, got {self.start}")
        if self.kind not in (MULTI_SHOT, SINGLE_SHOT):
            raise ContractError(f"unknown window kind {self.kind!r}")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def contains(self, t: float) -> bool:
        return self.start <= t <= self.end

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "start": self.start,
            "end": self.end,
            "duration": self.duration,
            "lower": self.lower,
            "upper": self.upper,
        }


def _check_segments(segments: Sequence[SpeechSegment]) -> None:
    for prev, cur in zip(segments, segments[1:]):
        if cur.start < prev.end:
            raise ContractError(f"speech segments must be sorted and non-overlapping: {prev} then {cur}")


def _next_index(segments: Sequence[SpeechSegment], after: int, window_end: float) -> int:
    """First index past `after` whose segment starts after window_end; len(segments) when none does."""
    for j in range(after + 1, len(segments)):
        if segments[j].start > window_end:
            return j
    return len(segments)


def multi_shot_windows(
    segments: Sequence[SpeechSegment],
    splits: SceneSplits,
    rng: np.random.Generator,
    duration: float = SEGMENT_DURATION,
    prevent_overlap: bool = False,
) -> list[ClipWindow]:
    """
    Speech windows that span at least one scene split.

    The first window starts at the first segment. Later starts are drawn from
    [max(previous segment end, last split before the segment, segment start −
    duration/2), segment start]. With `prevent_overlap` the previous window's
    end joins the lower bound, and a segment whose bounds cross is skipped.
    """
    _check_segments(segments)
    windows: list[ClipWindow] = []
    last_end = -math.inf
    idx = 0
    while idx < len(segments):
        upper = segments[idx].start
        if idx == 0:
            lower = start = upper
        else:
            before = [p for p in splits.times if p < segments[idx].start]
            terms = [segments[idx - 1].end, segments[idx].start - duration / 2]
            if before:
                terms.append(max(before))
            if prevent_overlap:
                terms.append(last_end)
            lower = max(terms)
            if lower > upper:
                logger.warning("window bounds cross at segment %d (%.3f > %.3f); skipping", idx, lower, upper)
                idx += 1
                continue
            start = float(rng.uniform(lower, upper))
        window = ClipWindow(start, MULTI_SHOT, duration, lower, upper)
        if any(window.contains(p) for p in splits.times):
            windows.append(window)
            last_end = window.end
        idx = _next_index(segments, idx, window.end)
    return windows


def single_shot_windows(
    segments: Sequence[SpeechSegment],
    splits: SceneSplits,
    rng: np.random.Generator,
    duration: float = SEGMENT_DURATION,
) -> list[ClipWindow]:
    """
    Speech windows inside a single scene. For each scene interval the first
    segment starting inside it with room for a whole window anchors the scan;
    a window reaching the scene end stops that scene.
    """
    _check_segments(segments)
    windows: list[ClipWindow] = []
    for i in range(len(splits) - 1):
        scene_start, scene_end = splits.times[i], splits.times[i + 1]
        idx = next(
            (
                j
                for j, seg in enumerate(segments)
                if seg.start > scene_start and seg.start + duration < scene_end
            ),
            None,
        )
        if idx is None:
            continue
        while idx < len(segments):
            upper = segments[idx].start
            if idx == 0:
                lower = start = upper
            else:
                lower = max(segments[idx - 1].end, scene_start, segments[idx].start - duration / 2)
                if lower > upper:
                    logger.warning("window bounds cross at segment %d (%.3f > %.3f); skipping", idx, lower, upper)
                    idx += 1
                    continue
                start = float(rng.uniform(lower, upper))
            window = ClipWindow(start, SINGLE_SHOT, duration, lower, upper)
            if window.end >= scene_end:
                break
            windows.append(window)
            idx = _next_index(segments, idx, window.end)
    return windows


def frames_for_window(fps: int) -> int:
    """The initial frame plus eight seconds of video."""
    if fps <= 0:
        raise DomainError(f"fps must be positive, got {fps}")
    return 1 + WINDOW_SECONDS * int(fps)


def clip_seed(clip_id: str, run_seed: int) -> np.random.Generator:
    """Per-clip generator derived from the clip id and the run seed."""
    digest = hashlib.sha256(f"{clip_id}:{int(run_seed)}".encode("utf-8")).digest()
    entropy = int.from_bytes(digest[:16], "little")
    return np.random.default_rng(np.random.SeedSequence(entropy))


def classify_window(start: float, splits: SceneSplits, duration: float = SEGMENT_DURATION) -> str:
    """multi_shot when a scene split falls inside [start, start + duration], single_shot otherwise."""
    end = start + duration
    return MULTI_SHOT if any(start <= p <= end for p in splits.times) else SINGLE_SHOT


def window_kinds(starts: Iterable[float], splits: SceneSplits, duration: float = SEGMENT_DURATION) -> dict[str, int]:
    """Count fixed-length windows (speech or not) per shot kind."""
    counts = {MULTI_SHOT: 0, SINGLE_SHOT: 0}
    for start in starts:
        counts[classify_window(float(start), splits, duration)] += 1
    return counts


def speech_ratio(n_speech: int, n_total: int) -> float:
    """Share of speech windows among all preprocessed windows, in percent."""
    if n_total <= 0:
        raise DomainError(f"total window count must be positive, got {n_total}")
    if not 0 <= n_speech <= n_total:
        raise DomainError(f"speech windows {n_speech} outside [0, {n_total}]")
    return round(100.0 * n_speech / n_total, 2)


# ---------------------------------------------------------------------------
# quality gates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricRecord:
    clip_id: str
    silence_ratio: float | None = None
    bandwidth_hz: float | None = None
    audiobox_pq: float | None = None
    audiobox_cu: float | None = None
    audiobox_ce: float | None = None
    dover_aesthetic: float | None = None
    dover_technical: float | None = None
    ib_score: float | None = None
    desync: float | None = None
    eat_speech: bool | None = None
    eat_singing: bool | None = None
    lse_d: float | None = None
    lse_c: float | None = None

    @classmethod
    def from_dict(cls, data: Mapping) -> "MetricRecord":
        known = {f.name for f in fields(cls)}
        if "clip_id" not in data:
            raise ContractError("metric record has no clip_id")
        return cls(**{k: v for k, v in data.items() if k in known})


_OPS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


@dataclass(frozen=True)
class GateRule:
    field: str
    op: str
    threshold: float

    def check(self, value: float) -> bool:
        return _OPS[self.op](value, self.threshold)

    def describe(self) -> str:
        return f"{self.field}{self.op}{self.threshold:g}"


STAGE2_RULES = (
    GateRule("silence_ratio", "<", 0.8),
    GateRule("bandwidth_hz", ">", 1000.0),
    GateRule("audiobox_pq", ">", 5.0),
    GateRule("audiobox_cu", ">", 4.5),
    GateRule("audiobox_ce", ">", 2.5),
    GateRule("dover_aesthetic", ">", 0.85),
    GateRule("dover_technical", ">", 0.05),
)
ALIGNMENT_RULES = (GateRule("ib_score", ">=", 0.2), GateRule("desync", "<=", 0.5))
PHASE2_RULES = (
    GateRule("lse_d", "<=", 9.5),
    GateRule("lse_c", ">=", 4.5),
    GateRule("dover_technical", ">", 0.15),
)
SPEECH_FLAGS = ("eat_speech", "eat_singing")


@dataclass(frozen=True)
class GateConfig:
    profile: str = "stage2"
    rules: tuple[GateRule, ...] = STAGE2_RULES
    # a record passes alignment when any one of these holds
    alignment_any: tuple[GateRule, ...] = ALIGNMENT_RULES
    required_flags: tuple[str, ...] = ()


GATE_PROFILES = {
    "stage2": GateConfig("stage2"),
    "speech": GateConfig("speech", required_flags=SPEECH_FLAGS),
    "phase2": GateConfig("phase2", rules=STAGE2_RULES + PHASE2_RULES),
}


def gate_profile(name: str) -> GateConfig:
    try:
        return GATE_PROFILES[name]
    except KeyError:
        raise ContractError(f"unknown gate profile {name!r}; expected one of {sorted(GATE_PROFILES)}") from None


@dataclass(frozen=True)
class GateDecision:
    clip_id: str
    passed: bool
    profile: str
    reasons: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"clip_id": self.clip_id, "passed": self.passed, "profile": self.profile, "reasons": list(self.reasons)}


def _score(record: MetricRecord, name: str) -> tuple[float | None, str | None]:
    value = getattr(record, name)
    if value is None:
        return None, f"missing:{name}"
    if not math.isfinite(float(value)):
        return None, f"nonfinite:{name}"
    return float(value), None


def apply_gates(record: MetricRecord, cfg: GateConfig | None = None) -> GateDecision:
    """
    Every rule must hold, plus at least one alignment rule, plus each required
    flag. Missing or non-finite fields fail with a reason instead of raising.
    """
    cfg = cfg or GATE_PROFILES["stage2"]
    reasons: list[str] = []
    for rule in cfg.rules:
        value, problem = _score(record, rule.field)
        if problem:
            reasons.append(problem)
        elif not rule.check(value):
            reasons.append(f"fail:{rule.describe()}")

    if cfg.alignment_any:
        problems, ok = [], False
        for rule in cfg.alignment_any:
            value, problem = _score(record, rule.field)
            if problem:
                problems.append(problem)
            elif rule.check(value):
                ok = True
        if not ok:
            if len(problems) == len(cfg.alignment_any):
                reasons.extend(problems)
            else:
                reasons.append("fail:alignment(" + " or ".join(r.describe() for r in cfg.alignment_any) + ")")

    for flag in cfg.required_flags:
        value = getattr(record, flag)
        if value is None:
            reasons.append(f"missing:{flag}")
        elif value is not True:
            reasons.append(f"fail:{flag}")
    return GateDecision(record.clip_id, not reasons, cfg.profile, tuple(reasons))


# ---------------------------------------------------------------------------
# retention
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StageRetention:
    stage: str
    count: float
    percent: float


@dataclass(frozen=True)
class RetentionReport:
    stages: tuple[StageRetention, ...] = field(default_factory=tuple)

    def percent(self, stage: str) -> float:
        for s in self.stages:
            if s.stage == stage:
                return s.percent
        raise KeyError(stage)

    def to_dict(self) -> dict:
        return {"stages": [asdict(s) for s in self.stages]}


def retention_report(stage_counts: Mapping[str, float]) -> RetentionReport:
    """
    Percentage of the raw amount kept at each stage, rounded to two decimals.
    The first entry is the raw amount. Counts may be clip counts or durations.
    """
    items = list(stage_counts.items())
    if not items:
        raise DomainError("retention report needs at least the raw stage")
    raw = float(items[0][1])
    if raw <= 0:
        raise DomainError(f"raw amount must be positive, got {raw}")
    stages = []
    previous = math.inf
    for name, count in items:
        count = float(count)
        if count < 0 or count > previous:
            raise DomainError(f"stage {name!r} keeps {count}, more than the stage before it ({previous})")
        previous = count
        stages.append(StageRetention(name, count, round(100.0 * count / raw, 2)))
    return RetentionReport(tuple(stages))


# ---------------------------------------------------------------------------
# JSONL files
# ---------------------------------------------------------------------------


def read_jsonl(path: str) -> list[dict]:
    rows = []
    for n, line in enumerate(storage.read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ContractError(f"{path}:{n} is not valid JSON: {exc}") from exc
    return rows


def dumps_jsonl(rows: Iterable[dict]) -> str:
    return "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)


def write_jsonl(path: str, rows: Iterable[dict]) -> str:
    storage.write_text(path, dumps_jsonl(rows))
    return path


def _clip_inputs(row: Mapping) -> tuple[str, list[SpeechSegment], SceneSplits]:
    schema = row.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ContractError(f"unsupported clip schema {schema!r}")
    try:
        clip_id = str(row["clip_id"])
        segments = [SpeechSegment(float(s), float(e)) for s, e in row.get("segments", [])]
        splits = SceneSplits(tuple(float(p) for p in row.get("splits", [])))
    except (KeyError, TypeError, ValueError) as exc:
        raise ContractError(f"malformed clip row: {exc}") from exc
    return clip_id, segments, splits


def windows_for_clip(row: Mapping, mode: str, run_seed: int, prevent_overlap: bool = False) -> list[dict]:
    clip_id, segments, splits = _clip_inputs(row)
    rng = clip_seed(clip_id, run_seed)
    if mode == "multi":
        windows = multi_shot_windows(segments, splits, rng, prevent_overlap=prevent_overlap)
    elif mode == "single":
        windows = single_shot_windows(segments, splits, rng)
    else:
        raise ContractError(f"window mode must be 'multi' or 'single', got {mode!r}")
    return [{"clip_id": clip_id, **w.to_dict()} for w in windows]


def process_clips(
    rows: Sequence[Mapping], mode: str, run_seed: int, workers: int = 1, prevent_overlap: bool = False
) -> list[dict]:
    """Windows for every clip, in input order; each clip draws from its own seeded generator."""

    def one(row):
        return windows_for_clip(row, mode, run_seed, prevent_overlap)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_clip = list(pool.map(one, rows))
    else:
        per_clip = [one(r) for r in rows]
    return [w for clip in per_clip for w in clip]
