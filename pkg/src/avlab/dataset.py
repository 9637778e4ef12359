"""
Synthetic paired video/audio latents built from timed events.

An EventScene is a handful of events (onset, class). Each event deposits a
Gaussian bump on one class channel of both streams at its onset, so the two
streams are synchronized by construction. The prompt names the classes in
order but not their times, which leaves timing to the cross-modal path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .diffcore import Tensor
from .errors import ContractError, DimensionError, DomainError
from .ropealign import TimeGrid

logger = logging.getLogger(__name__)

DURATION_S = 8.0
SIGMA_TIME_S = 0.25
NOISE_STD = 0.05
MAX_EVENTS = 4
N_CLASSES = 4
CLASS_AMPLITUDE = (1.0, 1.25, 1.5, 1.75)

PAD_TOKEN = 0
BOS_TOKEN = 1
CLASS_TOKEN_OFFSET = 2

MATCH_TOLERANCE_S = 0.5
ONSET_THRESHOLD = 0.25
NO_EVENTS = "no_events"


@dataclass(frozen=True)
class EventScene:
    onsets: tuple[float, ...]
    classes: tuple[int, ...]

    def __post_init__(self):
        if not 1 <= len(self.onsets) <= MAX_EVENTS:
            raise ContractError(f"a scene holds 1 to {MAX_EVENTS} events, got {len(self.onsets)}")
        if len(self.classes) != len(self.onsets):
            raise ContractError("every event needs exactly one class")
        if any(b <= a for a, b in zip(self.onsets, self.onsets[1:])):
            raise ContractError(f"onsets must be strictly increasing, got {self.onsets}")
        if any(not 0 <= c < N_CLASSES for c in self.classes):
            raise ContractError(f"event classes must lie in [0, {N_CLASSES}), got {self.classes}")

    @property
    def prompt_ids(self) -> tuple[int, ...]:
        return (BOS_TOKEN, *(CLASS_TOKEN_OFFSET + c for c in self.classes))

    def prompt_tokens(self, text_len: int) -> tuple[int, ...]:
        return prompt_for_classes(self.classes, text_len)


def prompt_for_classes(classes, text_len: int) -> tuple[int, ...]:
    """BOS followed by one token per event class, padded to `text_len`."""
    if any(not 0 <= int(c) < N_CLASSES for c in classes):
        raise ContractError(f"event classes must lie in [0, {N_CLASSES}), got {tuple(classes)}")
    ids = (BOS_TOKEN, *(CLASS_TOKEN_OFFSET + int(c) for c in classes))
    if len(ids) > text_len:
        raise DimensionError(f"prompt of {len(ids)} tokens does not fit text_len {text_len}")
    return ids + (PAD_TOKEN,) * (text_len - len(ids))


def random_scene(
    rng: np.random.Generator,
    max_events: int = MAX_EVENTS,
    min_gap_s: float = 1.0,
    margin_s: float = 0.5,
) -> EventScene:
    """Events at least `min_gap_s` apart and `margin_s` away from the clip edges."""
    n = int(rng.integers(1, max_events + 1))
    lo, hi = margin_s, DURATION_S - margin_s
    while True:
        onsets = np.sort(rng.uniform(lo, hi, size=n))
        if n == 1 or np.min(np.diff(onsets)) >= min_gap_s:
            break
    classes = rng.integers(0, N_CLASSES, size=n)
    return EventScene(tuple(float(t) for t in onsets), tuple(int(c) for c in classes))


def _bump_track(times: np.ndarray, onsets, classes, channels: int, rate: float) -> np.ndarray:
    track = np.zeros((len(times), channels))
    for onset, cls in zip(onsets, classes):
        g = np.exp(-0.5 * ((times - onset) / SIGMA_TIME_S) ** 2)
        area = g.sum() / rate
        if area > 0:
            # the bump integrates to the class amplitude over the stream's own grid
            track[:, cls % channels] += CLASS_AMPLITUDE[cls] * g / area
    return track


def synth_pair(
    scene: EventScene,
    grid: TimeGrid,
    rng: np.random.Generator | int,
    latent_dims: tuple[int, int] = (8, 8),
    noise_std: float = NOISE_STD,
    audio_shift_s: float = 0.0,
    duration_s: float = DURATION_S,
) -> tuple[Tensor, Tensor]:
    """
    (x_v[f_v·duration, d_v], x_a[f_a·duration, d_a]). `audio_shift_s` moves
    every audio bump, producing a deliberately desynchronized pair.
    """
    if any(not 0.0 <= t < duration_s for t in scene.onsets):
        raise DomainError(f"onsets must lie in [0, {duration_s}), got {scene.onsets}")
    if noise_std < 0:
        raise DomainError(f"noise_std must be non-negative, got {noise_std}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(int(rng))
    d_v, d_a = latent_dims
    n_v, n_a = grid.video_tokens(duration_s), grid.audio_tokens(duration_s)
    t_v = np.arange(n_v) / grid.f_v
    t_a = np.arange(n_a) / grid.f_a
    x_v = _bump_track(t_v, scene.onsets, scene.classes, d_v, grid.f_v)
    x_a = _bump_track(t_a, [t + audio_shift_s for t in scene.onsets], scene.classes, d_a, grid.f_a)
    if noise_std > 0:
        x_v = x_v + rng.normal(0.0, noise_std, size=x_v.shape)
        x_a = x_a + rng.normal(0.0, noise_std, size=x_a.shape)
    return Tensor(x_v, dtype=np.float64), Tensor(x_a, dtype=np.float64)


@dataclass(frozen=True)
class TrainingExample:
    scene: EventScene
    x_v: Tensor
    x_a: Tensor
    text_tokens: tuple[int, ...]


def make_batch(
    rng: np.random.Generator,
    grid: TimeGrid,
    batch: int,
    text_len: int,
    latent_dims: tuple[int, int] = (8, 8),
    duration_s: float = DURATION_S,
) -> list[TrainingExample]:
    examples = []
    for _ in range(batch):
        scene = random_scene(rng)
        x_v, x_a = synth_pair(scene, grid, rng, latent_dims=latent_dims, duration_s=duration_s)
        examples.append(TrainingExample(scene, x_v, x_a, scene.prompt_tokens(text_len)))
    return examples


# ---------------------------------------------------------------------------
# synchronization metric
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyncReport:
    offset_error_s: float
    event_f1: float
    video_onsets: tuple[float, ...] = ()
    audio_onsets: tuple[float, ...] = ()
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return {
            "offset_error_s": self.offset_error_s,
            "event_f1": self.event_f1,
            "video_onsets": list(self.video_onsets),
            "audio_onsets": list(self.audio_onsets),
            "error": self.error,
        }


def detect_onsets(
    x: np.ndarray,
    rate: float,
    threshold: float = ONSET_THRESHOLD,
    window: int | None = None,
) -> list[float]:
    """
    Matched-filter onset times (seconds) of a [tokens, channels] stream.

    The per-token channel maximum is correlated with the unit-sum event
    template; local maxima above `threshold` are kept, weaker peaks closer
    than the match tolerance are suppressed, and each survivor is refined to
    the centroid of the positive response within ±window tokens.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"stream must be [tokens, channels], got {x.shape}")
    signal = x.max(axis=1)
    half = max(1, int(np.ceil(3 * SIGMA_TIME_S * rate)))
    offsets = np.arange(-half, half + 1) / rate
    template = np.exp(-0.5 * (offsets / SIGMA_TIME_S) ** 2)
    template /= template.sum()
    response = np.correlate(signal, template, mode="same")
    if window is None:
        window = max(1, int(round(SIGMA_TIME_S * rate * 2)))

    n = len(response)
    candidates = [
        k
        for k in range(n)
        if response[k] > threshold
        and (k == 0 or response[k] > response[k - 1])
        and (k == n - 1 or response[k] >= response[k + 1])
    ]
    candidates.sort(key=lambda k: -response[k])
    min_sep = MATCH_TOLERANCE_S * rate
    peaks: list[int] = []
    for k in candidates:
        if all(abs(k - p) >= min_sep for p in peaks):
            peaks.append(k)

    onsets = []
    for k in sorted(peaks):
        lo, hi = max(0, k - window), min(n, k + window + 1)
        w = np.clip(response[lo:hi], 0.0, None)
        idx = np.arange(lo, hi)
        onsets.append(float((w * idx).sum() / w.sum()) / rate)
    return onsets


def sync_score(
    x_v,
    x_a,
    grid: TimeGrid,
    threshold: float = ONSET_THRESHOLD,
    tolerance_s: float = MATCH_TOLERANCE_S,
) -> SyncReport:
    """
    Detect onsets in both streams, pair them by minimum total |Δt|, and
    report the mean paired offset and the F1 of pairs within `tolerance_s`.
    """
    x_v = x_v.numpy() if isinstance(x_v, Tensor) else np.asarray(x_v)
    x_a = x_a.numpy() if isinstance(x_a, Tensor) else np.asarray(x_a)
    on_v = detect_onsets(x_v, grid.f_v, threshold, window=1)
    on_a = detect_onsets(x_a, grid.f_a, threshold, window=3)
    if not on_v or not on_a:
        logger.debug("no events detected (video=%d, audio=%d)", len(on_v), len(on_a))
        return SyncReport(DURATION_S, 0.0, tuple(on_v), tuple(on_a), error=NO_EVENTS)

    cost = np.abs(np.subtract.outer(np.asarray(on_v), np.asarray(on_a)))
    rows, cols = linear_sum_assignment(cost)
    paired = cost[rows, cols]
    offset = min(float(paired.mean()), DURATION_S)
    hits = int(np.sum(paired <= tolerance_s))
    f1 = 2.0 * hits / (len(on_v) + len(on_a))
    return SyncReport(offset, f1, tuple(on_v), tuple(on_a))
