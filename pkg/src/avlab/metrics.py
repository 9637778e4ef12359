"""
Evaluation math: arena Elo with bootstrap intervals, win-rate matrices, an
optional Bradley-Terry fit, and the concatenated minimum-permutation
character error rate over speaker-tagged transcripts.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import editdistance
import numpy as np
from scipy.optimize import minimize
from tqdm import tqdm

from .errors import ContractError, DomainError

logger = logging.getLogger(__name__)

A_WINS = "a_wins"
B_WINS = "b_wins"
TIE = "tie"
OUTCOMES = {A_WINS: 1.0, B_WINS: 0.0, TIE: 0.5}

MAX_SPEAKERS = 8


@dataclass(frozen=True)
class Vote:
    model_a: str
    model_b: str
    outcome: str
    order: int = 0

    def __post_init__(self):
        if self.model_a == self.model_b:
            raise ContractError(f"a vote needs two different models, got {self.model_a!r} twice")
        if self.outcome not in OUTCOMES:
            raise ContractError(f"vote outcome must be one of {sorted(OUTCOMES)}, got {self.outcome!r}")

    @property
    def score_a(self) -> float:
        return OUTCOMES[self.outcome]

    @classmethod
    def from_dict(cls, data: Mapping) -> "Vote":
        try:
            return cls(str(data["model_a"]), str(data["model_b"]), str(data["outcome"]), int(data.get("order", 0)))
        except KeyError as exc:
            raise ContractError(f"vote is missing field {exc.args[0]!r}") from exc


@dataclass(frozen=True)
class EloConfig:
    initial: float = 1000.0
    k: float = 4.0
    scale: float = 400.0
    base: float = 10.0
    bootstrap_iters: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not (self.k > 0 and self.scale > 0 and self.base > 1):
            raise DomainError(f"Elo needs k > 0, scale > 0 and base > 1, got {self.k}, {self.scale}, {self.base}")
        if self.bootstrap_iters < 1:
            raise DomainError(f"bootstrap_iters must be positive, got {self.bootstrap_iters}")


def _models(votes: Iterable[Vote], extra: Iterable[str] = ()) -> list[str]:
    names = set(extra)
    for v in votes:
        names.update((v.model_a, v.model_b))
    return sorted(names)


def elo_ratings(votes: Sequence[Vote], cfg: EloConfig | None = None, models: Iterable[str] = ()) -> dict[str, float]:
    """
    Sequential online Elo in vote order. Each vote moves the two ratings by the
    same amount in opposite directions, so the rating sum is preserved.
    """
    cfg = cfg or EloConfig()
    ratings = {m: float(cfg.initial) for m in _models(votes, models)}
    for v in votes:
        ra, rb = ratings[v.model_a], ratings[v.model_b]
        expected_a = 1.0 / (1.0 + cfg.base ** ((rb - ra) / cfg.scale))
        delta = cfg.k * (v.score_a - expected_a)
        ratings[v.model_a] = ra + delta
        ratings[v.model_b] = rb - delta
    return ratings


@dataclass(frozen=True)
class RatingInterval:
    median: float
    lower: float
    upper: float

    def to_dict(self) -> dict:
        return {"median": self.median, "p2.5": self.lower, "p97.5": self.upper}


def bootstrap_ci(
    votes: Sequence[Vote], cfg: EloConfig | None = None, progress_bar: bool = False
) -> dict[str, RatingInterval]:
    """
    Resample the votes with replacement `bootstrap_iters` times, replaying each
    resample in draw order. Iteration i uses the i-th child of the seed
    sequence, so results do not depend on how iterations are scheduled.
    """
    cfg = cfg or EloConfig()
    if not votes:
        raise DomainError("bootstrap_ci needs at least one vote")
    models = _models(votes)
    n = len(votes)
    samples = np.empty((cfg.bootstrap_iters, len(models)))
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.bootstrap_iters)
    for i in tqdm(range(cfg.bootstrap_iters), desc="bootstrap", disable=not progress_bar):
        idx = np.random.default_rng(children[i]).integers(0, n, size=n)
        ratings = elo_ratings([votes[j] for j in idx], cfg, models)
        samples[i] = [ratings[m] for m in models]
    lower, median, upper = np.percentile(samples, [2.5, 50.0, 97.5], axis=0)
    return {m: RatingInterval(float(median[i]), float(lower[i]), float(upper[i])) for i, m in enumerate(models)}


def win_rate_matrix(votes: Sequence[Vote]) -> dict[str, dict[str, float | None]]:
    """M[a][b] = share of a's games against b that a won, ties counting half; None without games."""
    models = _models(votes)
    score = {(a, b): 0.0 for a in models for b in models}
    games = {(a, b): 0 for a in models for b in models}
    for v in votes:
        score[v.model_a, v.model_b] += v.score_a
        score[v.model_b, v.model_a] += 1.0 - v.score_a
        games[v.model_a, v.model_b] += 1
        games[v.model_b, v.model_a] += 1
    return {
        a: {b: (score[a, b] / games[a, b] if games[a, b] else None) for b in models if b != a} for a in models
    }


def bradley_terry_ratings(votes: Sequence[Vote], cfg: EloConfig | None = None, ridge: float = 1e-6) -> dict[str, float]:
    """
    Maximum-likelihood ratings on the Elo scale, centred on `cfg.initial`.
    Ties count as half a win for each side. A small ridge keeps unbeaten or
    winless models finite.
    """
    cfg = cfg or EloConfig()
    models = _models(votes)
    if not models:
        return {}
    index = {m: i for i, m in enumerate(models)}
    a = np.array([index[v.model_a] for v in votes], dtype=np.int64)
    b = np.array([index[v.model_b] for v in votes], dtype=np.int64)
    s = np.array([v.score_a for v in votes])
    c = math.log(cfg.base) / cfg.scale

    def nll(theta):
        d = c * (theta[a] - theta[b])
        # log σ(d) and log σ(−d), stable for large |d|
        log_p = -np.logaddexp(0.0, -d)
        log_q = -np.logaddexp(0.0, d)
        p = np.exp(log_p)
        value = -np.sum(s * log_p + (1.0 - s) * log_q) + ridge * np.sum(theta * theta)
        g_d = -(s - p) * c
        grad = np.zeros_like(theta)
        np.add.at(grad, a, g_d)
        np.add.at(grad, b, -g_d)
        return value, grad + 2.0 * ridge * theta

    result = minimize(nll, np.zeros(len(models)), jac=True, method="L-BFGS-B")
    if not result.success:
        logger.warning("Bradley-Terry fit did not converge: %s", result.message)
    theta = result.x - result.x.mean()
    return {m: float(cfg.initial + theta[i]) for i, m in enumerate(models)}


# ---------------------------------------------------------------------------
# cpCER
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpeakerTranscript:
    utterances: Mapping[str, str]

    def __post_init__(self):
        if not self.utterances:
            raise ContractError("a transcript needs at least one speaker")

    @property
    def tags(self) -> list[str]:
        return sorted(self.utterances)

    @property
    def n_chars(self) -> int:
        return sum(len(text) for text in self.utterances.values())


@dataclass(frozen=True)
class CharErrorRate:
    errors: int
    length: int
    mapping: tuple[tuple[str, str | None], ...]

    @property
    def error_rate(self) -> float:
        return self.errors / self.length


def cpcer_details(reference: SpeakerTranscript, hypothesis: SpeakerTranscript) -> CharErrorRate:
    """
    Search every injective assignment of hypothesis speakers to reference
    speakers. For each, the reference texts are concatenated in tag order and
    compared with the assigned hypothesis texts in the same order, followed by
    the text of unassigned hypothesis speakers. Reference speakers without a
    partner are compared against the empty string.
    """
    total = reference.n_chars
    if total == 0:
        raise DomainError("cpCER needs a non-empty reference")
    ref_tags, hyp_tags = reference.tags, hypothesis.tags
    k = max(len(ref_tags), len(hyp_tags))
    if k > MAX_SPEAKERS:
        raise ContractError(f"cpCER permutation search supports up to {MAX_SPEAKERS} speakers, got {k}")
    ref_text = "".join(reference.utterances[t] for t in ref_tags)
    slots: list[str | None] = hyp_tags + [None] * (k - len(hyp_tags))

    best: CharErrorRate | None = None
    seen = set()
    for perm in itertools.permutations(range(k), len(ref_tags)):
        assigned = tuple(slots[i] for i in perm)
        if assigned in seen:
            continue
        seen.add(assigned)
        used = {t for t in assigned if t is not None}
        hyp_text = "".join(hypothesis.utterances[t] if t is not None else "" for t in assigned)
        hyp_text += "".join(hypothesis.utterances[t] for t in hyp_tags if t not in used)
        errors = int(editdistance.eval(ref_text, hyp_text))
        if best is None or errors < best.errors:
            best = CharErrorRate(errors, total, tuple(zip(ref_tags, assigned)))
            if errors == 0:
                break
    return best


def cpcer(reference: SpeakerTranscript, hypothesis: SpeakerTranscript) -> float:
    return cpcer_details(reference, hypothesis).error_rate
