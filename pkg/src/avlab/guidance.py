"""
Dual classifier-free guidance over text (c_T) and bridge (c_B) conditions.

Branches are named by their (text, bridge) state:

    uu  v(z, ∅, ∅)       ub  v(z, ∅, c_B)
    tu  v(z, c_T, ∅)     tb  v(z, c_T, c_B)

The default factorization is ṽ = uu + s_B·(ub − uu) + s_T·(tb − ub). The
swapped one conditions on text first: ṽ = uu + s_T·(tu − uu) + s_B·(tb − tu).
A branch whose coefficient cancels is never evaluated.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError
from .model import ConditionSet

UU = "uu"
UB = "ub"
TU = "tu"
TB = "tb"

DUAL = "dual"
TEXT_ONLY = "text_only"
TEXT_MODALITY = "text_modality"
SWAPPED = "swapped"
GUIDANCE_MODES = (DUAL, TEXT_ONLY, TEXT_MODALITY, SWAPPED)

# (text present, bridge enabled) per branch
_BRANCH_STATE = {UU: (False, False), UB: (False, True), TU: (True, False), TB: (True, True)}

VelocityPair = tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class GuidanceScales:
    s_B: float = 1.0
    s_T: float = 5.0

    def __post_init__(self):
        if not (math.isfinite(self.s_B) and math.isfinite(self.s_T)):
            raise DomainError(f"guidance scales must be finite, got s_B={self.s_B}, s_T={self.s_T}")

    @property
    def is_unguided(self) -> bool:
        return self.s_B == 1.0 and self.s_T == 1.0


@dataclass(frozen=True)
class BranchPlan:
    branches: tuple[str, ...]
    swapped: bool = False

    @property
    def nfe(self) -> int:
        return len(self.branches)


@dataclass(frozen=True)
class BranchOutputs:
    uu: VelocityPair | None = None
    ub: VelocityPair | None = None
    tu: VelocityPair | None = None
    tb: VelocityPair | None = None

    def get(self, name: str) -> VelocityPair:
        value = getattr(self, name)
        if value is None:
            raise ContractError(f"guidance needs branch {name!r}, which was not evaluated")
        return value


def plan_branches(scales: GuidanceScales) -> BranchPlan:
    """
    General scales need {uu, ub, tb}. s_B = 1 cancels uu, s_B = s_T cancels ub,
    and (1, 1) leaves tb alone.
    """
    if scales.is_unguided:
        return BranchPlan((TB,))
    if scales.s_B == 1.0:
        return BranchPlan((UB, TB))
    if scales.s_B == scales.s_T:
        return BranchPlan((UU, TB))
    return BranchPlan((UU, UB, TB))


def plan_branches_swapped(scales: GuidanceScales) -> BranchPlan:
    """s_T = 1 cancels uu, s_B = s_T cancels tu."""
    if scales.is_unguided:
        return BranchPlan((TB,), swapped=True)
    if scales.s_T == 1.0:
        return BranchPlan((TU, TB), swapped=True)
    if scales.s_B == scales.s_T:
        return BranchPlan((UU, TB), swapped=True)
    return BranchPlan((UU, TU, TB), swapped=True)


def _per_modality(fn, *pairs: VelocityPair) -> VelocityPair:
    return tuple(fn(*arrays) for arrays in zip(*pairs))  # type: ignore[return-value]


def combine(branches: BranchOutputs, scales: GuidanceScales) -> VelocityPair:
    """
    Guided velocity pair. The reduced cases are evaluated in their own closed
    forms, so the result depends only on the scales and never on which extra
    branches happen to be present.
    """
    s_b, s_t = scales.s_B, scales.s_T
    plan = plan_branches(scales)
    if plan.branches == (TB,):
        return branches.get(TB)
    if plan.branches == (UB, TB):
        return _per_modality(lambda ub, tb: ub + s_t * (tb - ub), branches.get(UB), branches.get(TB))
    if plan.branches == (UU, TB):
        return _per_modality(lambda uu, tb: uu + s_t * (tb - uu), branches.get(UU), branches.get(TB))
    return _per_modality(
        lambda uu, ub, tb: uu + s_b * (ub - uu) + s_t * (tb - ub),
        branches.get(UU),
        branches.get(UB),
        branches.get(TB),
    )


def combine_swapped(branches: BranchOutputs, scales: GuidanceScales) -> VelocityPair:
    s_b, s_t = scales.s_B, scales.s_T
    plan = plan_branches_swapped(scales)
    if plan.branches == (TB,):
        return branches.get(TB)
    if plan.branches == (TU, TB):
        return _per_modality(lambda tu, tb: tu + s_b * (tb - tu), branches.get(TU), branches.get(TB))
    if plan.branches == (UU, TB):
        return _per_modality(lambda uu, tb: uu + s_t * (tb - uu), branches.get(UU), branches.get(TB))
    return _per_modality(
        lambda uu, tu, tb: uu + s_t * (tu - uu) + s_b * (tb - tu),
        branches.get(UU),
        branches.get(TU),
        branches.get(TB),
    )


def resolve(mode: str, s_b: float, s_t: float) -> tuple[GuidanceScales, bool]:
    """
    Map a guidance mode onto (scales, swapped). text_only pins s_B to 1 and
    text_modality uses s_T for both conditions.
    """
    if mode not in GUIDANCE_MODES:
        raise ContractError(f"guidance mode must be one of {GUIDANCE_MODES}, got {mode!r}")
    if mode == TEXT_ONLY:
        return GuidanceScales(1.0, s_t), False
    if mode == TEXT_MODALITY:
        return GuidanceScales(s_t, s_t), False
    return GuidanceScales(s_b, s_t), mode == SWAPPED


def plan_for(scales: GuidanceScales, swapped: bool = False) -> BranchPlan:
    return plan_branches_swapped(scales) if swapped else plan_branches(scales)


def combine_for(branches: BranchOutputs, scales: GuidanceScales, swapped: bool = False) -> VelocityPair:
    return combine_swapped(branches, scales) if swapped else combine(branches, scales)


def branch_condition(branch: str, cond: ConditionSet) -> ConditionSet:
    """The condition a branch is evaluated under; ∅ text is the null prompt, ∅ bridge the no-bridge mode."""
    try:
        with_text, with_bridge = _BRANCH_STATE[branch]
    except KeyError:
        raise ContractError(f"unknown guidance branch {branch!r}") from None
    text = cond.text_tokens if with_text else None
    # a condition with the bridge off keeps every branch in no-bridge mode
    return dataclasses.replace(cond, text_tokens=text, bridge_enabled=with_bridge and cond.bridge_enabled)
