"""Dynamic draft-length control.

One uniform draft length is chosen per batch per step. It grows when at
least one sequence accepted its whole draft last step, and shrinks
otherwise; shrinking accelerates both with the current length and on
consecutive shrink steps, but never drops below the largest accepted count
in the batch (or 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence


@dataclass(frozen=True)
class DraftLengthParams:
    l0: int = 7
    incre: int = 2
    mod: int = 10
    limit: int = 32

    def __post_init__(self):
        if not 1 <= self.l0 <= self.limit:
            raise ValueError(f"l0 must be in [1, limit], got {self.l0}")
        if self.incre < 0 or self.mod < 1 or self.limit < 1:
            raise ValueError("incre >= 0, mod >= 1, limit >= 1 required")


@dataclass(frozen=True)
class DraftLengthState:
    l_draft: int
    s: int  # 1 after a shrink step, else 0
    params: DraftLengthParams

    def __post_init__(self):
        if not 1 <= self.l_draft <= self.params.limit:
            raise ValueError(f"l_draft {self.l_draft} outside [1, limit]")
        if self.s not in (0, 1):
            raise ValueError(f"s must be 0 or 1, got {self.s}")


def init_state(params: DraftLengthParams | None = None) -> DraftLengthState:
    params = params or DraftLengthParams()
    return DraftLengthState(l_draft=params.l0, s=0, params=params)


def update(state: DraftLengthState,
           accepted: Sequence[int]) -> DraftLengthState:
    """Advance the draft length given per-sequence accepted counts.

    ``accepted`` holds the number of accepted draft tokens for each active
    sequence this step (the corrected/bonus token does not count).
    """
    if len(accepted) == 0:
        raise ValueError("need at least one accepted count")
    for x in accepted:
        if not 0 <= x <= state.l_draft:
            raise ValueError(
                f"accepted count {x} outside [0, l_draft={state.l_draft}]"
            )
    p = state.params
    if max(accepted) == state.l_draft:
        return replace(state, l_draft=min(state.l_draft + p.incre, p.limit),
                       s=0)
    l_new = state.l_draft - math.ceil(state.l_draft / p.mod) - state.s
    l_new = max(1, *accepted, l_new)
    return replace(state, l_draft=l_new, s=1)


class AdaptiveDraftController:
    """Engine adapter evolving a DraftLengthState across steps."""

    def __init__(self, params: DraftLengthParams | None = None):
        self.state = init_state(params)

    @property
    def length(self) -> int:
        return self.state.l_draft

    @property
    def max_length(self) -> int:
        return self.state.params.limit

    def observe(self, accepted: Sequence[int]) -> None:
        if accepted:
            self.state = update(self.state, accepted)


class FixedDraftController:
    """Constant draft length, for fixed-draft ablations."""

    def __init__(self, length: int):
        if length < 1:
            raise ValueError("draft length must be >= 1")
        self._length = length

    @property
    def length(self) -> int:
        return self._length

    @property
    def max_length(self) -> int:
        return self._length

    def observe(self, accepted: Sequence[int]) -> None:
        pass
