"""Condition vectors for the label-conditioned denoiser.

A condition carries 14 binary image labels plus three demographic fields:
age decade (0-9), sex (2 categories) and race (5 categories).  Each active
slot selects one row of a shared embedding table; the condition embedding
is the sum of the selected rows.  A dedicated null row stands in for the
whole condition when guidance drops it, so the table has

    14 labels + 10 age decades + 2 sexes + 5 races + 1 null = 32 rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LABEL_NAMES = (
    "disc", "ring", "cross", "hbar", "vbar", "box", "diamond",
    "dots", "arc", "wedge", "stripe", "notch", "tee", "speck",
)
N_LABELS = len(LABEL_NAMES)

N_AGE_DECADES = 10
N_SEXES = 2
N_RACES = 5

_AGE_OFFSET = N_LABELS                     # 14
_SEX_OFFSET = _AGE_OFFSET + N_AGE_DECADES  # 24
_RACE_OFFSET = _SEX_OFFSET + N_SEXES       # 26
NULL_ROW = _RACE_OFFSET + N_RACES          # 31
N_CONDITION_ROWS = NULL_ROW + 1            # 32


@dataclass(frozen=True)
class ConditionVector:
    """Immutable condition: 14 binary labels + demographics, or the null token.

    Demographic categories are stored as indices; exactly one sex and one
    race slot is active by construction.  ``is_null`` marks the dropped-
    condition token used for guidance-free prediction.
    """

    labels: tuple = field(default=(0,) * N_LABELS)
    age_decade: int = 0
    sex: int = 0
    race: int = 0
    is_null: bool = False

    def __post_init__(self):
        labels = tuple(int(v) for v in self.labels)
        if len(labels) != N_LABELS:
            raise ValueError(f"expected {N_LABELS} label slots, got {len(labels)}")
        if any(v not in (0, 1) for v in labels):
            raise ValueError("label slots must be 0 or 1")
        object.__setattr__(self, "labels", labels)
        if not 0 <= self.age_decade < N_AGE_DECADES:
            raise ValueError(f"age_decade out of range [0, {N_AGE_DECADES})")
        if not 0 <= self.sex < N_SEXES:
            raise ValueError(f"sex index out of range [0, {N_SEXES})")
        if not 0 <= self.race < N_RACES:
            raise ValueError(f"race index out of range [0, {N_RACES})")

    @classmethod
    def null(cls) -> "ConditionVector":
        return cls(is_null=True)

    def to_multihot(self) -> np.ndarray:
        """Row-selection vector over the 32-row embedding table.

        The null condition selects only the null row; otherwise the active
        label rows plus exactly one row each for age decade, sex and race.
        """
        v = np.zeros(N_CONDITION_ROWS, dtype=np.float32)
        if self.is_null:
            v[NULL_ROW] = 1.0
            return v
        v[:N_LABELS] = self.labels
        v[_AGE_OFFSET + self.age_decade] = 1.0
        v[_SEX_OFFSET + self.sex] = 1.0
        v[_RACE_OFFSET + self.race] = 1.0
        return v


def multihot_batch(conds) -> np.ndarray:
    """Stack conditions into an (N, 32) row-selection matrix."""
    conds = list(conds)
    if not conds:
        raise ValueError("empty condition batch")
    return np.stack([c.to_multihot() for c in conds])
