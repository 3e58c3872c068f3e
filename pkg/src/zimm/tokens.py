"""Bucketized integer tokens for time horizons, stay durations, and ages.

Resolution is concentrated where event mass concentrates: day-level near the
index date, coarser further out. Token 0 is a real value (horizon 0 / zero-day
stay), not a sentinel; these vocabularies have no out-of-range inputs besides
negatives, which are rejected.
"""

from __future__ import annotations

__all__ = [
    "horizon_token",
    "duration_token",
    "age_token",
    "HORIZON_VOCAB",
    "DURATION_VOCAB",
    "AGE_VOCAB",
]

HORIZON_VOCAB = 72
DURATION_VOCAB = 18
AGE_VOCAB = 12


def horizon_token(days: int) -> int:
    """Days-before-index -> token: exact 0-30, weekly 31-180, 30-day 181-720,
    one overflow token beyond."""
    days = int(days)
    if days < 0:
        raise ValueError(f"horizon must be nonnegative, got {days}")
    if days <= 30:
        return days
    if days <= 180:
        return 31 + (days - 31) // 7
    if days <= 720:
        return 53 + (days - 181) // 30
    return 71


def duration_token(days: int) -> int:
    """Stay length in days -> token: exact 0-14, then 15-30, 31-90, 91+."""
    days = int(days)
    if days < 0:
        raise ValueError(f"duration must be nonnegative, got {days}")
    if days <= 14:
        return days
    if days <= 30:
        return 15
    if days <= 90:
        return 16
    return 17


def age_token(age_years: int) -> int:
    """Age -> 5-year bin, clipped to [40, 100)."""
    age_years = int(age_years)
    clipped = min(max(age_years, 40), 99)
    return (clipped - 40) // 5
