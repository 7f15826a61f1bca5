"""Imitation-realism metrics over ingested files.

MAID: mean absolute difference of action-unit intensity vectors between
paired human and robot expressions.  AUR: per-rater mean of 1-5 realism
ratings, reported with the across-rater mean and sample standard deviation.
AU extraction and the rating study itself happen elsewhere; this module
consumes their CSV exports.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, ValidationError

AU_INTENSITY_MAX = 5.0
RATING_MIN, RATING_MAX = 1, 5


@dataclass(frozen=True)
class AuVector:
    """Action-unit intensities, each in [0, 5]."""

    intensities: np.ndarray

    def __post_init__(self):
        arr = np.array(self.intensities, dtype=np.float64, copy=True)
        if arr.ndim != 1 or arr.size == 0:
            raise DimensionError("AU vector must be a non-empty 1D array")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("AU intensities must be finite")
        if arr.min() < 0.0 or arr.max() > AU_INTENSITY_MAX:
            raise ValidationError(
                f"AU intensities must lie in [0, {AU_INTENSITY_MAX}]"
            )
        object.__setattr__(self, "intensities", arr)
        self.intensities.setflags(write=False)

    @property
    def n(self) -> int:
        return self.intensities.size


@dataclass(frozen=True)
class RatingSet:
    """T x m matrix of 1-5 integer ratings (rows: samples, columns: raters)."""

    ratings: np.ndarray

    def __post_init__(self):
        arr = np.array(self.ratings, copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise DimensionError("ratings must be a non-empty T x m matrix")
        if not np.issubdtype(arr.dtype, np.integer):
            as_int = arr.astype(np.int64)
            if not np.array_equal(as_int, arr):
                raise ValidationError("ratings must be integers")
            arr = as_int
        if arr.min() < RATING_MIN or arr.max() > RATING_MAX:
            raise ValidationError(
                f"ratings must lie in {{{RATING_MIN}..{RATING_MAX}}}"
            )
        object.__setattr__(self, "ratings", arr)
        self.ratings.setflags(write=False)

    @property
    def t(self) -> int:
        return self.ratings.shape[0]

    @property
    def m(self) -> int:
        return self.ratings.shape[1]


def maid(human: list[AuVector], robot: list[AuVector]) -> float:
    """Mean absolute AU intensity difference over all pairs and units."""
    if len(human) != len(robot):
        raise DimensionError(
            f"list lengths differ: {len(human)} human vs {len(robot)} robot"
        )
    if not human:
        raise ValidationError("need at least one expression pair")
    n = human[0].n
    total = 0.0
    for h, r in zip(human, robot):
        if h.n != n or r.n != n:
            raise DimensionError("AU dimension differs across pairs")
        total += float(np.sum(np.abs(h.intensities - r.intensities)))
    return total / (n * len(human))


@dataclass(frozen=True)
class AurResult:
    per_rater: tuple[float, ...]
    mean: float
    std: float


def aur(ratings: RatingSet) -> AurResult:
    """Per-rater means over samples; mean and sample std across raters.

    The across-rater std uses the (n-1) convention; with one rater it is 0.
    """
    per_rater = ratings.ratings.mean(axis=0)
    std = float(per_rater.std(ddof=1)) if ratings.m > 1 else 0.0
    return AurResult(
        per_rater=tuple(float(v) for v in per_rater),
        mean=float(per_rater.mean()),
        std=std,
    )


# ---------------------------------------------------------------------------
# CSV ingestion: AU files have a header of AU names, one row per sample;
# rating files have one column per rater, one row per sample.

def read_au_csv(path: str | Path) -> tuple[list[str], list[AuVector]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty AU file") from None
        names = [h.strip() for h in header]
        vectors = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(names):
                raise ValidationError(
                    f"{path}:{lineno}: expected {len(names)} columns, got {len(row)}"
                )
            try:
                values = [float(cell) for cell in row]
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
            vectors.append(AuVector(np.asarray(values)))
    if not vectors:
        raise ValidationError(f"{path}: no AU rows")
    return names, vectors


def read_ratings_csv(path: str | Path) -> RatingSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty ratings file") from None
        width = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != width:
                raise ValidationError(
                    f"{path}:{lineno}: expected {width} columns, got {len(row)}"
                )
            try:
                rows.append([int(cell) for cell in row])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise ValidationError(f"{path}: no rating rows")
    return RatingSet(np.asarray(rows, dtype=np.int64))


def maid_from_files(human_path: str | Path, robot_path: str | Path) -> float:
    names_h, human = read_au_csv(human_path)
    names_r, robot = read_au_csv(robot_path)
    if names_h != names_r:
        raise ValidationError(
            f"AU headers differ between {human_path} and {robot_path}"
        )
    return maid(human, robot)
