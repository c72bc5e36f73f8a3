"""Post-hoc rating calibration: identity up to the user's mean rating,
logarithmic compression above it."""

from dataclasses import dataclass

import numpy as np

from .errors import AllMasked
from .model import ScoreSheet

TAU_GRID = (0.25, 0.5, 1.0, 2.0)
MEAN_MODES = ("candidates", "all")


@dataclass(frozen=True)
class CalibrationParams:
    """``tau`` scales the log branch; ``mean_mode`` picks which ratings feed the user mean.

    ``"candidates"`` averages the items under evaluation (excluded items
    left out), ``"all"`` averages every item.
    """

    tau: float = 1.0
    mean_mode: str = "candidates"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.mean_mode not in MEAN_MODES:
            raise ValueError(f"mean_mode must be one of {MEAN_MODES}")


def user_mean(ratings, mask=None) -> float:
    """Mean of the ratings whose ``mask`` entry is False (``mask`` marks excluded items).

    ``mask`` may also be a collection of excluded indices.
    """
    ratings = np.asarray(ratings, dtype=np.float64)
    keep = np.ones(ratings.size, dtype=bool)
    if mask is not None:
        mask = np.asarray(mask)
        if mask.dtype == bool:
            keep &= ~mask
        else:
            keep[mask.astype(np.int64)] = False
    if not keep.any():
        raise AllMasked("no unmasked ratings to average")
    return float(ratings[keep].mean())


def calibrate_rating(r, mean: float, params: CalibrationParams = CalibrationParams()):
    """``r`` if ``r <= mean`` else ``tau * log1p(r - mean) + mean``.

    Works on scalars and arrays.  The ``log1p`` offset keeps the map
    continuous at the mean and strictly increasing.
    """
    r = np.asarray(r, dtype=np.float64)
    above = r > mean
    excess = np.where(above, r - mean, 0.0)
    out = np.where(above, params.tau * np.log1p(excess) + mean, r)
    return out if out.ndim else float(out)


def calibrate_sheet(sheet: ScoreSheet, params: CalibrationParams = CalibrationParams()) -> ScoreSheet:
    """Calibrate every rating of a sheet and renormalize over the same candidate set."""
    mask = sheet.exclude if params.mean_mode == "candidates" else None
    mean = user_mean(sheet.ratings, mask)
    calibrated = calibrate_rating(sheet.ratings, mean, params)
    return ScoreSheet.from_ratings(sheet.user_index, calibrated, sheet.exclude)
