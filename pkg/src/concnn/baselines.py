"""Reference predictors: last value, moving average, and total rescaling.

All work directly on the share matrix.  Predictions for (i, t) use only
shares at weeks <= t - h.  Products unavailable at the lag week fall back
to their most recent available share, or 0 when none exists.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import ShareMatrix
from .errors import ConfigError, HorizonExceedsHistory

log = logging.getLogger(__name__)

#: candidate moving-average windows tried during validation
MA_WINDOW_GRID = (1, 2, 4, 8, 13, 26)


def last_value(shares: ShareMatrix, available: np.ndarray, h: int) -> np.ndarray:
    """yhat[i, t] = y[i, t-h], with most-recent-available fallback.

    Returns a (d, n) matrix; the first h columns are NaN (no history).
    """
    return moving_average(shares, available, h, window=1)


def moving_average(
    shares: ShareMatrix, available: np.ndarray, h: int, window: int
) -> np.ndarray:
    """Mean share over the ``window`` most recent available weeks <= t - h."""
    if window < 1:
        raise ConfigError("window must be >= 1")
    y = shares.shares
    d, n = y.shape
    if h >= n:
        raise HorizonExceedsHistory(f"horizon {h} >= panel length {n}")
    preds = np.full((d, n), np.nan)
    for i in range(d):
        avail_weeks = np.flatnonzero(available[i])
        for t in range(h, n):
            past = avail_weeks[avail_weeks <= t - h]
            if len(past) == 0:
                preds[i, t] = 0.0
            else:
                recent = past[-window:]
                preds[i, t] = y[i, recent].mean()
    return preds


def rescale_to_total(preds: np.ndarray, target_total: float) -> tuple[np.ndarray, bool]:
    """Scale predictions so they sum to ``target_total``.

    Returns (rescaled, degenerate_flag); an all-zero input is returned
    unchanged with the flag set.
    """
    preds = np.asarray(preds, dtype=float)
    if target_total < 0 or np.any(preds < 0):
        raise ConfigError("predictions and target total must be >= 0")
    total = preds.sum()
    if total == 0:
        log.warning("rescale_to_total: all-zero predictions left unchanged")
        return preds.copy(), True
    return preds * (target_total / total), False


@dataclass
class BaselineModel:
    """Prediction-matrix-backed model usable by the rolling evaluator."""

    kind: str  # "last_value" | "moving_average"
    horizon: int
    window: int = 1
    _matrix: np.ndarray | None = None

    def fit(self, shares: ShareMatrix, available: np.ndarray) -> "BaselineModel":
        if self.kind == "last_value":
            self._matrix = last_value(shares, available, self.horizon)
        elif self.kind == "moving_average":
            self._matrix = moving_average(shares, available, self.horizon, self.window)
        else:
            raise ConfigError(f"unknown baseline kind {self.kind!r}")
        return self

    def predict(self, batch) -> np.ndarray:
        if self._matrix is None:
            raise ConfigError("baseline model not fitted")
        return self._matrix[batch.active, batch.week]


def select_ma_window(
    shares: ShareMatrix,
    available: np.ndarray,
    h: int,
    valid_range: range,
    grid: tuple[int, ...] = MA_WINDOW_GRID,
) -> int:
    """Pick the MA window with the lowest aggregate error on validation weeks."""
    y = shares.shares
    best_window, best_err = grid[0], np.inf
    for window in grid:
        preds = moving_average(shares, available, h, window)
        num = den = 0.0
        for t in valid_range:
            mask = available[:, t] & ~np.isnan(preds[:, t])
            num += np.abs(preds[mask, t] - y[mask, t]).sum()
            den += y[mask, t].sum()
        if den > 0:
            err = num / den
            if err < best_err:
                best_window, best_err = window, err
    return best_window
