"""The concurrent layer: shared normalization of per-product weights.

Predicted shares for the products active in week t are
``yhat_i = alpha * w_i / (1 + sum_j w_j)``, so every product's weight
influences every prediction through the shared denominator.  Gradients
chain through that coupling exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import PanelDataset, ShareMatrix
from .errors import ConfigError, EmptyBatch, NonPositivePrediction
from .nnet import Gradient, WeightNet, backward_batch, forward_batch

log = logging.getLogger(__name__)

#: lower clamp applied inside log() of the Poisson loss gradient path
PREDICTION_CLAMP = 1e-12


def default_alpha(horizon: int) -> float:
    """Scale factor: 1 for short/medium horizons, 0.8 for long ones."""
    return 1.0 if horizon <= 8 else 0.8


@dataclass
class ConcurrentModel:
    """Weight net plus scale factor, horizon and lag count."""

    phi: WeightNet
    alpha: float
    horizon: int
    lag_count: int = 1

    def __post_init__(self) -> None:
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must be in (0, 1]")
        if self.horizon < 1 or self.lag_count < 1:
            raise ConfigError("horizon and lag count must be >= 1")

    def predict(self, batch: "WeekBatch") -> np.ndarray:
        return predict_shares(self, batch)


@dataclass
class DirectModel:
    """Feed-forward variant: shares predicted by the net with no normalization."""

    phi: WeightNet
    horizon: int
    lag_count: int = 1

    def predict(self, batch: "WeekBatch") -> np.ndarray:
        out, _ = forward_batch(self.phi, batch.features)
        return out


@dataclass(frozen=True)
class WeekBatch:
    """All active products of one target week.

    ``features`` is (m, k + p): k lagged shares then the covariates at the
    target week.  ``targets`` are the actual shares at the target week.
    """

    week: int
    active: np.ndarray
    features: np.ndarray
    targets: np.ndarray
    n_lags: int = 1

    def __post_init__(self) -> None:
        if len(self.active) == 0:
            raise EmptyBatch(f"no active products in week {self.week}")
        if np.any(self.features[:, : self.n_lags] < 0) or np.any(self.targets < 0):
            raise ConfigError("lagged shares and targets must be >= 0")

    @property
    def size(self) -> int:
        return len(self.active)


def build_week_batch(
    panel: PanelDataset,
    shares: ShareMatrix,
    t: int,
    horizon: int,
    lag_count: int = 1,
) -> WeekBatch | None:
    """Batch for target week t using actual data at t - horizon.

    Active products must be available both at t and at the first lag
    t - horizon (products launched inside the gap have no lag and are
    skipped).  Deeper lags fall back to 0 when unavailable.  Returns None
    when no product qualifies or the first lag precedes the panel.
    """
    if t - horizon < 0:
        return None
    active = np.flatnonzero(panel.available[:, t] & panel.available[:, t - horizon])
    if len(active) == 0:
        return None
    y = shares.shares
    lags = np.zeros((len(active), lag_count))
    for j in range(lag_count):
        s = t - horizon - j
        if s >= 0:
            ok = panel.available[active, s]
            lags[:, j] = np.where(ok, y[active, s], 0.0)
    features = np.concatenate([lags, panel.covariates[active, t, :]], axis=1)
    return WeekBatch(week=t, active=active, features=features,
                     targets=y[active, t], n_lags=lag_count)


def predict_shares(model: ConcurrentModel, batch: WeekBatch) -> np.ndarray:
    """yhat_i = alpha * w_i / (1 + sum_j w_j) over the active products."""
    w, _ = forward_batch(model.phi, batch.features)
    return model.alpha * w / (1.0 + w.sum())


def poisson_loss(y: float, yhat: float) -> float:
    """Poisson negative log-likelihood kernel: yhat - y * ln(yhat)."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if np.any(yhat <= 0):
        raise NonPositivePrediction("Poisson loss needs yhat > 0")
    return float(np.sum(yhat - y * np.log(yhat)))


def l1_loss(y: float, yhat: float) -> float:
    return float(np.sum(np.abs(np.asarray(y, dtype=float) - yhat)))


def _loss_and_dloss(targets: np.ndarray, yhat: np.ndarray, kind: str):
    """Per-product loss values and derivatives w.r.t. yhat."""
    if kind == "poisson":
        if np.any(yhat <= 0):
            raise NonPositivePrediction("Poisson loss needs yhat > 0")
        clamped = np.maximum(yhat, PREDICTION_CLAMP)
        if np.any(yhat < PREDICTION_CLAMP):
            log.warning("Poisson loss clamped %d predictions at %g",
                        int(np.sum(yhat < PREDICTION_CLAMP)), PREDICTION_CLAMP)
        loss = clamped - targets * np.log(clamped)
        dloss = 1.0 - targets / clamped
    elif kind == "l1":
        loss = np.abs(targets - yhat)
        dloss = np.sign(yhat - targets)  # subgradient 0 at equality
    else:
        raise ConfigError(f"unknown loss kind {kind!r}")
    return loss, dloss


def batch_loss(model: ConcurrentModel, batch: WeekBatch, kind: str = "poisson") -> float:
    yhat = predict_shares(model, batch)
    loss, _ = _loss_and_dloss(batch.targets, yhat, kind)
    return float(loss.sum())


def batch_gradient(model: ConcurrentModel, batch: WeekBatch, kind: str = "poisson") -> Gradient:
    """Exact gradient of the summed per-week loss w.r.t. phi's parameters.

    Chains through the shared denominator: with S = sum_j w_j,
    d yhat_i / d w_j = alpha * (delta_ij / (1+S) - w_i / (1+S)^2).
    """
    loss_val, grad, _ = _batch_loss_and_gradient(model, batch, kind)
    return grad


def _batch_loss_and_gradient(model: ConcurrentModel, batch: WeekBatch, kind: str):
    w, cache = forward_batch(model.phi, batch.features)
    denom = 1.0 + w.sum()
    yhat = model.alpha * w / denom
    loss, dloss = _loss_and_dloss(batch.targets, yhat, kind)
    # dL/dw_j = alpha/(1+S) * dloss_j - alpha/(1+S)^2 * sum_i dloss_i w_i
    coupling = float(np.dot(dloss, w)) / denom
    upstream = model.alpha / denom * (dloss - coupling)
    flat, input_grads = backward_batch(model.phi, cache, upstream)
    return float(loss.sum()), Gradient(params=flat, inputs=input_grads), yhat


def direct_loss_and_gradient(model: DirectModel, batch: WeekBatch, kind: str):
    """Loss/gradient for the unnormalized feed-forward variant."""
    yhat, cache = forward_batch(model.phi, batch.features)
    loss, dloss = _loss_and_dloss(batch.targets, yhat, kind)
    flat, input_grads = backward_batch(model.phi, cache, dloss)
    return float(loss.sum()), Gradient(params=flat, inputs=input_grads), yhat
