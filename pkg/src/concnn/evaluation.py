"""Rolling-origin evaluation, aggregate MAPE and partial dependence.

Evaluation is non-recursive: the prediction for week t is built from the
actual data at week t - h, never from earlier predictions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .concurrent import build_week_batch
from .data import PanelDataset, PanelView, ShareMatrix
from .errors import InsufficientHistory, UnknownFeature, ZeroActualTotal
from .nnet import forward_batch

#: predictions with max below this are treated as the all-zero failure mode
ZERO_PREDICTION_THRESHOLD = 1e-6


def mape(preds: np.ndarray, actuals: np.ndarray) -> float:
    """Aggregate-normalized MAPE: 100 * sum|yhat - y| / sum y."""
    preds = np.asarray(preds, dtype=float)
    actuals = np.asarray(actuals, dtype=float)
    if preds.shape != actuals.shape:
        raise ZeroActualTotal("prediction and actual index sets differ")
    total = actuals.sum()
    if total <= 0:
        raise ZeroActualTotal("actuals sum to zero")
    return float(100.0 * np.abs(preds - actuals).sum() / total)


@dataclass
class EvaluationReport:
    model_name: str
    horizon: int
    mape: float
    rows: list[tuple[str, int, float, float]] = field(default_factory=list)
    zero_prediction: bool = False

    def write_predictions_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["product_id", "week", "actual_share",
                             "predicted_share", "model"])
            for pid, week, actual, pred in self.rows:
                writer.writerow([pid, week, repr(actual), repr(pred), self.model_name])


def rolling_evaluate(
    model,
    panel: PanelDataset,
    shares: ShareMatrix,
    view: PanelView,
    horizon: int,
    lag_count: int = 1,
    model_name: str = "model",
) -> EvaluationReport:
    """Evaluate ``model`` (anything with .predict(WeekBatch)) on a view."""
    preds_all: list[np.ndarray] = []
    actual_all: list[np.ndarray] = []
    rows: list[tuple[str, int, float, float]] = []
    for t in view.week_indices:
        batch = build_week_batch(panel, shares, t, horizon, lag_count)
        if batch is None:
            continue
        yhat = np.asarray(model.predict(batch), dtype=float)
        preds_all.append(yhat)
        actual_all.append(batch.targets)
        for idx, pred, actual in zip(batch.active, yhat, batch.targets):
            rows.append((panel.product_ids[idx], int(panel.weeks[t]),
                         float(actual), float(pred)))
    if not preds_all:
        raise InsufficientHistory("no evaluable weeks in view")
    preds = np.concatenate(preds_all)
    actuals = np.concatenate(actual_all)
    return EvaluationReport(
        model_name=model_name,
        horizon=horizon,
        mape=mape(preds, actuals),
        rows=rows,
        zero_prediction=bool(preds.max(initial=0.0) < ZERO_PREDICTION_THRESHOLD),
    )


@dataclass
class PartialDependenceCurve:
    feature: str
    bin_values: np.ndarray
    avg_weights: np.ndarray
    degenerate: bool = False

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_value", "avg_weight"])
            for v, w in zip(self.bin_values, self.avg_weights):
                writer.writerow([repr(float(v)), repr(float(w))])


def feature_names(panel: PanelDataset, lag_count: int) -> list[str]:
    return [f"lag{j + 1}" for j in range(lag_count)] + list(panel.covariate_names)


def _collect_features(panel, shares, view, horizon, lag_count) -> np.ndarray:
    mats = []
    for t in view.week_indices:
        batch = build_week_batch(panel, shares, t, horizon, lag_count)
        if batch is not None:
            mats.append(batch.features)
    if not mats:
        raise InsufficientHistory("no evaluable weeks in view")
    return np.concatenate(mats, axis=0)


def partial_dependence(
    model,
    panel: PanelDataset,
    shares: ShareMatrix,
    train_view: PanelView,
    test_view: PanelView,
    feature: str,
    bins: int = 100,
) -> PartialDependenceCurve:
    """Average weight on the test set as one feature sweeps its train bins.

    The feature's training distribution is split into ``bins``
    equal-frequency bins; for each bin average v, the net is evaluated on
    every test point with the feature overridden by v and the outputs are
    averaged.  Distributions with fewer distinct values than bins collapse
    to one bin per value (flagged as degenerate).
    """
    names = feature_names(panel, model.lag_count)
    if feature not in names:
        raise UnknownFeature(f"unknown feature {feature!r}; known: {names}")
    col = names.index(feature)

    train_feats = _collect_features(panel, shares, train_view, model.horizon, model.lag_count)
    test_feats = _collect_features(panel, shares, test_view, model.horizon, model.lag_count)

    values = np.sort(train_feats[:, col])
    degenerate = len(np.unique(values)) < bins
    if degenerate:
        bin_values = np.unique(values)
    else:
        bin_values = np.array([chunk.mean() for chunk in np.array_split(values, bins)])

    avg_weights = np.empty(len(bin_values))
    work = test_feats.copy()
    for k, v in enumerate(bin_values):
        work[:, col] = v
        out, _ = forward_batch(model.phi, work)
        avg_weights[k] = out.mean()
    return PartialDependenceCurve(
        feature=feature,
        bin_values=bin_values,
        avg_weights=avg_weights,
        degenerate=degenerate,
    )


def write_mape_summary(path: str, entries: list[tuple[str, int, float, bool]]) -> None:
    """CSV of (model, horizon, mape, zero_prediction_flag) rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "horizon", "mape", "zero_prediction"])
        for model_name, horizon, value, flagged in entries:
            writer.writerow([model_name, horizon, repr(float(value)), int(flagged)])
