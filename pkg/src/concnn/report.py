"""Figure rendering for the CLI report path.

Every plot mirrors a CSV artifact; figures are a convenience on top of the
numeric outputs, written next to them as PNG files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EvaluationReport, PartialDependenceCurve
from .theory import RiskDecayResult
from .trainer import TrainReport


def plot_pdp(curve: PartialDependenceCurve, path: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(curve.bin_values, curve.avg_weights, lw=1.5)
    ax.set_xlabel(curve.feature)
    ax.set_ylabel("average weight")
    ax.set_title(f"partial dependence on {curve.feature}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_predictions(report: EvaluationReport, path: str, max_products: int = 6) -> None:
    """Actual vs predicted share trajectories for the busiest products."""
    by_product: dict[str, list[tuple[int, float, float]]] = {}
    for pid, week, actual, pred in report.rows:
        by_product.setdefault(pid, []).append((week, actual, pred))
    ranked = sorted(by_product.items(),
                    key=lambda kv: -sum(a for _, a, _ in kv[1]))[:max_products]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for pid, rows in ranked:
        rows.sort()
        weeks = [w for w, _, _ in rows]
        ax.plot(weeks, [a for _, a, _ in rows], lw=1.0, label=f"{pid} actual")
        ax.plot(weeks, [p for _, _, p in rows], lw=1.0, ls="--",
                label=f"{pid} predicted")
    ax.set_xlabel("week")
    ax.set_ylabel("market share")
    ax.set_title(f"{report.model_name} (h={report.horizon}, "
                 f"MAPE {report.mape:.1f})")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_train_report(report: TrainReport, path: str) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    epochs = np.arange(1, len(report.train_losses) + 1)
    ax1.plot(epochs, report.train_losses)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax2.plot(epochs, report.valid_mapes)
    if report.selected_epoch:
        ax2.axvline(report.selected_epoch, color="k", ls=":", lw=1)
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation MAPE")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_decay(result: RiskDecayResult, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    n = np.asarray(result.n_values, dtype=float)
    r = np.maximum(result.excess_risks, 1e-12)
    ax.loglog(n, r, "o-", label=f"excess risk (slope {result.slope:.2f})")
    ref = r[0] * np.sqrt(n[0] / n)
    ax.loglog(n, ref, "k--", lw=1, label="n^-1/2 reference")
    ax.set_xlabel("trajectory length n")
    ax.set_ylabel("excess risk")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
