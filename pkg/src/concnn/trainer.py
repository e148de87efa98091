"""Empirical risk minimization over per-week batches.

One epoch presents every training week once, in a seed-determined random
order.  Model selection keeps the parameters from the epoch with the best
validation MAPE, with early stopping after a fixed patience.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .concurrent import (
    ConcurrentModel,
    DirectModel,
    _batch_loss_and_gradient,
    build_week_batch,
    direct_loss_and_gradient,
)
from .data import PanelDataset, PanelView, ShareMatrix
from .errors import (
    AllCandidatesDiverged,
    ArchitectureMismatch,
    ConfigError,
    DivergedLoss,
    InsufficientHistory,
)
from .evaluation import rolling_evaluate
from .nnet import Architecture, Normalizer, WeightNet, init_params

log = logging.getLogger(__name__)

#: default candidate architectures: depth 0-3, widths within the 32 cap
DEFAULT_GRID = (
    (),
    (8,),
    (16,),
    (32,),
    (8, 8),
    (16, 8),
    (16, 16),
    (32, 16),
    (16, 16, 8),
    (32, 16, 8),
)


@dataclass
class TrainConfig:
    loss: str = "poisson"          # "l1" | "poisson"
    variant: str = "concurrent"    # "ffnn" | "concurrent" | "pretrained"
    optimizer: str = "adam"        # "adam" | "sgd"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    seed: int = 0
    patience: int = 10

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.loss not in ("l1", "poisson"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.variant not in ("ffnn", "concurrent", "pretrained"):
            raise ConfigError(f"unknown variant {self.variant!r}")


@dataclass
class TrainReport:
    train_losses: list[float] = field(default_factory=list)
    valid_mapes: list[float] = field(default_factory=list)
    selected_epoch: int = 0
    wall_time: float = 0.0
    zero_prediction: bool = False

    def write_csv(self, path: str) -> None:
        # wall time is deliberately left out so artifacts stay reproducible
        import csv
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "valid_mape", "selected"])
            for k, (tl, vm) in enumerate(zip(self.train_losses, self.valid_mapes), 1):
                writer.writerow([k, repr(tl), repr(vm), int(k == self.selected_epoch)])


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        params -= self.lr * grad


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(config.lr, config.beta1, config.beta2, config.eps)
    if config.optimizer == "sgd":
        return SGD(config.lr)
    raise ConfigError(f"unknown optimizer {config.optimizer!r}")


def _collect_batches(panel, shares, view, horizon, lag_count):
    batches = []
    for t in view.week_indices:
        batch = build_week_batch(panel, shares, t, horizon, lag_count)
        if batch is not None:
            batches.append(batch)
    return batches


def fit_normalizer(net: WeightNet, batches) -> None:
    """Fit the feature normalizer on the training batches, in place."""
    feats = np.concatenate([b.features for b in batches], axis=0)
    net.normalizer = Normalizer.fit(feats)


def train(
    model,
    panel: PanelDataset,
    shares: ShareMatrix,
    train_view: PanelView,
    valid_view: PanelView,
    config: TrainConfig,
    fit_norm: bool = True,
):
    """Train a ConcurrentModel or DirectModel; returns (model, TrainReport).

    The returned model carries the parameters of the best validation epoch.
    """
    horizon, lag_count = model.horizon, model.lag_count
    if len(train_view) < horizon + lag_count:
        raise InsufficientHistory(
            f"train view has {len(train_view)} weeks, need >= {horizon + lag_count}"
        )
    batches = _collect_batches(panel, shares, train_view, horizon, lag_count)
    if not batches:
        raise InsufficientHistory("no trainable weeks in train view")
    if fit_norm:
        fit_normalizer(model.phi, batches)

    concurrent = isinstance(model, ConcurrentModel)
    optimizer = make_optimizer(config)
    report = TrainReport()
    best_mape = np.inf
    best_params = model.phi.parameters.copy()
    best_epoch = 0
    stale = 0
    t0 = time.perf_counter()

    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng((config.seed, epoch)).permutation(len(batches))
        epoch_loss = 0.0
        for b in order:
            batch = batches[b]
            if concurrent:
                loss, grad, _ = _batch_loss_and_gradient(model, batch, config.loss)
            else:
                loss, grad, _ = direct_loss_and_gradient(model, batch, config.loss)
            if not np.isfinite(loss):
                report.wall_time = time.perf_counter() - t0
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            epoch_loss += loss
            optimizer.step(model.phi.parameters, grad.params)
        report.train_losses.append(epoch_loss)

        valid_report = rolling_evaluate(model, panel, shares, valid_view,
                                        horizon, lag_count)
        report.valid_mapes.append(valid_report.mape)
        if valid_report.mape < best_mape:
            best_mape = valid_report.mape
            best_params = model.phi.parameters.copy()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    model.phi.parameters = best_params
    report.selected_epoch = best_epoch
    report.wall_time = time.perf_counter() - t0
    final = rolling_evaluate(model, panel, shares, valid_view, horizon, lag_count)
    report.zero_prediction = final.zero_prediction
    return model, report


def select_model(
    grid,
    panel: PanelDataset,
    shares: ShareMatrix,
    train_view: PanelView,
    valid_view: PanelView,
    config: TrainConfig,
    horizon: int,
    alpha: float = 1.0,
    lag_count: int = 1,
):
    """Train every candidate architecture and keep the best.

    Ranking: non-zero-prediction candidates first, then lowest validation
    MAPE, then fewer parameters, then grid order.  Returns
    (model, report, architecture).
    """
    if not grid:
        raise ConfigError("empty architecture grid")
    input_dim = lag_count + panel.p
    results = []
    for idx, hidden in enumerate(grid):
        arch = Architecture(input_dim=input_dim, hidden=tuple(hidden))
        net = init_params(arch, seed=config.seed + idx)
        if config.variant == "ffnn":
            model = DirectModel(phi=net, horizon=horizon, lag_count=lag_count)
        else:
            model = ConcurrentModel(phi=net, alpha=alpha, horizon=horizon,
                                    lag_count=lag_count)
        try:
            model, report = train(model, panel, shares, train_view, valid_view, config)
        except DivergedLoss:
            log.warning("candidate %d (%s) diverged", idx, hidden)
            continue
        best_mape = min(report.valid_mapes)
        results.append((report.zero_prediction, best_mape, arch.n_params, idx,
                        model, report, arch))
    if not results:
        raise AllCandidatesDiverged("every candidate diverged during training")
    results.sort(key=lambda r: r[:4])
    _, _, _, _, model, report, arch = results[0]
    return model, report, arch


def pretrain_transfer(
    ffnn: DirectModel,
    target: ConcurrentModel,
    probe_features: np.ndarray | None = None,
) -> tuple[ConcurrentModel, bool]:
    """Copy a trained feed-forward net into a concurrent model.

    Returns (model, low_weight_flag); the flag is set when the transferred
    net yields a near-zero weight sum on the probe features, which makes
    the shared denominator collapse to 1 and every prediction tiny.
    """
    if ffnn.phi.architecture != target.phi.architecture:
        raise ArchitectureMismatch(
            f"{ffnn.phi.architecture} != {target.phi.architecture}"
        )
    target.phi = ffnn.phi.copy()
    low = False
    if probe_features is not None and len(probe_features):
        from .nnet import forward_batch
        w, _ = forward_batch(target.phi, probe_features)
        low = bool(w.mean() * len(w) < 1e-2)
        if low:
            log.warning("pretrained weights are near zero; predictions will collapse")
    return target, low
