"""Synthetic panel generation from the competition-aware generative model.

Each week the per-product weights w[i] = phi(y[i, t-1], theta[i, t]) are
turned into Poisson intensities lambda[i] = s(t) * w[i] / (1 + sum_j w[j])
and sales are drawn independently.  The trajectory is a Markov chain; a
single week transition is exposed as :func:`step`.

Randomness is organized as named substreams keyed by (seed, purpose,
product, week) so that changing d or n never silently reshuffles the noise
of unrelated cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .data import PanelDataset, Scaler
from .errors import ConfigError, NegativeWeightFromPhi
from .nnet import WeightNet, forward_batch, softplus

#: weight function contract: (lagged share, covariate vector) -> weight >= 0
WeightFn = Callable[[float, np.ndarray], float]


def substream(seed: int, *key) -> np.random.Generator:
    """Independent counter-based generator for a named substream."""
    tokens = [seed]
    for k in key:
        if isinstance(k, str):
            # stable across processes, unlike hash()
            tokens.append(int.from_bytes(k.encode("utf-8"), "little") % (2**63))
        else:
            tokens.append(int(k))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(tokens)))


@dataclass(frozen=True)
class AnalyticWeight:
    """Closed-form weight function with a known input-Lipschitz constant."""

    fn: WeightFn
    lipschitz_x: float

    def __call__(self, y_prev: float, theta: np.ndarray) -> float:
        return float(self.fn(y_prev, theta))


def constant_weight(value: float) -> AnalyticWeight:
    return AnalyticWeight(fn=lambda y, th: value, lipschitz_x=0.0)


def linear_weight(slope: float, intercept: float = 1.0) -> AnalyticWeight:
    """w = max(slope * y + intercept, 0); Lipschitz constant |slope|."""
    return AnalyticWeight(
        fn=lambda y, th: max(slope * y + intercept, 0.0),
        lipschitz_x=abs(slope),
    )


def softplus_weight(x_coef: float, theta_coefs: Sequence[float], bias: float) -> AnalyticWeight:
    """w = softplus(x_coef * y + theta . coefs + bias)."""
    coefs = np.asarray(theta_coefs, dtype=float)

    def fn(y, th):
        return float(softplus(x_coef * y + float(np.dot(coefs, th[: len(coefs)])) + bias))

    return AnalyticWeight(fn=fn, lipschitz_x=abs(x_coef))


def as_weight_fn(phi: Union[WeightFn, WeightNet]) -> WeightFn:
    """Adapt a WeightNet (or leave a plain callable) to the (y, theta) contract."""
    if isinstance(phi, WeightNet):
        def fn(y_prev: float, theta: np.ndarray) -> float:
            x = np.concatenate([[y_prev], np.asarray(theta, dtype=float)])
            out, _ = forward_batch(phi, x[np.newaxis, :])
            return float(out[0])
        return fn
    return phi


# -- covariate processes -----------------------------------------------------

@dataclass(frozen=True)
class ConstantCovariates:
    values: tuple[float, ...]

    @property
    def p(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class IidUniformCovariates:
    lo: float
    hi: float
    p: int = 1


@dataclass(frozen=True)
class RandomWalkCovariates:
    step: float
    p: int = 1
    init: float = 0.0


CovariateProcess = Union[ConstantCovariates, IidUniformCovariates, RandomWalkCovariates]


# -- initial distribution ----------------------------------------------------

@dataclass(frozen=True)
class Zeros:
    pass


@dataclass(frozen=True)
class PoissonAt:
    rate: float


InitDist = Union[Zeros, PoissonAt]


@dataclass(frozen=True)
class GenerativeSpec:
    phi: Union[WeightFn, WeightNet]
    scaler: Scaler
    covariates: CovariateProcess
    d: int
    n: int
    init: InitDist = Zeros()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d < 1 or self.n < 2:
            raise ConfigError("need d >= 1 and n >= 2")
        if self.scaler.n < self.n:
            raise ConfigError("scaler shorter than requested trajectory")
        if isinstance(self.init, PoissonAt) and self.init.rate < 0:
            raise ConfigError("initial Poisson rate must be >= 0")


@dataclass(frozen=True)
class SimulatedPanel:
    """Panel plus the true intensities and weights behind it."""

    panel: PanelDataset
    lambdas: np.ndarray
    weights: np.ndarray


def _weights_and_lambdas(phi_fn, x_prev, theta, s_prev, s_cur):
    d = len(x_prev)
    w = np.empty(d)
    y_prev = np.asarray(x_prev, dtype=float) / s_prev
    for i in range(d):
        w[i] = phi_fn(y_prev[i], theta[i])
    if np.any(w < 0) or np.any(~np.isfinite(w)):
        raise NegativeWeightFromPhi("weight function returned a negative or non-finite value")
    lam = s_cur * w / (1.0 + w.sum())
    return w, lam


def step(
    x_prev: np.ndarray,
    theta: np.ndarray,
    s_prev: float,
    s_cur: float,
    phi: Union[WeightFn, WeightNet],
    rng: Union[np.random.Generator, Sequence[np.random.Generator]],
) -> np.ndarray:
    """One week transition with fresh Poisson noise.

    ``rng`` is a single generator or one generator per product.
    """
    if s_prev <= 0 or s_cur <= 0:
        raise ConfigError("scaler values must be > 0")
    phi_fn = as_weight_fn(phi)
    _, lam = _weights_and_lambdas(phi_fn, x_prev, np.asarray(theta, dtype=float), s_prev, s_cur)
    if isinstance(rng, np.random.Generator):
        return rng.poisson(lam).astype(np.int64)
    return np.array([r.poisson(l) for r, l in zip(rng, lam)], dtype=np.int64)


def draw_covariates(process: CovariateProcess, d: int, n: int, seed: int) -> np.ndarray:
    """Covariate array of shape (d, n, p) with per-product substreams."""
    if isinstance(process, ConstantCovariates):
        theta = np.empty((d, n, process.p))
        theta[:, :, :] = np.asarray(process.values)
        return theta
    if isinstance(process, IidUniformCovariates):
        theta = np.empty((d, n, process.p))
        for i in range(d):
            rng = substream(seed, "cov", i)
            theta[i] = rng.uniform(process.lo, process.hi, size=(n, process.p))
        return theta
    if isinstance(process, RandomWalkCovariates):
        theta = np.empty((d, n, process.p))
        for i in range(d):
            rng = substream(seed, "cov", i)
            steps = rng.normal(0.0, process.step, size=(n, process.p))
            steps[0] = process.init
            theta[i] = np.cumsum(steps, axis=0)
        return theta
    raise ConfigError(f"unknown covariate process {process!r}")


def simulate(spec: GenerativeSpec) -> SimulatedPanel:
    """Generate a full trajectory; an n-fold composition of :func:`step`.

    Fully reproducible from ``spec.seed``; noise for cell (i, t) comes from
    its own substream.
    """
    d, n = spec.d, spec.n
    s = spec.scaler.values[:n]
    theta = draw_covariates(spec.covariates, d, n, spec.seed)
    phi_fn = as_weight_fn(spec.phi)

    sales = np.zeros((d, n), dtype=np.int64)
    lambdas = np.zeros((d, n))
    weights = np.zeros((d, n))

    if isinstance(spec.init, PoissonAt):
        for i in range(d):
            sales[i, 0] = substream(spec.seed, "init", i).poisson(spec.init.rate)

    for t in range(1, n):
        w, lam = _weights_and_lambdas(phi_fn, sales[:, t - 1], theta[:, t], s[t - 1], s[t])
        weights[:, t] = w
        lambdas[:, t] = lam
        for i in range(d):
            sales[i, t] = substream(spec.seed, "noise", i, t).poisson(lam[i])

    p = theta.shape[2]
    panel = PanelDataset(
        product_ids=tuple(f"P{i:04d}" for i in range(d)),
        weeks=np.arange(n, dtype=np.int64),
        sales=sales,
        covariates=theta,
        covariate_names=tuple(f"theta{j + 1}" for j in range(p)),
        available=np.ones((d, n), dtype=bool),
    )
    return SimulatedPanel(panel=panel, lambdas=lambdas, weights=weights)
