"""Empirical verification of the contraction and concentration conditions.

Everything here checks, by direct computation or Monte Carlo, the
quantities the risk bound depends on: the weight function's input
Lipschitz constant, the scaler ratio bound, the contraction factor of the
week transition, the Bernstein-type constants, Poisson moment bounds and
the decay of the excess risk with the sample length.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .concurrent import build_week_batch
from .data import Scaler, ShareMatrix
from .errors import (
    EmptyThetaSamples,
    IdenticalStates,
    InvalidDelta,
    RhoOutOfRange,
    TrainingDiverged,
)
from .nnet import WeightNet, backward, input_lipschitz_bound
from .simulator import (
    AnalyticWeight,
    GenerativeSpec,
    SimulatedPanel,
    as_weight_fn,
    simulate,
    substream,
    _weights_and_lambdas,
)


@dataclass
class LipschitzEstimate:
    sampled_max: float
    certified_bound: float


def estimate_lipschitz(
    phi,
    x_range: tuple[float, float] = (0.0, 1.0),
    theta_samples: np.ndarray | None = None,
    grid: int = 64,
) -> LipschitzEstimate:
    """Bound on |d phi / d x| over lagged share x and covariates theta.

    For a WeightNet the sampled maximum uses exact input gradients on a
    grid and the certified bound is the layer-norm product; for analytic
    weights both equal the declared Lipschitz constant.
    """
    if isinstance(phi, AnalyticWeight):
        return LipschitzEstimate(phi.lipschitz_x, phi.lipschitz_x)
    if not isinstance(phi, WeightNet):
        raise TypeError("need a WeightNet or AnalyticWeight")
    if grid < 2:
        raise ValueError("grid must have >= 2 points")
    if theta_samples is None or len(theta_samples) == 0:
        raise EmptyThetaSamples("no covariate samples provided")
    theta_samples = np.atleast_2d(np.asarray(theta_samples, dtype=float))
    xs = np.linspace(x_range[0], x_range[1], grid)
    sampled = 0.0
    for theta in theta_samples:
        for x in xs:
            inp = np.concatenate([[x], theta])
            g = backward(phi, inp)
            sampled = max(sampled, abs(float(g.inputs[0])))
    certified = float(input_lipschitz_bound(phi)[0])
    return LipschitzEstimate(sampled_max=sampled, certified_bound=max(certified, sampled))


@dataclass
class ContractionReport:
    tau: float
    tau_s: float
    rho: float
    passed: bool


def contraction_check(phi, scaler: Scaler, *, tau: float | None = None,
                      theta_samples: np.ndarray | None = None) -> ContractionReport:
    """rho = 3 * tau_s * tau; the transition contracts when rho < 1."""
    if tau is None:
        tau = estimate_lipschitz(phi, theta_samples=theta_samples).certified_bound
    tau_s = scaler.ratio_bound
    rho = 3.0 * tau_s * tau
    return ContractionReport(tau=tau, tau_s=tau_s, rho=rho, passed=rho < 1.0)


def coupled_poisson_pair(lam_a: float, lam_b: float,
                         rng: np.random.Generator) -> tuple[int, int]:
    """Maximal (thinning) coupling of two Poisson draws.

    Draw N ~ Poisson(max intensity) arrivals with uniform marks and keep
    the arrivals whose mark falls below each intensity's acceptance ratio;
    both marginals are exact and the draws share their randomness.
    """
    lam_max = max(lam_a, lam_b)
    if lam_max == 0:
        return 0, 0
    n = rng.poisson(lam_max)
    if n == 0:
        return 0, 0
    u = rng.uniform(size=n)
    return int(np.sum(u <= lam_a / lam_max)), int(np.sum(u <= lam_b / lam_max))


@dataclass
class EmpiricalContractionReport:
    max_ratio: float
    per_pair_ratios: list[float]
    mc_sigma: float


def empirical_contraction(
    spec: GenerativeSpec,
    x_pairs: list[tuple[np.ndarray, np.ndarray]],
    replicas: int = 10_000,
    t: int = 1,
) -> EmpiricalContractionReport:
    """MC estimate of sup E||F(X, eps) - F(X', eps)||_1 / ||X - X'||_1.

    Both chains consume the same arrival stream through a shared-randomness
    Poisson coupling, matching the shared-noise construction of the
    contraction condition.
    """
    if replicas < 100:
        raise ValueError("need at least 100 replicas")
    phi_fn = as_weight_fn(spec.phi)
    from .simulator import draw_covariates
    theta = draw_covariates(spec.covariates, spec.d, spec.n, spec.seed)[:, t]
    s_prev = float(spec.scaler.values[t - 1])
    s_cur = float(spec.scaler.values[t])

    ratios = []
    sigma_max = 0.0
    for pair_idx, (x, x_prime) in enumerate(x_pairs):
        x = np.asarray(x, dtype=float)
        x_prime = np.asarray(x_prime, dtype=float)
        dist = np.abs(x - x_prime).sum()
        if dist == 0:
            raise IdenticalStates("state pair with zero distance")
        _, lam = _weights_and_lambdas(phi_fn, x, theta, s_prev, s_cur)
        _, lam_p = _weights_and_lambdas(phi_fn, x_prime, theta, s_prev, s_cur)
        diffs = np.empty(replicas)
        for r in range(replicas):
            rng = substream(spec.seed, "couple", pair_idx, r)
            total = 0
            for i in range(spec.d):
                a, b = coupled_poisson_pair(lam[i], lam_p[i], rng)
                total += abs(a - b)
            diffs[r] = total
        ratios.append(float(diffs.mean() / dist))
        sigma_max = max(sigma_max, float(diffs.std(ddof=1) / math.sqrt(replicas) / dist))
    return EmpiricalContractionReport(
        max_ratio=max(ratios), per_pair_ratios=ratios, mc_sigma=sigma_max
    )


def bernstein_constants(d: int, scaler: Scaler) -> tuple[float, float]:
    """M = d * max(1, e R) and V = 4 M^2 with R the scaler's upper bound."""
    r = scaler.upper_bound
    m = d * max(1.0, math.e * r)
    return m, 4.0 * m * m


def geometric_sum(t: int, rho: float) -> float:
    """K_t(rho) = (1 - rho^t) / (1 - rho); equals 1 at rho = 0 for t >= 1."""
    if not 0 <= rho < 1:
        raise RhoOutOfRange(f"rho must be in [0, 1), got {rho}")
    if rho == 0:
        return 1.0
    return (1.0 - rho ** t) / (1.0 - rho)


def theorem_bound(
    n: int,
    delta: float,
    tau: float,
    rho: float,
    m: float,
    v1: float,
    v2: float,
    proof_constant: bool = True,
) -> float:
    """Right-hand side of the estimation-risk bound.

    ``proof_constant`` selects log(2/delta) (the constant the proof's final
    display carries) over the statement's log(1/delta).
    """
    if not 0 < delta < 1:
        raise InvalidDelta(f"delta must be in (0, 1), got {delta}")
    if n < 2:
        raise ValueError("n must be >= 2")
    log_term = math.log((2.0 if proof_constant else 1.0) / delta)
    k = geometric_sum(n - 1, rho)
    return (1.0 + tau) * (
        math.sqrt(2.0 * v2 * log_term) / math.sqrt(n)
        + math.sqrt(2.0 * v1 * log_term) / n
        + 2.0 * m * k * log_term / n
    )


def exact_poisson_moments(lam: float, k_max: int) -> np.ndarray:
    """Raw moments E[X^k] for k = 0..k_max via the binomial recurrence.

    m_{k+1} = lam * sum_i C(k, i) m_i (Touchard / Bell style).
    """
    m = np.empty(k_max + 1)
    m[0] = 1.0
    for k in range(k_max):
        m[k + 1] = lam * sum(math.comb(k, i) * m[i] for i in range(k + 1))
    return m


@dataclass
class MomentCheckRow:
    k: int
    mc_moment: float
    exact_moment: float | None
    bound: float
    margin: float
    mc_sigma: float
    passed: bool


def poisson_moment_check(
    lam: float,
    k_max: int,
    samples: int = 100_000,
    seed: int = 0,
    exact_up_to: int = 6,
) -> list[MomentCheckRow]:
    """Check E[X^k] <= k! * M^k with M = max(1, lam * e), by MC.

    Exact moments (via the recurrence) cross-check the MC estimates for
    small k.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if samples < 10_000:
        raise ValueError("need at least 10^4 samples")
    rng = substream(seed, "moments")
    draws = rng.poisson(lam, size=samples).astype(float)
    m_const = max(1.0, lam * math.e)
    exact = exact_poisson_moments(lam, min(k_max, exact_up_to))
    rows = []
    for k in range(1, k_max + 1):
        powers = draws ** k
        mc = float(powers.mean())
        sigma = float(powers.std(ddof=1) / math.sqrt(samples))
        bound = math.factorial(k) * m_const ** k
        ex = float(exact[k]) if k <= exact_up_to else None
        reference = ex if ex is not None else mc
        rows.append(MomentCheckRow(
            k=k, mc_moment=mc, exact_moment=ex, bound=bound,
            margin=bound - reference, mc_sigma=sigma,
            passed=reference <= bound,
        ))
    return rows


@dataclass
class RiskDecayResult:
    n_values: list[int]
    excess_risks: list[float]
    slope: float

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "excess_risk"])
            for n, r in zip(self.n_values, self.excess_risks):
                writer.writerow([n, repr(float(r))])


def _trajectory_risk(model_predict, reference_predict, sim: SimulatedPanel,
                     shares: ShareMatrix, horizon: int, start: int) -> float:
    """Mean per-week L1 distance to the true conditional mean shares.

    Comparing against the noise-free conditional means (the oracle's
    predictions) isolates the estimation error the risk bound controls;
    the Poisson noise term is common to both predictors and cancels.
    """
    total = 0.0
    weeks = 0
    for t in range(start, sim.panel.n):
        batch = build_week_batch(sim.panel, shares, t, horizon, 1)
        if batch is None:
            continue
        yhat = np.asarray(model_predict(batch), dtype=float)
        ref = np.asarray(reference_predict(batch), dtype=float)
        total += float(np.abs(yhat - ref).sum())
        weeks += 1
    return total / max(weeks, 1)


def risk_decay_experiment(
    make_spec,
    n_grid: list[int],
    replicas: int,
    seed: int = 0,
    train_fn=None,
    horizon: int = 1,
    test_n: int = 200,
) -> RiskDecayResult:
    """Excess test risk of the trained estimator versus trajectory length.

    ``make_spec(n, seed)`` builds a GenerativeSpec of length n;
    ``train_fn(sim_panel, seed)`` returns a fitted predictor with a
    ``predict(batch)`` method plus the oracle predictor for the true weight
    function.  For each n the excess risk (estimator minus oracle, on a
    fresh test trajectory) is averaged over replicas, then a log-log slope
    is fitted.
    """
    if len(n_grid) < 3 or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be increasing with >= 3 points")
    mean_excess = []
    for n in n_grid:
        excesses = []
        for r in range(replicas):
            rep_seed = int(substream(seed, "decay", n, r).integers(2**31))
            spec = make_spec(n, rep_seed)
            sim = simulate(spec)
            fitted, oracle = train_fn(sim, spec, rep_seed)
            test_spec = make_spec(test_n, rep_seed + 1)
            test_sim = simulate(test_spec)
            test_shares = ShareMatrix(
                test_sim.panel.sales / test_spec.scaler.values[:test_sim.panel.n]
            )
            start = horizon
            excess = _trajectory_risk(fitted.predict, oracle.predict, test_sim,
                                      test_shares, horizon, start)
            if not math.isfinite(excess):
                raise TrainingDiverged(f"non-finite risk at n={n}, replica {r}")
            excesses.append(excess)
        mean_excess.append(float(np.mean(excesses)))
    floored = np.maximum(mean_excess, 1e-12)
    slope = float(np.polyfit(np.log(np.asarray(n_grid, dtype=float)),
                             np.log(floored), 1)[0])
    return RiskDecayResult(n_values=list(n_grid), excess_risks=mean_excess, slope=slope)


@dataclass
class TheoryReport:
    tau: float
    tau_s: float
    rho: float
    contraction_pass: bool
    m: float
    v: float
    k_geom: float
    bound_value: float
    n: int
    delta: float
    moment_rows: list[MomentCheckRow] = field(default_factory=list)
    empirical_ratio: float | None = None
    mc_sigma: float | None = None

    def to_text(self) -> str:
        lines = [
            "theory report",
            "=============",
            f"tau (weight-function input Lipschitz bound): {self.tau:.6g}",
            f"tau_s (max scaler ratio):                    {self.tau_s:.6g}",
            f"rho = 3 * tau_s * tau:                       {self.rho:.6g}",
            f"contraction satisfied (rho < 1):             {self.contraction_pass}",
            f"M:                                           {self.m:.6g}",
            f"V (= 4 M^2, both variance slots):            {self.v:.6g}",
            f"K_(n-1)(rho):                                {self.k_geom:.6g}",
            f"risk bound at n={self.n}, delta={self.delta}: {self.bound_value:.6g}",
        ]
        if self.empirical_ratio is not None:
            lines.append(
                f"coupled MC contraction ratio:                "
                f"{self.empirical_ratio:.6g} (sigma {self.mc_sigma:.3g})"
            )
        if self.moment_rows:
            lines.append("")
            lines.append("poisson moment bound margins:")
            for row in self.moment_rows:
                lines.append(
                    f"  k={row.k}: mc={row.mc_moment:.6g} "
                    f"exact={'-' if row.exact_moment is None else f'{row.exact_moment:.6g}'} "
                    f"bound={row.bound:.6g} pass={row.passed}"
                )
        return "\n".join(lines) + "\n"

    def write_moments_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "mc_moment", "exact_moment", "bound",
                            "margin", "mc_sigma", "passed"])
            for row in self.moment_rows:
                writer.writerow([
                    row.k, repr(row.mc_moment),
                    "" if row.exact_moment is None else repr(row.exact_moment),
                    repr(row.bound), repr(row.margin), repr(row.mc_sigma),
                    int(row.passed),
                ])
