"""Limit-theorem predictions and quantitative error reports.

For an environment with average sojourn mean mu > 1 and average sojourn
variance sigma^2 > 0, the walk satisfies a law of large numbers
X_n / n -> 1/mu, a central limit theorem with variance parameter
sigma_tilde^2 = sigma^2 / mu^3, and a pointwise (local) approximation

    P(X_n = x)  ~=  mu^{-1} * sum_{l=1..n} h_l(x) * omega^x_{n-l},

where h_l is the N(M_l, l * sigma_tilde^2) density and M_l is the generalized
inverse of the cumulative mean hitting times.  This module evaluates those
predictions against the exact laws from ``walk`` and decomposes the hitting
side of the local error into three telescoping pieces, per (x, n):

    E1 = P(T_x = n) - f_x(n)          f_x = density of N(mu_x, sigma_x^2)
    E2 = f_x(n) - g_x(n)              g_x = density of N(mu_x, n sigma^2 / mu)
    E3 = g_x(n) - mu^{-1} h_n(x)

whose sum telescopes exactly to P(T_x = n) - mu^{-1} h_n(x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .environment import EnvDiagnostics, Environment, cumulative_hitting_moments
from .errors import HypothesisError, NonConvergentVarianceError, ValidationError
from .walk import (
    DEFAULT_DEFICIT_BUDGET,
    DEFAULT_TRUNC_TOL,
    DiscreteDistribution,
    WalkSample,
    hitting_time_distribution,
    hitting_time_scan,
    position_distribution,
    position_scan,
)

__all__ = [
    "LimitParams",
    "LimitFit",
    "LltReport",
    "PredictorInterval",
    "DecompositionTable",
    "CltReport",
    "SllnReport",
    "normal_density",
    "fit_limit_params",
    "llt_predictor",
    "llt_report",
    "llt_report_json",
    "llt_error_decomposition",
    "hitting_density_sup_gap",
    "clt_report",
    "slln_report",
    "kolmogorov_distance_to_normal",
]


def normal_density(mean, variance, z):
    """Density of N(mean, variance) at z (vectorized in any argument)."""
    variance = np.asarray(variance, dtype=np.float64)
    if np.any(variance <= 0.0):
        raise ValidationError("variance must be positive")
    z = np.asarray(z, dtype=np.float64)
    out = np.exp(-((z - mean) ** 2) / (2.0 * variance)) / np.sqrt(2.0 * math.pi * variance)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LimitParams:
    """Limit constants (mu, sigma^2) with the derived sigma_tilde^2 = sigma^2/mu^3."""

    mu: float
    sigma2: float
    eta: float = 0.0
    source: str = "supplied"

    def __post_init__(self):
        if not self.mu > 1.0:
            raise HypothesisError(f"mu must exceed 1, got {self.mu}")
        if not self.sigma2 > 0.0:
            raise HypothesisError(f"sigma2 must be positive, got {self.sigma2}")
        if not 0.0 <= self.eta < 0.5:
            raise ValidationError(f"eta must lie in [0, 1/2), got {self.eta}")

    @property
    def sigma_tilde2(self) -> float:
        return self.sigma2 / self.mu**3


@dataclass(frozen=True, eq=False)
class LimitFit:
    """Fitted limit constants plus the residual curves behind them."""

    params: LimitParams
    x: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    scaled_theta1: np.ndarray
    scaled_theta2: np.ndarray


def fit_limit_params(diag: EnvDiagnostics, eta: float = 0.0, min_sites: int = 100) -> LimitFit:
    """Fit (mu, sigma^2) from the largest materialized prefix.

    mu_hat = mu_X / X and sigma2_hat = sigma2_X / X at the prefix end.  The
    residuals theta_i(x) and their scaled versions x^eta * sqrt(log x) *
    theta_i(x) are returned for hypothesis inspection.  Environments whose
    declared beta makes the variance tail divergent are rejected with
    ``NonConvergentVarianceError`` instead of producing a variance fit.
    """
    count = diag.x.size
    if count < min_sites:
        raise ValidationError(f"need at least {min_sites} sites to fit, got {count}")
    if not diag.variance_converged:
        raise NonConvergentVarianceError(
            "per-site variance tail bound is divergent for the declared beta "
            f"(beta_star = {diag.beta_star}); no variance fit is emitted"
        )
    mu_hat = diag.mu[-1] / count
    sigma2_hat = diag.sigma2[-1] / count
    if mu_hat <= 1.0:
        raise HypothesisError(
            f"fitted mu = {mu_hat} is not > 1; environment is outside the "
            "ballistic hypothesis"
        )
    if sigma2_hat <= 0.0:
        raise HypothesisError(f"fitted sigma2 = {sigma2_hat} is not positive")
    params = LimitParams(mu=mu_hat, sigma2=sigma2_hat, eta=eta, source="fitted")
    theta1 = diag.mu[:-1] / np.maximum(diag.x, 1) - mu_hat
    theta2 = diag.sigma2[:-1] / np.maximum(diag.x, 1) - sigma2_hat
    theta1[0] = theta2[0] = math.nan
    with np.errstate(invalid="ignore"):
        scale = diag.x.astype(np.float64) ** eta * np.sqrt(np.log(np.maximum(diag.x, 1)))
    return LimitFit(params=params, x=diag.x, theta1=theta1, theta2=theta2,
                    scaled_theta1=scale * theta1, scaled_theta2=scale * theta2)


# ---------------------------------------------------------------------------
# local limit predictor
# ---------------------------------------------------------------------------

def _require_levels(diag: EnvDiagnostics, n: int) -> np.ndarray:
    if diag.M.size <= n:
        raise ValidationError(
            f"diagnostics cover M_n only up to n = {diag.M.size - 1}; "
            f"extend the environment prefix to reach n = {n}"
        )
    return diag.M


@dataclass(frozen=True, eq=False)
class PredictorInterval:
    """Pointwise prediction bracket [lo, hi] for P(X_n = x)."""

    n: int
    x: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def halfwidth(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)


def llt_predictor(
    env: Environment,
    params: LimitParams,
    diag: EnvDiagnostics,
    n: int,
    x_values=None,
) -> PredictorInterval:
    """Evaluate mu^{-1} * sum_l h_l(x) * omega^x_{n-l} per site.

    Weights beyond a site's stored tail are only known to lie in [0, deficit],
    so the prediction is an interval: the low end drops those terms, the high
    end adds deficit times a closed-form bound on the density sum.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    M = _require_levels(diag, n)
    st2 = params.sigma_tilde2
    mu_inv = 1.0 / params.mu
    if x_values is None:
        x_values = np.arange(n + 1)
    x_values = np.asarray(x_values, dtype=np.int64)
    lo = np.empty(x_values.size)
    hi = np.empty(x_values.size)
    # sum of h_l(x) over any l-range is at most 2 sqrt(n) / sqrt(2 pi st2)
    density_sum_bound = 2.0 * math.sqrt(n) / math.sqrt(2.0 * math.pi * st2)
    for i, x in enumerate(x_values):
        site = env.site(int(x))
        n_last = site.last_index
        ell_lo = max(1, n - n_last)
        ells = np.arange(ell_lo, n + 1)
        h = normal_density(M[ells], ells * st2, float(x))
        weights = site.values[n - ells]
        exact = mu_inv * float(h @ weights)
        lo[i] = exact
        hi[i] = exact
        if n - n_last >= 2 and site.deficit > 0.0:
            hi[i] += mu_inv * site.deficit * density_sum_bound
    return PredictorInterval(n=n, x=x_values, lo=lo, hi=hi)


@dataclass(frozen=True, eq=False)
class DecompositionTable:
    """Per-x rows of the three-term hitting-side error split at a fixed n.

    Rows at x = 0 are NaN (the hitting moments degenerate there).  The
    telescoping identity e1 + e2 + e3 = p_hit - mu^{-1} h_n(x) holds to
    floating-point roundoff.
    """

    n: int
    x: np.ndarray
    p_hit: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray
    predictor_term: np.ndarray


def _decomposition_rows(params, diag, n, xs, p_hit):
    M = _require_levels(diag, n)
    xs = np.asarray(xs, dtype=np.int64)
    if int(xs.max()) >= diag.mu.size:
        raise ValidationError(
            f"diagnostics cover sites 0..{diag.mu.size - 2}; the decomposition "
            f"needs site {int(xs.max())}"
        )
    e1 = np.full(xs.size, math.nan)
    e2 = np.full(xs.size, math.nan)
    e3 = np.full(xs.size, math.nan)
    h_term = np.full(xs.size, math.nan)
    mu_inv = 1.0 / params.mu
    g_var = n * params.sigma2 / params.mu
    for i, x in enumerate(xs):
        if x < 1:
            continue
        mu_x = diag.mu[x]
        sig2_x = diag.sigma2[x]
        if sig2_x <= 0.0:
            raise HypothesisError(f"sigma_x^2 = {sig2_x} at x = {x}; cannot standardize")
        f = normal_density(mu_x, sig2_x, float(n))
        g = normal_density(mu_x, g_var, float(n))
        h = normal_density(float(M[n]), n * params.sigma_tilde2, float(x))
        h_term[i] = mu_inv * h
        e1[i] = p_hit[i] - f
        e2[i] = f - g
        e3[i] = g - mu_inv * h
    return DecompositionTable(n=n, x=xs, p_hit=np.asarray(p_hit, dtype=np.float64),
                              e1=e1, e2=e2, e3=e3, predictor_term=h_term)


def llt_error_decomposition(
    env: Environment,
    params: LimitParams,
    diag: EnvDiagnostics,
    n: int,
    x_range,
    trunc_tol: float = DEFAULT_TRUNC_TOL,
) -> DecompositionTable:
    """E1/E2/E3 rows at time n for the requested sites."""
    xs = np.asarray(list(x_range), dtype=np.int64)
    if xs.size == 0:
        raise ValidationError("x_range is empty")
    p_hit = np.zeros(xs.size)
    x_max = int(xs.max())
    wanted = {int(x): i for i, x in enumerate(xs)}
    for x, dist in hitting_time_scan(env, x_max, trunc_tol):
        if x in wanted:
            p_hit[wanted[x]] = dist.prob_at(n)
    return _decomposition_rows(params, diag, n, xs, p_hit)


def hitting_density_sup_gap(
    env: Environment,
    diag: EnvDiagnostics,
    x: int,
    trunc_tol: float = DEFAULT_TRUNC_TOL,
) -> float:
    """sup over n of |P(T_x = n) - f_x(n)| with f_x the matched normal density."""
    if x < 1:
        raise ValidationError(f"x must be >= 1, got {x}")
    dist = hitting_time_distribution(env, x, trunc_tol)
    mu_x = diag.mu[x]
    sig_x = math.sqrt(diag.sigma2[x])
    lo = min(dist.offset, int(mu_x - 10.0 * sig_x))
    hi = max(dist.end, int(mu_x + 10.0 * sig_x))
    ns = np.arange(max(0, lo), hi + 1)
    pmf = np.zeros(ns.size)
    inside = (ns >= dist.offset) & (ns <= dist.end)
    pmf[inside] = dist.probs[ns[inside] - dist.offset]
    dens = normal_density(mu_x, diag.sigma2[x], ns.astype(np.float64))
    return float(np.max(np.abs(pmf - dens)))


@dataclass(frozen=True, eq=False)
class LltReport:
    """Exact-versus-predicted position law at one time, with error split."""

    n: int
    x: np.ndarray
    exact: np.ndarray
    pred_lo: np.ndarray
    pred_hi: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray
    sup_err_scaled: float
    max_halfwidth_scaled: float
    exact_deficit: float


def llt_report(
    env: Environment,
    params: LimitParams,
    diag: EnvDiagnostics,
    n: int,
    trunc_tol: float = DEFAULT_TRUNC_TOL,
    deficit_budget: float = DEFAULT_DEFICIT_BUDGET,
) -> LltReport:
    """Compare the exact law of X_n against the local predictor.

    ``sup_err_scaled`` is sqrt(n) * sup_x |exact - predictor midpoint| over the
    scanned sites; ``max_halfwidth_scaled`` reports the same scaling of the
    predictor interval half-width so acceptance thresholds can absorb it.
    """
    scan = position_scan(env, n, trunc_tol, deficit_budget)
    pred = llt_predictor(env, params, diag, n, x_values=scan.x)
    decomp = _decomposition_rows(params, diag, n, scan.x, scan.hitting_at_n)
    err = np.abs(scan.prob - pred.mid)
    return LltReport(
        n=n, x=scan.x, exact=scan.prob,
        pred_lo=pred.lo, pred_hi=pred.hi,
        e1=decomp.e1, e2=decomp.e2, e3=decomp.e3,
        sup_err_scaled=float(math.sqrt(n) * err.max()),
        max_halfwidth_scaled=float(math.sqrt(n) * pred.halfwidth.max()),
        exact_deficit=scan.deficit,
    )


def llt_report_json(report: LltReport) -> dict:
    """Report as a JSON-ready dict: {"n", "sup_err_scaled", "rows": [...]}."""
    def cell(v: float):
        return None if math.isnan(v) else v

    rows = [
        {
            "x": int(report.x[i]),
            "exact": float(report.exact[i]),
            "pred_lo": float(report.pred_lo[i]),
            "pred_hi": float(report.pred_hi[i]),
            "E1": cell(float(report.e1[i])),
            "E2": cell(float(report.e2[i])),
            "E3": cell(float(report.e3[i])),
        }
        for i in range(report.x.size)
    ]
    return {
        "n": report.n,
        "sup_err_scaled": report.sup_err_scaled,
        "max_halfwidth_scaled": report.max_halfwidth_scaled,
        "exact_deficit": report.exact_deficit,
        "rows": rows,
    }


# ---------------------------------------------------------------------------
# distributional distance reports
# ---------------------------------------------------------------------------

def kolmogorov_distance_to_normal(dist: DiscreteDistribution, center: float, scale: float) -> float:
    """Kolmogorov distance between the standardized law and N(0, 1).

    The discrete CDF is evaluated from both sides of every atom so the
    supremum over the step function is exact.
    """
    if scale <= 0.0:
        raise ValidationError(f"scale must be positive, got {scale}")
    z = (dist.support.astype(np.float64) - center) / scale
    phi = ndtr(z)
    upper = np.cumsum(dist.probs)
    lower = upper - dist.probs
    return float(max(np.abs(upper - phi).max(), np.abs(lower - phi).max()))


@dataclass(frozen=True, eq=False)
class CltReport:
    """Kolmogorov distances of standardized position and hitting laws."""

    n: np.ndarray
    dist_position: np.ndarray
    hitting_x: np.ndarray
    dist_hitting: np.ndarray
    params: LimitParams


def clt_report(
    env: Environment,
    params: LimitParams,
    n_grid,
    trunc_tol: float = DEFAULT_TRUNC_TOL,
    deficit_budget: float = DEFAULT_DEFICIT_BUDGET,
) -> CltReport:
    """Distances to N(0,1) along a time grid.

    X_n is standardized by (n/mu, sqrt(n) sigma_tilde); the hitting time of
    x = round(n/mu) is standardized by its exact cumulative moments
    (mu_x, sigma_x), not by the limit constants.
    """
    n_grid = sorted(int(n) for n in n_grid)
    if not n_grid or n_grid[0] < 1:
        raise ValidationError("n_grid must contain positive times")
    st = math.sqrt(params.sigma_tilde2)
    pos_dist = []
    hit_x = []
    hit_dist = []
    for n in n_grid:
        dist = position_distribution(env, n, trunc_tol, deficit_budget)
        pos_dist.append(kolmogorov_distance_to_normal(dist, n / params.mu, math.sqrt(n) * st))
        x = max(1, round(n / params.mu))
        mu_x, sig2_x = cumulative_hitting_moments(env, x)
        if sig2_x <= 0.0:
            raise HypothesisError(
                f"hitting variance is zero at x = {x}; standardization undefined"
            )
        t_dist = hitting_time_distribution(env, x, trunc_tol, deficit_budget)
        hit_x.append(x)
        hit_dist.append(kolmogorov_distance_to_normal(t_dist, mu_x, math.sqrt(sig2_x)))
    return CltReport(
        n=np.array(n_grid), dist_position=np.array(pos_dist),
        hitting_x=np.array(hit_x), dist_hitting=np.array(hit_dist),
        params=params,
    )


@dataclass(frozen=True, eq=False)
class SllnReport:
    """Trajectory of X_n / n against the predicted speed 1/mu."""

    times: np.ndarray
    mean_ratio: np.ndarray
    frac_within: np.ndarray
    tol: float
    speed: float
    max_tail_deviation: float
    final_frac_within: float


def slln_report(
    env: Environment,
    params: LimitParams,
    sample: WalkSample,
    tol: float = 0.02,
    tail_fraction: float = 0.5,
) -> SllnReport:
    """Summarize simulated paths against the almost-sure speed 1/mu.

    ``frac_within`` is the fraction of paths with |X_t/t - 1/mu| < tol at each
    recorded time; ``max_tail_deviation`` is the largest deviation of the mean
    ratio over the last ``tail_fraction`` of the horizon.
    """
    if sample.x_at_times is None or sample.times is None:
        raise ValidationError("sample must be recorded at checkpoint times")
    if np.any(sample.times <= 0):
        raise ValidationError("checkpoint times must be positive for ratios")
    speed = 1.0 / params.mu
    ratios = sample.x_at_times / sample.times[None, :]
    mean_ratio = ratios.mean(axis=0)
    frac = (np.abs(ratios - speed) < tol).mean(axis=0)
    tail_start = sample.times[-1] * (1.0 - tail_fraction)
    tail = sample.times >= tail_start
    return SllnReport(
        times=sample.times, mean_ratio=mean_ratio, frac_within=frac,
        tol=tol, speed=speed,
        max_tail_deviation=float(np.abs(mean_ratio[tail] - speed).max()),
        final_frac_within=float(frac[-1]),
    )
