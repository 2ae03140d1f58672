"""Quenched environments sampled from stationary mixing parameter processes.

A model draws one scalar parameter per site (a power-law exponent, a
geometric ratio, or the neutral-branch exponent alpha) from one of three
process kinds whose strong-mixing rates are known exactly by construction:

* ``iid``          -- independent sites (mixing coefficient 0 beyond lag 0),
* ``m-dependent``  -- a moving window over i.i.d. noise (0 beyond lag m),
* ``markov``       -- a strictly positive finite-state chain started from its
  stationary law (geometric rate).

Noise is keyed per site, so sampling is independent of materialization order
and extending the site range never disturbs earlier sites.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .environment import (
    DEFAULT_N_CAP,
    DEFAULT_TAIL_TOL,
    Environment,
    EnvDiagnostics,
    LsvParams,
    diagnostics,
    geometric_tail_sequence,
    lsv_tail_sequence,
    powerlaw_tail_sequence,
)
from .errors import ValidationError
from .streams import stream

__all__ = [
    "MarkovChainSpec",
    "RandomEnvModel",
    "QuenchedSample",
    "MomentReport",
    "sample_environment",
    "moment_report",
]

_FAMILIES = ("powerlaw", "geometric", "lsv")
_KINDS = ("iid", "m-dependent", "markov")

# parameter sanity windows per family: (low limit, high limit), both exclusive
_FAMILY_RANGE = {
    "powerlaw": (1.0, math.inf),
    "geometric": (0.0, 1.0),
    "lsv": (0.0, 0.5),
}


@dataclass(frozen=True, eq=False)
class MarkovChainSpec:
    """Strictly positive row-stochastic chain over scalar parameter states.

    Positivity makes the chain irreducible and aperiodic, so started from its
    stationary law it is a stationary process with a geometric mixing rate.
    """

    states: tuple
    transition: np.ndarray

    def __post_init__(self):
        states = tuple(float(s) for s in self.states)
        trans = np.asarray(self.transition, dtype=np.float64).copy()
        k = len(states)
        if k < 2:
            raise ValidationError("markov spec needs at least two states")
        if trans.shape != (k, k):
            raise ValidationError(f"transition must be {k}x{k}, got {trans.shape}")
        if np.any(trans <= 0.0):
            raise ValidationError("transition entries must be strictly positive")
        if not np.allclose(trans.sum(axis=1), 1.0, atol=1e-12):
            raise ValidationError("transition rows must sum to 1")
        trans.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "transition", trans)

    def stationary(self) -> np.ndarray:
        k = len(self.states)
        a = np.vstack([self.transition.T - np.eye(k), np.ones(k)])
        b = np.concatenate([np.zeros(k), [1.0]])
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
        return np.maximum(pi, 0.0) / pi.sum()

    def geometric_rate(self) -> float:
        """Second-largest modulus of the transition eigenvalues."""
        eigs = np.sort(np.abs(np.linalg.eigvals(self.transition)))
        return float(eigs[-2])


@dataclass(frozen=True, eq=False)
class RandomEnvModel:
    """Descriptor of a stationary parameter process over sites.

    The marginal is either uniform on [low, high] or uniform over ``choices``.
    ``window`` is the m-dependence width (m-dependent kind only); ``chain``
    carries the Markov spec.  ``lsv_c`` fixes the branch cut point for the
    lsv family; ``beta_diag`` declares the diagnostic tail exponent for
    families that decay faster than any power law.
    """

    kind: str
    family: str
    seed: int
    low: float = math.nan
    high: float = math.nan
    choices: tuple | None = None
    window: int = 0
    chain: MarkovChainSpec | None = None
    lsv_c: float = 0.5
    beta_diag: float = 3.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValidationError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if self.family not in _FAMILIES:
            raise ValidationError(f"family must be one of {_FAMILIES}, got {self.family!r}")
        if self.kind == "markov":
            if self.chain is None:
                raise ValidationError("markov kind requires a chain spec")
            values = self.chain.states
        elif self.choices is not None:
            values = tuple(float(v) for v in self.choices)
            if len(values) < 1:
                raise ValidationError("choices must be non-empty")
            object.__setattr__(self, "choices", values)
        else:
            if not self.low < self.high:
                raise ValidationError(f"need low < high, got [{self.low}, {self.high}]")
            values = (self.low, self.high)
        lo_lim, hi_lim = _FAMILY_RANGE[self.family]
        if min(values) <= lo_lim or max(values) >= hi_lim:
            raise ValidationError(
                f"{self.family} parameters must lie in ({lo_lim}, {hi_lim}), got {values}"
            )
        if self.window < 0:
            raise ValidationError("window must be >= 0")
        if self.kind != "m-dependent" and self.window != 0:
            raise ValidationError("window is only meaningful for the m-dependent kind")
        if self.family == "lsv" and not 0.0 < self.lsv_c < 1.0:
            raise ValidationError(f"lsv_c must lie in (0, 1), got {self.lsv_c}")
        if self.beta_diag <= 1.0:
            raise ValidationError("beta_diag must exceed 1")

    # -- noise and parameter generation ------------------------------------

    def _noise(self, x: int) -> float:
        return float(stream(self.seed, "env-noise", x).random())

    def _from_unit(self, v: float) -> float:
        if self.choices is not None:
            idx = min(int(v * len(self.choices)), len(self.choices) - 1)
            return self.choices[idx]
        return self.low + (self.high - self.low) * v

    def site_parameter(self, x: int, _markov_cache: dict | None = None) -> float:
        """Parameter at site x (deterministic in (seed, x) for iid/m-dependent)."""
        if self.kind == "iid":
            return self._from_unit(self._noise(x))
        if self.kind == "m-dependent":
            window = [self._noise(x + j) for j in range(self.window + 1)]
            return self._from_unit(sum(window) / len(window))
        cache = _markov_cache if _markov_cache is not None else {}
        return self._markov_state(x, cache)

    def _markov_state(self, x: int, cache: dict) -> float:
        if x in cache:
            return cache[x]
        spec = self.chain
        start = max((w for w in cache if w < x), default=-1)
        for w in range(start + 1, x + 1):
            if w == 0:
                cum = np.cumsum(spec.stationary())
            else:
                cum = np.cumsum(spec.transition[spec.states.index(cache[w - 1])])
            idx = int(np.searchsorted(cum, self._noise(w), side="right"))
            cache[w] = spec.states[min(idx, len(spec.states) - 1)]
        return cache[x]

    # -- declared mixing ----------------------------------------------------

    def mixing_descriptor(self) -> dict:
        if self.kind == "iid":
            return {"type": "zero-beyond-lag", "lag": 0}
        if self.kind == "m-dependent":
            return {"type": "zero-beyond-lag", "lag": self.window}
        return {"type": "geometric", "rho": self.chain.geometric_rate()}

    def satisfies_polynomial_mixing(self, v: float) -> bool:
        """Whether the declared rate is O(k^-v); true for every v here, since
        finite-range and geometric mixing beat any polynomial."""
        return True

    def descriptor(self) -> dict:
        out = {
            "kind": self.kind,
            "family": self.family,
            "seed": self.seed,
            "window": self.window,
            "lsv_c": self.lsv_c,
            "beta_diag": self.beta_diag,
            "mixing": self.mixing_descriptor(),
        }
        if self.chain is not None:
            out["chain"] = {
                "states": list(self.chain.states),
                "transition": self.chain.transition.tolist(),
            }
        elif self.choices is not None:
            out["choices"] = list(self.choices)
        else:
            out["low"] = self.low
            out["high"] = self.high
        return out


@dataclass(frozen=True, eq=False)
class QuenchedSample:
    """A sampled environment together with everything needed to regenerate it."""

    environment: Environment
    parameter_trace: np.ndarray
    model: RandomEnvModel
    seed: int

    def beta_values(self) -> np.ndarray:
        """Diagnostic tail exponents implied by the sampled parameters."""
        if self.model.family == "powerlaw":
            return self.parameter_trace.copy()
        if self.model.family == "lsv":
            return 1.0 / self.parameter_trace
        return np.full(self.parameter_trace.size, self.model.beta_diag)


def _site_builder(model: RandomEnvModel, n_cap: int, tail_tol: float):
    if model.family == "powerlaw":
        return lambda theta: powerlaw_tail_sequence(theta, n_cap, tail_tol)
    if model.family == "geometric":
        return lambda theta: geometric_tail_sequence(theta, n_cap, tail_tol)
    return lambda theta: lsv_tail_sequence(
        LsvParams.from_alpha_c(theta, model.lsv_c), n_cap, tail_tol
    )


def sample_environment(
    model: RandomEnvModel,
    x_max: int,
    n_cap: int = DEFAULT_N_CAP,
    tail_tol: float = DEFAULT_TAIL_TOL,
) -> QuenchedSample:
    """Materialize sites 0..x_max from the model; bit-reproducible in the seed.

    The returned environment keeps a factory, so later extension reproduces
    exactly what a larger ``x_max`` would have produced.
    """
    if x_max < 0:
        raise ValidationError(f"x_max must be >= 0, got {x_max}")
    builder = _site_builder(model, n_cap, tail_tol)
    markov_cache: dict = {}

    def parameter(x: int) -> float:
        return model.site_parameter(x, markov_cache)

    trace = np.array([parameter(x) for x in range(x_max + 1)])
    sites = [builder(theta) for theta in trace]
    descriptor = {
        "family": model.family,
        "random": model.descriptor(),
        "x_max": x_max,
        "n_cap": n_cap,
        "tail_tol": tail_tol,
        "beta_diag": [float(b) for b in _beta_from(model, trace)],
        "capped_sites": [x for x, s in enumerate(sites) if s.cap_reached],
    }
    env = Environment(sites, model=descriptor, factory=lambda x: builder(parameter(x)))
    return QuenchedSample(environment=env, parameter_trace=trace, model=model,
                          seed=model.seed)


def _beta_from(model: RandomEnvModel, trace: np.ndarray) -> np.ndarray:
    if model.family == "powerlaw":
        return trace
    if model.family == "lsv":
        return 1.0 / trace
    return np.full(trace.size, model.beta_diag)


@dataclass(frozen=True, eq=False)
class MomentReport:
    """Empirical moment and mixing summary for a quenched sample.

    ``b_moment`` uses A'_x when beta_star <= 3 and A_x otherwise (the heavier
    requirement applies in the slowly decaying regime).  ``mixing_ok`` states
    whether the declared rate is O(k^-v) for the v demanded by q.
    """

    q: float
    a_moment: float
    a_prime_moment: float
    b_moment: float
    b_kind: str
    k_mean: float
    beta_star: float
    q_above_8: bool
    required_v: float | None
    mixing_ok: bool
    mixing: dict


def moment_report(sample: QuenchedSample, q: float) -> MomentReport:
    """Empirical q-th moments of the envelope statistics over sampled sites."""
    if q <= 0:
        raise ValidationError(f"q must be positive, got {q}")
    diag = diagnostics(sample.environment, sample.beta_values())
    b_kind = "A" if diag.beta_star > 3.0 else "A_prime"
    b_values = diag.A if b_kind == "A" else diag.A_prime
    q_above_8 = q > 8.0
    required_v = 2.0 * q / (q - 8.0) if q_above_8 else None
    mixing_ok = q_above_8 and sample.model.satisfies_polynomial_mixing(required_v)
    return MomentReport(
        q=q,
        a_moment=float(np.mean(diag.A**q)),
        a_prime_moment=float(np.mean(diag.A_prime**q)),
        b_moment=float(np.mean(b_values**q)),
        b_kind=b_kind,
        k_mean=float(np.mean(diag.K)),
        beta_star=diag.beta_star,
        q_above_8=q_above_8,
        required_v=required_v,
        mixing_ok=mixing_ok,
        mixing=sample.model.mixing_descriptor(),
    )
