"""Inclusion probabilities and auxiliary multipliers for each sharding strategy.

All planners take singular values sorted non-increasing and strictly
positive, and return an :class:`InclusionPlan` whose probabilities sum to the
sample size ``n``.
"""

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ValidationError
from .spectra import SpectralDecomposition, keep_count, scaled_multipliers

# Absolute slack on non-strict boundary comparisons and criterion ties.
_SLACK = 1e-12
PRISM_TRIALS = 100_000
PRISM_MIN_PROB = 1e-4


class Strategy(str, Enum):
    TOP_N = "topn"
    TOP_N_SCALED = "topn_scaled"
    PRISM = "prism"
    PRISM_UNBIASED = "prism_unbiased"
    UNBIASED = "unbiased"
    COLLECTIVE = "collective"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_").replace("+", "_")
        aliases = {"top_n": "topn", "topn_scaled": "topn_scaled", "top_n_scaled": "topn_scaled"}
        key = aliases.get(key, key)
        for member in cls:
            if member.value == key:
                return member
        names = ", ".join(m.value for m in cls)
        raise ValidationError(f"unknown strategy {value!r}; expected one of {names}")


@dataclass(frozen=True)
class InclusionPlan:
    """Marginal inclusion probabilities and multipliers for one layer.

    Attributes:
        probabilities: pi_i, shape (N,).
        multipliers: omega_i, shape (N,); zero where pi_i is zero.
        strategy: which planner produced the plan.
        sample_size: n, the number of terms each client receives.
        boundary_t: number of leading terms with pi = 1.
        boundary_u: number of fractional terms (Collective only, else 0).
        group_size: C (Collective only, else 1).
        draw_weights: raw sequential-draw weights, set for PriSM variants.
    """

    probabilities: np.ndarray
    multipliers: np.ndarray
    strategy: Strategy
    sample_size: int
    boundary_t: int = 0
    boundary_u: int = 0
    group_size: int = 1
    draw_weights: np.ndarray = field(default=None, repr=False)

    @property
    def n_terms(self):
        return self.probabilities.shape[0]

    @property
    def is_deterministic(self):
        pi = self.probabilities
        return bool(np.all((pi == 0.0) | (pi == 1.0)))

    def check(self, tol=1e-9):
        """Raise ValidationError unless the plan is feasible and monotone."""
        pi = self.probabilities
        if np.any(pi < -tol) or np.any(pi > 1 + tol):
            raise ValidationError("probabilities outside [0, 1]")
        if abs(pi.sum() - self.sample_size) > tol:
            raise ValidationError(f"probabilities sum to {pi.sum()!r}, expected {self.sample_size}")
        if self.draw_weights is None and np.any(np.diff(pi) > tol):
            raise ValidationError("probabilities are not non-increasing")
        return self


def _check_lambda(lam):
    lam = np.asarray(lam, dtype=np.float64).ravel()
    if lam.size == 0:
        raise ValidationError("no singular values")
    if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
        raise ValidationError("singular values must be finite and strictly positive")
    if np.any(np.diff(lam) > 0):
        raise ValidationError("singular values must be sorted non-increasing")
    return lam


def _check_n(n, N):
    if int(n) != n or not 0 < n <= N:
        raise ValidationError(f"sample size n must be an integer in [1, {N}], got {n}")
    return int(n)


def _all_ones(N, strategy, group_size=1):
    ones = np.ones(N)
    return InclusionPlan(ones, ones.copy(), strategy, N, boundary_t=N, group_size=group_size)


def plan_top_n(lam, n):
    """Deterministic selection of the ``n`` leading terms with unit multipliers."""
    lam = _check_lambda(lam)
    n = _check_n(n, lam.size)
    pi = (np.arange(lam.size) < n).astype(np.float64)
    return InclusionPlan(pi, pi.copy(), Strategy.TOP_N, n, boundary_t=n)


def plan_top_n_scaled(lam, n):
    """Top-n selection with the Frobenius-norm-preserving multiplier."""
    base = plan_top_n(lam, n)
    omega = scaled_multipliers(lam, base.probabilities > 0)
    return InclusionPlan(base.probabilities, omega, Strategy.TOP_N_SCALED, base.sample_size,
                         boundary_t=base.boundary_t)


def unbiased_discrepancy(lam, pi):
    """Expected squared Frobenius error ``sum lambda^2 (1/pi - 1)`` of the
    Horvitz-Thompson estimator; ``inf`` if a positive term has pi = 0."""
    lam = np.asarray(lam, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    if lam.shape != pi.shape:
        raise ValidationError("lambda and pi differ in length")
    if np.any((pi <= 0) & (lam > 0)):
        return math.inf
    live = pi > 0
    return float(np.sum(lam[live] ** 2 * (1.0 / pi[live] - 1.0)))


def plan_unbiased(lam, n):
    """Optimal inclusion probabilities for the unbiased (Horvitz-Thompson) strategy.

    Sweeps the number ``t`` of terms pinned at probability one. For every
    feasible ``t`` (``lambda_{t+1} < Lambda_t / (n - t)`` with ``Lambda_t``
    the tail sum) the remaining probabilities are proportional to lambda;
    the candidate with the smallest discrepancy wins, ties going to the
    smaller ``t``. ``n == N`` returns the all-ones plan.
    """
    lam = _check_lambda(lam)
    N = lam.size
    n = _check_n(n, N)
    if n == N:
        return _all_ones(N, Strategy.UNBIASED)
    tail = np.cumsum(lam[::-1])[::-1]
    best, best_t, best_e = None, -1, math.inf
    for t in range(n):
        share = tail[t] / (n - t)
        if not lam[t] < share:
            continue
        pi = np.ones(N)
        pi[t:] = lam[t:] / share
        e = unbiased_discrepancy(lam, pi)
        if e < best_e - _SLACK:
            best, best_t, best_e = pi, t, e
    if best is None:  # pragma: no cover - t = n - 1 is always feasible for n < N
        raise ValidationError("no feasible boundary found")
    return InclusionPlan(best, 1.0 / best, Strategy.UNBIASED, n, boundary_t=best_t)


def collective_discrepancy(lam, pi, omega, group_size):
    """Expected squared Frobenius error of the average of ``C`` i.i.d. shards."""
    lam = np.asarray(lam, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    if not lam.shape == pi.shape == omega.shape:
        raise ValidationError("lambda, pi and omega differ in length")
    C = float(group_size)
    if C < 1:
        raise ValidationError(f"group size must be >= 1, got {group_size}")
    sq = lam * lam
    inner = -2.0 + omega / C + omega * pi * (C - 1.0) / C
    return float(sq.sum() + np.sum(sq * omega * pi * inner))


def collective_multipliers(pi, group_size):
    """``C / (1 + pi (C - 1))`` on the support, 0 elsewhere."""
    pi = np.asarray(pi, dtype=np.float64)
    C = float(group_size)
    return np.where(pi > 0, C / (1.0 + pi * (C - 1.0)), 0.0)


def plan_collective(lam, n, group_size):
    """Optimal probabilities and multipliers for the collective estimator.

    With one client the Top-n plan is optimal. Otherwise the Top-n criterion
    ``-sum_{i<=n} lambda_i^2`` is the incumbent and every boundary pair
    ``(t, u)`` (``t`` terms pinned at one, ``u`` fractional terms) that passes
    the interval checks on ``sqrt(beta)`` competes with it. Replacement needs
    an improvement larger than 1e-12, so ties keep the earlier candidate.
    """
    lam = _check_lambda(lam)
    N = lam.size
    n = _check_n(n, N)
    if int(group_size) != group_size or group_size < 1:
        raise ValidationError(f"group size must be an integer >= 1, got {group_size}")
    C = int(group_size)
    if C == 1:
        return plan_top_n(lam, n)
    if n == N:
        return _all_ones(N, Strategy.COLLECTIVE, C)
    root_c = math.sqrt(C)
    sq = lam * lam
    head_sq = np.concatenate(([0.0], np.cumsum(sq)))
    best_e = -head_sq[n]
    best_t, best_u, best_root_beta = n, 0, None
    for t in range(n):
        e_t = -head_sq[t]
        upper = lam[t - 1] / root_c + _SLACK if t > 0 else math.inf
        lower = lam[t] / root_c
        partial = 0.0
        partial_sq = 0.0
        for u in range(1, N - t + 1):
            partial += lam[t + u - 1]
            partial_sq += sq[t + u - 1]
            root_beta = root_c * partial / ((n - t) * (C - 1) + u)
            if not (lower < root_beta <= upper and root_beta < lam[t + u - 1] * root_c):
                continue
            e = e_t - C / (C - 1.0) * (partial_sq - partial * root_beta / root_c)
            if e < best_e - _SLACK:
                best_e, best_t, best_u, best_root_beta = e, t, u, root_beta
    if best_root_beta is None:
        plan = plan_top_n(lam, n)
        return InclusionPlan(plan.probabilities, plan.multipliers, Strategy.COLLECTIVE, n,
                             boundary_t=n, boundary_u=0, group_size=C)
    pi = np.zeros(N)
    omega = np.zeros(N)
    t, u = best_t, best_u
    pi[:t] = 1.0
    omega[:t] = 1.0
    frac = slice(t, t + u)
    pi[frac] = (lam[frac] * root_c / best_root_beta - 1.0) / (C - 1.0)
    omega[frac] = root_c * best_root_beta / lam[frac]
    return InclusionPlan(pi, omega, Strategy.COLLECTIVE, n, boundary_t=t, boundary_u=u, group_size=C)


def prism_exponent(keep_ratio):
    """Exponent k of the PriSM draw weights ``lambda^k``."""
    if not 0.0 < keep_ratio <= 1.0:
        raise ValidationError(f"keep ratio must lie in (0, 1], got {keep_ratio}")
    return 4.0 if keep_ratio <= 0.2 else 2.5


def plan_prism(lam, keep_ratio):
    """Unnormalized PriSM draw weights ``lambda^k``."""
    lam = _check_lambda(lam)
    return lam ** prism_exponent(keep_ratio)


def _prism_plan(lam, n, keep_ratio, unbiased, rng, trials):
    # Local import: designs depends on this module for InclusionPlan.
    from .designs import estimate_marginals, make_numpy_style_design

    weights = plan_prism(lam, keep_ratio)
    design = make_numpy_style_design(weights, n)
    pi_hat = estimate_marginals(design, trials, rng)
    if unbiased:
        omega = 1.0 / np.clip(pi_hat, PRISM_MIN_PROB, 1.0)
        strategy = Strategy.PRISM_UNBIASED
    else:
        omega = np.ones_like(pi_hat)
        strategy = Strategy.PRISM
    return InclusionPlan(pi_hat, omega, strategy, n, draw_weights=weights)


def plan_for_keep_ratio(d, keep_ratio, strategy, group_size=1, rng=None,
                        prism_trials=PRISM_TRIALS):
    """Plan for ``n = ceil(N r)`` terms with the chosen strategy.

    Args:
        d: a SpectralDecomposition or the singular values themselves.
        keep_ratio: r in (0, 1].
        strategy: Strategy or its string name.
        group_size: C, the number of participating clients sharing ``r``
            (Collective only).
        rng: numpy Generator; required for the PriSM variants, whose
            marginals are estimated from ``prism_trials`` draws.
    """
    lam = d.singular_values if isinstance(d, SpectralDecomposition) else np.asarray(d, float)
    lam = _check_lambda(lam)
    strategy = Strategy.parse(strategy)
    n = keep_count(lam.size, keep_ratio)
    if strategy is Strategy.TOP_N:
        return plan_top_n(lam, n)
    if strategy is Strategy.TOP_N_SCALED:
        return plan_top_n_scaled(lam, n)
    if strategy is Strategy.UNBIASED:
        return plan_unbiased(lam, n)
    if strategy is Strategy.COLLECTIVE:
        return plan_collective(lam, n, group_size)
    if n == lam.size:
        return _all_ones(lam.size, strategy)
    if rng is None:
        raise ValidationError("PriSM strategies need an rng for marginal estimation")
    return _prism_plan(lam, n, keep_ratio, strategy is Strategy.PRISM_UNBIASED, rng, prism_trials)
