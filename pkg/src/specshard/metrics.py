"""Diagnostics: marginal entropy of plans and Monte-Carlo discrepancy checks."""

import math
from dataclasses import dataclass

import numpy as np

from .designs import indicator_matrix
from .errors import ValidationError
from .spectra import SpectralDecomposition


@dataclass(frozen=True)
class AnmeReport:
    """Normalized marginal entropy per layer and the network average.

    ``per_layer[i]`` is None when layer i is undefined (n = 0 or n = N, where
    the uniform reference entropy vanishes); such layers are listed in
    ``undefined`` and left out of ``network``.
    """

    per_layer: list
    network: float
    undefined: list


def _bernoulli_entropy(p):
    p = np.asarray(p, dtype=np.float64)
    inner = (p > 0) & (p < 1)
    q = np.where(inner, p, 0.5)
    h = -q * np.log(q) - (1 - q) * np.log1p(-q)
    return np.where(inner, h, 0.0)


def normalized_marginal_entropy(pi, n):
    """Mean Bernoulli entropy of ``pi`` divided by that of uniform ``n/N``.

    Returns None when ``n`` is 0 or N. Uniform marginals maximize the mean
    entropy at fixed sum, so the ratio is capped at 1 against round-off.
    """
    pi = np.asarray(pi, dtype=np.float64)
    N = pi.size
    if n <= 0 or n >= N:
        return None
    reference = float(_bernoulli_entropy(n / N))
    return min(1.0, float(_bernoulli_entropy(pi).mean() / reference))


def anme(pis, ns):
    """Average normalized marginal entropy over layers.

    Args:
        pis: one probability vector per layer.
        ns: matching sample sizes.
    """
    if len(pis) != len(ns):
        raise ValidationError("need one sample size per layer")
    per_layer = [normalized_marginal_entropy(p, n) for p, n in zip(pis, ns)]
    undefined = [i for i, v in enumerate(per_layer) if v is None]
    defined = [v for v in per_layer if v is not None]
    network = float(np.mean(defined)) if defined else math.nan
    return AnmeReport(per_layer, network, undefined)


def _lam(d):
    if isinstance(d, SpectralDecomposition):
        return d.singular_values
    return np.asarray(d, dtype=np.float64)


def _mean_se(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return float(values.mean()), math.nan
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def frobenius_errors(lam, coefficients):
    """Per-trial ``||W - W_hat||_F^2`` for estimators ``sum_i c_i lambda_i u_i v_i^T``.

    Orthonormality of the singular vectors reduces the matrix norm to
    ``sum_i lambda_i^2 (c_i - 1)^2``.
    """
    lam = np.asarray(lam, dtype=np.float64)
    return ((np.asarray(coefficients) - 1.0) ** 2) @ (lam * lam)


def mc_discrepancy_unbiased(d, plan, design, trials, rng):
    """Monte-Carlo mean and standard error of ``||W - W_hat||_F^2`` for one shard."""
    lam = _lam(d)
    draws = design.sample(rng, trials)
    z = indicator_matrix(draws, lam.size)
    return _mean_se(frobenius_errors(lam, z * plan.multipliers))


def mc_discrepancy_collective(d, plan, design, group_size, trials, rng):
    """Monte-Carlo mean and standard error of ``||W - mean_c W_hat^(c)||_F^2``.

    Each trial averages ``group_size`` independent shards.
    """
    lam = _lam(d)
    C = int(group_size)
    draws = design.sample(rng, trials * C)
    z = indicator_matrix(draws, lam.size).reshape(trials, C, lam.size).sum(axis=1)
    return _mean_se(frobenius_errors(lam, z * plan.multipliers / C))
