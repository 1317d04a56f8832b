"""Fixed-size sampling designs without replacement.

Each design draws exactly ``n`` distinct term indices. CPS, Brewer and
minimum-support designs reproduce given marginal inclusion probabilities;
the NumPy-style design reproduces the iterated multinomial procedure behind
``numpy.random.Generator.choice(replace=False, p=...)``.

Units with probability exactly 0 or 1 are conditioned out before any
calibration or drawing and re-inserted afterwards.

Random streams: every function takes a ``numpy.random.Generator``.
:func:`make_rng` derives independent, reproducible streams from an
experiment seed plus any number of integer keys (round, client, layer...)
through ``numpy.random.SeedSequence``, so parallel and serial runs agree.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import ConvergenceError, NumericalError, ValidationError

_EDGE = 1e-12
_NUMPY_STYLE_CHUNK = 4096


def make_rng(seed, *stream):
    """PCG64 generator for the stream ``(seed, *stream)``."""
    keys = [int(seed)] + [int(s) for s in stream]
    if any(k < 0 for k in keys):
        raise ValidationError("seed and stream keys must be non-negative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(keys)))


class DesignKind(str, Enum):
    CPS = "cps"
    BREWER = "brewer"
    MIN_SUPPORT = "minsupport"
    NUMPY_STYLE = "numpy"
    DETERMINISTIC = "deterministic"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {"minimumsupport": "minsupport", "numpystyle": "numpy"}
        key = aliases.get(key, key)
        for member in cls:
            if member.value == key:
                return member
        names = ", ".join(m.value for m in cls)
        raise ValidationError(f"unknown design {value!r}; expected one of {names}")


@dataclass(frozen=True)
class Design:
    """A calibrated fixed-size design over N units.

    Attributes:
        kind: the sampling scheme.
        n: sample size.
        n_units: N.
        certain: indices always drawn (pi = 1).
        free: indices handled by the random scheme, ascending.
        free_n: how many of ``free`` each draw takes.
        target: target marginals (None for the NumPy-style design).
        params: scheme-specific parameters: working log-weights and draw
            table (CPS), fractional marginals (Brewer), atoms and mixture
            weights (minimum support), raw weights (NumPy-style).
    """

    kind: DesignKind
    n: int
    n_units: int
    certain: np.ndarray
    free: np.ndarray
    free_n: int
    target: np.ndarray
    params: dict

    def sample(self, rng, size=None):
        """Draw one sample (shape (n,)) or ``size`` samples (shape (size, n)).

        Indices in each row are sorted ascending.
        """
        trials = 1 if size is None else int(size)
        if trials < 0:
            raise ValidationError("size must be >= 0")
        free_rows = _draw_free(self, rng, trials)
        out = np.empty((trials, self.n), dtype=np.int64)
        out[:, : self.certain.size] = self.certain
        out[:, self.certain.size:] = self.free[free_rows] if free_rows.size else free_rows
        out.sort(axis=1)
        return out[0] if size is None else out


def _split_units(pi, n):
    pi = np.asarray(pi, dtype=np.float64).ravel()
    if pi.size == 0:
        raise ValidationError("empty probability vector")
    if not np.all(np.isfinite(pi)) or np.any(pi < -_EDGE) or np.any(pi > 1 + _EDGE):
        raise ValidationError("inclusion probabilities must lie in [0, 1]")
    if int(n) != n or not 0 < n <= pi.size:
        raise ValidationError(f"sample size must be an integer in [1, {pi.size}], got {n}")
    if abs(pi.sum() - n) > 1e-6:
        raise ValidationError(f"probabilities sum to {pi.sum():.12g}, expected n = {n}")
    certain = np.flatnonzero(pi >= 1 - _EDGE)
    free = np.flatnonzero((pi > _EDGE) & (pi < 1 - _EDGE))
    free_n = int(n) - certain.size
    if free_n < 0 or free_n > free.size:
        raise ValidationError("probabilities are inconsistent with the sample size")
    if free_n == 0:
        free = free[:0]
    elif free_n == free.size:
        certain = np.sort(np.concatenate([certain, free]))
        free, free_n = free[:0], 0
    return pi, certain, free, free_n


def _log_esp_prefix(log_w, k_max):
    """log e_k(w_1..w_j) for j = 0..N and k = 0..k_max."""
    N = log_w.size
    table = np.full((N + 1, k_max + 1), -np.inf)
    table[0, 0] = 0.0
    for j in range(N):
        table[j + 1] = table[j]
        table[j + 1, 1:] = np.logaddexp(table[j, 1:], log_w[j] + table[j, :-1])
    return table


def cps_inclusion(log_w, n):
    """Exact marginals of the size-``n`` conditional Poisson design.

    Uses elementary symmetric polynomials of the working weights in log
    space: ``pi_i = w_i e_{n-1}(w without i) / e_n(w)``.
    """
    log_w = np.asarray(log_w, dtype=np.float64)
    N = log_w.size
    if n == 0:
        return np.zeros(N)
    if n == N:
        return np.ones(N)
    pre = _log_esp_prefix(log_w, n)
    suf = _log_esp_prefix(log_w[::-1], n)[::-1]
    # leave-one-out: sum_j e_j(w_<i) e_{n-1-j}(w_>i)
    left = pre[:N, :n]
    right = suf[1:, :n][:, ::-1]
    loo = logsumexp(left + right, axis=1)
    return np.exp(log_w + loo - pre[N, n])


def cps_joint(log_w, n):
    """Joint inclusion probabilities pi_ij of the conditional Poisson design."""
    log_w = np.asarray(log_w, dtype=np.float64)
    N = log_w.size
    pi = cps_inclusion(log_w, n)
    joint = np.diag(pi)
    for i in range(N):
        rest = np.delete(np.arange(N), i)
        cond = cps_inclusion(log_w[rest], n - 1)
        joint[i, rest] = pi[i] * cond
    return 0.5 * (joint + joint.T)


def cps_calibrate(pi, n, tol=1e-10, max_iter=200):
    """Working log-weights of a CPS design with the given marginals.

    Newton iteration on the log-weights; the Jacobian of the marginals with
    respect to log-weights is the indicator covariance ``pi_ij - pi_i pi_j``.
    A step that increases the residual is halved (up to 30 times).

    Returns:
        (log_weights, free_indices, free_n): weights for the fractional units
        only. Units with pi in {0, 1} are excluded.

    Raises:
        ConvergenceError: residual still above ``max(tol, 1e-6)`` after
            ``max_iter`` iterations; carries the residual.
    """
    pi, _, free, free_n = _split_units(pi, n)
    target = pi[free]
    if free.size == 0:
        return np.zeros(0), free, free_n
    theta = np.log(target) - np.log1p(-target)
    theta -= theta.mean()
    current = cps_inclusion(theta, free_n)
    resid = np.abs(current - target).max()
    it = 0
    while resid > tol and it < max_iter:
        it += 1
        joint = cps_joint(theta, free_n)
        jac = joint - np.outer(current, current)
        step = np.linalg.lstsq(jac, target - current, rcond=None)[0]
        scale = 1.0
        for _ in range(30):
            trial = theta + scale * step
            trial -= trial.mean()
            trial_pi = cps_inclusion(trial, free_n)
            trial_resid = np.abs(trial_pi - target).max()
            if np.isfinite(trial_resid) and trial_resid < resid:
                break
            scale *= 0.5
        else:
            break
        theta, current, resid = trial, trial_pi, trial_resid
    if not resid <= max(tol, 1e-6):
        raise ConvergenceError(
            f"CPS calibration stalled after {it} iterations, max marginal residual {resid:.3e}",
            residual=float(resid), iterations=it)
    return theta, free, free_n


def _cps_table(log_w, n):
    """q[k, j]: chance of taking unit k when j units remain to be drawn from k..N-1."""
    N = log_w.size
    suf = _log_esp_prefix(log_w[::-1], n)[::-1]
    q = np.zeros((N, n + 1))
    with np.errstate(invalid="ignore"):
        q[:, 1:] = np.exp(log_w[:, None] + suf[1:, :-1] - suf[:-1, 1:])
    q[~np.isfinite(q)] = 1.0
    return np.clip(q, 0.0, 1.0)


def min_support_decomposition(pi, n, tol=1e-9):
    """Split ``pi`` into a mixture of at most N fixed-size samples.

    At each step the sample takes every unit at one plus the ``n`` minus
    that many largest fractional units (ties by index), with the largest
    weight that keeps the residual in [0, 1]; each step pins at least one
    unit to 0 or 1.

    Returns:
        (atoms, weights): boolean array (K, N) and mixture weights summing to 1.
    """
    pi, _, _, _ = _split_units(pi, n)
    N = pi.size
    n = int(n)
    resid = np.clip(pi.copy(), 0.0, 1.0)
    atoms, weights = [], []
    mass = 1.0
    for _ in range(N + 1):
        resid[resid < _EDGE] = 0.0
        resid[resid > 1 - _EDGE] = 1.0
        ones = np.flatnonzero(resid == 1.0)
        frac = np.flatnonzero((resid > 0.0) & (resid < 1.0))
        need = n - ones.size
        atom = np.zeros(N, dtype=bool)
        atom[ones] = True
        if frac.size == 0:
            if need != 0:
                raise NumericalError(f"minimum-support split left {need} units unassigned")
            atoms.append(atom)
            weights.append(mass)
            break
        order = frac[np.argsort(-resid[frac], kind="stable")]
        chosen, rest = order[:need], order[need:]
        atom[chosen] = True
        drop = resid[chosen].min() if chosen.size else np.inf
        lift = (1.0 - resid[rest]).min() if rest.size else np.inf
        step = min(drop, lift)
        if step >= 1.0 - _EDGE:
            atoms.append(atom)
            weights.append(mass)
            break
        atoms.append(atom)
        weights.append(mass * step)
        mass *= 1.0 - step
        resid = (resid - step * atom) / (1.0 - step)
        # pin the binding units exactly, then restore sum(resid) == n
        if drop <= lift:
            resid[chosen[np.argmin(resid[chosen])]] = 0.0
        if lift <= drop:
            resid[rest[np.argmax(resid[rest])]] = 1.0
        resid = np.clip(resid, 0.0, 1.0)
        live = (resid > _EDGE) & (resid < 1 - _EDGE)
        if live.any():
            slack = n - resid[~live].round().sum()
            resid[live] *= slack / resid[live].sum()
    else:  # pragma: no cover
        raise NumericalError("minimum-support split did not terminate")
    atoms = np.array(atoms)
    weights = np.array(weights)
    recomposed = weights @ atoms
    err = np.abs(recomposed - pi).max()
    if err > tol or abs(weights.sum() - 1.0) > tol:
        raise NumericalError(f"minimum-support recomposition residual {err:.3e}")
    return atoms, weights


def make_design(kind, pi, n):
    """Build a design realizing marginals ``pi`` with sample size ``n``.

    A deterministic ``pi`` (all entries 0 or 1) always yields the
    DETERMINISTIC design, whatever ``kind`` was asked for.
    """
    kind = DesignKind.parse(kind)
    if kind is DesignKind.NUMPY_STYLE:
        raise ValidationError("NumPy-style designs take draw weights; use make_numpy_style_design")
    pi, certain, free, free_n = _split_units(pi, n)
    if free_n == 0 and kind is not DesignKind.DETERMINISTIC:
        kind = DesignKind.DETERMINISTIC
    if kind is DesignKind.DETERMINISTIC:
        if free_n != 0:
            raise ValidationError("deterministic design requires pi in {0, 1}")
        params = {}
    elif kind is DesignKind.CPS:
        log_w, _, _ = cps_calibrate(pi, n)
        params = {"log_weights": log_w, "table": _cps_table(log_w, free_n)}
    elif kind is DesignKind.BREWER:
        params = {"pi": pi[free].copy()}
    else:
        atoms, weights = min_support_decomposition(pi, n)
        cum = np.cumsum(weights)
        params = {"atoms": atoms, "weights": weights, "cum": cum / cum[-1]}
    return Design(kind, int(n), pi.size, certain, free, free_n, pi.copy(), params)


def make_numpy_style_design(weights, n):
    """Design drawing like ``Generator.choice(N, n, replace=False, p=w/sum(w))``."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValidationError("draw weights must be finite and non-negative")
    if int(n) != n or n < 1:
        raise ValidationError(f"sample size must be a positive integer, got {n}")
    positive = np.flatnonzero(w > 0)
    if positive.size < n:
        raise ValidationError(f"need at least {n} positive weights, got {positive.size}")
    return Design(DesignKind.NUMPY_STYLE, int(n), w.size, np.zeros(0, dtype=np.int64),
                  np.arange(w.size), int(n), None, {"weights": w})


def _draw_free(design, rng, trials):
    k = design.free_n
    if k == 0 or trials == 0:
        return np.zeros((trials, 0), dtype=np.int64)
    p = design.params
    if design.kind is DesignKind.CPS:
        u = rng.random((trials, design.free.size))
        return kernels.cps_draws(p["table"], k, u)
    if design.kind is DesignKind.BREWER:
        u = rng.random((trials, k))
        return kernels.brewer_draws(p["pi"], k, u)
    if design.kind is DesignKind.MIN_SUPPORT:
        u = rng.random(trials)
        which = np.minimum(np.searchsorted(p["cum"], u, side="right"), len(p["cum"]) - 1)
        atoms = p["atoms"][which][:, design.free]
        return np.nonzero(atoms)[1].reshape(trials, k)
    if design.kind is DesignKind.NUMPY_STYLE:
        parts = []
        for start in range(0, trials, _NUMPY_STYLE_CHUNK):
            m = min(_NUMPY_STYLE_CHUNK, trials - start)
            u = rng.random((m, k, k))
            parts.append(kernels.numpy_style_draws(p["weights"], k, u))
        return np.concatenate(parts)
    raise ValidationError(f"cannot draw from {design.kind}")  # pragma: no cover


def cps_sample(design, rng, size=None):
    if design.kind not in (DesignKind.CPS, DesignKind.DETERMINISTIC):
        raise ValidationError(f"expected a CPS design, got {design.kind.value}")
    return design.sample(rng, size)


def brewer_sample(pi, n, rng, size=None):
    return make_design(DesignKind.BREWER, pi, n).sample(rng, size)


def min_support_sample(pi, n, rng, size=None):
    return make_design(DesignKind.MIN_SUPPORT, pi, n).sample(rng, size)


def numpy_style_sample(weights, n, rng, size=None):
    return make_numpy_style_design(weights, n).sample(rng, size)


def indicator_matrix(samples, n_units):
    """(trials, N) 0/1 matrix from (trials, n) index rows."""
    samples = np.atleast_2d(samples)
    z = np.zeros((samples.shape[0], n_units), dtype=np.int8)
    np.put_along_axis(z, samples, 1, axis=1)
    return z


def estimate_marginals(design, trials, rng, chunk=65536):
    """Empirical inclusion frequencies over ``trials`` draws."""
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    counts = np.zeros(design.n_units, dtype=np.int64)
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        draws = design.sample(rng, m)
        counts += np.bincount(draws.ravel(), minlength=design.n_units)
        done += m
    return counts / trials
