"""Singular value decomposition, shard construction and matrix I/O."""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NumericalError, RankZeroError, ValidationError

DEFAULT_TOL = 1e-12
_JACOBI_TOL = 1e-15
_MAX_SWEEPS = 80


def as_matrix(w, name="matrix"):
    """Return ``w`` as a finite 2-D float64 array or raise ValidationError."""
    arr = np.asarray(w, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValidationError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def keep_count(n_terms, keep_ratio):
    """Number of terms ``ceil(N * r)`` kept for keep ratio ``r``.

    A relative slack of 1e-9 absorbs representation error, so that e.g.
    ``10 * 0.3`` yields 3 and not 4.
    """
    if not 0.0 < keep_ratio <= 1.0:
        raise ValidationError(f"keep ratio must lie in (0, 1], got {keep_ratio}")
    return max(1, min(n_terms, math.ceil(n_terms * keep_ratio * (1.0 - 1e-9))))


@dataclass(frozen=True)
class SpectralDecomposition:
    """Ordered singular triplets of one matrix.

    Attributes:
        singular_values: shape (N,), non-increasing, strictly positive.
        left: shape (c_out, N), orthonormal columns.
        right: shape (c_in, N), orthonormal columns.
    """

    singular_values: np.ndarray
    left: np.ndarray
    right: np.ndarray

    @property
    def n_terms(self):
        return self.singular_values.shape[0]

    @property
    def shape(self):
        return (self.left.shape[0], self.right.shape[0])

    def reconstruct(self):
        return (self.left * self.singular_values) @ self.right.T

    def absorbed_factors(self):
        """Left/right factors with ``sqrt(lambda)`` folded into each column."""
        root = np.sqrt(self.singular_values)
        return self.left * root, self.right * root


def _sign_fix(u, v):
    for j in range(u.shape[1]):
        col = u[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            u[:, j] = -col
            v[:, j] = -v[:, j]
    return u, v


def decompose(w, tol=DEFAULT_TOL):
    """One-sided Jacobi SVD keeping terms with ``lambda_i > tol * lambda_1``.

    Ties among singular values keep their column order. The first entry of
    each left vector above 1e-12 in magnitude is made non-negative.

    Raises:
        ValidationError: non-finite input or negative ``tol``.
        RankZeroError: the matrix is zero, so no term survives.
        NumericalError: Jacobi sweeps failed to converge.
    """
    a = as_matrix(w, "W")
    if tol < 0 or not math.isfinite(tol):
        raise ValidationError(f"tol must be finite and >= 0, got {tol}")
    transposed = a.shape[0] < a.shape[1]
    if transposed:
        a = a.T
    scale = np.abs(a).max()
    if scale == 0.0:
        raise RankZeroError("rank zero: the matrix has no non-zero singular value")
    av, v, converged = kernels.jacobi_svd(np.ascontiguousarray(a / scale), _JACOBI_TOL, _MAX_SWEEPS)
    if not converged:
        raise NumericalError(f"Jacobi SVD did not converge in {_MAX_SWEEPS} sweeps")
    sigma = np.sqrt(np.einsum("ij,ij->j", av, av))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    keep = sigma > tol * sigma[0]
    if sigma[0] == 0.0 or not keep.any():
        raise RankZeroError("rank zero: no singular value survived truncation")
    order = order[keep]
    sigma = sigma[keep]
    u = av[:, order] / sigma
    v = v[:, order]
    if transposed:
        u, v = v, u
    u, v = _sign_fix(np.ascontiguousarray(u), np.ascontiguousarray(v))
    return SpectralDecomposition(sigma * scale, u, v)


@dataclass(frozen=True)
class Shard:
    """A client's sub-model for one layer.

    ``left`` and ``right`` hold the selected sqrt(lambda)-scaled singular
    vectors as columns, in index order; ``multipliers`` stay frozen while the
    client trains.
    """

    indices: np.ndarray
    left: np.ndarray
    right: np.ndarray
    multipliers: np.ndarray
    keep_ratio: float

    @property
    def size(self):
        return self.indices.shape[0]


def build_shard(d, indices, multipliers, keep_ratio):
    """Restrict a decomposition to ``indices`` with absorbed singular values.

    Args:
        d: the server-side decomposition.
        indices: selected term indices (0-based); sorted on output.
        multipliers: length-N auxiliary multipliers; only selected entries
            are used and those must be finite and positive.
        keep_ratio: client keep ratio; ``len(indices)`` must equal
            ``keep_count(N, keep_ratio)``.
    """
    idx = np.asarray(indices, dtype=np.int64).ravel()
    omega = np.asarray(multipliers, dtype=np.float64).ravel()
    N = d.n_terms
    if omega.shape[0] != N:
        raise ValidationError(f"expected {N} multipliers, got {omega.shape[0]}")
    if idx.size and (idx.min() < 0 or idx.max() >= N):
        raise ValidationError(f"indices out of range [0, {N})")
    idx = np.sort(idx)
    if np.any(np.diff(idx) == 0):
        raise ValidationError("indices must be distinct")
    n = keep_count(N, keep_ratio)
    if idx.size != n:
        raise ValidationError(f"shard needs ceil(N*r) = {n} indices, got {idx.size}")
    sel = omega[idx]
    if not np.all(np.isfinite(sel)) or np.any(sel <= 0):
        raise ValidationError("multipliers of selected terms must be finite and > 0")
    root = np.sqrt(d.singular_values[idx])
    return Shard(
        indices=idx,
        left=d.left[:, idx] * root,
        right=d.right[:, idx] * root,
        multipliers=sel.copy(),
        keep_ratio=float(keep_ratio),
    )


def effective_weight(shard):
    """``U' diag(omega) V'^T`` for a shard."""
    return (shard.left * shard.multipliers) @ shard.right.T


def scaled_multipliers(singular_values, selected):
    """Frobenius-norm-preserving multipliers for a fixed selection.

    Every selected term gets ``sqrt(sum(lambda^2) / sum(z * lambda^2))``;
    unselected terms get 0.
    """
    lam = np.asarray(singular_values, dtype=np.float64)
    z = np.asarray(selected).astype(bool)
    if z.shape != lam.shape:
        raise ValidationError("selection and singular values differ in length")
    if not z.any():
        raise ValidationError("empty selection")
    sq = lam * lam
    ratio = math.sqrt(sq.sum() / sq[z].sum())
    return np.where(z, ratio, 0.0)


def load_matrix(path):
    """Read the text matrix format: ``rows cols`` then row-major values."""
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise ValidationError(f"{path}: missing '<rows> <cols>' header")
    try:
        rows, cols = int(tokens[0]), int(tokens[1])
        values = np.array([float(x) for x in tokens[2:]], dtype=np.float64)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if rows <= 0 or cols <= 0:
        raise ValidationError(f"{path}: dimensions must be positive")
    if values.size != rows * cols:
        raise ValidationError(f"{path}: expected {rows * cols} values, found {values.size}")
    return as_matrix(values.reshape(rows, cols))


def save_matrix(path, w):
    a = as_matrix(w)
    with open(path, "w") as fh:
        fh.write(f"{a.shape[0]} {a.shape[1]}\n")
        for row in a:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")
