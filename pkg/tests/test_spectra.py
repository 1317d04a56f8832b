import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specshard import kernels
from specshard.errors import RankZeroError, ValidationError
from specshard.plans import plan_unbiased
from specshard.spectra import (
    build_shard,
    decompose,
    effective_weight,
    keep_count,
    load_matrix,
    save_matrix,
    scaled_multipliers,
)


def _random(rng, rows, cols):
    return rng.standard_normal((rows, cols))


def test_identity_decomposition():
    d = decompose(np.eye(3), tol=0.0)
    np.testing.assert_allclose(d.singular_values, [1, 1, 1], atol=1e-14)
    np.testing.assert_allclose(d.left @ d.right.T, np.eye(3), atol=1e-14)


def test_diagonal_singular_values():
    d = decompose(np.diag([4.0, 2.0, 1.0, 1.0]))
    np.testing.assert_allclose(d.singular_values, [4, 2, 1, 1], atol=1e-14)


def test_diagonal_negative_entries_are_sorted_by_magnitude():
    d = decompose(np.diag([1.0, -3.0, 2.0]))
    np.testing.assert_allclose(d.singular_values, [3, 2, 1], atol=1e-14)
    np.testing.assert_allclose(d.reconstruct(), np.diag([1.0, -3.0, 2.0]), atol=1e-14)


def test_random_reconstruction():
    w = _random(np.random.default_rng(0), 8, 6)
    d = decompose(w)
    assert np.linalg.norm(w - d.reconstruct()) / np.linalg.norm(w) < 1e-10


def test_matches_lapack_singular_values():
    rng = np.random.default_rng(1)
    for shape in [(5, 5), (9, 4), (4, 9), (32, 20)]:
        w = _random(rng, *shape)
        np.testing.assert_allclose(decompose(w).singular_values,
                                   np.linalg.svd(w, compute_uv=False), rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(rows=st.integers(1, 12), cols=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
def test_reconstruction_and_orthogonality(rows, cols, seed):
    w = _random(np.random.default_rng(seed), rows, cols)
    d = decompose(w)
    assert np.linalg.norm(w - d.reconstruct()) <= 1e-8 * np.linalg.norm(w)
    k = d.n_terms
    np.testing.assert_allclose(d.left.T @ d.left, np.eye(k), atol=1e-8)
    np.testing.assert_allclose(d.right.T @ d.right, np.eye(k), atol=1e-8)
    assert np.all(np.diff(d.singular_values) <= 0)
    assert np.all(d.singular_values > 0)


def test_rank_deficient_is_truncated():
    rng = np.random.default_rng(2)
    w = _random(rng, 7, 2) @ _random(rng, 2, 5)
    d = decompose(w)
    assert d.n_terms == 2
    np.testing.assert_allclose(d.reconstruct(), w, atol=1e-12)


def test_sign_convention_is_deterministic():
    w = _random(np.random.default_rng(3), 6, 4)
    a, b = decompose(w), decompose(-w)
    for d in (a, b):
        for col in d.left.T:
            first = col[np.flatnonzero(np.abs(col) > 1e-12)[0]]
            assert first >= 0
    np.testing.assert_allclose(a.singular_values, b.singular_values)


def test_zero_matrix_is_rank_zero():
    with pytest.raises(RankZeroError, match="rank zero"):
        decompose(np.zeros((3, 3)))


def test_non_finite_rejected():
    w = np.eye(3)
    w[1, 2] = np.nan
    with pytest.raises(ValidationError):
        decompose(w)
    with pytest.raises(ValidationError):
        decompose(np.eye(2), tol=-1.0)


def test_keep_count():
    assert keep_count(10, 0.3) == 3
    assert keep_count(10, 0.2) == 2
    assert keep_count(7, 0.2) == 2
    assert keep_count(5, 1.0) == 5
    assert keep_count(100, 0.001) == 1
    with pytest.raises(ValidationError):
        keep_count(4, 0.0)


def test_full_shard_reproduces_matrix():
    w = _random(np.random.default_rng(4), 5, 7)
    d = decompose(w)
    shard = build_shard(d, np.arange(d.n_terms), np.ones(d.n_terms), 1.0)
    np.testing.assert_allclose(effective_weight(shard), w, atol=1e-10)


def test_truncated_diagonal_shard():
    d = decompose(np.diag([4.0, 2.0, 1.0, 1.0]))
    shard = build_shard(d, [0, 1], np.ones(4), 0.5)
    np.testing.assert_allclose(effective_weight(shard), np.diag([4.0, 2.0, 0, 0]), atol=1e-14)


def test_shard_with_unbiased_multipliers():
    d = decompose(np.diag([4.0, 2.0, 1.0, 1.0]))
    plan = plan_unbiased(d.singular_values, 2)
    shard = build_shard(d, [1, 0], plan.multipliers, 0.5)
    np.testing.assert_array_equal(shard.indices, [0, 1])
    np.testing.assert_allclose(effective_weight(shard), np.diag([4.0, 4.0, 0, 0]), atol=1e-14)


def test_single_term_shard():
    d = decompose(np.diag([4.0, 2.0]))
    shard = build_shard(d, [0], np.ones(2), 0.5)
    np.testing.assert_allclose(effective_weight(shard), np.diag([4.0, 0.0]), atol=1e-14)


def test_effective_weight_matches_direct_sum():
    d = decompose(_random(np.random.default_rng(5), 6, 5))
    omega = np.zeros(d.n_terms)
    omega[[0, 2]] = [2.0, 0.5]
    shard = build_shard(d, [0, 2], omega, 2 / d.n_terms)
    direct = sum(omega[i] * d.singular_values[i] * np.outer(d.left[:, i], d.right[:, i])
                 for i in (0, 2))
    np.testing.assert_allclose(effective_weight(shard), direct, atol=1e-12)


@pytest.mark.parametrize("indices, omega, ratio", [
    ([0, 4], np.ones(4), 0.5),           # out of range
    ([0, 1, 2], np.ones(4), 0.5),        # wrong count
    ([0, 0], np.ones(4), 0.5),           # duplicate
    ([0, 1], np.array([1.0, 0, 1, 1]), 0.5),  # zero multiplier selected
    ([0, 1], np.zeros(4), 0.5),
    ([0, 1], np.ones(3), 0.5),           # wrong multiplier length
])
def test_build_shard_rejects(indices, omega, ratio):
    d = decompose(np.diag([4.0, 2.0, 1.0, 1.0]))
    with pytest.raises(ValidationError):
        build_shard(d, indices, omega, ratio)


def test_scaled_multipliers_examples():
    lam = np.array([4.0, 2.0, 1.0, 1.0])
    np.testing.assert_allclose(scaled_multipliers(lam, np.ones(4)), np.ones(4))
    got = scaled_multipliers(lam, [1, 1, 0, 0])
    np.testing.assert_allclose(got, [np.sqrt(22 / 20)] * 2 + [0, 0])
    assert got[0] == pytest.approx(1.048808, abs=1e-6)
    with pytest.raises(ValidationError):
        scaled_multipliers(lam, np.zeros(4))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), data=st.data())
def test_scaled_multipliers_preserve_frobenius_norm(seed, data):
    rng = np.random.default_rng(seed)
    w = _random(rng, 6, 5)
    d = decompose(w)
    z = np.array(data.draw(st.lists(st.booleans(), min_size=d.n_terms, max_size=d.n_terms)))
    if not z.any():
        z[0] = True
    omega = scaled_multipliers(d.singular_values, z)
    w_hat = (d.left * (d.singular_values * omega)) @ d.right.T
    assert abs(np.linalg.norm(w_hat) - np.linalg.norm(w)) < 1e-10


def test_operator_bound_chain():
    """||Wx - W_hat x||^2 <= ||W - W_hat||_F^2 ||x||^2 on random triples."""
    rng = np.random.default_rng(6)
    for _ in range(1000):
        rows, cols = rng.integers(2, 8, size=2)
        w = _random(rng, rows, cols)
        d = decompose(w)
        n = int(rng.integers(1, d.n_terms + 1))
        idx = rng.choice(d.n_terms, n, replace=False)
        omega = rng.uniform(0.5, 3.0, d.n_terms)
        w_hat = effective_weight(build_shard(d, idx, omega, n / d.n_terms))
        x = rng.standard_normal(cols)
        lhs = np.sum((w @ x - w_hat @ x) ** 2)
        assert lhs <= np.sum((w - w_hat) ** 2) * (x @ x) + 1e-9


def test_matrix_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    w = _random(rng, 3, 4) * 10.0 ** rng.integers(-300, 300, size=(3, 4))
    path = tmp_path / "w.txt"
    save_matrix(path, w)
    np.testing.assert_array_equal(load_matrix(path), w)
    assert path.read_text().splitlines()[0] == "3 4"


@pytest.mark.parametrize("text", ["", "2 2\n1 2 3", "2 x\n1 2 3 4", "0 2\n", "1 2\n1 nan"])
def test_load_matrix_rejects(tmp_path, text):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(ValidationError):
        load_matrix(path)


def test_jacobi_backends_agree():
    from specshard.kernels import _numpy
    rng = np.random.default_rng(8)
    for shape in [(6, 6), (10, 3), (9, 7)]:
        a = _random(rng, *shape)
        av_np, v_np, ok_np = _numpy.jacobi_svd(a.copy(), 1e-15, 80)
        av_k, v_k, ok_k = kernels.jacobi_svd(a.copy(), 1e-15, 80)
        assert ok_np and ok_k
        s_np = np.sort(np.linalg.norm(av_np, axis=0))
        s_k = np.sort(np.linalg.norm(av_k, axis=0))
        np.testing.assert_allclose(s_np, s_k, rtol=1e-12)
        np.testing.assert_allclose(av_np @ v_np.T, a, atol=1e-12)
