import math

import numpy as np
import pytest

import oracles
from specshard.designs import DesignKind, make_design, make_rng
from specshard.errors import ValidationError
from specshard.metrics import (
    anme,
    frobenius_errors,
    mc_discrepancy_collective,
    mc_discrepancy_unbiased,
    normalized_marginal_entropy,
)
from specshard.plans import (
    collective_discrepancy,
    plan_collective,
    plan_top_n,
    plan_unbiased,
    unbiased_discrepancy,
)
from specshard.spectra import build_shard, decompose, effective_weight

LAM = np.array([4.0, 2.0, 1.0, 1.0])


def test_anme_endpoints():
    assert normalized_marginal_entropy(plan_top_n(LAM, 2).probabilities, 2) == 0.0
    assert normalized_marginal_entropy(np.full(7, 3 / 7), 3) == 1.0
    value = normalized_marginal_entropy([1, 0.5, 0.25, 0.25], 2)
    expected = oracles.bernoulli_entropy([1, 0.5, 0.25, 0.25]) / 4 / math.log(2)
    assert value == pytest.approx(expected, abs=1e-15)
    assert value == pytest.approx(0.65561, abs=1e-4)


def test_anme_report_excludes_undefined_layers():
    report = anme([np.ones(3), [1, 0.5, 0.25, 0.25], np.full(4, 0.5)], [3, 2, 2])
    assert report.per_layer[0] is None
    assert report.undefined == [0]
    assert report.network == pytest.approx((report.per_layer[1] + 1.0) / 2)
    assert math.isnan(anme([np.ones(2)], [2]).network)
    with pytest.raises(ValidationError):
        anme([np.ones(2)], [])


def test_anme_bounds_random_search():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        N = int(rng.integers(2, 17))
        n = int(rng.integers(1, N))
        pi = oracles.project_capped_simplex(rng.random(N) * rng.uniform(0.1, 3.0) * n, n)
        value = normalized_marginal_entropy(pi, n)
        assert 0.0 <= value <= 1.0


def test_frobenius_errors_match_matrix_norm():
    rng = np.random.default_rng(1)
    for _ in range(50):
        w = rng.standard_normal((6, 5))
        d = decompose(w)
        N = d.n_terms
        n = int(rng.integers(1, N + 1))
        idx = rng.choice(N, n, replace=False)
        omega = rng.uniform(0.2, 4.0, N)
        w_hat = effective_weight(build_shard(d, idx, omega, n / N))
        z = np.zeros(N)
        z[idx] = 1
        assert frobenius_errors(d.singular_values, z * omega) == pytest.approx(
            np.sum((w - w_hat) ** 2), rel=1e-10)


def test_all_ones_plan_has_zero_error_every_trial():
    plan = plan_unbiased(LAM, 4)
    design = make_design("cps", plan.probabilities, 4)
    mean, se = mc_discrepancy_unbiased(LAM, plan, design, 100, make_rng(0))
    assert mean == 0.0 and se == 0.0


def test_top_n_single_client_error_is_tail_sum():
    plan = plan_collective(LAM, 2, 1)
    design = make_design("deterministic", plan.probabilities, 2)
    mean, se = mc_discrepancy_collective(LAM, plan, design, 1, 50, make_rng(1))
    assert mean == 2.0 and se == 0.0


@pytest.mark.parametrize("kind", [DesignKind.CPS, DesignKind.BREWER, DesignKind.MIN_SUPPORT])
def test_unbiased_mc_agrees_with_closed_form(kind):
    plan = plan_unbiased(LAM, 2)
    design = make_design(kind, plan.probabilities, 2)
    mean, se = mc_discrepancy_unbiased(decompose(np.diag(LAM)), plan, design, 100_000, make_rng(2))
    assert abs(mean - 10.0) <= 3 * se


def test_collective_mc_agrees_with_closed_form():
    plan = plan_collective(np.ones(3), 2, 2)
    design = make_design("cps", plan.probabilities, 2)
    mean, se = mc_discrepancy_collective(np.ones(3), plan, design, 2, 100_000, make_rng(3))
    assert abs(mean - 0.6) <= 3 * se


def test_design_independence_of_unbiased_discrepancy():
    rng = np.random.default_rng(4)
    lam = np.sort(rng.exponential(size=12))[::-1]
    plan = plan_unbiased(lam, 4)
    results = [mc_discrepancy_unbiased(lam, plan, make_design(k, plan.probabilities, 4),
                                       100_000, make_rng(5, i))
               for i, k in enumerate(["cps", "brewer", "minsupport"])]
    for (m1, s1), (m2, s2) in [(results[0], results[1]), (results[0], results[2]),
                               (results[1], results[2])]:
        assert abs(m1 - m2) <= 3 * math.hypot(s1, s2)


def test_collective_not_worse_than_unbiased_by_simulation():
    rng = np.random.default_rng(6)
    for k in range(5):
        lam = np.sort(rng.exponential(size=8))[::-1]
        n, C = int(rng.integers(1, 8)), int(rng.integers(2, 6))
        pu, pc = plan_unbiased(lam, n), plan_collective(lam, n, C)
        mu, su = mc_discrepancy_unbiased(lam, pu, make_design("cps", pu.probabilities, n),
                                         20_000, make_rng(7, k))
        mc, sc = mc_discrepancy_collective(lam, pc, make_design("cps", pc.probabilities, n),
                                           C, 20_000, make_rng(8, k))
        assert mc <= mu + 3 * math.hypot(su, sc)


def test_mc_agreement_rate_over_instances():
    """|mean - closed form| <= 3 SE in at least 99 of 100 seeded instances."""
    rng = np.random.default_rng(9)
    hits = 0
    for k in range(100):
        N = int(rng.integers(3, 10))
        lam = np.sort(rng.exponential(size=N))[::-1]
        n = int(rng.integers(1, N))
        if k % 2:
            plan = plan_unbiased(lam, n)
            closed = unbiased_discrepancy(lam, plan.probabilities)
            mean, se = mc_discrepancy_unbiased(lam, plan, make_design("cps", plan.probabilities, n),
                                               4000, make_rng(10, k))
        else:
            C = int(rng.integers(2, 5))
            plan = plan_collective(lam, n, C)
            closed = collective_discrepancy(lam, plan.probabilities, plan.multipliers, C)
            mean, se = mc_discrepancy_collective(
                lam, plan, make_design("cps", plan.probabilities, n), C, 4000, make_rng(10, k))
        # deterministic plans: SE is pure round-off, so allow a tiny absolute floor
        hits += abs(mean - closed) <= 3 * se + 1e-12 * max(1.0, closed)
    assert hits >= 99
