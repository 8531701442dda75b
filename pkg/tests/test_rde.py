import math

import numpy as np
import pytest

from gwharmonic.errors import BadInit
from gwharmonic.rde import (BetaPool, block_edges, evolve_pool, init_pool, make_plan, mean_estimate,
                            pool_expectations, pool_histogram, solve_pool, synthesize, weighted_ratio)


def test_init_constant():
    p = init_pool(10_000, 1.0, "constant", 0.5)
    assert np.all(p.values == 0.5) and len(p) == 10_000


def test_init_below_bound():
    with pytest.raises(BadInit):
        init_pool(10_000, 0.5, "constant", 0.2)


def test_init_small_pool():
    with pytest.raises(BadInit):
        init_pool(999, 1.0)


def test_init_uniform():
    p = init_pool(10_000, 1.0, "uniform", rng=1)
    assert p.in_bounds()


def test_binary_contraction(binary):
    p = evolve_pool(init_pool(10_000, 1.0, "uniform", rng=2), binary, 60, 3)
    assert np.max(np.abs(p.values - 0.5)) < 1e-6
    assert p.sweep_count == 60


def test_closure(half):
    for lam in (0.3, 1.0, 1.45):
        p = solve_pool(half, lam, 5000, 30, 4)
        assert p.in_bounds()


def test_mean_stabilizes(half):
    # the pool mean fluctuates by a few 1e-4 from sweep to sweep, so compare
    # averages over the ten sweeps ending at 150 and at 200
    p = init_pool(100_000, 1.0, "upper", dist=half)
    gen = np.random.default_rng(5)
    means = []
    for _ in range(200):
        evolve_pool(p, half, 1, gen)
        means.append(p.values.mean())
    assert abs(np.mean(means[140:150]) - np.mean(means[190:200])) < 1e-3


def test_binary_expectations(binary):
    p = solve_pool(binary, 1.0, 10_000, 60, 1)
    e = pool_expectations(p, ("beta", "log_inv_beta"))
    assert abs(e["beta"].mean - 0.5) < 1e-12
    assert abs(e["log_inv_beta"].mean - math.log(2)) < 1e-12
    assert e["beta"].method == "exact" and e["beta"].std_error == 0.0


def test_inverse_moment_stable(half):
    a = pool_expectations(solve_pool(half, 1.0, 50_000, 100, 1), ("inv_lam_minus_1_plus_beta",))
    b = pool_expectations(solve_pool(half, 1.0, 100_000, 100, 2), ("inv_lam_minus_1_plus_beta",))
    x, y = a["inv_lam_minus_1_plus_beta"], b["inv_lam_minus_1_plus_beta"]
    assert math.isfinite(x.mean) and abs(x.mean - y.mean) < 3 * math.hypot(x.std_error, y.std_error)


def test_entropy_term_bound(half):
    p = solve_pool(half, 1.0, 20_000, 50, 1)
    b = p.values
    assert np.all(b / (1 - b) * np.log(1 / b) < 1)
    assert pool_expectations(p, ("entropy_bound_term",))["entropy_bound_term"].mean < 1


def test_histogram_counts(half):
    p = solve_pool(half, 1.0, 5000, 20, 1)
    rows = pool_histogram(p, 10)
    assert sum(r[2] for r in rows) == 5000 and rows[0][0] == 0.0 and rows[-1][1] == 1.0


def test_block_edges_cover():
    e = block_edges(1234, 100)
    assert e[0] == 0 and e[-1] == 1234 and np.all(np.diff(e) >= 12)


def test_plan_block_locality(half):
    plan = make_plan(half, 10_000, 20_000, 1)
    edges = block_edges(10_000)
    for idx in (plan.beta_idx, plan.child_idx[:, 0]):
        blk = np.searchsorted(edges, idx, side="right") - 1
        assert np.array_equal(blk, plan.block)


def test_plan_shared_across_lambda(half):
    plan = make_plan(half, 5000, rng=1)
    a = synthesize(solve_pool(half, 0.5, 5000, 20, 7), plan)
    b = synthesize(solve_pool(half, 1.0, 5000, 20, 7), plan)
    assert np.array_equal(a.nu_plus, b.nu_plus)
    assert a.lam == 0.5 and b.lam == 1.0


def test_synthesize_sums(half):
    plan = make_plan(half, 5000, rng=2)
    s = synthesize(solve_pool(half, 1.0, 5000, 10, 1), plan)
    assert np.allclose(s.c_plus, s.child_betas.sum(axis=1))
    assert np.all((s.child_betas > 0).sum(axis=1) == s.nu_plus)


def test_exact_detection():
    e = weighted_ratio(np.full(1000, 2.0), np.full(1000, 4.0))
    assert e.method == "exact" and e.mean == 0.5
    e = mean_estimate(np.arange(1000.0))
    assert e.method == "closed_form_pool" and e.std_error > 0


def test_plan_size_mismatch(half):
    plan = make_plan(half, 5000, rng=1)
    with pytest.raises(ValueError):
        synthesize(BetaPool(np.full(6000, 0.5), 1.0), plan)
