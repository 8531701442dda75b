import math

import numpy as np
import pytest

from gwharmonic.errors import DomainError
from gwharmonic.estimators import (Budget, ClosedForm, children_average, dim_harmonic, exact_constants,
                                   parse_grid, reciprocal_children_average, sequences_AB, strict_verdict,
                                   sweep_lambda, theorem_suite)
from gwharmonic.gw_tree import validate_distribution
from gwharmonic.rde import solve_pool

SMALL = Budget(pool_size=10_000, sweeps=60)
GRID = (0.05, 0.25, 0.5, 0.75, 1.0, 1.1, 1.25, 1.4)


@pytest.fixture(scope="module")
def ctx(half):
    return ClosedForm(half, Budget(), 11)


@pytest.fixture(scope="module")
def sweep(half, ctx):
    return sweep_lambda(half, GRID, context=ctx)


def test_exact_constants_half(half):
    c = exact_constants(half)
    assert c["gw_log_nu"] == pytest.approx(0.5 * math.log(2), abs=1e-15)
    assert c["uniform_children"] == pytest.approx(2.5 / 1.5, abs=1e-15)
    assert c["walk_limit"] == pytest.approx(4.75 / 3, abs=1e-15)
    assert c["log_m"] == pytest.approx(math.log(1.5), abs=1e-15)


def test_exact_constants_binary(binary):
    c = exact_constants(binary)
    assert c["gw_log_nu"] == c["log_m"] == pytest.approx(math.log(2))
    assert c["uniform_children"] == c["walk_limit"] == 2.0


def test_exact_constants_heavy_tail():
    c = exact_constants(validate_distribution({1: 0.9, 10: 0.1}))
    assert c["m"] == pytest.approx(1.9)
    assert c["uniform_children"] == pytest.approx(10.9 / 1.9, abs=1e-12)


@pytest.mark.parametrize("lam", [0.3, 1.0, 1.7])
def test_bary_oracles(binary, lam):
    cf = ClosedForm(binary, SMALL, 1)
    assert abs(cf.quantity("dim", lam).mean - math.log(2)) < 1e-9
    for q in ("harm_children", "walk_children"):
        assert abs(cf.quantity(q, lam).mean - 2.0) < 1e-9
    for q in ("harm_reciprocal", "walk_reciprocal"):
        assert abs(cf.quantity(q, lam).mean - 0.5) < 1e-9


def test_public_estimators_bary(binary):
    d = dim_harmonic(binary, 1.0, budget=SMALL, rng=1)
    assert abs(d.mean - math.log(2)) < 1e-9
    assert children_average(binary, 1.0, "walk_path", budget=SMALL, rng=1).mean == pytest.approx(2.0, abs=1e-9)
    assert reciprocal_children_average(binary, 1.0, "harm_ray", budget=SMALL, rng=1).mean == \
        pytest.approx(0.5, abs=1e-9)


def test_domain(half):
    for lam in (1.5, 2.0, -1.0):
        with pytest.raises(DomainError):
            dim_harmonic(half, lam, budget=SMALL)
    with pytest.raises(DomainError):
        dim_harmonic(half, 0.0, method="ergodic_ray", budget=SMALL)


def test_lambda_zero_closed_form(half):
    # betas are all 1 at lam = 0, so the estimate is a sample mean of log nu
    d = dim_harmonic(half, 0.0, budget=SMALL, rng=1)
    assert d.mean == pytest.approx(0.5 * math.log(2), abs=0.01)


def test_dim_bracket(half, ctx):
    d = ctx.quantity("dim", 1.0)
    assert d.ci_low > 0.5 * math.log(2) and d.ci_high < math.log(1.5)


def test_dim_small_lambda(half, ctx):
    assert abs(ctx.quantity("dim", 0.01).mean - 0.5 * math.log(2)) < 0.02


def test_children_examples(ctx):
    h = ctx.quantity("harm_children", 1.0)
    assert h.mean - 3 * h.std_error > 1.5 and h.mean + 3 * h.std_error < 5 / 3
    w = ctx.quantity("walk_children", 0.5)
    assert w.mean + 3 * w.std_error < 1.5


def test_reciprocal_examples(ctx):
    w = ctx.quantity("walk_reciprocal", 1.0)
    assert w.mean - 3 * w.std_error > 1 / 1.5
    h = ctx.quantity("harm_reciprocal", 0.5)
    assert h.mean - 3 * h.std_error > 1 / 1.5


def test_unknown_quantity(ctx):
    with pytest.raises(ValueError):
        ctx.quantity("nope", 1.0)


def test_sequences_binary_lambda1(binary):
    pool = solve_pool(binary, 1.0, 5000, 40, 1)
    t = sequences_AB(binary, 1.0, 4, pool, 1)
    assert t.A[0].mean == pytest.approx(0.25, abs=1e-12)
    assert t.A[1].mean == pytest.approx(1 / 3, abs=1e-12)
    assert all(b.mean == pytest.approx(1.0, abs=1e-12) for b in t.B)
    assert [r["k"] for r in t.rows()] == [1, 2, 3, 4]


def test_sequences_binary_half(binary):
    pool = solve_pool(binary, 0.5, 5000, 40, 1)
    t = sequences_AB(binary, 0.5, 3, pool, 1)
    assert t.B[0].mean == pytest.approx(1.125, abs=1e-12)
    assert t.B[1].mean == pytest.approx(1.875 / 1.75, abs=1e-12)
    assert t.checks()["B_direction"] > 3


def test_sequences_ternary(ternary):
    pool = solve_pool(ternary, 2.0, 5000, 40, 1)
    t = sequences_AB(ternary, 2.0, 3, pool, 1)
    assert t.B[0].mean == pytest.approx(0.6, abs=1e-12)
    assert t.B[1].mean == pytest.approx(2 / 3, abs=1e-12)
    assert t.checks()["B_direction"] > 3


def test_sequences_lambda_zero(half):
    cf = ClosedForm(half, SMALL, 1)
    t = sequences_AB(half, 0.0, 5, cf.pool(0.0), 1)
    assert all(b.mean == pytest.approx(1.0, abs=1e-12) for b in t.B)


def test_sequences_half(half, ctx):
    ch = sequences_AB(half, 0.5, 10, ctx.pool(0.5), 3).checks()
    assert ch["A_increasing"] > 3 and ch["A_over_k_decreasing"] > 3 and ch["B_direction"] > 3
    with pytest.raises(ValueError):
        sequences_AB(half, 0.5, 1, ctx.pool(0.5))


def test_sweep_examples(sweep):
    e = sweep.estimates
    assert e[0.5]["walk_children"].mean + 3 * e[0.5]["walk_children"].std_error < 1.5
    assert e[1.25]["walk_children"].mean - 3 * e[1.25]["walk_children"].std_error > 1.5
    assert abs(e[0.05]["walk_children"].mean - 1.5) < 0.03
    assert abs(e[1.4]["dim"].mean - math.log(1.5)) < 0.03
    assert 0.5 in sweep.flags["walk_below_m"] and 1.25 in sweep.flags["walk_above_m"]
    assert len(sweep.rows()) == len(GRID) * 7


def test_sweep_rejects(half):
    with pytest.raises(ValueError):
        sweep_lambda(half, [0.5, 0.5], budget=SMALL)
    with pytest.raises(DomainError):
        sweep_lambda(half, [0.5, 1.6], budget=SMALL)


def test_parse_grid():
    g = parse_grid("0.05:1.45:0.1")
    assert len(g) == 15 and g[0] == 0.05 and g[-1] == 1.45
    assert parse_grid("1:1:1") == [1.0]
    assert parse_grid("1:0:1") == []
    for bad in ("1:2", "a:b:c", "0:1:0"):
        with pytest.raises(ValueError):
            parse_grid(bad)


def test_strict_verdict():
    assert strict_verdict(3.1) == "pass"
    assert strict_verdict(-3.1) == "fail"
    assert strict_verdict(0.0) == "inconclusive"


def test_suite_half(half):
    rep = theorem_suite(half, Budget(), 5)
    assert not rep.has_failure
    ids = {c.claim_id: c for c in rep.claims}
    assert ids["harm_minus_walk@1.25"].verdict == "conjecture"
    assert ids["walk_children_equal_m@1"].verdict == "pass"
    assert ids["walk_dip"].verdict == "pass" and ids["walk_rise"].verdict == "pass"
    d = rep.to_dict()
    assert sum(d["counts"].values()) == len(d["claims"])


def test_suite_deterministic(binary):
    rep = theorem_suite(binary, SMALL, 1)
    assert not rep.has_failure
    strict = [c for c in rep.claims if c.direction.startswith(("<", ">")) and "A" not in c.claim_id]
    assert strict and all(c.verdict == "degenerate" for c in strict)


def test_suite_heavy_tail():
    dist = validate_distribution({1: 0.9, 10: 0.1})
    rep = theorem_suite(dist, Budget(pool_size=50_000), 2, lambdas=(0.5, 1.0))
    assert not rep.has_failure
    ids = {c.claim_id: c for c in rep.claims}
    assert ids["harm_children_below_uniform@1"].verdict == "pass"
