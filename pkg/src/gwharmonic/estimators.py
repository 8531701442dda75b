"""Estimators of the harmonic dimension and of average offspring counts along random paths.

Closed-form estimators evaluate weighted expectations over (T, T+) pairs
synthesized from a beta pool. With w_h = beta C+ / (lam - 1 + beta + C+) and
w_c = (lam + nu+) beta / (lam - 1 + beta + C+):

* d_lam = E[log(C+ + lam) w_h] / E[w_h]
* children along the harmonic ray = E[nu+ w_h] / E[w_h]
* children seen by the walk = E[nu+ w_c] / E[w_c]

Ergodic estimators average along one long trajectory per replica: the walk
itself, a loop-erased ray, or a ray drawn step by step from refined betas.

Pools for different lambdas are evolved from one random stream and share one
draw plan, so differences across lambda (and across k in the A, B
sequences) are paired statistics.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .conductance import DEFAULT_DEPTH_CAP
from .errors import DomainError
from .gw_tree import OffspringDistribution, Tree
from .measures import agw_weight, harm_weight
from .rde import (DEFAULT_POOL, DEFAULT_SWEEPS, BetaPool, Synthesized, make_plan, mean_estimate,
                  solve_pool, synthesize, weighted_ratio)
from .rng import RngStream, as_stream, draw_key
from .stats import EstimateWithCI, batch_means_multi, paired_difference
from .walk import harmonic_ray_record, loop_erased_ray, ray_tolerance, run_walk

SIGMA = 3.0
EXACT_SE_FLOOR = 1e-9
QUANTITIES = ("dim", "harm_children", "walk_children", "harm_reciprocal", "walk_reciprocal", "h", "c")


@dataclass(frozen=True)
class Budget:
    pool_size: int = DEFAULT_POOL
    sweeps: int = DEFAULT_SWEEPS
    n_draws: int | None = None
    walk_steps: int = 2_000_000
    ray_length: int = 20_000
    ray_steps: int = 20_000
    replicas: int = 4
    tol: float | None = None
    depth_cap: int = DEFAULT_DEPTH_CAP
    threads: int = 1
    n_batches: int = 100

    def scaled(self, **kw) -> "Budget":
        return replace(self, **kw)


def exact_constants(dist: OffspringDistribution) -> dict[str, float]:
    """Reference constants of a finitely supported law."""
    ks, ps = dist.ks.astype(float), dist.ps
    m = float(np.dot(ks, ps))
    k2 = float(np.dot(ks * ks, ps))
    return {
        "m": m,
        "log_m": math.log(m),
        "gw_log_nu": float(np.dot(np.log(ks), ps)),
        "uniform_children": k2 / m,
        "walk_limit": (m * m + k2) / (2.0 * m),
        "inverse_m": 1.0 / m,
        "second_moment": k2,
    }


def _check_lambda(dist, lam, allow_zero=False):
    if not (0.0 < lam < dist.m or (allow_zero and lam == 0.0)):
        raise DomainError(f"lambda must lie in (0, m) = (0, {dist.m:g})")


# Closed-form context ----------------------------------------------------------

class ClosedForm:
    """Pools and synthesized draws per lambda, sharing streams for common random numbers."""

    def __init__(self, dist: OffspringDistribution, budget: Budget = Budget(), rng=None):
        self.dist = dist
        self.budget = budget
        self.stream = as_stream(rng)
        self._pools: dict[float, BetaPool] = {}
        self._draws: dict[float, Synthesized] = {}
        self._plan = None

    def pool(self, lam: float) -> BetaPool:
        lam = float(lam)
        if lam not in self._pools:
            if lam == 0.0:
                n = self.budget.pool_size
                self._pools[lam] = BetaPool(np.ones(n), 0.0, self.dist, 0, np.zeros(n, dtype=np.int64))
            else:
                self._pools[lam] = solve_pool(self.dist, lam, self.budget.pool_size, self.budget.sweeps,
                                              self.stream.derive("pool").generator())
        return self._pools[lam]

    @property
    def plan(self):
        if self._plan is None:
            self._plan = make_plan(self.dist, self.budget.pool_size, self.budget.n_draws,
                                   self.stream.derive("plan").generator())
        return self._plan

    def draws(self, lam: float) -> Synthesized:
        lam = float(lam)
        if lam not in self._draws:
            self._draws[lam] = synthesize(self.pool(lam), self.plan)
        return self._draws[lam]

    def quantity(self, name: str, lam: float) -> EstimateWithCI:
        s = self.draws(lam)
        if name in ("h", "dim", "harm_children", "harm_reciprocal"):
            w = harm_weight(s.beta, s.c_plus, lam)
        else:
            w = agw_weight(s.beta, s.c_plus, s.nu_plus, lam)
        nu = s.nu_plus.astype(float)
        if name in ("h", "c"):
            return mean_estimate(w)
        if name == "dim":
            return weighted_ratio(np.log(s.c_plus + lam) * w, w)
        if name in ("harm_children", "walk_children"):
            return weighted_ratio(nu * w, w)
        if name in ("harm_reciprocal", "walk_reciprocal"):
            return weighted_ratio(w / nu, w)
        raise ValueError(f"unknown quantity {name!r}")


# Ergodic estimators ------------------------------------------------------------

def _replicas(fn, budget: Budget, stream: RngStream, label: str):
    """Run ``fn(stream_r)`` for each replica; results ordered by replica index."""
    streams = [stream.derive(label, r) for r in range(budget.replicas)]
    if budget.threads <= 1 or budget.replicas <= 1:
        return [fn(s) for s in streams]
    with ThreadPoolExecutor(max_workers=budget.threads) as ex:
        return list(ex.map(fn, streams))


def _tree(dist, s: RngStream) -> Tree:
    return Tree(dist, draw_key(s.derive("tree")))


def _walk_series(dist, lam, budget, stream, reciprocal):
    def one(s):
        tree = _tree(dist, s)
        _, nus = run_walk(tree, lam, budget.walk_steps, s.derive("steps").generator(), record=True)
        nus = nus[nus.size // 100:].astype(float)
        return 1.0 / nus if reciprocal else nus

    return _replicas(one, budget, stream, "walk")


def _harm_ray_series(dist, lam, budget, stream, reciprocal):
    def one(s):
        ray = loop_erased_ray(_tree(dist, s), lam, budget.ray_length, rng=s.derive("steps").generator())
        nus = ray.degrees()[:-1].astype(float)
        return 1.0 / nus if reciprocal else nus

    return _replicas(one, budget, stream, "ray")


def _dim_series(dist, lam, budget, stream):
    tol = budget.tol if budget.tol is not None else ray_tolerance(dist, lam)

    def one(s):
        rec = harmonic_ray_record(dist, lam, budget.ray_steps, tol, s.generator(),
                                  depth_cap=budget.depth_cap)
        x = np.log(rec.conductance + lam)
        # each child's midpoint is off by at most half its interval width
        bias = float(np.mean(rec.nu * 0.5 * rec.width / (rec.conductance + lam)))
        return x, bias

    return _replicas(one, budget, stream, "exact-ray")


def _ergodic(series, budget, method, bias=0.0):
    return batch_means_multi(series, budget.n_batches, method, bias)


# Public estimators ------------------------------------------------------------

def dim_harmonic(dist: OffspringDistribution, lam: float, method: str = "closed_form_pool",
                 budget: Budget = Budget(), rng=None, context: ClosedForm | None = None) -> EstimateWithCI:
    """Dimension of harmonic measure, the stationary mean of log(C + lam) along the harmonic ray."""
    _check_lambda(dist, lam, allow_zero=method == "closed_form_pool")
    if method == "closed_form_pool":
        ctx = context or ClosedForm(dist, budget, rng)
        return ctx.quantity("dim", lam)
    if method == "ergodic_ray":
        out = _dim_series(dist, lam, budget, as_stream(rng))
        bias = float(np.mean([b for _, b in out]))
        return _ergodic([x for x, _ in out], budget, "ergodic_ray", bias)
    raise ValueError(f"unknown method {method!r}")


def children_average(dist: OffspringDistribution, lam: float, target: str = "harm_ray",
                     method: str = "closed_form_pool", budget: Budget = Budget(), rng=None,
                     context: ClosedForm | None = None, reciprocal: bool = False) -> EstimateWithCI:
    """Average offspring count along the harmonic ray (``harm_ray``) or the walk (``walk_path``)."""
    _check_lambda(dist, lam, allow_zero=method == "closed_form_pool")
    if target not in ("harm_ray", "walk_path"):
        raise ValueError(f"unknown target {target!r}")
    if method == "closed_form_pool":
        ctx = context or ClosedForm(dist, budget, rng)
        kind = "harm" if target == "harm_ray" else "walk"
        return ctx.quantity(f"{kind}_{'reciprocal' if reciprocal else 'children'}", lam)
    stream = as_stream(rng)
    if target == "walk_path" and method in ("ergodic_walk", "ergodic"):
        return _ergodic(_walk_series(dist, lam, budget, stream, reciprocal), budget, "ergodic_walk")
    if target == "harm_ray" and method in ("ergodic_ray", "ergodic"):
        return _ergodic(_harm_ray_series(dist, lam, budget, stream, reciprocal), budget, "ergodic_ray")
    raise ValueError(f"method {method!r} does not apply to target {target!r}")


def reciprocal_children_average(dist: OffspringDistribution, lam: float, target: str = "harm_ray",
                                budget: Budget = Budget(), rng=None, method: str = "closed_form_pool",
                                context: ClosedForm | None = None) -> EstimateWithCI:
    """Average of 1 / offspring count along the harmonic ray or the walk."""
    return children_average(dist, lam, target, method, budget, rng, context, reciprocal=True)


# A and B sequences ---------------------------------------------------------------

@dataclass
class SequenceTable:
    lam: float
    k: np.ndarray
    A: list[EstimateWithCI]
    A_over_k: list[EstimateWithCI]
    B: list[EstimateWithCI]
    dA: list[EstimateWithCI]
    dA_over_k: list[EstimateWithCI]
    dB: list[EstimateWithCI]

    def rows(self) -> list[dict]:
        out = []
        for i, k in enumerate(self.k):
            row = {"k": int(k), "A": self.A[i].mean, "A_se": self.A[i].std_error,
                   "A_over_k": self.A_over_k[i].mean, "A_over_k_se": self.A_over_k[i].std_error,
                   "B": self.B[i].mean, "B_se": self.B[i].std_error}
            out.append(row)
        return out

    def checks(self) -> dict[str, float]:
        """Smallest paired z-scores for A increasing, A/k decreasing and B moving with lam - 1."""
        zA = min(d.z_against(0.0, EXACT_SE_FLOOR) for d in self.dA)
        zAk = min(-d.z_against(0.0, EXACT_SE_FLOOR) for d in self.dA_over_k)
        sgn = float(np.sign(self.lam - 1.0))
        zB = min(sgn * d.z_against(0.0, EXACT_SE_FLOOR) for d in self.dB) if sgn != 0 else \
            max(abs(d.z_against(0.0, EXACT_SE_FLOOR)) for d in self.dB)
        return {"A_increasing": zA, "A_over_k_decreasing": zAk, "B_direction": zB}


def sequences_AB(dist: OffspringDistribution, lam: float, k_max: int, pool: BetaPool,
                 rng=None, n_draws: int | None = None) -> SequenceTable:
    """A(k) = E[beta S_k / (lam - 1 + beta + S_k)] and B(k) = E[(lam + k) beta / (lam - 1 + beta + S_k)].

    S_k sums k independent pool betas; all k share the same draws, so the
    successive differences come with paired errors.
    """
    if k_max < 2:
        raise ValueError("k_max must be at least 2")
    plan = make_plan(dist, len(pool), n_draws, as_stream(rng).derive("ab-plan").generator(),
                     k_width=max(int(dist.k_max), k_max + 1))
    v = pool.values
    beta = v[plan.beta_idx]
    S = np.cumsum(v[plan.child_idx], axis=1)
    a, ak, b = [], [], []
    for k in range(1, k_max + 2):
        den = lam - 1.0 + beta + S[:, k - 1]
        a.append(beta * S[:, k - 1] / den)
        ak.append(beta * S[:, k - 1] / den / k)
        b.append((lam + k) * beta / den)
    est = [mean_estimate(x) for x in a]
    ks = np.arange(1, k_max + 1)
    return SequenceTable(
        float(lam), ks,
        est[:k_max], [mean_estimate(x) for x in ak[:k_max]], [mean_estimate(x) for x in b[:k_max]],
        [mean_estimate(a[i + 1] - a[i]) for i in range(k_max)],
        [mean_estimate(ak[i + 1] - ak[i]) for i in range(k_max)],
        [mean_estimate(b[i + 1] - b[i]) for i in range(k_max)],
    )


# Sweeps ------------------------------------------------------------------------

@dataclass
class SweepResult:
    lambda_grid: list[float]
    estimates: dict[float, dict[str, EstimateWithCI]]
    constants: dict[str, float]
    flags: dict[str, object] = field(default_factory=dict)

    HEADER = ("lambda", "quantity", "mean", "se", "ci_low", "ci_high", "n", "method")

    def rows(self) -> list[tuple]:
        out = []
        for lam in self.lambda_grid:
            for name, e in self.estimates[lam].items():
                out.append((lam, name, e.mean, e.std_error, e.ci_low, e.ci_high, e.n, e.method))
        return out


def sweep_lambda(dist: OffspringDistribution, grid, quantities=QUANTITIES, budget: Budget = Budget(),
                 rng=None, context: ClosedForm | None = None) -> SweepResult:
    """Closed-form estimates over a lambda grid with common random numbers."""
    grid = [float(x) for x in grid]
    if any(b <= a for a, b in zip(grid[:-1], grid[1:])):
        raise ValueError("grid must be strictly increasing")
    for lam in grid:
        _check_lambda(dist, lam)
    ctx = context or ClosedForm(dist, budget, rng)
    est = {lam: {q: ctx.quantity(q, lam) for q in quantities} for lam in grid}
    const = exact_constants(dist)
    res = SweepResult(grid, est, const)
    if "walk_children" in quantities and grid:
        m = const["m"]
        w = {lam: est[lam]["walk_children"] for lam in grid}
        res.flags = {
            "walk_below_m": [lam for lam in grid if lam < 1 and w[lam].mean + SIGMA * w[lam].std_error < m],
            "walk_above_m": [lam for lam in grid if lam > 1 and w[lam].mean - SIGMA * w[lam].std_error > m],
            "walk_first_minus_m": w[grid[0]].mean - m,
            "walk_last_minus_limit": w[grid[-1]].mean - const["walk_limit"],
        }
        if "dim" in quantities:
            res.flags["dim_first_minus_gw_log_nu"] = est[grid[0]]["dim"].mean - const["gw_log_nu"]
            res.flags["dim_last_minus_log_m"] = est[grid[-1]]["dim"].mean - const["log_m"]
    return res


def parse_grid(text: str) -> list[float]:
    """``start:stop:step`` with the endpoint included within 1e-12."""
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError as exc:
        raise ValueError(f"grid must be start:stop:step, got {text!r}") from exc
    if step <= 0:
        raise ValueError("grid step must be positive")
    n = int(math.floor((stop - start) / step + 1e-12 / step)) + 1
    return [round(start + i * step, 12) for i in range(max(n, 0))]


# Checks of the main inequalities -------------------------------------------------------------------

VERDICTS = ("pass", "fail", "inconclusive", "degenerate", "conjecture")


@dataclass
class Claim:
    claim_id: str
    paper_ref: str
    direction: str
    z: float
    verdict: str
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"claim_id": self.claim_id, "paper_ref": self.paper_ref, "direction": self.direction,
                "z": _finite(self.z), "verdict": self.verdict}


def _finite(z: float) -> float:
    return float(np.clip(z, -1e300, 1e300))


@dataclass
class CheckReport:
    claims: list[Claim]
    dist: dict
    budget: dict

    def counts(self) -> dict[str, int]:
        return {v: sum(c.verdict == v for c in self.claims) for v in VERDICTS}

    @property
    def has_failure(self) -> bool:
        return any(c.verdict == "fail" for c in self.claims)

    @property
    def has_inconclusive(self) -> bool:
        return any(c.verdict == "inconclusive" for c in self.claims)

    def to_dict(self) -> dict:
        return {"dist": self.dist, "budget": self.budget, "claims": [c.to_dict() for c in self.claims],
                "counts": self.counts()}


def strict_verdict(z: float) -> str:
    """Verdict for a claim that a quantity is strictly positive, given its z-score."""
    if z > SIGMA:
        return "pass"
    if z < -SIGMA:
        return "fail"
    return "inconclusive"


def _strict(cid, ref, direction, diff: EstimateWithCI, degenerate: bool) -> Claim:
    """Claim diff > 0."""
    if degenerate:
        return Claim(cid, ref, direction, 0.0, "degenerate", {"mean": diff.mean})
    z = diff.z_against(0.0, EXACT_SE_FLOOR)
    return Claim(cid, ref, direction, z, strict_verdict(z), {"mean": diff.mean, "se": diff.std_error})


def _shift(e: EstimateWithCI, c: float, sign: float = 1.0) -> EstimateWithCI:
    """sign * (e - c) as an estimate."""
    loo = None if e.loo is None else sign * (e.loo - c)
    return EstimateWithCI.from_mean_se(sign * (e.mean - c), e.std_error, e.n, e.method, loo=loo)


def _equal(cid, ref, e: EstimateWithCI, c: float) -> Claim:
    z = e.z_against(c, EXACT_SE_FLOOR)
    return Claim(cid, ref, f"= {c:.6g}", z, "pass" if abs(z) < SIGMA else "fail",
                 {"mean": e.mean, "se": e.std_error})


def _near(cid, ref, e: EstimateWithCI, c: float, tol: float) -> Claim:
    d = abs(e.mean - c)
    z = e.z_against(c, EXACT_SE_FLOOR)
    if d <= tol:
        v = "pass"
    elif d - SIGMA * e.std_error > tol:
        v = "fail"
    else:
        v = "inconclusive"
    return Claim(cid, ref, f"|x - {c:.6g}| <= {tol:g}", z, v, {"mean": e.mean, "se": e.std_error})


DEFAULT_SUITE_LAMBDAS = (0.25, 0.5, 1.0, 1.25)


def theorem_suite(dist: OffspringDistribution, budget: Budget = Budget(), rng=None,
                  lambdas=None, k_max: int = 10) -> CheckReport:
    """Statistical checks of the dimension and average-children statements.

    A strict inequality passes when it holds with 3 standard errors to spare,
    fails when the opposite holds with that margin, and is inconclusive
    otherwise. Deterministic laws turn every strict inequality into an
    equality, reported as degenerate. The comparison of harmonic and walk
    averages for lam > 1 is only conjectured and is labelled as such.
    """
    const = exact_constants(dist)
    m = const["m"]
    deg = dist.is_deterministic
    lams = [x for x in (lambdas or DEFAULT_SUITE_LAMBDAS) if 0 < x < m]
    ctx = ClosedForm(dist, budget, rng)
    claims: list[Claim] = []

    for lam in lams:
        d = ctx.quantity("dim", lam)
        hc = ctx.quantity("harm_children", lam)
        wc = ctx.quantity("walk_children", lam)
        tag = f"{lam:g}"
        claims.append(_strict(f"dim_above_gw_log_nu@{tag}", "dimension exceeds GW[log nu]",
                              "> GW[log nu]", _shift(d, const["gw_log_nu"]), deg))
        claims.append(_strict(f"dim_below_log_m@{tag}", "dimension drop below log m",
                              "< log m", _shift(d, const["log_m"], -1.0), deg))
        claims.append(_strict(f"harm_children_above_m@{tag}", "harmonic ray sees more than m children",
                              "> m", _shift(hc, m), deg))
        claims.append(_strict(f"harm_children_below_uniform@{tag}",
                              "harmonic ray sees fewer children than the uniform ray",
                              "< sum k^2 p_k / m", _shift(hc, const["uniform_children"], -1.0), deg))
        if lam < 1:
            claims.append(_strict(f"walk_children_below_m@{tag}", "walk sees fewer than m children below lambda 1",
                                  "< m", _shift(wc, m, -1.0), deg))
        elif lam == 1:
            claims.append(_equal(f"walk_children_equal_m@{tag}", "walk sees m children at lambda 1", wc, m))
        else:
            claims.append(_strict(f"walk_children_above_m@{tag}", "walk sees more than m children above lambda 1",
                                  "> m", _shift(wc, m), deg))
        gap = paired_difference(hc, wc)
        c = _strict(f"harm_minus_walk@{tag}", "harmonic ray sees more children than the walk",
                    "harm > walk", gap, deg)
        if lam > 1 and c.verdict != "degenerate":
            c.verdict = "conjecture"
        claims.append(c)
        for target, name in (("walk", "walk_reciprocal"), ("harm", "harm_reciprocal")):
            r = ctx.quantity(name, lam)
            claims.append(_strict(f"{target}_reciprocal_above_inverse_m@{tag}",
                                  f"average reciprocal children along the {target} exceeds 1/m",
                                  "> 1/m", _shift(r, const["inverse_m"]), deg))

    # endpoint limits
    lo_lam = 0.01
    hi_lam = round(m - 0.1, 12)
    if hi_lam > 0:
        claims.append(_near("dim_limit_small_lambda", "dimension tends to GW[log nu] as lambda -> 0",
                            ctx.quantity("dim", lo_lam), const["gw_log_nu"], 0.02))
        claims.append(_near("dim_limit_large_lambda", "dimension tends to log m as lambda -> m",
                            ctx.quantity("dim", hi_lam), const["log_m"], 0.03))
        claims.append(_near("walk_limit_small_lambda", "walk children tend to m as lambda -> 0",
                            ctx.quantity("walk_children", 0.05), m, 0.03))
        if dist.third_moment_finite:
            claims.append(_near("walk_limit_large_lambda", "walk children limit (m^2 + sum k^2 p_k) / 2m",
                                ctx.quantity("walk_children", hi_lam), const["walk_limit"], 0.05))

    # dip and rise of the walk average
    if m > 1.25:
        w005, w05, w125 = (ctx.quantity("walk_children", x) for x in (0.05, 0.5, 1.25))
        claims.append(_strict("walk_dip", "walk average is not monotone in lambda (dip)",
                              "walk(0.05) > walk(0.5)", paired_difference(w005, w05), deg))
        claims.append(_strict("walk_rise", "walk average is not monotone in lambda (rise)",
                              "walk(1.25) > walk(0.5)", paired_difference(w125, w05), deg))

    # A and B sequences
    for lam in (0.5, 1.25):
        if not lam < m:
            continue
        tab = sequences_AB(dist, lam, k_max, ctx.pool(lam), ctx.stream)
        ch = tab.checks()
        tag = f"{lam:g}"
        claims.append(Claim(f"A_increasing@{tag}", "A(k) strictly increasing", "A(k+1) > A(k)",
                            ch["A_increasing"], strict_verdict(ch["A_increasing"])))
        claims.append(Claim(f"A_over_k_decreasing@{tag}", "A(k)/k strictly decreasing",
                            "A(k+1)/(k+1) < A(k)/k", ch["A_over_k_decreasing"],
                            strict_verdict(ch["A_over_k_decreasing"])))
        claims.append(Claim(f"B_direction@{tag}", "B(k) moves with the sign of lambda - 1",
                            "sign(B(k+1) - B(k)) = sign(lambda - 1)", ch["B_direction"],
                            "degenerate" if deg else strict_verdict(ch["B_direction"])))

    budget_dict = {k: v for k, v in budget.__dict__.items()}
    return CheckReport(claims, dist.to_json(), budget_dict)
