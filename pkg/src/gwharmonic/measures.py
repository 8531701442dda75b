"""Stationary measures of the flow rule and of the environment seen from the walk.

Two weighted laws over independent Galton-Watson pairs (T, T+) are implemented
as self-normalized importance weights:

* flow rule: a tree T has weight kappa(C(T)), kappa(x) = E[beta x / (lam - 1 + beta + x)];
* environment: a marked tree T joined below the root of T+ has weight
  (lam + nu+) beta(T) / (lam - 1 + beta(T) + C(T+)).

Stationarity tests synthesize two-level trees from pool values, compute the
weighted mean of a bounded functional before one kernel step and its exact
conditional expectation after it, and report the paired difference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conductance import DEFAULT_TOL, harm_flow_probs
from .errors import DomainError, RayExhausted
from .gw_tree import OffspringDistribution, Tree, sample_offspring
from .rde import BetaPool, DrawPlan, block_layout, block_pick, make_plan, mean_estimate, synthesize
from .rng import as_generator
from .stats import EstimateWithCI, jackknife_ratio
from .walk import RayPrefix

EXACT_SE_FLOOR = 1e-9


def _check_den(den):
    if np.any(np.asarray(den) <= 0.0):
        raise DomainError("lambda - 1 + beta + C must be positive")


def harm_weight(beta_t, c_plus, lam):
    """beta C+ / (lam - 1 + beta + C+); never above beta."""
    den = lam - 1.0 + np.asarray(beta_t, dtype=float) + c_plus
    _check_den(den)
    w = beta_t * np.asarray(c_plus, dtype=float) / den
    return float(w) if np.ndim(w) == 0 else w


def agw_weight(beta_t, c_plus, nu_plus, lam):
    """(lam + nu+) beta / (lam - 1 + beta + C+); never above lam + nu+."""
    den = lam - 1.0 + np.asarray(beta_t, dtype=float) + c_plus
    _check_den(den)
    w = (lam + np.asarray(nu_plus, dtype=float)) * beta_t / den
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True, eq=False)
class WeightedSample:
    """Per-draw scalars and their unnormalized weights."""

    payload: dict[str, np.ndarray]
    weight: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.weight)) or np.any(self.weight < 0):
            raise DomainError("weights must be finite and nonnegative")

    def mean(self, name: str) -> EstimateWithCI:
        return jackknife_ratio(self.weight * self.payload[name], self.weight)


def kappa(x, lam: float, pool: BetaPool) -> EstimateWithCI:
    """E[beta x / (lam - 1 + beta + x)] over the pool."""
    if x < 0:
        raise DomainError("kappa is defined for x >= 0")
    b = pool.values
    return mean_estimate(b * x / (lam - 1.0 + b + x))


def _pair(dist, pool, plan, rng):
    if plan is None:
        plan = make_plan(dist, len(pool), rng=rng)
    return synthesize(pool, plan)


def estimate_h(dist: OffspringDistribution, lam: float, pool: BetaPool,
               plan: DrawPlan | None = None, rng=None) -> EstimateWithCI:
    """Normalizing constant of the flow-rule stationary density."""
    s = _pair(dist, pool, plan, rng)
    return mean_estimate(harm_weight(s.beta, s.c_plus, lam))


def estimate_c(dist: OffspringDistribution, lam: float, pool: BetaPool,
               plan: DrawPlan | None = None, rng=None) -> EstimateWithCI:
    """Normalizing constant of the environment density."""
    s = _pair(dist, pool, plan, rng)
    return mean_estimate(agw_weight(s.beta, s.c_plus, s.nu_plus, lam))


def harm_step(tree: Tree, lam: float, tol: float = DEFAULT_TOL, rng=None, node: int = 0) -> int:
    """Child of ``node`` drawn with probability beta(child) / C."""
    if lam <= 0:
        raise DomainError("lambda must be positive")
    p = harm_flow_probs(tree, lam, node, tol)
    u = as_generator(rng).random()
    j = min(int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right")), p.size - 1)
    return int(tree.children(node)[j])


# Marked double tree ---------------------------------------------------------

LOWER, UPPER = 0, 1


def _enc(side: int, node: int) -> int:
    return 2 * int(node) + side


@dataclass(eq=False)
class MarkedDoubleTree:
    """T (``lower``, root e) joined below the root e+ of T+ (``upper``), with a marked ray.

    Vertices of the joined graph are encoded as 2 * node + side. ``ray``
    lists xi_0, xi_1, ... with xi_0 the current root; the current upper tree
    is the component of xi_0 after cutting the edge (xi_0, xi_1), the current
    lower tree the component of xi_1. Initially xi_0 = e+ and xi_1 = e.
    """

    lower: Tree
    upper: Tree
    ray: list[int]
    last_case: str | None = None
    last_choice: int = -1
    steps: int = 0
    _trees: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self._trees = (self.lower, self.upper)

    @classmethod
    def from_ray(cls, ray: RayPrefix, upper: Tree) -> "MarkedDoubleTree":
        nodes = [_enc(UPPER, 0)] + [_enc(LOWER, int(v)) for v in ray.nodes]
        return cls(ray.tree, upper, nodes)

    def neighbors(self, x: int) -> list[int]:
        side, v = x & 1, x >> 1
        t = self._trees[side]
        t.expand(v)
        out = [_enc(side, c) for c in t.children(v)]
        out.append(_enc(1 - side, 0) if v == 0 else _enc(side, t.parent(v)))
        return out

    @property
    def root(self) -> int:
        return self.ray[0]

    @property
    def nu_plus(self) -> int:
        """Children of the current root in the current upper tree."""
        return len(self.neighbors(self.ray[0])) - 1

    @property
    def nu(self) -> int:
        """Children of xi_1 in the current lower tree."""
        return len(self.neighbors(self.ray[1])) - 1

    def __len__(self) -> int:
        """Length of the marked ray below the lower root."""
        return len(self.ray) - 2

    def is_valid(self) -> bool:
        return all(b in self.neighbors(a) for a, b in zip(self.ray[:-1], self.ray[1:])) and \
            len(set(self.ray)) == len(self.ray)


def rw_marked_step(mdt: MarkedDoubleTree, lam: float, rng) -> MarkedDoubleTree:
    """One step of the walk biased towards the marked ray, seen from the walker.

    With probability 1 / (nu+ + lam) per upper child the walker moves to that
    child and the ray is extended by the old root; with probability
    lam / (nu+ + lam) it moves to xi_1 and the ray loses its first vertex.
    """
    x0, x1 = mdt.ray[0], mdt.ray[1]
    others = [y for y in mdt.neighbors(x0) if y != x1]
    k = len(others)
    total = k + lam
    u = as_generator(rng).random() * total
    if u < lam:
        if len(mdt.ray) < 3:
            raise RayExhausted("marked ray too short to shift; extend it first")
        new = MarkedDoubleTree(mdt.lower, mdt.upper, mdt.ray[1:], "II", -1, mdt.steps + 1)
    else:
        j = min(int(u - lam), k - 1)
        new = MarkedDoubleTree(mdt.lower, mdt.upper, [others[j]] + mdt.ray, "I", j, mdt.steps + 1)
    return new


# Stationarity tests ---------------------------------------------------------

FUNCTIONALS = ("degree", "conductance", "beta", "degree_one")


def _functional(name: str, nu, cond, lam):
    if name == "degree":
        return np.minimum(nu, 10).astype(float)
    if name == "conductance":
        return np.minimum(cond, 5.0)
    if name == "beta":
        return cond / (lam + cond)
    if name == "degree_one":
        return (nu == 1).astype(float)
    raise ValueError(f"unknown functional {name!r}")


@dataclass(frozen=True, eq=False)
class _TwoLevel:
    """Root offspring ``nu``; per child slot its offspring count and grandchildren sum."""

    nu: np.ndarray
    child_nu: np.ndarray
    child_s: np.ndarray
    mask: np.ndarray
    lam: float

    @property
    def child_beta(self) -> np.ndarray:
        return np.where(self.mask, self.child_s / (self.lam + self.child_s), 0.0)

    @property
    def cond(self) -> np.ndarray:
        return self.child_beta.sum(axis=1)

    @property
    def beta(self) -> np.ndarray:
        c = self.cond
        return c / (self.lam + c)


def _two_level(dist, pool, gen, lo, size) -> _TwoLevel:
    n = lo.size
    kw = int(dist.k_max)
    nu = sample_offspring(dist, gen, size=n).astype(np.int64)
    mask = np.arange(kw)[None, :] < nu[:, None]
    child_nu = np.where(mask, sample_offspring(dist, gen, size=(n, kw)), 0).astype(np.int64)
    g = pool.values[block_pick(gen, lo, size, (kw, kw))]
    gmask = np.arange(kw)[None, None, :] < child_nu[:, :, None]
    child_s = np.where(gmask, g, 0.0).sum(axis=2)
    return _TwoLevel(nu, child_nu, child_s, mask, pool.lam)


@dataclass(frozen=True)
class StationarityResult:
    kind: str
    lam: float
    functional: str
    mean_before: float
    mean_after: float
    z: float
    n: int

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lambda": self.lam, "functional": self.functional,
                "mean_before": self.mean_before, "mean_after": self.mean_after, "z": self.z}


def _report(kind, lam, names, w, before, after, n):
    out = []
    for name in names:
        b = jackknife_ratio(w * before[name], w)
        a = jackknife_ratio(w * after[name], w)
        d = jackknife_ratio(w * (after[name] - before[name]), w)
        out.append(StationarityResult(kind, float(lam), name, b.mean, a.mean,
                                      float(d.z_against(0.0, EXACT_SE_FLOOR)), int(n)))
    return out


def stationarity_test(kind: str, dist: OffspringDistribution, lam: float, pool: BetaPool,
                      functionals=FUNCTIONALS, n: int = 100_000, rng=None,
                      negative_control: bool = False, kappa_draws: int = 16) -> list[StationarityResult]:
    """One-step invariance check of the flow rule (``harm``) or the environment chain (``agw``).

    The negative control replaces every weighted choice by a uniform one:
    the flow rule picks a uniform child, and the marked walk picks a uniform
    neighbour and continues the ray through a uniform child.
    """
    gen = as_generator(rng)
    names = tuple(functionals)
    _, lo, size = block_layout(n, len(pool))
    if kind == "harm":
        return _harm_test(dist, lam, pool, names, n, gen, lo, size, negative_control, kappa_draws)
    if kind == "agw":
        return _agw_test(dist, lam, pool, names, n, gen, lo, size, negative_control)
    raise ValueError(f"unknown kind {kind!r}")


def _harm_test(dist, lam, pool, names, n, gen, lo, size, wrong, kappa_draws):
    t = _two_level(dist, pool, gen, lo, size)
    cond = t.cond
    b0 = pool.values[block_pick(gen, lo, size, (kappa_draws,))]
    w = (b0 * cond[:, None] / (lam - 1.0 + b0 + cond[:, None])).mean(axis=1)
    if wrong:
        p = np.where(t.mask, 1.0, 0.0) / t.nu[:, None]
    else:
        p = t.child_beta / cond[:, None]
    before, after = {}, {}
    for name in names:
        before[name] = _functional(name, t.nu, cond, lam)
        after[name] = (p * np.where(t.mask, _functional(name, t.child_nu, t.child_s, lam), 0.0)).sum(axis=1)
    return _report("harm", lam, names, w, before, after, n)


def _agw_test(dist, lam, pool, names, n, gen, lo, size, wrong):
    low = _two_level(dist, pool, gen, lo, size)
    up = _two_level(dist, pool, gen, lo, size)
    beta, cond = low.beta, low.cond
    cp = up.cond
    bp = cp / (lam + cp)
    nup = up.nu.astype(float)
    w = agw_weight(beta, cp, nup, lam)
    state_before = {"nu_plus": up.nu, "c_plus": cp, "beta": beta, "nu": low.nu}
    before = {name: _agw_functional(name, state_before, lam) for name in names}
    # case I: the walker moves to upper child i
    p1 = 1.0 / (nup + 1.0) if wrong else 1.0 / (nup + lam)
    s_new = beta[:, None] + cp[:, None] - up.child_beta
    case1 = {
        "nu_plus": up.child_nu, "c_plus": up.child_s,
        "beta": s_new / (lam + s_new), "nu": np.broadcast_to(up.nu[:, None], up.mask.shape),
    }
    # case II: the walker moves to e, the ray continues through lower child k
    p2 = 1.0 / (nup + 1.0) if wrong else lam / (nup + lam)
    q = np.where(low.mask, 1.0, 0.0) / low.nu[:, None] if wrong else low.child_beta / cond[:, None]
    case2 = {
        "nu_plus": np.broadcast_to(low.nu[:, None], low.mask.shape),
        "c_plus": bp[:, None] + cond[:, None] - low.child_beta,
        "beta": low.child_beta, "nu": low.child_nu,
    }
    after = {}
    for name in names:
        f1 = np.where(up.mask, _agw_functional(name, case1, lam), 0.0).sum(axis=1)
        f2 = (q * np.where(low.mask, _agw_functional(name, case2, lam), 0.0)).sum(axis=1)
        after[name] = p1 * f1 + p2 * f2
    return _report("agw", lam, names, w, before, after, n)


AGW_FUNCTIONALS = ("upper_degree", "upper_conductance", "lower_beta", "lower_degree_one")


def _agw_functional(name, st, lam):
    if name in ("degree", "upper_degree"):
        return np.minimum(st["nu_plus"], 10).astype(float)
    if name in ("conductance", "upper_conductance"):
        return np.minimum(st["c_plus"], 5.0)
    if name in ("beta", "lower_beta"):
        return np.asarray(st["beta"], dtype=float)
    if name in ("degree_one", "lower_degree_one"):
        return (np.asarray(st["nu"]) == 1).astype(float)
    raise ValueError(f"unknown functional {name!r}")


def max_abs_z(results) -> float:
    return max((abs(r.z) for r in results), default=0.0)


def transition_frequencies(mdt: MarkedDoubleTree, lam: float, n_steps: int, rng,
                           reset: bool = True) -> dict:
    """Counts of upper-child moves by index and of ray shifts over ``n_steps`` steps.

    With ``reset`` every step starts from ``mdt`` itself, which isolates the
    one-step law; otherwise the chain runs on.
    """
    gen = as_generator(rng)
    counts: dict = {}
    cur = mdt
    for _ in range(n_steps):
        nxt = rw_marked_step(mdt if reset else cur, lam, gen)
        key = "shift" if nxt.last_case == "II" else nxt.last_choice
        counts[key] = counts.get(key, 0) + 1
        cur = nxt
    return counts

