"""Escape probabilities and conductances of trees.

The escape probability of a tree satisfies beta = S / (lam + S) where S is the
sum of the children's escape probabilities, which is also the conductance
C = lam * beta / (1 - beta). Replacing unrevealed subtrees by lower and upper
bounds and running the recursion upward gives a rigorous sandwich, because the
map is coordinatewise increasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import BetaOne, DepthUnavailable, DomainError, MaxDepth, ResourceLimit
from .gw_tree import Tree
from .rng import as_generator
from .stats import EstimateWithCI, Z95

DEFAULT_DEPTH_CAP = 5000
DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class BetaInterval:
    lo: float
    hi: float
    depth_used: int
    # False when the lower end comes from extrapolating the upper sequence
    certified: bool = True

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float, slack: float = 0.0) -> bool:
        return self.lo - slack <= x <= self.hi + slack


def beta_bounds(tree: Tree, lam: float, depth: int, node: int = 0) -> BetaInterval:
    """Sandwich for beta of the subtree at ``node`` using the first ``depth`` levels below it."""
    if lam < 0:
        raise DomainError("lambda must be nonnegative")
    lf, uf = tree.frontier_values(lam)
    order, scratch = tree.work_arrays()
    st, lo, hi = K.bounds_fixed(node, int(depth), float(lam), lf, uf, tree.topo, order, scratch)
    if st != K.OK:
        raise DepthUnavailable(f"tree is not expanded to relative depth {depth} below node {node}")
    return BetaInterval(lo, hi, int(depth), True)


def beta_refined(tree: Tree, lam: float, tol: float = DEFAULT_TOL, rng=None, node: int = 0,
                 depth_cap: int = DEFAULT_DEPTH_CAP) -> BetaInterval:
    """Grow the tree below ``node`` until the beta interval is narrower than ``tol``.

    ``rng`` is accepted for interface symmetry; growth is key-driven. When no
    positive lower frontier value exists (lam >= smallest offspring count) the
    lower end is extrapolated and the interval is flagged uncertified.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    lf, uf = tree.frontier_values(lam)
    if uf - lf < tol:
        return BetaInterval(lf, uf, 0, True)
    extrapolate = lf <= 0.0
    ef = tree.frontier_estimate(lam)
    hist, meta = K.new_refine_state()
    while True:
        order, scratch = tree.work_arrays()
        st, lo, hi, n, depth_used, _ = K.refine(
            node, float(lam), lf, uf, ef, float(tol), extrapolate, int(depth_cap), tree.node_cap,
            tree.topo, tree.key, tree.n, tree._cdf, tree._ks, order, scratch, hist, meta)
        tree.n = n
        if st == K.OK:
            return BetaInterval(lo, hi, int(depth_used), not extrapolate)
        best = BetaInterval(lo, hi, int(depth_used), not extrapolate)
        if st == K.DEPTH_LIMIT:
            raise MaxDepth(f"width {hi - lo:.3g} not below {tol} within depth cap {depth_cap}", best)
        if st == K.NOT_GROWABLE:
            raise MaxDepth("manual tree cannot be refined further", best)
        if st == K.NODE_LIMIT:
            raise ResourceLimit(f"tree exceeded the node cap of {tree.node_cap}")
        tree.check_status(st)


def conductance_from_beta(beta, lam):
    """C = lam * beta / (1 - beta)."""
    b = np.asarray(beta, dtype=float)
    if np.any(b >= 1.0):
        raise BetaOne("beta = 1 means infinite conductance")
    if np.any(b < 0.0):
        raise DomainError("beta must be nonnegative")
    c = lam * b / (1.0 - b)
    return float(c) if np.ndim(c) == 0 else c


def beta_from_conductance(c, lam):
    """Inverse map beta = C / (lam + C)."""
    c = np.asarray(c, dtype=float)
    b = c / (lam + c)
    return float(b) if np.ndim(b) == 0 else b


def harm_flow_probs(tree: Tree, lam: float, node: int = 0, tol: float = DEFAULT_TOL,
                    depth_cap: int = DEFAULT_DEPTH_CAP, return_intervals: bool = False):
    """Flow probabilities beta(child) / sum of children betas, from refined midpoints."""
    tree.expand(node)
    ivs = [beta_refined(tree, lam, tol, node=c, depth_cap=depth_cap) for c in tree.children(node)]
    mids = np.array([iv.mid for iv in ivs])
    p = mids / mids.sum()
    return (p, ivs) if return_intervals else p


def identity_residuals(b1: float, b2: float, lam: float) -> dict[str, float]:
    """Scaled residuals of the conductance identities for a tree pair with betas ``b1``, ``b2``.

    Each residual is |lhs - rhs| / max(1, |lhs|, |rhs|).
    """
    c1 = lam * b1 / (1.0 - b1)
    c2 = lam * b2 / (1.0 - b2)

    def r(a, b):
        return abs(a - b) / max(1.0, abs(a), abs(b))

    sym_l = b2 * c1 / (lam - 1.0 + b2 + c1)
    sym_r = b1 * c2 / (lam - 1.0 + b1 + c2)
    left = (lam - 1.0 + b1 + c2) * (1.0 + c1 / lam)
    mid = lam * (1.0 + c1 / lam) * (1.0 + c2 / lam) - 1.0
    right = (lam - 1.0 + b2 + c1) * (1.0 + c2 / lam)
    return {
        "roundtrip": max(r(c1 / (lam + c1), b1), r(c2 / (lam + c2), b2)),
        "symmetry": r(sym_l, sym_r),
        "identity_left": r(left, mid),
        "identity_right": r(mid, right),
    }


def check_conductance_identities(b1: float, b2: float, lam: float,
                                 admissible: bool = False) -> dict[str, float]:
    """Residuals of the identities, which are algebraic and hold whenever no denominator vanishes.

    With ``admissible`` the inputs must also satisfy lam - 1 + beta > 0, as
    escape probabilities of trees do.
    """
    if not (0.0 < b1 < 1.0 and 0.0 < b2 < 1.0) or lam <= 0.0:
        raise DomainError("betas must lie in (0, 1) and lambda must be positive")
    if admissible and (lam - 1.0 + b1 <= 0.0 or lam - 1.0 + b2 <= 0.0):
        raise DomainError("need lambda - 1 + beta > 0")
    c1, c2 = lam * b1 / (1.0 - b1), lam * b2 / (1.0 - b2)
    if lam - 1.0 + b2 + c1 == 0.0 or lam - 1.0 + b1 + c2 == 0.0:
        raise DomainError("a denominator of the symmetry identity vanishes")
    res = identity_residuals(b1, b2, lam)
    res["max_residual"] = max(res.values())
    return res


def fuzz_identities(n_cases: int, rng, lam_max: float = 3.0) -> dict:
    """Residual report over random admissible (beta, beta', lambda) triples."""
    gen = as_generator(rng)
    worst = 0.0
    for _ in range(n_cases):
        lam = gen.uniform(1e-3, lam_max)
        lo = max(0.0, 1.0 - lam)
        b1, b2 = lo + (1.0 - lo) * gen.uniform(1e-9, 1.0 - 1e-9, size=2)
        worst = max(worst, check_conductance_identities(b1, b2, lam, admissible=True)["max_residual"])
    return {"n_cases": int(n_cases), "max_residual": float(worst)}


def tree_sum_residual(tree: Tree, lam: float, depth: int) -> float:
    """Check C(T) = sum of children's beta on a finite truncation.

    The root bounds at ``depth`` are converted to conductances and compared with
    the sums of the children's bounds at ``depth - 1``.
    """
    root = beta_bounds(tree, lam, depth)
    kids = [beta_bounds(tree, lam, depth - 1, node=c) for c in tree.children(0)]
    worst = 0.0
    for side in ("lo", "hi"):
        b = getattr(root, side)
        s = math.fsum(getattr(k, side) for k in kids)
        if b < 1.0:
            c = lam * b / (1.0 - b)
            worst = max(worst, abs(c - s) / max(1.0, s))
    return worst


def mc_escape_oracle(tree: Tree, lam: float, n_walks: int, escape_depth: int, rng,
                     chunk: int = 1 << 20) -> EstimateWithCI:
    """Fraction of walks from the root that reach ``escape_depth`` before the root's parent.

    Biased upward by the truncation; a test oracle only.
    """
    gen = as_generator(rng)
    state = np.array([0, 0, -1], dtype=np.int64)
    unif = gen.random(chunk)
    while True:
        st, n, cur = K.escape_walks(0, float(lam), int(escape_depth), int(n_walks), unif, state,
                                    tree.topo, tree.key, tree.n, tree._cdf, tree._ks, tree.node_cap)
        tree.n = n
        if st == K.OK:
            break
        if st == K.NEED_RANDOM:
            unif = gen.random(chunk)
            continue
        if st == K.NEED_CAPACITY:
            unif = unif[cur:]
        tree.check_status(st)
    p = state[1] / n_walks
    se = math.sqrt(max(p * (1 - p), 0.0) / n_walks)
    return EstimateWithCI(float(p), se, p - Z95 * se, p + Z95 * se, int(n_walks), "monte_carlo")
