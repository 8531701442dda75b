"""Offspring laws and lazily grown Galton-Watson trees.

Trees are hash-addressed: every node carries a 64-bit key, its offspring count
is a deterministic function of that key, and child keys are derived from the
parent key and the child's position. A tree is therefore fixed by the root key
alone and can be grown in any order, in any number of stages, with identical
results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels as K
from .errors import (
    DepthUnavailable,
    Degenerate,
    DistributionError,
    NotNormalized,
    ResourceLimit,
    Subcritical,
    ZeroOffspring,
)
from .rng import as_generator, draw_key

DEFAULT_NODE_CAP = 10**8


@dataclass(frozen=True, eq=False)
class OffspringDistribution:
    """Finite-support law (p_k) with p_0 = 0 and mean m > 1."""

    ks: np.ndarray
    ps: np.ndarray
    allow_deterministic: bool = False
    cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ks = np.asarray(self.ks, dtype=np.int64)
        ps = np.asarray(self.ps, dtype=np.float64)
        order = np.argsort(ks)
        ks, ps = ks[order], ps[order]
        ks.setflags(write=False)
        ps.setflags(write=False)
        cdf = np.cumsum(ps)
        cdf[-1] = 1.0
        cdf.setflags(write=False)
        object.__setattr__(self, "ks", ks)
        object.__setattr__(self, "ps", ps)
        object.__setattr__(self, "cdf", cdf)

    @property
    def support(self) -> list[tuple[int, float]]:
        return [(int(k), float(p)) for k, p in zip(self.ks, self.ps)]

    @property
    def m(self) -> float:
        return float(np.dot(self.ks, self.ps))

    @property
    def second_moment(self) -> float:
        return float(np.dot(self.ks.astype(float) ** 2, self.ps))

    @property
    def third_moment(self) -> float:
        return float(np.dot(self.ks.astype(float) ** 3, self.ps))

    @property
    def third_moment_finite(self) -> bool:
        return math.isfinite(self.third_moment)

    @property
    def k_min(self) -> int:
        return int(self.ks[0])

    @property
    def k_max(self) -> int:
        return int(self.ks[-1])

    @property
    def is_deterministic(self) -> bool:
        return self.ks.size == 1

    @property
    def size_biased_ps(self) -> np.ndarray:
        return self.ks * self.ps / self.m

    def frontier_values(self, lam: float) -> tuple[float, float]:
        """Universal bounds on the escape probability of any tree drawn from this law."""
        return max(0.0, 1.0 - lam / self.k_min), max(0.0, 1.0 - lam / self.k_max)

    def frontier_estimate(self, lam: float) -> float:
        """Mean-field beta: the fixed point of x = E[nu x / (lam + nu x)].

        Not a bound; a frontier value close to typical betas, used when
        extrapolating refinements.
        """
        lo, x = self.frontier_values(lam)
        for _ in range(100_000):
            nxt = float(np.dot(self.ps, self.ks * x / (lam + self.ks * x)))
            if abs(nxt - x) < 1e-15:
                break
            x = nxt
        return min(max(x, lo), self.frontier_values(lam)[1])

    def to_json(self) -> dict[str, float]:
        return {str(int(k)): float(p) for k, p in zip(self.ks, self.ps)}

    def __repr__(self) -> str:
        return f"OffspringDistribution({self.to_json()})"


def validate_distribution(spec, allow_deterministic: bool = False) -> OffspringDistribution:
    """Build a distribution from ``{k: p}`` (keys may be strings) or ``[(k, p), ...]``."""
    items = list(spec.items()) if isinstance(spec, Mapping) else list(spec)
    if not items:
        raise DistributionError("empty offspring specification")
    acc: dict[int, float] = {}
    for k, p in items:
        k, p = int(k), float(p)
        if k < 0:
            raise DistributionError(f"negative offspring count {k}")
        if not (0.0 <= p <= 1.0) or not math.isfinite(p):
            raise NotNormalized(f"p_{k} = {p} is not a probability")
        if k in acc:
            raise DistributionError(f"offspring count {k} listed twice")
        acc[k] = p
    if acc.get(0, 0.0) > 0.0:
        raise ZeroOffspring("p_0 must be 0: trees are leafless")
    acc = {k: p for k, p in acc.items() if p > 0.0}
    if not acc:
        raise NotNormalized("all probabilities are zero")
    total = math.fsum(acc.values())
    if abs(total - 1.0) > 1e-12:
        raise NotNormalized(f"probabilities sum to {total!r}")
    if len(acc) == 1 and not allow_deterministic:
        raise Degenerate("a single offspring count carries all mass")
    dist = OffspringDistribution(np.array(list(acc)), np.array(list(acc.values())), allow_deterministic)
    if dist.m <= 1.0:
        raise Subcritical(f"mean {dist.m} must exceed 1")
    return dist


def truncated_geometric(q: float, k_max: int, k_min: int = 1) -> OffspringDistribution:
    """Geometric law P(k) ∝ q^(k - k_min) on k >= k_min, tail mass folded into ``k_max``."""
    if not 0.0 < q < 1.0 or k_max <= k_min:
        raise DistributionError("need 0 < q < 1 and k_max > k_min")
    ks = np.arange(k_min, k_max + 1)
    ps = (1 - q) * q ** (ks - k_min)
    ps[-1] = q ** (k_max - k_min)
    ps /= ps.sum()
    return validate_distribution(list(zip(ks.tolist(), ps.tolist())))


def sample_offspring(dist: OffspringDistribution, rng, size_biased: bool = False, size=None):
    gen = as_generator(rng)
    p = dist.size_biased_ps if size_biased else dist.ps
    out = gen.choice(dist.ks, size=size, p=p)
    return int(out) if size is None else out


_EMPTY_F = np.empty(0, dtype=np.float64)
_EMPTY_I = np.empty(0, dtype=np.int64)


class Tree:
    """Rooted ordered tree stored in flat arrays, node 0 is the root.

    A node with zero children is on the frontier (not yet sampled). Trees
    built from a distribution grow on demand; manual trees cannot grow.
    """

    def __init__(self, dist: OffspringDistribution | None, root_key: int = 0,
                 node_cap: int = DEFAULT_NODE_CAP, capacity: int = 1024):
        self.dist = dist
        self.node_cap = int(node_cap)
        capacity = max(16, min(int(capacity), self.node_cap + self._kmax_int()))
        self.topo = np.empty((capacity, 4), dtype=np.int64)
        self.key = np.empty(capacity, dtype=np.uint64)
        self.topo[0] = (-1, -1, 0, 0)
        self.key[0] = np.uint64(int(root_key) & ((1 << 64) - 1))
        self.n = 1
        self.depth_complete = 0
        self._scratch = None
        self._order = None
        if dist is not None:
            self._cdf = np.asarray(dist.cdf, dtype=np.float64)
            self._ks = np.asarray(dist.ks, dtype=np.int64)
        else:
            self._cdf, self._ks = _EMPTY_F, _EMPTY_I

    def _kmax_int(self) -> int:
        return self.dist.k_max if self.dist is not None else 1

    # construction -------------------------------------------------------
    @classmethod
    def from_offspring_sequence(cls, counts: Sequence[int]) -> "Tree":
        """Manual tree from breadth-first child counts; nodes past the list stay on the frontier."""
        counts = [int(c) for c in counts]
        if any(c < 0 for c in counts):
            raise ValueError("child counts must be nonnegative")
        t = cls(None, 0, capacity=1 + sum(counts) + 1)
        for v, c in enumerate(counts):
            if v >= t.n:
                raise ValueError("sequence describes nodes that do not exist")
            if c:
                t.n = K.expand_count(v, c, t.topo, t.key, t.n)
        t.depth_complete = t._min_frontier_depth()
        return t

    @classmethod
    def path(cls, length: int) -> "Tree":
        """Unary path with ``length`` edges below the root."""
        return cls.from_offspring_sequence([1] * length)

    def copy(self) -> "Tree":
        t = Tree(self.dist, int(self.key[0]), self.node_cap, capacity=self.n)
        t.topo[: self.n] = self.topo[: self.n]
        t.key[: self.n] = self.key[: self.n]
        t.n = self.n
        t.depth_complete = self.depth_complete
        return t

    def subtree(self, v: int) -> "Tree":
        """Independent copy of the descendant tree of ``v`` rooted at node 0."""
        size = K.subtree_size(v, self.topo)
        t = Tree(self.dist, int(self.key[v]), self.node_cap, capacity=size)
        order = np.empty(size, dtype=np.int64)
        t.n = K.copy_subtree(v, self.topo, self.key, t.topo, t.key, order)
        t.depth_complete = t._min_frontier_depth()
        return t

    # storage --------------------------------------------------------------
    @property
    def capacity(self) -> int:
        return self.topo.shape[0]

    @property
    def growable(self) -> bool:
        return self.dist is not None

    def _enlarge(self):
        if self.n + self._kmax_int() > self.node_cap:
            raise ResourceLimit(f"tree reached the node cap of {self.node_cap}")
        new = min(2 * self.capacity, self.node_cap + self._kmax_int())
        topo = np.empty((new, 4), dtype=np.int64)
        key = np.empty(new, dtype=np.uint64)
        topo[: self.n] = self.topo[: self.n]
        key[: self.n] = self.key[: self.n]
        self.topo, self.key = topo, key
        if self._scratch is not None:
            # resumable kernels keep per-node state here
            scratch = np.full((new, K.N_SCRATCH), np.nan)
            scratch[: self.n] = self._scratch[: self.n]
            self._scratch = scratch
            self._order = np.empty(new, dtype=np.int64)

    def work_arrays(self):
        if self._scratch is None or self._scratch.shape[0] < self.capacity:
            self._scratch = np.full((self.capacity, K.N_SCRATCH), np.nan)
            self._order = np.empty(self.capacity, dtype=np.int64)
        return self._order, self._scratch

    def check_status(self, status: int) -> bool:
        """Translate a kernel status; True means 'enlarge and retry'."""
        if status == K.OK:
            return False
        if status == K.NEED_CAPACITY:
            self._enlarge()
            return True
        if status == K.NODE_LIMIT:
            raise ResourceLimit(f"tree exceeded the node cap of {self.node_cap}")
        if status == K.NOT_GROWABLE:
            raise DepthUnavailable("manual tree has no offspring law to grow from")
        raise RuntimeError(f"unexpected kernel status {status}")

    def expand(self, v: int) -> None:
        """Sample the children of frontier node ``v``."""
        if self.topo[v, K.NCH] > 0:
            return
        while True:
            r = K.expand(v, self.topo, self.key, self.n, self._cdf, self._ks)
            if r == -2:
                raise DepthUnavailable("manual tree has no offspring law to grow from")
            if r == -1:
                self._enlarge()
                continue
            self.n = r
            if self.n > self.node_cap:
                raise ResourceLimit(f"tree exceeded the node cap of {self.node_cap}")
            return

    # queries --------------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return self.n

    root = 0

    def parent(self, v: int) -> int:
        return int(self.topo[v, K.PARENT])

    def child_count(self, v: int) -> int:
        return int(self.topo[v, K.NCH])

    def children(self, v: int) -> range:
        f = int(self.topo[v, K.FIRST])
        return range(f, f + int(self.topo[v, K.NCH])) if f >= 0 else range(0)

    def depth(self, v: int) -> int:
        return int(self.topo[v, K.DEPTH])

    def is_expanded(self, v: int) -> bool:
        return self.topo[v, K.NCH] > 0

    def frontier(self) -> np.ndarray:
        return np.flatnonzero(self.topo[: self.n, K.NCH] == 0)

    def level_sizes(self) -> np.ndarray:
        return np.bincount(self.topo[: self.n, K.DEPTH])

    def max_depth(self) -> int:
        return int(self.topo[: self.n, K.DEPTH].max())

    def ancestors(self, v: int) -> list[int]:
        """Path from the root to ``v`` inclusive."""
        out = [v]
        while self.topo[v, K.PARENT] >= 0:
            v = int(self.topo[v, K.PARENT])
            out.append(v)
        return out[::-1]

    def _min_frontier_depth(self) -> int:
        fr = self.frontier()
        return int(self.topo[fr, K.DEPTH].min()) if fr.size else self.max_depth() + 1

    def frontier_values(self, lam: float) -> tuple[float, float]:
        """Certified bounds on beta of any unrevealed subtree."""
        if self.dist is None:
            return max(0.0, 1.0 - lam), 1.0
        return self.dist.frontier_values(lam)

    def frontier_estimate(self, lam: float) -> float:
        if self.dist is None:
            return 0.5 * sum(self.frontier_values(lam))
        return self.dist.frontier_estimate(lam)

    def check_links(self) -> bool:
        for v in range(self.n):
            for w in self.children(v):
                if self.parent(w) != v or self.depth(w) != self.depth(v) + 1:
                    return False
        return self.parent(0) == -1

    def __repr__(self) -> str:
        return f"Tree(n={self.n}, depth_complete={self.depth_complete})"


def sample_tree(dist: OffspringDistribution, depth: int, rng, node_cap: int = DEFAULT_NODE_CAP) -> Tree:
    """GW tree with every node at depth < ``depth`` expanded."""
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    tree = Tree(dist, draw_key(rng), node_cap)
    return grow_to_depth(tree, depth)


def grow_to_depth(tree: Tree, target_depth: int, rng=None) -> Tree:
    """Extend ``tree`` in place so that all nodes above ``target_depth`` are expanded.

    Offspring counts are functions of node keys, so ``rng`` is never consumed
    and staged growth reproduces one-shot growth exactly.
    """
    if target_depth < tree.depth_complete:
        raise ValueError("target depth is below the already complete depth")
    if target_depth == tree.depth_complete:
        return tree
    start = 0
    while True:
        st, n, start = K.grow(tree.topo, tree.key, tree.n, start, target_depth,
                              tree.node_cap, tree._cdf, tree._ks)
        tree.n = n
        if not tree.check_status(st):
            break
    tree.depth_complete = target_depth
    return tree


def sample_level_sizes(dist: OffspringDistribution, depth: int, replicas: int, rng) -> np.ndarray:
    """Generation sizes (replicas, depth + 1) of independent trees."""
    gen = as_generator(rng)
    keys = gen.integers(0, 2**64, size=replicas, dtype=np.uint64)
    out = np.zeros((replicas, depth + 1), dtype=np.int64)
    for r, k in enumerate(keys):
        t = grow_to_depth(Tree(dist, int(k)), depth)
        out[r] = t.level_sizes()[: depth + 1]
    return out


def iter_keys(rng, count: int) -> Iterable[int]:
    gen = as_generator(rng)
    return (int(k) for k in gen.integers(0, 2**64, size=count, dtype=np.uint64))
