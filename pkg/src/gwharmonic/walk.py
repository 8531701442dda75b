"""Biased random walk on lazily grown trees and harmonic rays.

From a vertex x other than the root the walk moves to the parent with
probability lam / (nu(x) + lam) and to each child with probability
1 / (nu(x) + lam); from the root it moves to a uniform child. The harmonic
ray is the loop erasure of a transient walk: on a tree, the geodesic from the
root to the walk's position once the walk never returns below that level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .conductance import DEFAULT_DEPTH_CAP, DEFAULT_TOL, beta_refined
from .errors import MaxDepth, ResourceLimit, StepLimit
from .gw_tree import DEFAULT_NODE_CAP, OffspringDistribution, Tree
from .rng import as_generator

CHUNK = 1 << 18
_EMPTY_I = np.empty(0, dtype=np.int64)


def default_margin(lam: float) -> int:
    return 30 if lam <= 1.0 else 60


def ray_tolerance(dist: OffspringDistribution, lam: float) -> float:
    """Child-beta tolerance for exact rays.

    Certified refinements (lam below the smallest offspring count) are cheap
    at any tolerance. Extrapolated ones grow fast as lam increases, and a
    looser tolerance still leaves flow errors far below ergodic noise.
    """
    if lam < dist.k_min:
        return 1e-6
    return 1e-4 if lam <= dist.k_min else 1e-2


@dataclass
class WalkState:
    tree: Tree
    current: int = 0
    step_count: int = 0
    max_depth_reached: int = 0
    sum_nu: float = 0.0
    sum_inv_nu: float = 0.0
    root: int = 0
    trajectory: list[int] | None = None

    @classmethod
    def start(cls, tree: Tree, debug: bool = False) -> "WalkState":
        tree.expand(0)
        return cls(tree, trajectory=[0] if debug else None)

    @property
    def mean_children(self) -> float:
        return self.sum_nu / self.step_count

    @property
    def mean_reciprocal_children(self) -> float:
        return self.sum_inv_nu / self.step_count

    def recompute(self) -> tuple[float, float]:
        """Accumulators rebuilt from the retained trajectory (debug mode only)."""
        if self.trajectory is None:
            raise ValueError("trajectory not retained")
        nus = [self.tree.child_count(v) for v in self.trajectory[:-1]]
        return float(sum(nus)), math.fsum(1.0 / c for c in nus)


def _run(state: WalkState, lam: float, unif: np.ndarray, stop_depth: int = -1,
         nu_out: np.ndarray = _EMPTY_I, pos_out: np.ndarray = _EMPTY_I) -> int:
    """Advance ``state`` by len(unif) steps (fewer if ``stop_depth`` is hit). Returns steps taken."""
    tree = state.tree
    acc = np.array([0.0, 0.0, float(state.max_depth_reached), 0.0])
    t = 0
    v = state.current
    while True:
        st, v, t, n = K.walk(v, state.root, float(lam), unif, t, unif.size, int(stop_depth),
                             tree.topo, tree.key, tree.n, tree._cdf, tree._ks, tree.node_cap,
                             nu_out, pos_out, acc)
        tree.n = n
        if not tree.check_status(st):
            break
    state.current = int(v)
    state.step_count += t
    state.sum_nu += acc[0]
    state.sum_inv_nu += acc[1]
    state.max_depth_reached = int(acc[2])
    return t


def walk_step(state: WalkState, lam: float, rng) -> WalkState:
    """One transition; the departed vertex's child count enters the accumulators."""
    u = as_generator(rng).random(1)
    _run(state, lam, u)
    if state.trajectory is not None:
        state.trajectory.append(state.current)
    return state


def run_walk(tree: Tree, lam: float, n_steps: int, rng, record: bool = False,
             stop_depth: int = -1, debug: bool = False):
    """Walk ``n_steps`` from the root. With ``record`` also returns per-step child counts."""
    gen = as_generator(rng)
    state = WalkState.start(tree, debug)
    nus = np.empty(n_steps if record else 0, dtype=np.int64)
    pos = np.empty(n_steps if debug else 0, dtype=np.int64)
    done = 0
    while done < n_steps:
        m = min(CHUNK, n_steps - done)
        unif = gen.random(m)
        t = _run(state, lam, unif, stop_depth,
                 nus[done:done + m] if record else _EMPTY_I,
                 pos[done:done + m] if debug else _EMPTY_I)
        if debug:
            state.trajectory.extend(pos[done + 1:done + t].tolist())
            state.trajectory.append(state.current)
        done += t
        if t < m:
            break
    if record:
        return state, nus[:done]
    return state


@dataclass
class RayPrefix:
    """Vertices xi_0 (root), ..., xi_L of a ray; ``len(ray) == L``."""

    tree: Tree
    nodes: np.ndarray
    certified: bool
    margin: int | None = None
    tol: float | None = None
    steps_used: int = 0
    record: "RayRecord | None" = None

    def __len__(self) -> int:
        return int(self.nodes.size) - 1

    def degrees(self) -> np.ndarray:
        """Child counts of xi_0, ..., xi_L."""
        for v in self.nodes:
            self.tree.expand(int(v))
        return self.tree.topo[self.nodes, K.NCH].copy()

    def child_positions(self) -> np.ndarray:
        """Position of xi_{k+1} among the children of xi_k."""
        return self.nodes[1:] - self.tree.topo[self.nodes[:-1], K.FIRST]

    def is_path(self) -> bool:
        t = self.tree
        return self.nodes[0] == 0 and all(
            t.parent(int(b)) == int(a) for a, b in zip(self.nodes[:-1], self.nodes[1:]))


def _new_tree(dist_or_tree, gen, node_cap) -> Tree:
    if isinstance(dist_or_tree, Tree):
        return dist_or_tree
    return Tree(dist_or_tree, int(gen.integers(0, 2**64, dtype=np.uint64)), node_cap)


def extract_ray_prefix(dist: OffspringDistribution | Tree, lam: float, L: int, margin: int | None = None,
                       rng=None, max_steps: int = 10**8, node_cap: int = DEFAULT_NODE_CAP) -> RayPrefix:
    """Loop-erased ray prefix: walk until depth L + margin, keep the depth <= L ancestors."""
    if L < 1:
        raise ValueError("L must be at least 1")
    margin = default_margin(lam) if margin is None else int(margin)
    gen = as_generator(rng)
    tree = _new_tree(dist, gen, node_cap)
    state = WalkState.start(tree)
    target = L + margin
    # short prefixes are common, so draw uniforms in growing chunks
    chunk = 4096
    while state.max_depth_reached < target:
        if state.step_count >= max_steps:
            raise StepLimit(f"walk did not reach depth {target} within {max_steps} steps")
        m = min(chunk, max_steps - state.step_count)
        _run(state, lam, gen.random(m), stop_depth=target)
        chunk = min(2 * chunk, CHUNK)
    nodes = np.array(tree.ancestors(state.current)[: L + 1], dtype=np.int64)
    return RayPrefix(tree, nodes, False, margin=margin, steps_used=state.step_count)


def loop_erased_ray(dist: OffspringDistribution | Tree, lam: float, length: int, margin: int | None = None,
                    rng=None, max_steps: int = 10**9, node_cap: int = DEFAULT_NODE_CAP) -> RayPrefix:
    """A long loop-erased ray for ergodic averages (same rule as ``extract_ray_prefix``)."""
    return extract_ray_prefix(dist, lam, length, margin, rng, max_steps, node_cap)


@dataclass
class RayRecord:
    """Per-step data along an exactly sampled harmonic ray.

    For step k: child count of xi_k, its conductance C (sum of the children's
    refined betas), the chosen child's beta and the widest child interval.
    """

    nu: np.ndarray
    conductance: np.ndarray
    beta_next: np.ndarray
    width: np.ndarray
    lam: float
    tol: float
    certified: bool
    max_nodes: int = 0

    def __len__(self) -> int:
        return int(self.nu.size)

    @property
    def flow(self) -> np.ndarray:
        return self.beta_next / self.conductance


def _ray_chunk(tree, v, s0, L, lam, tol, depth_cap, unif, out):
    lf, uf = tree.frontier_values(lam)
    extrap = lf <= 0.0
    ef = tree.frontier_estimate(lam)
    state = K.new_ray_state(max(tree._kmax_int(), int(tree.topo[: tree.n, K.NCH].max())))
    s = s0
    while s < L:
        order, scratch = tree.work_arrays()
        st, v, s, n = K.harmonic_ray(v, s, L, float(lam), lf, uf, ef, float(tol), extrap,
                                     int(depth_cap), tree.node_cap, unif, tree.topo, tree.key,
                                     tree.n, tree._cdf, tree._ks, order, scratch, *state, *out)
        tree.n = n
        if st == K.OK:
            break
        if st == K.DEPTH_LIMIT:
            raise MaxDepth(f"child interval did not reach width {tol} at ray step {s}")
        if st == K.NODE_LIMIT:
            raise ResourceLimit(f"tree exceeded the node cap of {tree.node_cap}")
        tree.check_status(st)
    return v, extrap


def sample_harmonic_ray_exact(dist: OffspringDistribution | Tree, lam: float, L: int,
                              tol: float = DEFAULT_TOL, rng=None, depth_cap: int = DEFAULT_DEPTH_CAP,
                              node_cap: int = DEFAULT_NODE_CAP) -> RayPrefix:
    """Ray prefix drawn step by step from the flow rule beta(child) / C."""
    gen = as_generator(rng)
    tree = _new_tree(dist, gen, node_cap)
    out = _ray_buffers(L)
    last, extrap = _ray_chunk(tree, 0, 0, L, lam, tol, depth_cap, gen.random(L), out)
    ray = RayPrefix(tree, np.append(out[0], last), not extrap, tol=tol)
    ray.record = RayRecord(out[1], out[2], out[3], out[4], lam, tol, not extrap, tree.n)
    return ray


def _ray_buffers(L: int):
    return (np.empty(L, dtype=np.int64), np.empty(L, dtype=np.int64), np.empty(L),
            np.empty(L), np.empty(L))


def harmonic_ray_record(dist: OffspringDistribution, lam: float, n_steps: int, tol: float, rng,
                        depth_cap: int = DEFAULT_DEPTH_CAP, compact_nodes: int = 2_000_000,
                        chunk: int = 512, node_cap: int = DEFAULT_NODE_CAP) -> RayRecord:
    """Statistics along a long exactly sampled ray.

    Vertices above the current one are never revisited, so the tree is
    periodically replaced by the current vertex's descendant tree.
    """
    gen = as_generator(rng)
    tree = _new_tree(dist, gen, node_cap)
    nu = np.empty(n_steps, dtype=np.int64)
    cond = np.empty(n_steps)
    bnext = np.empty(n_steps)
    width = np.empty(n_steps)
    v = 0
    extrap = False
    peak = 0
    done = 0
    while done < n_steps:
        m = min(chunk, n_steps - done)
        out = (np.empty(m, dtype=np.int64), nu[done:done + m], cond[done:done + m],
               bnext[done:done + m], width[done:done + m])
        v, extrap = _ray_chunk(tree, v, 0, m, lam, tol, depth_cap, gen.random(m), out)
        done += m
        peak = max(peak, tree.n)
        if tree.n > compact_nodes:
            tree = tree.subtree(v)
            v = 0
    return RayRecord(nu, cond, bnext, width, lam, tol, not extrap, peak)


STATISTICS = ("children", "reciprocal_children", "log_flow", "log_conductance_plus_lambda")


def birkhoff_average(path, tree: Tree | None = None, statistic: str = "children", lam: float | None = None,
                     tol: float = DEFAULT_TOL, depth_cap: int = DEFAULT_DEPTH_CAP) -> float:
    """Time average of a vertex statistic along ``path`` (a RayPrefix, RayRecord or node sequence).

    For flow and conductance statistics the path must be a ray (consecutive
    parent/child vertices); the last vertex only serves as the target of the
    final step.
    """
    if statistic not in STATISTICS:
        raise ValueError(f"unknown statistic {statistic!r}")
    if isinstance(path, RayRecord):
        return _record_average(path, statistic)
    if isinstance(path, RayPrefix):
        tree = path.tree
        path = path.nodes
    path = np.asarray(path, dtype=np.int64)
    if path.size == 0:
        raise ValueError("empty path")
    if statistic in ("children", "reciprocal_children"):
        for v in path:
            tree.expand(int(v))
        nus = tree.topo[path, K.NCH].astype(float)
        return float(np.mean(nus if statistic == "children" else 1.0 / nus))
    if lam is None:
        raise ValueError("lam is required for flow statistics")
    vals = []
    for a, b in zip(path[:-1], path[1:]):
        tree.expand(int(a))
        betas = {c: beta_refined(tree, lam, tol, node=c, depth_cap=depth_cap).mid
                 for c in tree.children(int(a))}
        cond = sum(betas.values())
        if statistic == "log_flow":
            vals.append(math.log(betas[int(b)] / cond))
        else:
            vals.append(math.log(cond + lam))
    return float(np.mean(vals))


def _record_average(rec: RayRecord, statistic: str) -> float:
    if statistic == "children":
        return float(rec.nu.mean())
    if statistic == "reciprocal_children":
        return float(np.mean(1.0 / rec.nu))
    if statistic == "log_flow":
        return float(np.mean(np.log(rec.flow)))
    return float(np.mean(np.log(rec.conductance + rec.lam)))
