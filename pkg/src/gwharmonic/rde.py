"""Population dynamics for the fixed-point law of the escape probability.

A pool of n values stands in for the law of beta(T) under the Galton-Watson
measure. A replacement draws nu from the offspring law, picks nu pool entries
uniformly with replacement from the same block and stores S / (lam + S), S
being their sum. Replacements are asynchronous: an updated entry can be
picked immediately.

Closed-form estimators never build trees. They synthesize (beta(T), nu+,
C(T+)) triples from pool entries through a ``DrawPlan`` that depends only on
the offspring law, the pool size and the RNG, so the same plan can be laid
over pools at different lambdas (common random numbers).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import BadInit
from .gw_tree import OffspringDistribution, sample_offspring
from .rng import as_generator
from .stats import EstimateWithCI, jackknife_mean, jackknife_ratio

MIN_POOL = 1000
DEFAULT_POOL = 100_000
DEFAULT_SWEEPS = 200
N_BLOCKS = 100


@dataclass(eq=False)
class BetaPool:
    values: np.ndarray
    lam: float
    dist: OffspringDistribution | None = None
    sweep_count: int = 0
    # offspring count behind each value; zero until the entry is first replaced
    degrees: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def lower(self) -> float:
        return max(0.0, 1.0 - self.lam)

    def in_bounds(self) -> bool:
        v = self.values
        return bool(np.all(v > self.lower) and np.all(v < 1.0))

    def block(self, b: int, n_blocks: int = N_BLOCKS) -> slice:
        e = block_edges(len(self), n_blocks)
        return slice(int(e[b]), int(e[b + 1]))


def block_edges(n: int, n_blocks: int = N_BLOCKS) -> np.ndarray:
    """Block b holds indices j with j * n_blocks // n == b."""
    return -((-np.arange(n_blocks + 1, dtype=np.int64) * n) // n_blocks)


def init_pool(n: int, lam: float, mode: str = "constant", value: float | None = None,
              rng=None, dist: OffspringDistribution | None = None) -> BetaPool:
    """A pool of ``n`` values strictly inside (max(0, 1 - lam), 1).

    Modes: ``constant`` (every entry equal to ``value``, default the middle of
    the range), ``uniform`` (i.i.d. uniform on the range), and ``upper`` (the
    certified upper value 1 - lam / k_max of ``dist``).
    """
    if n < MIN_POOL:
        raise BadInit(f"pool size {n} below the minimum {MIN_POOL}")
    if lam <= 0:
        raise BadInit("lambda must be positive")
    lo = max(0.0, 1.0 - lam)
    if mode == "constant":
        c = 0.5 * (lo + 1.0) if value is None else float(value)
        if not lo < c < 1.0:
            raise BadInit(f"constant {c} outside ({lo}, 1)")
        values = np.full(n, c)
    elif mode == "uniform":
        u = as_generator(rng).random(n)
        values = lo + (1.0 - lo) * u
        # the open interval excludes both ends
        values = np.clip(values, np.nextafter(lo, 1.0), np.nextafter(1.0, 0.0))
    elif mode == "upper":
        if dist is None:
            raise BadInit("upper mode needs the offspring distribution")
        c = dist.frontier_values(lam)[1]
        if not lo < c < 1.0:
            raise BadInit(f"upper value {c} outside ({lo}, 1)")
        values = np.full(n, c)
    else:
        raise BadInit(f"unknown init mode {mode!r}")
    return BetaPool(values, float(lam), dist, 0, np.zeros(n, dtype=np.int64))


def sweep_plan(dist: OffspringDistribution, n: int, gen: np.random.Generator,
               n_blocks: int = N_BLOCKS):
    """Offspring counts and pick indices for one sweep; independent of lambda.

    Entries only pick from their own block, so the blocks evolve as
    independent sub-populations and block jackknife errors include the
    population's own fluctuation.
    """
    nus = sample_offspring(dist, gen, size=n).astype(np.int64)
    _, lo, size = block_layout(n, n, n_blocks)
    idx = block_pick(gen, np.repeat(lo, nus), np.repeat(size, nus))
    return nus, idx


def evolve_pool(pool: BetaPool, dist: OffspringDistribution, sweeps: int, rng) -> BetaPool:
    """Run ``sweeps`` sweeps of n asynchronous replacements in place; returns the pool."""
    if sweeps < 1:
        raise ValueError("sweeps must be at least 1")
    gen = as_generator(rng)
    n = len(pool)
    if pool.degrees is None:
        pool.degrees = np.zeros(n, dtype=np.int64)
    for _ in range(sweeps):
        nus, idx = sweep_plan(dist, n, gen)
        K.evolve_sweep(pool.values, pool.degrees, float(pool.lam), nus, idx)
    pool.dist = dist
    pool.sweep_count += sweeps
    return pool


def solve_pool(dist: OffspringDistribution, lam: float, n: int = DEFAULT_POOL,
               sweeps: int = DEFAULT_SWEEPS, rng=None, mode: str = "upper") -> BetaPool:
    """Initialize and evolve a pool in one call."""
    gen = as_generator(rng)
    if mode == "upper" and dist.frontier_values(lam)[1] <= max(0.0, 1.0 - lam):
        mode = "constant"
    pool = init_pool(n, lam, mode, rng=gen, dist=dist)
    return evolve_pool(pool, dist, sweeps, gen)


def _log_inv(b):
    return -np.log(b)


POOL_FUNCTIONS = {
    "beta": lambda b, lam: b,
    "log_inv_beta": lambda b, lam: _log_inv(b),
    "inv_lam_minus_1_plus_beta": lambda b, lam: 1.0 / (lam - 1.0 + b),
    "entropy_bound_term": lambda b, lam: b / (1.0 - b) * _log_inv(b),
    "conductance": lambda b, lam: lam * b / (1.0 - b),
}


def pool_expectations(pool: BetaPool, functions=("beta", "log_inv_beta"),
                      n_blocks: int = N_BLOCKS) -> dict[str, EstimateWithCI]:
    """Plug-in means over the pool with block-jackknife errors.

    ``functions`` holds names from ``POOL_FUNCTIONS`` or maps names to
    callables ``f(beta, lam)``.
    """
    if isinstance(functions, dict):
        items = list(functions.items())
    else:
        items = [(name, POOL_FUNCTIONS[name]) for name in functions]
    out = {}
    for name, f in items:
        out[name] = mean_estimate(f(pool.values, pool.lam), n_blocks)
    return out


def pool_histogram(pool: BetaPool, bins: int = 50) -> list[tuple[float, float, int]]:
    """Rows (bin_lo, bin_hi, count) over the admissible range."""
    counts, edges = np.histogram(pool.values, bins=bins, range=(pool.lower, 1.0))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def block_layout(n_draws: int, pool_size: int, n_blocks: int = N_BLOCKS):
    """Block of each draw and the start and length of that block's pool range."""
    block = (np.arange(n_draws, dtype=np.int64) * n_blocks) // n_draws
    edges = block_edges(pool_size, n_blocks)
    lo = edges[block]
    return block, lo, edges[block + 1] - lo


def block_pick(gen: np.random.Generator, lo: np.ndarray, size: np.ndarray, shape=()) -> np.ndarray:
    """Uniform pool indices of shape (n_draws, *shape), each inside its draw's block."""
    shape = tuple(shape)
    u = gen.random((lo.size,) + shape)
    s = size.reshape((-1,) + (1,) * len(shape))
    return lo.reshape(s.shape) + np.minimum((u * s).astype(np.int64), s - 1)


@dataclass(frozen=True, eq=False)
class DrawPlan:
    """Index plan for synthesizing independent (T, T+) pairs from a pool.

    Draw j belongs to block ``block[j]`` and only uses pool entries from the
    same block, so delete-one-block jackknife replicates also see the pool's
    own sampling noise. ``extra`` holds ``n_extra`` spare indices per draw
    for functionals needing more independent trees.
    """

    nu_plus: np.ndarray
    beta_idx: np.ndarray
    child_idx: np.ndarray
    extra: np.ndarray
    block: np.ndarray
    pool_size: int
    k_width: int

    @property
    def n(self) -> int:
        return int(self.nu_plus.size)

    def mask(self) -> np.ndarray:
        return np.arange(self.k_width)[None, :] < self.nu_plus[:, None]


def make_plan(dist: OffspringDistribution, pool_size: int, n_draws: int | None = None, rng=None,
              n_blocks: int = N_BLOCKS, k_width: int | None = None, n_extra: int = 0,
              size_biased: bool = False) -> DrawPlan:
    """Draw nu+ from the offspring law (or its size-biased version) and block-local pool indices.

    ``k_width`` sets how many child slots are drawn per sample (at least the
    largest offspring count), which lets fixed-k functionals reuse the plan.
    """
    gen = as_generator(rng)
    n_draws = pool_size if n_draws is None else int(n_draws)
    nu = sample_offspring(dist, gen, size_biased=size_biased, size=n_draws).astype(np.int64)
    width = int(max(dist.k_max, nu.max(initial=1))) if k_width is None else int(k_width)
    if width < int(nu.max(initial=1)):
        raise ValueError("k_width smaller than the largest drawn offspring count")
    block, lo, size = block_layout(n_draws, pool_size, n_blocks)

    def pick(*shape):
        return block_pick(gen, lo, size, shape)

    extra = pick(n_extra) if n_extra else np.empty((n_draws, 0), dtype=np.int64)
    return DrawPlan(nu, pick(), pick(width), extra, block, int(pool_size), width)


@dataclass(frozen=True, eq=False)
class Synthesized:
    """Per-draw beta(T), nu+, child betas of T+ (zero-padded) and C(T+)."""

    beta: np.ndarray
    nu_plus: np.ndarray
    child_betas: np.ndarray
    c_plus: np.ndarray
    block: np.ndarray
    lam: float


def synthesize(pool: BetaPool, plan: DrawPlan) -> Synthesized:
    if plan.pool_size != len(pool):
        raise ValueError("plan was made for a pool of another size")
    v = pool.values
    kids = np.where(plan.mask(), v[plan.child_idx], 0.0)
    return Synthesized(v[plan.beta_idx], plan.nu_plus, kids, kids.sum(axis=1), plan.block,
                       pool.lam)


def weighted_ratio(num: np.ndarray, den: np.ndarray, n_blocks: int = N_BLOCKS,
                   method: str = "closed_form_pool") -> EstimateWithCI:
    """Ratio of sums with exact-equality detection (deterministic laws give zero spread)."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    if _constant(num) and _constant(den) and den[0] != 0.0:
        return EstimateWithCI.exact(float(num[0] / den[0]))
    return jackknife_ratio(num, den, n_blocks, method)


def _constant(x: np.ndarray) -> bool:
    return bool(np.ptp(x) <= 1e-14 * max(1.0, abs(x[0])))


def mean_estimate(x: np.ndarray, n_blocks: int = N_BLOCKS) -> EstimateWithCI:
    x = np.asarray(x, dtype=float)
    if _constant(x):
        return EstimateWithCI.exact(float(x[0]))
    return jackknife_mean(x, n_blocks)
