import math

import numpy as np
import pytest
from scipy import stats as st

from gwharmonic.gw_tree import Tree
from gwharmonic.rng import RngStream
from gwharmonic.stats import batch_means
from gwharmonic.walk import (WalkState, birkhoff_average, extract_ray_prefix, harmonic_ray_record,
                             loop_erased_ray, ray_tolerance, run_walk, sample_harmonic_ray_exact, walk_step)


def _moves(tree, traj):
    """(departed vertex, kind) with kind -1 for parent moves and the child position otherwise."""
    out = []
    for a, b in zip(traj[:-1], traj[1:]):
        if tree.parent(a) == b:
            out.append((a, -1))
        else:
            out.append((a, b - tree.children(a)[0]))
    return out


def test_binary_transition_law(binary):
    tree = Tree(binary, 1)
    state = run_walk(tree, 1.0, 300_000, RngStream(1).generator(), debug=True)
    moves = [k for a, k in _moves(tree, state.trajectory) if a != 0]
    obs = np.array([moves.count(k) for k in (-1, 0, 1)])
    assert st.chisquare(obs).pvalue > 0.01


@pytest.mark.parametrize("lam", [0.25, 1.0, 1.25])
def test_transition_law_by_degree(half, lam):
    tree = Tree(half, 2)
    state = run_walk(tree, lam, 200_000, RngStream(2).generator(), debug=True)
    for deg in (1, 2):
        kinds = [k for a, k in _moves(tree, state.trajectory) if a != 0 and tree.child_count(a) == deg]
        obs = np.array([kinds.count(k) for k in [-1] + list(range(deg))])
        exp = np.array([lam] + [1.0] * deg) / (deg + lam) * obs.sum()
        assert st.chisquare(obs, exp).pvalue > 0.01


def test_root_never_moves_up(half):
    tree = Tree(half, 3)
    state = run_walk(tree, 1.4, 50_000, 3, debug=True)
    assert all(b != -1 for b in state.trajectory)
    assert state.tree.parent(0) == -1


def test_forward_walk(binary):
    tree = Tree(binary, 4)
    state = run_walk(tree, 0.0, 500, 4)
    assert state.max_depth_reached == 500 and tree.depth(state.current) == 500


def test_walk_step_and_accumulators(half):
    tree = Tree(half, 5)
    state = WalkState.start(tree, debug=True)
    gen = np.random.default_rng(5)
    for _ in range(2000):
        walk_step(state, 0.8, gen)
    s, r = state.recompute()
    assert abs(s - state.sum_nu) < 1e-9 and abs(r - state.sum_inv_nu) < 1e-9
    assert state.step_count == 2000


def test_transience(half):
    failures = 0
    for k in range(300):
        state = run_walk(Tree(half, 1000 + k), 1.0, 1_000_000, k, stop_depth=50)
        failures += state.max_depth_reached < 50
    assert failures / 300 < 0.01


def test_loop_erased_binary_uniform(binary):
    first = []
    for k in range(20_000):
        ray = extract_ray_prefix(binary, 1.0, 10, 20, RngStream(6).derive(k))
        first.append(int(ray.child_positions()[0]))
    c = np.bincount(first, minlength=2)
    assert abs(c[0] - 10_000) < 3 * math.sqrt(5000)


def test_lambda_zero_ray_is_walk(half):
    tree = Tree(half, 7)
    ray = extract_ray_prefix(tree, 0.0, 12, 5, 7)
    assert ray.is_path() and len(ray) == 12
    assert [tree.depth(int(v)) for v in ray.nodes] == list(range(13))


def test_ray_prefix_is_path(half):
    ray = extract_ray_prefix(half, 1.2, 15, None, 8)
    assert ray.is_path() and ray.margin == 60 and not ray.certified


def test_exact_ray_binary_uniform(binary):
    pos = [int(sample_harmonic_ray_exact(binary, 1.0, 1, 1e-6, RngStream(9).derive(k)).child_positions()[0])
           for k in range(4000)]
    assert abs(np.mean(pos) - 0.5) < 3 * 0.5 / math.sqrt(4000)


def test_exact_first_step(half):
    hits = 0
    n = 4000
    tol = ray_tolerance(half, 1.0)
    for k in range(n):
        ray = sample_harmonic_ray_exact(half, 1.0, 1, tol, RngStream(10).derive(k))
        hits += ray.degrees()[0] == 2 and ray.child_positions()[0] == 0
    # children are exchangeable, so P(nu = 2 and first child) = 1/2 * 1/2
    p = hits / n
    assert abs(p - 0.25) < 3 * math.sqrt(0.25 * 0.75 / n)


def test_exact_ray_tolerance_robust(half):
    def degs(tol, label):
        return [sample_harmonic_ray_exact(half, 0.5, 4, tol, RngStream(11).derive(label, k)).degrees()[1:].sum()
                for k in range(3000)]
    a, b = degs(1e-3, "a"), degs(1e-6, "b")
    assert st.ks_2samp(a, b).pvalue > 0.01


def test_loop_erased_vs_exact_small(half):
    le = [extract_ray_prefix(half, 0.5, 5, None, RngStream(12).derive(k)).degrees()[1:].sum() for k in range(3000)]
    ex = [sample_harmonic_ray_exact(half, 0.5, 5, 1e-6, RngStream(13).derive(k)).degrees()[1:].sum()
          for k in range(3000)]
    assert st.ks_2samp(le, ex).pvalue > 0.01


def test_birkhoff_binary(binary):
    ray = sample_harmonic_ray_exact(binary, 1.0, 20, 1e-9, 1)
    assert birkhoff_average(ray, statistic="children") == 2.0
    assert abs(birkhoff_average(ray, statistic="log_conductance_plus_lambda", lam=1.0) - math.log(2)) < 1e-8
    assert abs(birkhoff_average(ray, statistic="log_flow", lam=1.0) + math.log(2)) < 1e-8


def test_birkhoff_walk_children(half):
    tree = Tree(half, 14)
    _, nus = run_walk(tree, 1.0, 1_000_000, 14, record=True)
    e = batch_means(nus.astype(float))
    assert abs(e.mean - 1.5) < 3 * e.std_error


def test_record_average_matches(half):
    rec = harmonic_ray_record(half, 0.5, 400, 1e-6, 15)
    assert len(rec) == 400 and rec.certified
    assert np.all(rec.width < 1e-6)
    assert birkhoff_average(rec, statistic="children") == rec.nu.mean()
    assert np.all((rec.flow > 0) & (rec.flow <= 1))


def test_ray_tolerance_policy(half):
    assert ray_tolerance(half, 0.5) == 1e-6
    assert ray_tolerance(half, 1.0) == 1e-4
    assert ray_tolerance(half, 1.25) == 1e-2


def test_loop_erased_long(half):
    ray = loop_erased_ray(half, 0.5, 2000, rng=16)
    assert len(ray) == 2000 and ray.is_path()
