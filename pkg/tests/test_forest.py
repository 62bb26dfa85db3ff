import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onebit_sl.dataset import collect_training
from onebit_sl.detectors import detect_bernoulli, fit_bernoulli, hamming_distances
from onebit_sl.forest import (
    TreeNode,
    build_forest,
    build_tree,
    complexity_estimate,
    detect_lsl,
    search_forest,
)
from onebit_sl.netsim import SystemConfig, class_decode, draw_channel, transmit


def _signatures(n, N=32, seed=0):
    rng = np.random.default_rng(seed)
    return np.where(rng.random((n, N)) < 0.5, 1, -1).astype(np.int8)


def _leaf_members(tree: TreeNode):
    return np.concatenate([leaf.members for leaf in tree.leaves()])


def _check_tree(tree: TreeNode, n: int, J: int):
    members = _leaf_members(tree)
    assert len(members) == n
    assert set(members.tolist()) == set(range(n))
    stack = [tree]
    while stack:
        node = stack.pop()
        if node.is_leaf:
            assert 1 <= len(node.members) < J
        else:
            assert 2 <= len(node.children) <= J
            stack.extend(node.children)


def _system(K=4, N_r=16, snr_db=0.0, seed=0, T=15):
    cfg = SystemConfig(K=K, N_r=N_r, L=N_r, snr_db=snr_db)
    rng = np.random.default_rng(seed)
    ch = draw_channel(cfg, rng)
    D = collect_training(ch, cfg, T, rng)
    return cfg, ch, fit_bernoulli(D), rng


def test_small_set_is_single_leaf():
    tree = build_tree(_signatures(3), J=4, rng=np.random.default_rng(0))
    assert tree.is_leaf
    assert sorted(tree.members) == [0, 1, 2]
    one = build_tree(_signatures(1), J=2, rng=np.random.default_rng(0))
    assert one.is_leaf and list(one.members) == [0]


def test_hundred_signatures_partition():
    tree = build_tree(_signatures(100), J=8, rng=np.random.default_rng(1))
    _check_tree(tree, 100, 8)


def test_duplicate_signatures_still_partition():
    sig = np.repeat(_signatures(5), 20, axis=0)
    tree = build_tree(sig, J=4, rng=np.random.default_rng(2))
    _check_tree(tree, 100, 4)
    all_same = np.ones((50, 8), dtype=np.int8)
    _check_tree(build_tree(all_same, J=3, rng=np.random.default_rng(0)), 50, 3)


def test_pivots_assigned_to_nearest():
    sig = _signatures(200, seed=4)
    tree = build_tree(sig, J=8, rng=np.random.default_rng(4))
    pivots = sig[[c.pivot for c in tree.children]]
    for j, child in enumerate(tree.children):
        for member in _leaf_members(child):
            d = (pivots != sig[member]).sum(axis=1)
            if member != child.pivot:
                assert d[j] == d.min() and j == int(np.argmin(d))


def test_forest_singleton_and_seeds():
    sig = _signatures(256)
    single = build_forest(sig, J=8, W=1, rng=np.random.default_rng(7))
    tree = build_tree(sig, J=8, rng=np.random.default_rng(7))
    assert single.W == 1
    np.testing.assert_array_equal(_leaf_members(single.trees[0]), _leaf_members(tree))

    a = build_forest(sig, J=8, W=1, rng=np.random.default_rng(1)).trees[0]
    b = build_forest(sig, J=8, W=1, rng=np.random.default_rng(2)).trees[0]
    assert [c.pivot for c in a.children] != [c.pivot for c in b.children]
    for t in (a, b):
        _check_tree(t, 256, 8)


def test_forest_w4_partitions():
    forest = build_forest(_signatures(256), J=32, W=4, rng=np.random.default_rng(3))
    assert len(forest.trees) == 4
    for tree in forest.trees:
        _check_tree(tree, 256, 32)


def test_build_rejects_bad_args():
    with pytest.raises(ValueError):
        build_tree(_signatures(4), J=1, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        build_forest(_signatures(4), J=2, W=0)


def test_full_budget_returns_every_class():
    sig = _signatures(256, seed=5)
    forest = build_forest(sig, J=8, W=4, rng=np.random.default_rng(5))
    for q in _signatures(20, seed=6):
        res = search_forest(forest, q, 256)
        assert sorted(res.candidates.tolist()) == list(range(256))


def test_candidates_sorted_unique_and_bounded():
    sig = _signatures(256, seed=8)
    forest = build_forest(sig, J=8, W=4, rng=np.random.default_rng(8))
    for q in _signatures(50, seed=9):
        res = search_forest(forest, q, 20)
        cand = res.candidates
        assert len(cand) == len(set(cand.tolist())) <= 20
        d = (sig[cand] != q).sum(axis=1)
        keys = list(zip(d.tolist(), cand.tolist()))
        assert keys == sorted(keys)
        assert res.examined >= 20


def test_query_equal_to_signature_is_found():
    for seed in range(5):
        sig = _signatures(300, N=24, seed=seed)
        forest = build_forest(sig, J=6, W=2, rng=np.random.default_rng(seed))
        for c in range(0, 300, 7):
            for budget in (1, 5):
                res = search_forest(forest, sig[c], budget)
                # any exact duplicate of sig[c] is an equally valid nearest point
                assert (sig[res.candidates[0]] == sig[c]).all()


def test_budget_one_lsl_returns_that_candidate():
    cfg, ch, p, rng = _system(K=3, N_r=8)
    forest = build_forest(p.signatures, J=8, W=2, rng=rng)
    R = transmit(ch, class_decode(rng.integers(0, 64, 100), 3, 4), rng)
    for r in R:
        got, res = detect_lsl(r, forest, p, 1, return_search=True)
        assert got == res.candidates[0]


def test_recall_of_hamming_nearest():
    # 256 classes, J=32, W=4, L_max=16; queries are real observations at 5 dB
    cfg, ch, p, rng = _system(K=4, N_r=32, snr_db=5.0, seed=21)
    forest = build_forest(p.signatures, J=32, W=4, rng=rng)
    Q = transmit(ch, class_decode(rng.integers(0, 256, 10_000), 4, 4), rng)
    d = hamming_distances(Q, p.signatures)
    hits = [d[i, search_forest(forest, q, 16).candidates].min() == d[i].min() for i, q in enumerate(Q)]
    assert np.mean(hits) >= 0.95


def test_lsl_full_budget_equals_bernoulli():
    cfg, ch, p, rng = _system(K=3, N_r=8, snr_db=-2.0)
    forest = build_forest(p.signatures, J=8, W=3, rng=rng)
    R = np.where(rng.random((300, 16)) < 0.5, 1, -1).astype(np.int8)
    np.testing.assert_array_equal(detect_lsl(R, forest, p, 64), detect_bernoulli(R, p))
    np.testing.assert_array_equal(detect_lsl(R, forest, p, 64, exact=True), detect_bernoulli(R, p, exact=True))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 9), st.integers(1, 5), st.integers(1, 120))
def test_search_invariants(seed, J, W, budget):
    sig = _signatures(120, N=16, seed=seed)
    forest = build_forest(sig, J=J, W=W, rng=np.random.default_rng(seed))
    q = _signatures(1, N=16, seed=seed + 1)[0]
    res = search_forest(forest, q, budget)
    assert len(res.candidates) == len(np.unique(res.candidates)) == min(budget, res.examined)
    # the loop guard is checked between leaf visits
    assert res.examined < budget + J or res.examined == len(sig)


def test_search_rejects_bad_budget():
    forest = build_forest(_signatures(10), J=4, W=1, rng=np.random.default_rng(0))
    for bad in (0, 11):
        with pytest.raises(ValueError):
            search_forest(forest, _signatures(1)[0], bad)


def test_complexity_examples():
    search, build = complexity_estimate(128, 246, 32, 6, 4, 4)
    assert search == pytest.approx(128 * 246 * 3.4, rel=1e-12)
    assert search == pytest.approx(107_059.2, rel=1e-12)
    assert build == pytest.approx(4**6 * 128 * 32 * 4 * 2.4, rel=1e-12)
    s, _ = complexity_estimate(64, 10, 4, 1, 4, 1)
    assert s == pytest.approx(2 * 64 * 10, rel=1e-12)
    _, b1 = complexity_estimate(64, 10, 8, 3, 4, 2)
    _, b2 = complexity_estimate(64, 10, 8, 3, 4, 4)
    assert b2 == pytest.approx(2 * b1, rel=1e-12)
    with pytest.raises(ValueError):
        complexity_estimate(0, 1, 2, 1, 4, 1)
