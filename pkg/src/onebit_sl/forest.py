"""Randomised hierarchical clustering trees over class signatures.

Trees are built by recursive random-pivot clustering in Hamming space and
searched best-first: each query descends greedily in every tree while all
non-chosen siblings wait in one shared priority queue, and the search keeps
popping the closest waiting node until ``L_max`` distinct classes have been
collected or the queue is empty.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .detectors import BernoulliParams, bernoulli_scores

__all__ = [
    "TreeNode",
    "ClusterForest",
    "SearchResult",
    "build_tree",
    "build_forest",
    "search_forest",
    "detect_lsl",
    "complexity_estimate",
    "SEARCH_COST_BOUND",
]

# Measured distance evaluations per query (pivots plus ranked candidates)
# stay below this multiple of L_max * (K log_J m + 1); calibrated on
# simulated observations with J=8, W=4, L_max=16, K=2..6.
SEARCH_COST_BOUND = 2.5


@dataclass
class TreeNode:
    """A tree node.

    ``pivot`` is the class whose signature represents this node to its
    parent (None at the root). Internal nodes carry ``children``; leaves
    carry ``members``.
    """

    pivot: int | None
    children: list = field(default_factory=list)
    members: np.ndarray | None = None
    # stacked pivot signatures of the children, for one-shot distance calls
    child_pivots: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_leaf(self) -> bool:
        return self.members is not None

    def leaves(self):
        stack = [self]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                yield node
            else:
                stack.extend(node.children)

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(child.depth() for child in self.children)


def _hamming_to(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.count_nonzero(points != q, axis=-1)


def _build(ids, signatures, J, rng, pivot, counter):
    if len(ids) < J:
        return TreeNode(pivot, members=np.sort(ids))
    pivot_pos = rng.choice(len(ids), size=J, replace=False)
    pts = signatures[ids]
    # (n, J) distances; argmin keeps the lowest pivot on ties
    dist = np.count_nonzero(pts[:, None, :] != pts[pivot_pos][None, :, :], axis=-1)
    counter[0] += dist.size
    assign = np.argmin(dist, axis=1)
    # a pivot always stays in its own cluster, even if its signature is
    # duplicated by an earlier pivot, so every cluster is non-empty and
    # strictly smaller than ids
    assign[pivot_pos] = np.arange(J)
    node = TreeNode(pivot)
    for j in range(J):
        sub = ids[assign == j]
        node.children.append(_build(sub, signatures, J, rng, int(ids[pivot_pos[j]]), counter))
    node.child_pivots = signatures[[child.pivot for child in node.children]]
    return node


def build_tree(signatures, J: int, rng: np.random.Generator, ids=None, counter=None) -> TreeNode:
    """One hierarchical clustering tree over ``signatures`` (rows = classes).

    ``ids`` restricts the tree to a subset of class indices. ``counter`` is
    an optional one-element list accumulating distance evaluations.
    """
    if J < 2:
        raise ValueError(f"J must be >= 2, got {J}")
    signatures = np.asarray(signatures)
    ids = np.arange(len(signatures)) if ids is None else np.asarray(ids, dtype=np.int64)
    if len(ids) == 0:
        raise ValueError("cannot build a tree over no signatures")
    return _build(ids, signatures, J, rng, None, counter if counter is not None else [0])


@dataclass
class ClusterForest:
    trees: list
    J: int
    W: int
    signature_table: np.ndarray  # (C, N)
    build_distance_evals: int = 0

    @property
    def num_classes(self) -> int:
        return len(self.signature_table)


def build_forest(signatures, J: int = 32, W: int = 4, rng: np.random.Generator | None = None) -> ClusterForest:
    if W < 1:
        raise ValueError(f"W must be >= 1, got {W}")
    rng = np.random.default_rng() if rng is None else rng
    signatures = np.asarray(signatures)
    counter = [0]
    trees = [build_tree(signatures, J, rng, counter=counter) for _ in range(W)]
    return ClusterForest(trees, J, W, signatures, counter[0])


@dataclass
class SearchResult:
    candidates: np.ndarray  # class indices, nearest first
    examined: int  # distinct classes collected (ell)
    node_distance_evals: int  # pivot distances computed while descending

    @property
    def distance_evals(self) -> int:
        """Pivot distances plus one distance per ranked candidate."""
        return self.node_distance_evals + self.examined


def search_forest(forest: ClusterForest, r, L_max: int) -> SearchResult:
    """Reduced search space for observation ``r``.

    The budget counts distinct classes, so overlapping leaves from several
    trees do not exhaust it early. Equal-distance queue entries pop in
    insertion order.
    """
    C = forest.num_classes
    if not 1 <= L_max <= C:
        raise ValueError(f"L_max must lie in [1, {C}], got {L_max}")
    r = np.asarray(r)
    queue: list = []
    tick = itertools.count()
    seen = np.zeros(C, dtype=bool)
    collected: list = []
    evals = 0

    def traverse(node: TreeNode):
        nonlocal evals
        while not node.is_leaf:
            d = _hamming_to(node.child_pivots, r)
            evals += len(d)
            best = int(np.argmin(d))
            for j, child in enumerate(node.children):
                if j != best:
                    heapq.heappush(queue, (int(d[j]), next(tick), child))
            node = node.children[best]
        fresh = node.members[~seen[node.members]]
        seen[fresh] = True
        collected.append(fresh)

    for tree in forest.trees:
        traverse(tree)
    examined = int(seen.sum())
    while queue and examined < L_max:
        traverse(heapq.heappop(queue)[2])
        examined = int(seen.sum())

    cand = np.concatenate(collected)
    dist = _hamming_to(forest.signature_table[cand], r)
    order = np.lexsort((cand, dist))
    return SearchResult(cand[order][:L_max], examined, evals)


def detect_lsl(r, forest: ClusterForest, p: BernoulliParams, L_max: int, exact: bool = False, return_search: bool = False):
    """Bernoulli detector restricted to the forest's reduced search space.

    Accepts one observation or a (B, N) batch. With ``return_search`` the
    per-query :class:`SearchResult` objects are returned alongside.
    """
    R = np.asarray(r)
    single = R.ndim == 1
    R = np.atleast_2d(R)
    out = np.empty(len(R), dtype=np.int64)
    searches = []
    for b, x in enumerate(R):
        res = search_forest(forest, x, L_max)
        cand = np.sort(res.candidates)
        out[b] = cand[np.argmin(bernoulli_scores(x, p, cand, exact=exact))]
        searches.append(res)
    result = int(out[0]) if single else out
    if return_search:
        return result, (searches[0] if single else searches)
    return result


def complexity_estimate(N: int, L_max: int, J: int, K: int, m: int, W: int):
    """Closed-form operation counts (no hidden constants).

    search: N * L_max * (K log_J m + 1)
    build:  m^K * N * J * W * K log_J m
    """
    for name, v in (("N", N), ("L_max", L_max), ("J", J), ("K", K), ("m", m), ("W", W)):
        if v <= 0:
            raise ValueError(f"{name} must be positive, got {v}")
    if J < 2:
        raise ValueError(f"J must be >= 2, got {J}")
    height = K * math.log(m) / math.log(J)
    return N * L_max * (height + 1), m**K * N * J * W * height
