"""Electrical-network computations on finite trees.

Unit resistances per edge throughout. The level-n hitting distribution of
simple random walk is computed by the flow recursion: with C(v) the
effective conductance from v to level n inside v's descendant subtree and
D(v) = C(v)/(1+C(v)) the conductance of the branch entering v from its
parent (D = 1 on the boundary), the walk's hitting mass splits at every
vertex proportionally to the children's D values. All masses are carried in
log space; a depth-10^3 path keeps log-mass 0 exactly.

The backward-tree statistics use two exact scalar recursions derived by
series/parallel reduction and validated against an absorbing-chain solve:

    h_k = 1 / (L_k + 1/(c_{k-1} + h_{k-1}))        (c_0 + h_0 = infinity)
    p_k = h_k/(c_k + h_k + 1/L_{k+1}) * prod_{j<k} h_j/(h_j + c_j)

which make the product identity p_1 = p_k * prod_j exp(Q_j) hold to
floating-point accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gwtree import BackwardTree, Tree, reduce_tree
from .offspring import SpecialLaw, make_theta, size_bias

__all__ = [
    "HarmonicResult",
    "BackwardStats",
    "harmonic_measure",
    "conductance_with_stub",
    "hit_prob_marked",
    "backward_stats",
    "limit_q_chain",
]


@dataclass
class HarmonicResult:
    """Level-n hitting law and subtree conductances of a reduced tree."""

    n: int
    leaves: np.ndarray = field(repr=False)  # level-n vertex ids
    log_mass: np.ndarray = field(repr=False)  # aligned with `leaves`
    conductance: np.ndarray = field(repr=False)  # per vertex; +inf on boundary
    boundary: np.ndarray = field(repr=False)  # True where conductance is the flag
    root_conductance: float = 0.0

    def leaf_log_mass(self, v):
        idx = np.searchsorted(self.leaves, v)
        if idx >= len(self.leaves) or self.leaves[idx] != v:
            raise KeyError(f"vertex {v} is not a level-{self.n} leaf")
        return float(self.log_mass[idx])


def _check_reduced(tree, n):
    if tree.height != n:
        raise ValueError(f"tree height {tree.height} != target level {n}")
    counts = tree.num_children()
    leaves = counts == 0
    if not (tree.generation[leaves] == n).all():
        raise ValueError("tree is not reduced: found a dead branch below the level")


def _sweep(tree, n):
    """Upward pass: per-vertex C (to level n) and branch conductances D."""
    N = len(tree)
    C = np.zeros(N)
    D = np.zeros(N)
    gen = tree.generation
    for g in range(n, 0, -1):
        ids = tree.level(g)
        D[ids] = 1.0 if g == n else C[ids] / (1.0 + C[ids])
        plo = np.searchsorted(gen, g - 1, side="left")
        phi = np.searchsorted(gen, g - 1, side="right")
        C[plo:phi] += np.bincount(
            tree.parent[ids] - plo, weights=D[ids], minlength=phi - plo
        )
    return C, D


def harmonic_measure(tree: Tree, n: int) -> HarmonicResult:
    """Exact level-n hitting distribution of SRW from the root, in log space.

    Requires the reduced tree (every leaf at generation n).
    """
    _check_reduced(tree, n)
    C, D = _sweep(tree, n)
    log_flow = np.zeros(len(tree))
    gen = tree.generation
    if n == 0:
        leaves = tree.level(0)
        return HarmonicResult(0, leaves, np.zeros(1), C, gen == 0, math.inf)
    for g in range(1, n + 1):
        ids = tree.level(g)
        par = tree.parent[ids]
        log_flow[ids] = log_flow[par] + np.log(D[ids]) - np.log(C[par])
    leaves = tree.level(n)
    boundary = gen == n
    conductance = C.copy()
    conductance[boundary] = math.inf
    return HarmonicResult(
        n=n,
        leaves=leaves,
        log_mass=log_flow[leaves],
        conductance=conductance,
        boundary=boundary,
        root_conductance=float(C[0]),
    )


def conductance_with_stub(tree: Tree, i: int) -> float:
    """Escape probability / conductance through an extra edge below the root.

    Equals C_i/(1 + C_i) with C_i the root-to-level-i conductance of the
    reduced tree: the chance that SRW started at the root reaches level i
    before stepping through the stub edge.
    """
    if tree.height < i:
        raise ValueError(f"tree of height {tree.height} has no level {i}")
    reduced = reduce_tree(tree, i)
    C, _ = _sweep(reduced, i)
    c0 = C[0]
    return float(c0 / (1.0 + c0))


def hit_prob_marked(tree: Tree) -> float:
    """log P(SRW first hits the marked vertex's level at the mark)."""
    if tree.mark is None:
        raise ValueError("tree has no marked vertex")
    n = int(tree.generation[tree.mark])
    reduced = reduce_tree(tree, n)
    result = harmonic_measure(reduced, n)
    return result.leaf_log_mass(reduced.mark)


@dataclass
class BackwardStats:
    """Per-mark conductance statistics of a backward tree.

    Arrays are aligned so index k-1 holds the value at the k-th marked
    level: c (graft conductances), h (escape probabilities upward), ell
    (inverse gaps), log_p (log of the tip-hitting probability before the
    next mark). Q[j-2] holds the increment at mark j >= 2.
    """

    c: np.ndarray
    h: np.ndarray
    ell: np.ndarray
    Q: np.ndarray
    log_p: np.ndarray

    @property
    def p(self):
        return np.exp(self.log_p)

    def recurrence_residual(self):
        """max_k |log p_1 - log p_k - sum_{j<=k} Q_j|, identically ~0."""
        lhs = self.log_p[0] - self.log_p[1:]
        rhs = np.cumsum(self.Q)
        return float(np.abs(lhs - rhs).max(initial=0.0))


def backward_stats(bt: BackwardTree, k_max: int) -> BackwardStats:
    """Exact (c_k, h_k, ell_k, Q_j, p_k) for the first k_max marked levels.

    Needs k_max + 1 marks (the gap after mark k_max enters both Q and p).
    """
    if bt.tree is None:
        raise ValueError("backward tree was sampled without grafts")
    if len(bt.M) < k_max + 1:
        raise ValueError(f"need {k_max + 1} marked levels, tree has {len(bt.M)}")
    n = bt.n
    tree = bt.tree if bt.tree.height == n else reduce_tree(bt.tree, n)
    _, D = _sweep(tree, n)
    offsets, order = tree.children_csr()
    c = np.empty(k_max)
    h = np.empty(k_max)
    ell = 1.0 / bt.L[:k_max].astype(float)
    ell_next = 1.0 / float(bt.L[k_max])
    spine = tree.spine
    for idx in range(k_max):
        j = int(bt.M[idx])
        u = spine[n - j]
        spine_child = spine[n - j + 1]
        kids = order[offsets[u] : offsets[u + 1]]
        c[idx] = D[kids].sum() - D[spine_child]
        h[idx] = D[spine_child]
    ell_all = np.append(ell, ell_next)
    Q = np.log(
        1.0
        + (c[1:] + ell_all[2 : k_max + 1]) / ell_all[1:k_max]
        - ell_all[1:k_max] / (ell_all[1:k_max] + c[:-1] + h[:-1])
    )
    # p_k via the up-spine flow: through the mark's own brood, then past
    # every lower mark, finally absorbed at the tip
    steps = np.log(h) - np.log(c + h + ell_all[1:] )
    hops = np.log(h[:-1]) - np.log(h[:-1] + c[:-1])
    log_p = steps + np.concatenate(([0.0], np.cumsum(hops)))
    return BackwardStats(c=c, h=h, ell=ell, Q=Q, log_p=log_p)


def limit_q_chain(alpha, c_samples, k, rng, n_replicas=1, companion_cap=10_000):
    """Rescaled-limit chain of the mark-to-mark log-ratio increments.

    Stationary-regime sampler of the Q increments: gap ratios are iid with
    the R law (V = R/(1+R) has the V density), rescaled graft conductances
    are sums of C-pool draws over a size-biased brood, and the rescaled
    upward escape x follows the exact one-step map
    x' = (V + (1-V)/(gamma + x))^{-1}. Returns an (n_replicas, k-1) array of
    Q_j for j = 2..k.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    r_law = SpecialLaw("r_alpha", alpha)
    nhat = size_bias(make_theta(alpha))
    c_samples = np.asarray(c_samples, dtype=float)
    c_mean = c_samples.mean()

    def companions(count):
        m = nhat.sample(rng, count) - 1
        small = np.minimum(m, companion_cap)
        total = int(small.sum())
        out = np.zeros(count)
        if total:
            idx = rng.integers(0, len(c_samples), total)
            offsets = np.concatenate(([0], np.cumsum(small)[:-1])).astype(np.int64)
            sums = np.add.reduceat(c_samples[idx], np.minimum(offsets, total - 1))
            pos = small > 0
            out[pos] = sums[pos]
        big = m > companion_cap
        out[big] += (m[big] - companion_cap) * c_mean
        return out

    x = np.ones(n_replicas)  # rescaled upward escape at the current mark
    gamma = companions(n_replicas)  # rescaled graft conductances there
    rho_next = r_law.sample(rng, n_replicas)  # gap ratio to the next mark
    Q = np.empty((n_replicas, k - 1))
    for j in range(2, k + 1):
        rho = rho_next  # L_j / M_{j-1}
        v = rho / (1.0 + rho)
        back = 1.0 / (1.0 + rho * (gamma + x))  # uses the previous-mark state
        x = 1.0 / (v + (1.0 - v) / (gamma + x))
        gamma = companions(n_replicas)
        rho_next = r_law.sample(rng, n_replicas)  # L_{j+1} / M_j
        Q[:, j - 2] = np.log(1.0 + v * gamma + v / rho_next - back)
    return Q
