"""Arena trees and Galton-Watson samplers.

Trees are flat arenas (parent/generation int arrays in breadth-first order)
so that sampling, reduction and the electrical sweeps in :mod:`electric` are
all generation-batched numpy passes.

The conditioned samplers never use rejection. A vertex of the conditioned
tree at generation g (horizon m = n - g) draws its brood through the exact
first-surviving-child decomposition:

    P(first survivor at position i) = q * (1-q)^(i-1) * P(N >= i) / q_m
    total offspring k ~ N | N >= i,   extra survivors ~ Binomial(k-i, q)

with q = q_{m-1}, which reproduces "offspring conditioned on at least one
surviving child" exactly. Children flagged as dying grow trees from the
(1-q)-tilted offspring law (conditioned to die before the horizon). Dropping
the dying side entirely yields an exact draw of the reduced tree, which is
what the large-n experiments consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .offspring import OffspringLaw, SurvivalTable, size_bias

__all__ = [
    "Tree",
    "BackwardTree",
    "NodeBudgetExceeded",
    "sample_gw",
    "sample_conditioned",
    "sample_reduced",
    "sample_size_biased",
    "sample_backward",
    "reduce_tree",
    "DEFAULT_CAP",
]

DEFAULT_CAP = 10**7


class NodeBudgetExceeded(RuntimeError):
    """Raised when a sampler would allocate more than its node budget."""

    def __init__(self, cap):
        super().__init__(f"node budget of {cap} nodes exceeded")
        self.cap = cap


class Tree:
    """Rooted ordered tree in a flat arena.

    ``parent[v]`` is the parent id (-1 for the root), ``generation[v]`` its
    depth; ids are breadth-first so ``generation`` is nondecreasing.
    """

    __slots__ = ("parent", "generation", "mark", "spine", "_csr")

    def __init__(self, parent, generation, mark=None, spine=None):
        self.parent = parent
        self.generation = generation
        self.mark = mark
        self.spine = spine
        self._csr = None

    def __len__(self):
        return len(self.parent)

    @property
    def height(self):
        return int(self.generation.max())

    def level(self, g):
        """Ids of vertices at generation g."""
        lo = np.searchsorted(self.generation, g, side="left")
        hi = np.searchsorted(self.generation, g, side="right")
        return np.arange(lo, hi, dtype=np.int64)

    def children_csr(self):
        """(offsets, order): children of v are order[offsets[v]:offsets[v+1]]."""
        if self._csr is None:
            counts = np.bincount(self.parent[1:], minlength=len(self))
            order = np.argsort(self.parent[1:], kind="stable") + 1
            offsets = np.concatenate(([0], np.cumsum(counts)))
            self._csr = (offsets, order.astype(np.int64))
        return self._csr

    def num_children(self):
        return np.bincount(self.parent[1:], minlength=len(self))

    def validate(self):
        assert self.parent[0] == -1
        assert (self.parent[1:] >= 0).all() and (self.parent[1:] < len(self)).all()
        assert (self.generation[1:] == self.generation[self.parent[1:]] + 1).all()
        assert (np.diff(self.generation) >= 0).all()
        if self.mark is not None:
            assert 0 <= self.mark < len(self)

    def dump(self, fileobj):
        """One vertex per line: "id parent generation"."""
        for v in range(len(self)):
            fileobj.write(f"{v} {self.parent[v]} {self.generation[v]}\n")


@dataclass
class BackwardTree:
    """Spine-from-the-tip tree, stored root-down from the deepest spine vertex.

    The arena root is the spine vertex at depth n below the observation level;
    generation g in the arena corresponds to spine depth n - g, so the
    observation level ("generation 0" of the construction) sits at arena
    generation n. ``I[j]`` counts grafted subtrees at spine depth j that reach
    the observation level, ``M`` lists the depths with I > 0 in increasing
    order, and ``L`` their gaps (M[0] is the first mark; gap convention
    M_0 = 0).
    """

    tree: Tree | None
    n: int
    I: np.ndarray = field(repr=False)
    M: np.ndarray = field(repr=False)
    L: np.ndarray = field(repr=False)

    def spine_id(self, j):
        """Arena id of the spine vertex at depth j (j=0 is the marked tip)."""
        return int(self.tree.spine[self.n - j])


class _Arena:
    def __init__(self, cap):
        self.cap = cap
        self.count = 0
        self._parents = []
        self._gens = []

    def add(self, parents, gen):
        k = len(parents)
        if self.count + k > self.cap:
            raise NodeBudgetExceeded(self.cap)
        lo = self.count
        self.count += k
        self._parents.append(np.asarray(parents, dtype=np.int64))
        self._gens.append(np.full(k, gen, dtype=np.int64))
        return np.arange(lo, lo + k, dtype=np.int64)

    def root(self):
        return self.add(np.array([-1], dtype=np.int64), 0)[0]

    def build(self, mark=None, spine=None):
        return Tree(
            np.concatenate(self._parents),
            np.concatenate(self._gens),
            mark=mark,
            spine=spine,
        )


def _conditional_tail_sample(law, i, u):
    """k ~ N | N >= i: smallest k with tail(k+1) <= u*tail(i), vectorized."""
    upto = min(max(int(i.max(initial=2)) * 2 + 4, 256), 100_000)
    _, table, table_rev = law.arrays(upto)
    targets = u * table[i]
    pos = len(table) - np.searchsorted(table_rev, targets, side="right")
    # pos = first index with tail[pos] <= target  ->  k = pos - 1
    k = (pos - 1).astype(np.int64)
    deep = pos >= len(table)
    if deep.any() and table[-1] > 0.0:
        for idx in np.flatnonzero(deep):
            log_t = np.log(u[idx]) + law.log_tail(int(i[idx]))
            k[idx] = law.invert_log_tail(log_t, lo=int(i[idx]))
    return np.maximum(k, i)


class _SurvivorTables:
    """Cached per-horizon tables for the first-survivor decomposition.

    Tables live on the SurvivalTable instance so repeated sampling calls
    with the same (law, table) pair reuse them.
    """

    def __init__(self, law: OffspringLaw, table: SurvivalTable):
        self.law = law
        self.q = table.q
        self._cum = table.__dict__.setdefault("_survivor_cache", {})

    def _cumw(self, m):
        key = (self.law.kind, self.law.gamma, m)
        tab = self._cum.get(key)
        if tab is None:
            law, q = self.law, self.q[m - 1]
            qm = self.q[m] if m < len(self.q) else 1.0 - law.gf(1.0 - q)
            _, tail, _ = law.arrays(20001)
            small = np.flatnonzero(tail[2:] < 1e-7)
            imax = 2 + small[0] if len(small) else 20000
            i = np.arange(1, imax + 1)
            w = q * (1.0 - q) ** (i - 1.0) * tail[i]
            tab = (np.cumsum(w), qm, q)
            self._cum[key] = tab
        return tab

    def _straggler_index(self, m, rng):
        # i beyond the table: geometric proposal, accept w.p. tail(i)/tail(i0)
        cumw, qm, q = self._cumw(m)
        i0 = len(cumw) + 1
        log_t0 = self.law.log_tail(i0)
        while True:
            i = i0 + rng.geometric(q) - 1
            if np.log(rng.random()) <= self.law.log_tail(int(i)) - log_t0:
                return int(i)

    def brood(self, m, count, rng):
        """(k, s): total offspring and survivor count for `count` vertices."""
        cumw, qm, q = self._cumw(m)
        u1 = rng.random(count) * qm
        i = np.searchsorted(cumw, u1, side="right") + 1
        over = i > len(cumw)
        if over.any():
            for idx in np.flatnonzero(over):
                i[idx] = self._straggler_index(m, rng)
        k = _conditional_tail_sample(self.law, i, rng.random(count))
        s = 1 + rng.binomial(k - i, q)
        return k, s


class _DyingTables:
    """Cached tables of the offspring law tilted to die before a horizon."""

    def __init__(self, law: OffspringLaw, table: SurvivalTable):
        self.law = law
        self.q = table.q
        self._cdf = table.__dict__.setdefault("_dying_cache", {})

    def counts(self, j, count, rng):
        """Offspring draws for dying vertices whose children get horizon j."""
        if j == 0:
            return np.zeros(count, dtype=np.int64)
        key = (self.law.kind, self.law.gamma, j)
        tab = self._cdf.get(key)
        if tab is None:
            law = self.law
            x = 1.0 - self.q[j]
            norm = 1.0 - self.q[j + 1] if j + 1 < len(self.q) else law.gf(x)
            pmf, tail, _ = law.arrays(20001)
            small = np.flatnonzero(tail[2:] < 1e-9)
            kmax = 2 + small[0] if len(small) else 20000
            ks = np.arange(kmax + 1)
            w = pmf[ks] * x**ks
            tab = (np.cumsum(w), norm)
            self._cdf[key] = tab
        cumw, norm = tab
        u = rng.random(count) * norm
        k = np.searchsorted(cumw, u, side="right")
        if (k >= len(cumw)).any():
            # beyond-table mass is < 1e-9 of the law; extend and retry exactly
            law = self.law
            x = 1.0 - self.q[j]
            for idx in np.flatnonzero(k >= len(cumw)):
                kk = len(cumw) - 1
                acc = cumw[-1]
                while acc < u[idx]:
                    kk += 1
                    acc += law.pmf(kk) * x**kk
                k[idx] = kk
        return k.astype(np.int64)


def sample_gw(law, rng, cap=DEFAULT_CAP, height_cap=None):
    """Plain Galton-Watson tree, breadth-first.

    Raises NodeBudgetExceeded instead of returning a truncated tree when the
    arena would exceed `cap`. `height_cap` stops growth below that generation
    (used when only the first levels matter).
    """
    arena = _Arena(cap)
    front = np.array([arena.root()])
    g = 0
    while len(front) and (height_cap is None or g < height_cap):
        counts = law.sample(rng, len(front))
        front = arena.add(np.repeat(front, counts), g + 1)
        g += 1
    return arena.build()


def _grow_plain_forest(arena, law, front, g, rng, stop_gen=None):
    """Advance a plain-GW front one generation; returns the new front."""
    if not len(front) or (stop_gen is not None and g >= stop_gen):
        return np.empty(0, dtype=np.int64)
    counts = law.sample(rng, len(front))
    return arena.add(np.repeat(front, counts), g + 1)


def _check_table(table, law, n):
    if len(table.q) < n + 1:
        raise ValueError(f"survival table of length {len(table.q)} too short for n={n}")
    if table.alpha != law.alpha:
        raise ValueError("survival table alpha does not match law")


def sample_reduced(law, n, table, rng, cap=DEFAULT_CAP):
    """Exact draw of the reduced tree T*^n (every leaf at generation n)."""
    _check_table(table, law, n)
    arena = _Arena(cap)
    surv = _SurvivorTables(law, table)
    front = np.array([arena.root()])
    for g in range(n):
        k, s = surv.brood(n - g, len(front), rng)
        front = arena.add(np.repeat(front, s), g + 1)
    return arena.build()


def sample_conditioned(law, n, table, rng, cap=DEFAULT_CAP, reduced=False):
    """Galton-Watson tree conditioned to reach generation n, truncated there.

    Exact sampling by the survivor decomposition; with reduced=True the
    dying subtrees are skipped and the result is distributed as T*^n.
    """
    if reduced:
        return sample_reduced(law, n, table, rng, cap)
    _check_table(table, law, n)
    arena = _Arena(cap)
    surv = _SurvivorTables(law, table)
    dying = _DyingTables(law, table)
    skel = np.array([arena.root()])
    dead = np.empty(0, dtype=np.int64)
    for g in range(n):
        k, s = surv.brood(n - g, len(skel), rng)
        new_skel = arena.add(np.repeat(skel, s), g + 1)
        new_dead = arena.add(np.repeat(skel, k - s), g + 1)
        if len(dead):
            counts = dying.counts(n - g - 1, len(dead), rng)
            grown = arena.add(np.repeat(dead, counts), g + 1)
            new_dead = np.concatenate([new_dead, grown])
        skel, dead = new_skel, new_dead
    return arena.build()


def sample_size_biased(
    law,
    n,
    rng,
    cap=DEFAULT_CAP,
    complete=False,
    reduced=False,
    table=None,
):
    """Size-biased tree with recorded spine and marked level-n spine vertex.

    complete=False: first n generations of the size-biased tree (off-spine
    subtrees truncated at generation n). complete=True: the variant where the
    marked vertex keeps no descendants but off-spine subtrees grow fully.
    reduced=True returns the (identical for both variants) reduction to
    generation n and requires a survival table.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    hat = size_bias(law)
    if reduced and table is None:
        raise ValueError("reduced sampling needs a survival table")
    if table is not None:
        _check_table(table, law, n)
    arena = _Arena(cap)
    surv = _SurvivorTables(law, table) if reduced else None
    spine = [arena.root()]
    skel = np.empty(0, dtype=np.int64)  # reduced off-spine survivors
    plain = np.empty(0, dtype=np.int64)  # full off-spine front
    nhat = hat.sample(rng, n)
    for g in range(n):
        v = spine[-1]
        if reduced:
            # materialize only surviving off-spine children; the spine child
            # is uniform among survivors by exchangeability of the brood
            keep = int(rng.binomial(int(nhat[g]) - 1, table.q[n - g - 1]))
            brood_ids = arena.add(np.full(keep + 1, v, dtype=np.int64), g + 1)
            pick = int(rng.integers(keep + 1))
            spine.append(int(brood_ids[pick]))
            new_off = np.delete(brood_ids, pick)
            if len(skel):
                k, s = surv.brood(n - g, len(skel), rng)
                grown = arena.add(np.repeat(skel, s), g + 1)
                skel = np.concatenate([new_off, grown])
            else:
                skel = new_off
        else:
            brood_ids = arena.add(np.full(int(nhat[g]), v, dtype=np.int64), g + 1)
            pick = int(rng.integers(nhat[g]))  # spine child uniform in its brood
            spine.append(int(brood_ids[pick]))
            off = np.delete(brood_ids, pick)
            plain = np.concatenate(
                [off, _grow_plain_forest(arena, law, plain, g, rng,
                                         stop_gen=None if complete else n)]
            )
    if not reduced and complete:
        g = n
        while len(plain):
            plain = _grow_plain_forest(arena, law, plain, g, rng)
            g += 1
    spine = np.asarray(spine, dtype=np.int64)
    return arena.build(mark=int(spine[n]), spine=spine)


def sample_backward(law, n, rng, cap=DEFAULT_CAP, grafts="reduced", table=None):
    """Backward spine tree of depth n, rooted at the deepest spine vertex.

    grafts: 'reduced' keeps, for each grafted subtree that reaches the
    observation level, its reduction to that level (sufficient for every
    hitting statistic); 'full' grows complete GW grafts; 'none' records only
    the graft-survival counts I (spine skeleton).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if grafts in ("reduced", "none") and table is None:
        raise ValueError("reduced/none graft sampling needs a survival table")
    if table is not None:
        _check_table(table, law, n)
    hat = size_bias(law)
    side = hat.sample(rng, n) - 1  # side[g]: graft count at the depth-(n-g) spine vertex
    I = np.zeros(n + 1, dtype=np.int64)
    if grafts == "none":
        # I[j] = Binomial(side at depth j, q_{j-1}), all depths at once
        I[n:0:-1] = rng.binomial(side, table.q[n - 1 :: -1])
        M = np.flatnonzero(I > 0)
        return BackwardTree(tree=None, n=n, I=I,
                            M=M, L=np.diff(np.concatenate(([0], M))))

    arena = _Arena(cap)
    surv = _SurvivorTables(law, table) if grafts == "reduced" else None
    spine = [arena.root()]
    skel = np.empty(0, dtype=np.int64)
    plain = np.empty(0, dtype=np.int64)
    graft_roots = []  # (spine depth j, root ids) for full-mode I counting
    for g in range(n):
        j = n - g
        spine.append(arena.add(np.array([spine[-1]]), g + 1)[0])
        if grafts == "reduced":
            keep = int(rng.binomial(side[g], table.q[j - 1]) if j > 1 else side[g])
            I[j] = keep
            roots = arena.add(np.full(keep, spine[g], dtype=np.int64), g + 1)
            if len(skel):
                k, s = surv.brood(n - g, len(skel), rng)
                grown = arena.add(np.repeat(skel, s), g + 1)
                skel = np.concatenate([roots, grown])
            else:
                skel = roots
        else:
            roots = arena.add(np.full(int(side[g]), spine[g], dtype=np.int64), g + 1)
            graft_roots.append((j, roots))
            plain = np.concatenate([roots, _grow_plain_forest(arena, law, plain, g, rng)])
    if grafts == "full":
        g = n
        while len(plain):
            plain = _grow_plain_forest(arena, law, plain, g, rng)
            g += 1
    spine = np.asarray(spine, dtype=np.int64)
    tree = arena.build(mark=int(spine[n]), spine=spine)
    if grafts == "full":
        # a graft at depth j reaches the observation level iff it attains gen n
        reach = _subtree_reaches(tree, n)
        for j, roots in graft_roots:
            I[j] = int(reach[roots].sum())
    M = np.flatnonzero(I > 0)
    L = np.diff(np.concatenate(([0], M)))
    return BackwardTree(tree=tree, n=n, I=I, M=M, L=L)


def _subtree_reaches(tree, n):
    """Boolean array: vertex has a descendant at generation >= n."""
    reach = tree.generation >= n
    gen = tree.generation
    for g in range(int(gen.max()), 0, -1):
        ids = tree.level(g)
        hit = ids[reach[ids]]
        reach[tree.parent[hit]] = True
    return reach


def reduce_tree(tree, n):
    """Reduction to generation n: keep vertices with a descendant at level n."""
    if tree.height < n:
        raise ValueError(f"tree of height {tree.height} cannot be reduced to {n}")
    keep = _subtree_reaches(tree, n) & (tree.generation <= n)
    new_id = np.cumsum(keep) - 1
    parent = tree.parent[keep]
    new_parent = np.where(parent >= 0, new_id[np.maximum(parent, 0)], -1)
    out = Tree(new_parent.astype(np.int64), tree.generation[keep].astype(np.int64))
    if tree.mark is not None:
        if not keep[tree.mark]:
            raise ValueError("marked vertex was pruned by reduction")
        out.mark = int(new_id[tree.mark])
    if tree.spine is not None:
        kept_spine = tree.spine[keep[tree.spine]]
        out.spine = new_id[kept_spine].astype(np.int64)
    return out
