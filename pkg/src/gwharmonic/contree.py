"""Truncated continuous reduced trees and their size-biased spine averages.

The unit-height random tree is built recursively: a root segment covering a
uniform fraction of the remaining height, then an alpha-offspring number of
independently rescaled copies on top. Truncation is by branching generation
(heights accumulate to 1 only in the limit), recording each truncated
segment's residual height.

Conductances (unit resistance per unit length) are bracketed by network
monotonicity: shorting every truncated tip to the boundary gives an upper
bound; completing each tip by its bare residual segment (a subtree of the
real continuation) gives a lower bound.

The distinguished-ray construction mirrors the size-biased decomposition:
branch heights form a rate-alpha/(alpha-1) Poisson stream in logarithmic
coordinates, each branch point carries a size-biased brood minus one of
grafted rescaled copies, and three ergodic averages accumulate along the
ray: branch-point height, log branching-measure weight (via level-crossing
counts), and log harmonic flow ratio (via conductance bounds). Crossing
counts and conductance bounds draw independent graft realizations; each
average is computed under the exact tree law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gwtree import NodeBudgetExceeded
from .offspring import make_theta, size_bias

__all__ = [
    "ContinuousTree",
    "SpineSample",
    "SpineAverages",
    "build_delta",
    "conductance_bounds",
    "sample_spine",
    "sample_spine_averages",
    "ctgw_crossings",
]

DEFAULT_NODE_CAP = 10**7


@dataclass
class ContinuousTree:
    """Arena-encoded truncated recursive tree.

    ``height[v]`` is the top of v's segment: a fraction of the unit height in
    'delta' coordinates or its -log(1 - .) image in 'gamma' coordinates.
    Vertices at branching generation ``depth`` are truncation tips.
    """

    alpha: float
    depth: int
    coordinate: str
    parent: np.ndarray = field(repr=False)
    generation: np.ndarray = field(repr=False)
    height: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.parent)

    def to_gamma(self):
        if self.coordinate != "delta":
            raise ValueError("tree is not in delta coordinates")
        return ContinuousTree(
            self.alpha, self.depth, "gamma",
            self.parent, self.generation, -np.log1p(-self.height), self.u,
        )


class _DeltaForest:
    """Batch of independent trees grown level by level in one arena."""

    def __init__(self, n_trees, rng, cap):
        self.rng = rng
        self.cap = cap
        u0 = rng.random(n_trees)
        self.parent = [np.full(n_trees, -1, dtype=np.int64)]
        self.gen = [np.zeros(n_trees, dtype=np.int64)]
        self.u = [u0]
        self.y = [u0.copy()]  # root segment: Y = U * (1 - 0)
        self.count = n_trees
        self.front = np.arange(n_trees, dtype=np.int64)
        self.front_y = self.y[0]

    def grow(self, law, g):
        counts = law.sample(self.rng, len(self.front))
        total = int(counts.sum())
        if self.count + total > self.cap:
            raise NodeBudgetExceeded(self.cap)
        par = np.repeat(self.front, counts)
        ypar = np.repeat(self.front_y, counts)
        u = self.rng.random(total)
        y = ypar + u * (1.0 - ypar)
        ids = np.arange(self.count, self.count + total, dtype=np.int64)
        self.count += total
        self.parent.append(par)
        self.gen.append(np.full(total, g, dtype=np.int64))
        self.u.append(u)
        self.y.append(y)
        self.front, self.front_y = ids, y

    def arrays(self):
        return (
            np.concatenate(self.parent),
            np.concatenate(self.gen),
            np.concatenate(self.y),
            np.concatenate(self.u),
        )


def _grow_forest(alpha, n_trees, depth, rng, cap):
    law = make_theta(alpha)
    forest = _DeltaForest(n_trees, rng, cap)
    for g in range(1, depth + 1):
        forest.grow(law, g)
    return forest.arrays()


def build_delta(alpha, depth, rng, coordinate="delta", cap=DEFAULT_NODE_CAP):
    """One truncated unit-height tree with `depth` branching generations.

    With coordinate='gamma' the same uniform stream drives the build and the
    heights are the logarithmic images of the delta ones, so the two
    coordinate systems correspond segment by segment.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    parent, gen, y, u = _grow_forest(alpha, 1, depth, rng, cap)
    tree = ContinuousTree(alpha, depth, "delta", parent, gen, y, u)
    return tree.to_gamma() if coordinate == "gamma" else tree


def _bounds_sweep(parent, gen, y, depth):
    """Per-root (lower, upper) root conductance of a truncated delta forest.

    Segment lengths can round to zero double-precision near the top of the
    tree; the resulting infinite branch conductances are legitimate network
    limits (a zero-length segment is a direct contact) and stay consistent
    through the series/parallel algebra, so the divide warnings are muted.
    """
    S_lo = np.zeros(len(y))
    S_hi = np.zeros(len(y))
    r = np.where(parent >= 0, y - y[np.maximum(parent, 0)], y)
    with np.errstate(divide="ignore"):
        for g in range(depth, -1, -1):
            lo_i = np.searchsorted(gen, g, side="left")
            hi_i = np.searchsorted(gen, g, side="right")
            rg = r[lo_i:hi_i]
            if g == depth:
                resid = 1.0 - y[lo_i:hi_i]
                c_lo = 1.0 / (rg + resid)
                c_hi = 1.0 / rg
            else:
                c_lo = 1.0 / (rg + 1.0 / S_lo[lo_i:hi_i])
                c_hi = 1.0 / (rg + 1.0 / S_hi[lo_i:hi_i])
            if g == 0:
                return c_lo, c_hi
            plo = np.searchsorted(gen, g - 1, side="left")
            phi = np.searchsorted(gen, g - 1, side="right")
            par = parent[lo_i:hi_i] - plo
            S_lo[plo:phi] += np.bincount(par, weights=c_lo, minlength=phi - plo)
            S_hi[plo:phi] += np.bincount(par, weights=c_hi, minlength=phi - plo)
    raise AssertionError("unreachable")


def conductance_bounds(tree: ContinuousTree, depth=None):
    """(lower, upper) bounds on the root-to-boundary conductance.

    `depth` may truncate shallower than the built tree, which lets one
    realization be evaluated at nested truncation levels.
    """
    if tree.coordinate != "delta":
        raise ValueError("conductance bounds are defined on delta coordinates")
    d = tree.depth if depth is None else depth
    if d > tree.depth or d < 0:
        raise ValueError(f"depth {d} outside built range 0..{tree.depth}")
    lo, hi = _bounds_sweep(tree.parent, tree.generation, tree.height, d)
    return float(lo[0]), float(hi[0])


def ctgw_crossings(alpha, targets, rng, cap=DEFAULT_NODE_CAP):
    """Level-crossing counts of independent exponential-lifetime trees.

    targets[i] is the remaining height tree i must cross; returns the number
    of segments of tree i crossing that level (the population there).
    """
    targets = np.asarray(targets, dtype=float)
    law = make_theta(alpha)
    counts = np.zeros(len(targets), dtype=np.int64)
    owner = np.arange(len(targets), dtype=np.int64)
    remaining = targets.copy()
    alive = remaining > 0
    owner, remaining = owner[alive], remaining[alive]
    counts += np.bincount(np.arange(len(targets))[~alive], minlength=len(targets))
    total = len(targets)
    while len(owner):
        life = rng.standard_exponential(len(owner))
        crossed = life >= remaining
        counts += np.bincount(owner[crossed], minlength=len(counts))
        owner, remaining = owner[~crossed], remaining[~crossed] - life[~crossed]
        brood = law.sample(rng, len(owner))
        owner = np.repeat(owner, brood)
        remaining = np.repeat(remaining, brood)
        total += len(owner)
        if total > cap:
            raise NodeBudgetExceeded(cap)
    return counts


@dataclass
class SpineSample:
    """Distinguished-ray skeleton: branch heights and graft counts."""

    alpha: float
    gaps: np.ndarray = field(repr=False)  # exponential gaps, rate a/(a-1)
    heights: np.ndarray = field(repr=False)  # cumulative branch heights
    v: np.ndarray = field(repr=False)  # normalized delta gaps, V-law
    grafts: np.ndarray = field(repr=False)  # per branch point, Nhat - 1


def sample_spine(alpha, n, rng):
    gaps = rng.standard_exponential(n) * (alpha - 1.0) / alpha
    nhat = size_bias(make_theta(alpha))
    return SpineSample(
        alpha=alpha,
        gaps=gaps,
        heights=np.cumsum(gaps),
        v=-np.expm1(-gaps),
        grafts=nhat.sample(rng, n) - 1,
    )


@dataclass
class SpineAverages:
    """Normalized ergodic averages along the distinguished ray."""

    alpha: float
    n: int
    h: float  # H_n / n
    f: float  # F_n / n
    g: float  # G_n / n, midpoint of the bound interval
    g_lo: float
    g_hi: float
    max_gap: float  # widest conductance interval used
    flagged: bool  # True when any interval exceeded the 0.05 threshold


def sample_spine_averages(
    alpha,
    n_branchpoints,
    rng,
    graft_depth=12,
    w_level=None,
    lookahead=25,
    gap_threshold=0.05,
    cap=DEFAULT_NODE_CAP,
):
    """One ray's (H_n/n, F_n/n, G_n/n) with conductance-bound intervals.

    graft_depth is the truncation depth of each grafted subtree, w_level the
    height used for the level-population estimates of the branching-measure
    weights (level populations grow like e^(r/(alpha-1)), so the default
    scales with alpha - 1), lookahead the number of extra branch points taken
    past n so the ray-conductance interval contracts before it is consumed.
    """
    if n_branchpoints < 1:
        raise ValueError("need at least one branch point")
    if w_level is None:
        w_level = 8.0 * (alpha - 1.0)
    n = n_branchpoints
    spine = sample_spine(alpha, n + lookahead, rng)
    # extend until the look-ahead also covers the upper level for the weights
    while spine.heights[-1] < spine.heights[n - 1] + w_level + 2.0:
        extra = sample_spine(alpha, max(16, n // 8), rng)
        spine = SpineSample(
            alpha=alpha,
            gaps=np.concatenate([spine.gaps, extra.gaps]),
            heights=None,
            v=np.concatenate([spine.v, extra.v]),
            grafts=np.concatenate([spine.grafts, extra.grafts]),
        )
        spine.heights = np.cumsum(spine.gaps)
    K = len(spine.gaps)

    # conductance bounds of every graft, one forest sweep for the whole ray
    first = np.concatenate(([0], np.cumsum(spine.grafts[:-1]))).astype(np.int64)
    n_grafts = int(spine.grafts.sum())
    if n_grafts:
        parent, gen, y, _ = _grow_forest(alpha, n_grafts, graft_depth, rng, cap)
        g_lo, g_hi = _bounds_sweep(parent, gen, y, graft_depth)
    else:
        g_lo = g_hi = np.zeros(0)
    s_lo = np.zeros(K)
    s_hi = np.zeros(K)
    for k in range(K):
        sl = slice(first[k], first[k] + spine.grafts[k])
        s_lo[k] = g_lo[sl].sum()
        s_hi[k] = g_hi[sl].sum()

    # ray conductance above each branch point, backward interval recursion
    ray_lo = np.empty(K)
    ray_hi = np.empty(K)
    x_lo, x_hi = 1.0, math.inf
    for k in range(K - 1, -1, -1):
        ray_lo[k], ray_hi[k] = x_lo, x_hi
        if k:
            v = spine.v[k]
            x_lo = 1.0 / (v + (1.0 - v) / (x_lo + s_lo[k]))
            x_hi = 1.0 / (v + (1.0 - v) / (x_hi + s_hi[k])) if np.isfinite(x_hi) \
                else 1.0 / v
    inc_lo = np.log(ray_lo[:n]) - np.log(ray_lo[:n] + s_hi[:n])
    inc_hi = np.log(ray_hi[:n]) - np.log(ray_hi[:n] + s_lo[:n])
    gaps_used = np.concatenate([(ray_hi[:n] - ray_lo[:n]), (g_hi - g_lo)])
    max_gap = float(gaps_used.max(initial=0.0))

    # branching-measure weights: level populations at w_level above the root
    # and above the n-th branch point
    h_n = float(spine.heights[n - 1])
    expo = 1.0 / (alpha - 1.0)

    def log_weight(base):
        mask = (spine.heights > base) & (spine.heights <= base + w_level)
        reps = np.repeat(spine.heights[mask] - base, spine.grafts[mask])
        crossings = ctgw_crossings(alpha, w_level - reps, rng, cap=cap)
        return -w_level * expo + math.log(1.0 + int(crossings.sum()))

    f_n = -h_n * expo + log_weight(h_n) - log_weight(0.0)

    return SpineAverages(
        alpha=alpha,
        n=n,
        h=h_n / n,
        f=f_n / n,
        g=float((inc_lo + inc_hi).sum() / 2.0 / n),
        g_lo=float(inc_lo.sum() / n),
        g_hi=float(inc_hi.sum() / n),
        max_gap=max_gap,
        flagged=bool(max_gap > gap_threshold),
    )
