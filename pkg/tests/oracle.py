"""Dense absorbing-chain oracles for the electrical computations.

Brute-force reference: build the SRW transition matrix on the finite tree
(plus an optional stub vertex below the root), make the requested vertex set
absorbing, and solve the linear system with dense Gaussian elimination.
Intended for trees up to a few hundred vertices, tests only.
"""

import numpy as np


def _neighbors(tree, stub=False):
    n = len(tree)
    nbrs = [[] for _ in range(n + (1 if stub else 0))]
    for v in range(1, n):
        p = int(tree.parent[v])
        nbrs[p].append(v)
        nbrs[v].append(p)
    if stub:
        nbrs[0].append(n)
        nbrs[n].append(0)
    return nbrs


def absorption_probabilities(tree, boundary_ids, start, stub=False):
    """P(start-vertex absorbed at b) for every absorbing vertex b.

    Returns a dict b -> probability. With stub=True an extra absorbing
    vertex len(tree) is attached below the root.
    """
    nbrs = _neighbors(tree, stub=stub)
    total = len(nbrs)
    absorbing = set(int(b) for b in boundary_ids)
    if stub:
        absorbing.add(total - 1)
    interior = [v for v in range(total) if v not in absorbing]
    index = {v: i for i, v in enumerate(interior)}
    bnd = sorted(absorbing)
    bidx = {b: i for i, b in enumerate(bnd)}
    Q = np.zeros((len(interior), len(interior)))
    R = np.zeros((len(interior), len(bnd)))
    for v in interior:
        deg = len(nbrs[v])
        for w in nbrs[v]:
            if w in absorbing:
                R[index[v], bidx[w]] += 1.0 / deg
            else:
                Q[index[v], index[w]] += 1.0 / deg
    X = np.linalg.solve(np.eye(len(interior)) - Q, R)
    if start in absorbing:
        return {b: 1.0 if b == start else 0.0 for b in bnd}
    return {b: X[index[start], bidx[b]] for b in bnd}


def hitting_distribution(tree, n, start=0):
    """SRW hitting law of level n from `start` (dict leaf -> mass)."""
    leaves = [int(v) for v in tree.level(n)]
    return absorption_probabilities(tree, leaves, start)


def escape_probability_with_stub(tree, i):
    """P(root reaches level i before the stub vertex below it)."""
    leaves = [int(v) for v in tree.level(i)]
    probs = absorption_probabilities(tree, leaves, 0, stub=True)
    return sum(probs[b] for b in leaves)
