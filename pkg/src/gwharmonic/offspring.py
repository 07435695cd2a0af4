"""Offspring laws of the critical stable family and their companions.

The critical family with index alpha in (1,2] and constant tail factor gamma
has generating function gf(r) = r + gamma*(1-r)^alpha; the alpha-offspring law
(the branching law of the reduced continuous tree) has
gf(r) = ((1-r)^alpha - 1 + alpha*r)/(alpha-1). Both, and their size-biased
versions, share Gamma-ratio recursions for pmf and tail, which we use instead
of Gamma evaluations so entries stay accurate to ~1e-15 relative at any k.

Inverse-CDF sampling uses a dense table while P(N >= k) >= 1e-6 and the exact
closed-form log-tail (via lgamma) beyond it, so heavy tails are never
truncated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "OffspringLaw",
    "SurvivalTable",
    "SpecialLaw",
    "make_stable_rho",
    "make_theta",
    "size_bias",
    "survival_probs",
    "sample",
]

TABLE_TAIL_CUTOFF = 1e-6  # sampling table extends until P(N >= k) < this
TABLE_MAX_ENTRIES = 200_000  # hard cap; the exact log-tail inverse covers beyond


class OffspringLaw:
    """Integer offspring distribution with lazily extended pmf/tail tables.

    Instances are immutable in behavior once constructed (tables only grow)
    and safe to share across worker streams.
    """

    def __init__(self, alpha, kind, gamma=None):
        self.alpha = float(alpha)
        self.kind = kind
        self.gamma = gamma
        a, g = self.alpha, gamma
        if kind == "stable":
            pmf0 = [g, 1.0 - a * g, g * a * (a - 1.0) / 2.0]
            tail0 = [1.0, 1.0 - g, g * (a - 1.0)]
            self.mean = 1.0
            self._log_tail_const = math.log(g * (a - 1.0))
            self._tail_shift = 0
        elif kind == "theta":
            pmf0 = [0.0, 0.0, a / 2.0]
            tail0 = [1.0, 1.0, 1.0]
            self.mean = a / (a - 1.0)
            self._log_tail_const = 0.0
            self._tail_shift = 0
        elif kind == "stable_sb":
            pmf0 = [0.0, 1.0 - a * g, g * a * (a - 1.0)]
            tail0 = [1.0, 1.0, g * a]
            self.mean = 1.0 + 2.0 * g if a == 2.0 else math.inf
            self._log_tail_const = math.log(g * a)
            self._tail_shift = 1
        elif kind == "theta_sb":
            pmf0 = [0.0, 0.0, a - 1.0]
            tail0 = [1.0, 1.0, 1.0]
            self.mean = 2.0 if a == 2.0 else math.inf
            self._log_tail_const = 0.0
            self._tail_shift = 1
        else:
            raise ValueError(f"unknown law kind {kind!r}")
        self._pmf = list(pmf0)
        self._tail = list(tail0)
        self._cdf = None
        self._table_kmax = None
        self._arr_len = 0
        self._pmf_arr = None
        self._tail_arr = None
        self._tail_rev = None

    # -- table growth -----------------------------------------------------

    def _pmf_ratio(self, k):
        # pmf(k+1)/pmf(k) for k >= 2
        a = self.alpha
        if self.kind in ("stable", "theta"):
            return (k - a) / (k + 1.0)
        return (k - a) / k

    def _tail_ratio(self, k):
        # tail(k+1)/tail(k) for k >= 2
        a = self.alpha
        if self.kind in ("stable", "theta"):
            return (k - a) / k
        return (k - a) / (k - 1.0)

    def _extend(self, kmax):
        while len(self._pmf) <= kmax:
            k = len(self._pmf) - 1
            self._pmf.append(self._pmf[k] * self._pmf_ratio(k))
            self._tail.append(self._tail[k] * self._tail_ratio(k))

    def arrays(self, upto):
        """(pmf, tail, reversed tail) as cached ndarrays covering k <= upto."""
        self._extend(upto)
        if self._arr_len != len(self._tail):
            self._pmf_arr = np.array(self._pmf)
            self._tail_arr = np.array(self._tail)
            self._tail_rev = self._tail_arr[::-1].copy()
            self._arr_len = len(self._tail)
        return self._pmf_arr, self._tail_arr, self._tail_rev

    def pmf(self, k):
        """P(N = k); accepts an int or an integer array."""
        karr = np.atleast_1d(np.asarray(k, dtype=np.int64))
        p, _, _ = self.arrays(int(karr.max(initial=0)))
        out = p[karr]
        return out if np.ndim(k) else float(out[0])

    def tail(self, k):
        """P(N >= k); accepts an int or an integer array."""
        karr = np.atleast_1d(np.asarray(k, dtype=np.int64))
        _, t, _ = self.arrays(int(karr.max(initial=0)))
        out = t[karr]
        return out if np.ndim(k) else float(out[0])

    def log_tail(self, k):
        """Closed form log P(N >= k) for k >= 2, exact at any depth."""
        a = self.alpha
        if a == 2.0:
            t = self.tail(min(k, 4))
            return math.log(t) if t > 0 else -math.inf
        return (
            self._log_tail_const
            + math.lgamma(k - a)
            - math.lgamma(2.0 - a)
            - math.lgamma(k - self._tail_shift)
        )

    def gf(self, r):
        """Generating function E[r^N], closed form."""
        a, g = self.alpha, self.gamma
        r = np.asarray(r, dtype=float)
        if self.kind == "stable":
            out = r + g * (1.0 - r) ** a
        elif self.kind == "theta":
            out = ((1.0 - r) ** a - 1.0 + a * r) / (a - 1.0)
        elif self.kind == "stable_sb":
            out = r * (1.0 - g * a * (1.0 - r) ** (a - 1.0))
        else:  # theta_sb
            out = r - r * (1.0 - r) ** (a - 1.0)
        return out if out.ndim else float(out)

    # -- sampling ---------------------------------------------------------

    def _build_table(self):
        # size-biased laws with alpha < 2 have tail index alpha-1 < 1, so the
        # 1e-6 target can exceed any reasonable table; the cap keeps memory
        # bounded and the deep-tail branch stays exact either way
        k = 2
        while True:
            self._extend(k)
            if self._tail[k] < TABLE_TAIL_CUTOFF or k >= TABLE_MAX_ENTRIES:
                break
            k += 1
        cdf = 1.0 - np.asarray(self._tail[1 : k + 1])  # cdf[j] = P(N <= j)
        self._cdf = cdf
        self._table_kmax = k - 1  # searchsorted result == table_kmax+1 -> deep tail

    def invert_log_tail(self, log_target, lo=2):
        """Smallest k >= lo with log_tail(k+1) <= log_target (exact bisection)."""
        if self.log_tail(lo + 1) <= log_target:
            return lo
        hi = 2 * lo
        while self.log_tail(hi + 1) > log_target:
            lo, hi = hi, 2 * hi
        while hi > lo:
            mid = (lo + hi) // 2
            if self.log_tail(mid + 1) <= log_target:
                hi = mid
            else:
                lo = mid + 1
        return lo

    def _invert_deep_tail(self, log_target):
        return self.invert_log_tail(log_target, lo=self._table_kmax + 1)

    def sample(self, rng, size=None):
        """Inverse-CDF draw(s); unbounded support for heavy-tailed laws."""
        if self._cdf is None:
            self._build_table()
        u = rng.random(size if size is not None else 1)
        k = np.searchsorted(self._cdf, u, side="right").astype(np.int64)
        deep = k > self._table_kmax
        if deep.any():
            for i in np.flatnonzero(deep):
                k[i] = self._invert_deep_tail(math.log1p(-u[i]))
        return k if size is not None else int(k[0])

    def __repr__(self):
        g = f", gamma={self.gamma}" if self.gamma is not None else ""
        return f"OffspringLaw({self.kind}, alpha={self.alpha}{g})"


def make_stable_rho(alpha, gamma=None):
    """Critical offspring law with gf(r) = r + gamma*(1-r)^alpha.

    gamma defaults to 1/alpha (the largest admissible value, which zeroes
    the mass at 1).
    """
    if not 1.0 < alpha <= 2.0:
        raise ValueError(f"alpha must lie in (1, 2], got {alpha}")
    if gamma is None:
        gamma = 1.0 / alpha
    if not 0.0 < gamma <= 1.0 / alpha:
        raise ValueError(f"gamma must lie in (0, 1/alpha], got {gamma}")
    return OffspringLaw(alpha, "stable", gamma=gamma)


def make_theta(alpha):
    """Supercritical alpha-offspring law (Dirac at 2 when alpha = 2)."""
    if not 1.0 < alpha <= 2.0:
        raise ValueError(f"alpha must lie in (1, 2], got {alpha}")
    return OffspringLaw(alpha, "theta")


def size_bias(law: OffspringLaw) -> OffspringLaw:
    """Size-biased version: pmf'(k) = k*pmf(k)/mean."""
    if not 0.0 < law.mean < math.inf:
        raise ValueError("size_bias requires a law with finite positive mean")
    if law.kind == "stable":
        return OffspringLaw(law.alpha, "stable_sb", gamma=law.gamma)
    if law.kind == "theta":
        return OffspringLaw(law.alpha, "theta_sb")
    raise ValueError(f"size_bias not defined for kind {law.kind!r}")


@dataclass
class SurvivalTable:
    """q[n] = P(a critical tree reaches generation n); q[0] = 1."""

    alpha: float
    gamma: float | None
    q: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.q)


def survival_probs(law: OffspringLaw, n_max: int) -> SurvivalTable:
    """Exact survival recursion q_n = 1 - gf(1 - q_{n-1}).

    For the stable family this is evaluated as q - gamma*q^alpha, which is
    the same quantity without the 1-(1-q) round trip.
    """
    if abs(law.mean - 1.0) > 1e-12:
        raise ValueError("survival_probs requires a critical law")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    q = np.empty(n_max + 1)
    q[0] = 1.0
    if law.kind == "stable":
        a, g = law.alpha, law.gamma
        for n in range(1, n_max + 1):
            q[n] = q[n - 1] - g * q[n - 1] ** a
    else:
        for n in range(1, n_max + 1):
            q[n] = 1.0 - law.gf(1.0 - q[n - 1])
    return SurvivalTable(alpha=law.alpha, gamma=law.gamma, q=q)


@dataclass(frozen=True)
class SpecialLaw:
    """Scalar laws used by the size-biased constructions.

    v_alpha: density (alpha/(alpha-1))*(1-x)^(1/(alpha-1)) on [0,1].
    r_alpha: tail P(R > x) = (1+x)^(-alpha/(alpha-1)) on [0,inf).
    uniform01: U(0,1).
    """

    kind: str
    alpha: float | None = None

    def sample(self, rng, size=None):
        u = rng.random() if size is None else rng.random(size)
        if self.kind == "uniform01":
            return u
        a = self.alpha
        if self.kind == "v_alpha":
            return 1.0 - (1.0 - u) ** ((a - 1.0) / a)
        if self.kind == "r_alpha":
            return u ** (-(a - 1.0) / a) - 1.0
        raise ValueError(f"unknown special law {self.kind!r}")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        a = self.alpha
        if self.kind == "uniform01":
            return np.clip(x, 0.0, 1.0)
        if self.kind == "v_alpha":
            return 1.0 - (1.0 - np.clip(x, 0.0, 1.0)) ** (a / (a - 1.0))
        if self.kind == "r_alpha":
            return 1.0 - (1.0 + np.maximum(x, 0.0)) ** (-a / (a - 1.0))
        raise ValueError(f"unknown special law {self.kind!r}")


def sample(law, rng, size=None):
    """Draw from an OffspringLaw or a SpecialLaw."""
    return law.sample(rng, size)


def positive_stable(beta, rng, size=None):
    """Totally-skewed positive stable draws with E[exp(-u S)] = exp(-u^beta).

    Kanter's representation: S = (A(pi U)/E)^((1-beta)/beta) with
    A(x) = sin(beta x)^(beta/(1-beta)) sin((1-beta) x) / sin(x)^(1/(1-beta)).
    beta = 1 degenerates to the point mass at 1.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"stable index must lie in (0, 1], got {beta}")
    if beta == 1.0:
        return 1.0 if size is None else np.ones(size)
    u = np.pi * rng.random(size if size is not None else 1)
    e = rng.standard_exponential(size if size is not None else 1)
    a = (
        np.sin(beta * u) ** (beta / (1.0 - beta))
        * np.sin((1.0 - beta) * u)
        / np.sin(u) ** (1.0 / (1.0 - beta))
    )
    s = (a / e) ** ((1.0 - beta) / beta)
    return s if size is not None else float(s[0])
