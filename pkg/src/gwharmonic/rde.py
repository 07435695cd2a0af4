"""Population-dynamics solvers for the conductance fixed-point laws.

Three laws are approximated by iterating finite sample pools:

  C    : C = (U + (1-U)/(C_1+...+C_N))^{-1}, N from the alpha-offspring law
  (W,C): jointly with W = (1-U)^{1/(alpha-1)} (W_1+...+W_N), same U and N
  Chat : Chat = (V + (1-V)/(Chat + C_2+...+C_Nhat))^{-1}, V with the
         size-biased gap density and Nhat the size-biased brood

Updates are synchronous (each generation resamples the previous pool), pools
start at the constant 1 (the support minimum), and every iteration records
the sorted-pool L1 displacement as a convergence diagnostic.

The typical-mass exponent is estimated three ways: the mean of the
size-biased conductance minus one (median-of-means, the law has one finite
moment only for alpha < 2), the direct brood log-ratio weighted by N*W, and
the size-biased log-ratio scaled by alpha/(alpha-1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .offspring import SpecialLaw, make_theta, positive_stable, size_bias

__all__ = [
    "SamplePool",
    "LambdaEstimate",
    "Pools",
    "solve_C",
    "solve_W",
    "solve_Chat",
    "estimate_lambda",
    "diagnostics",
    "median_of_means",
    "sample_w_biased",
    "w_laplace",
    "w_laplace_estimate",
]

COMPANION_CAP = 10_000  # exact gather budget per size-biased brood


def companion_cap_for(alpha):
    """Affordable exact-summation budget per size-biased brood.

    The brood size has tail index alpha - 1, so the exact-gather cost per
    slot grows like cap^(2-alpha); near alpha = 1 a large cap is both
    unaffordable and pointless (each companion is >= 1, so once the sum
    passes ~100 the map value is insensitive to it at the 1e-2/V level).
    """
    if alpha >= 1.4:
        return COMPANION_CAP
    if alpha >= 1.2:
        return 300
    return 100


@dataclass
class SamplePool:
    """Empirical approximation of a fixed-point law."""

    alpha: float
    kind: str  # 'c', 'joint' (columns W, C) or 'chat'
    values: np.ndarray = field(repr=False)
    iterations: int = 0
    displacement: np.ndarray = field(default=None, repr=False)

    def c_values(self):
        return self.values[:, 1] if self.values.ndim == 2 else self.values

    def __len__(self):
        return len(self.values)


@dataclass
class LambdaEstimate:
    alpha: float
    lam: float
    stderr: float
    method: str
    n_samples: int
    # set when the estimate undershoots the 1/(alpha-1) lower bound by > 3 se
    bound_violation: bool = False


@dataclass
class Pools:
    """Converged pools needed by the estimators (any subset may be None)."""

    alpha: float
    c: SamplePool | None = None
    joint: SamplePool | None = None
    chat: SamplePool | None = None


def _segment_sums(values, counts, rng):
    total = int(counts.sum())
    idx = rng.integers(0, len(values), total)
    offsets = np.concatenate(([0], np.cumsum(counts)[:-1])).astype(np.int64)
    return np.add.reduceat(values[idx], np.minimum(offsets, max(total - 1, 0))), idx, offsets


def _displacement(prev_sorted, new):
    new_sorted = np.sort(new)
    return float(np.abs(new_sorted - prev_sorted).mean()), new_sorted


def solve_C(alpha, pool_size, iterations, rng, readout_size=None):
    """Iterate the conductance map from the constant-1 pool."""
    theta = make_theta(alpha)
    values = np.ones(pool_size)
    disp = []
    prev_sorted = values.copy()
    for _ in range(iterations):
        values = _step_c(values, theta, pool_size, rng)
        d, prev_sorted = _displacement(prev_sorted, values)
        disp.append(d)
    if readout_size:
        values = _step_c(values, theta, readout_size, rng)
    return SamplePool(alpha, "c", values, iterations, np.asarray(disp))


def _step_c(values, theta, size_out, rng):
    counts = theta.sample(rng, size_out)
    sums, _, _ = _segment_sums(values, counts, rng)
    u = rng.random(size_out)
    return 1.0 / (u + (1.0 - u) / sums)


def solve_W(alpha, pool_size, iterations, rng, readout_size=None):
    """Joint (W, C) pool; both coordinates share each slot's U and brood.

    The population-size map is exactly critical (it preserves the unit mean
    but contracts nothing), so the finite-pool mean performs a multiplicative
    random walk; the W column is renormalized to its known unit mean every
    generation, which pins the scale while the shape converges.
    """
    theta = make_theta(alpha)
    expo = 1.0 / (alpha - 1.0)
    values = np.ones((pool_size, 2))
    disp = []
    prev_sorted = values[:, 1].copy()

    def step(vals, size_out):
        counts = theta.sample(rng, size_out)
        total = int(counts.sum())
        idx = rng.integers(0, len(vals), total)
        offsets = np.concatenate(([0], np.cumsum(counts)[:-1])).astype(np.int64)
        sw = np.add.reduceat(vals[idx, 0], offsets)
        sc = np.add.reduceat(vals[idx, 1], offsets)
        u = rng.random(size_out)
        w = (1.0 - u) ** expo * sw
        return np.column_stack((w / w.mean(), 1.0 / (u + (1.0 - u) / sc)))

    for _ in range(iterations):
        values = step(values, pool_size)
        d, prev_sorted = _displacement(prev_sorted, values[:, 1])
        disp.append(d)
    if readout_size:
        values = step(values, readout_size)
    return SamplePool(alpha, "joint", values, iterations, np.asarray(disp))


def _biased_brood_sums(c_values, c_mean, nhat_law, size_out, rng, cap=COMPANION_CAP):
    """Sums C_2+...+C_Nhat; broods beyond `cap` companions use the pool mean.

    The replacement only triggers when the sum already exceeds cap (every C
    is >= 1), where the map is insensitive to it at the 1e-4 relative level.
    """
    m = nhat_law.sample(rng, size_out) - 1
    small = np.minimum(m, cap)
    sums, _, _ = _segment_sums(c_values, small, rng)
    sums[small == 0] = 0.0
    big = m > cap
    if big.any():
        sums[big] += (m[big] - cap) * c_mean
    return sums


def solve_Chat(alpha, c_pool, pool_size, iterations, rng, readout_size=None,
               companion_cap=None):
    """Size-biased conductance pool driven by a converged C pool."""
    if c_pool.alpha != alpha:
        raise ValueError("c_pool alpha mismatch")
    nhat = size_bias(make_theta(alpha))
    v_law = SpecialLaw("v_alpha", alpha)
    cap = companion_cap_for(alpha) if companion_cap is None else companion_cap
    c_values = c_pool.c_values()
    c_mean = c_values.mean()
    values = np.ones(pool_size)
    disp = []
    prev_sorted = values.copy()

    def step(vals, size_out):
        comp = _biased_brood_sums(c_values, c_mean, nhat, size_out, rng, cap=cap)
        own = vals[rng.integers(0, len(vals), size_out)]
        v = v_law.sample(rng, size_out)
        return 1.0 / (v + (1.0 - v) / (own + comp))

    for _ in range(iterations):
        values = step(values, pool_size)
        d, prev_sorted = _displacement(prev_sorted, values)
        disp.append(d)
    if readout_size:
        values = step(values, readout_size)
    return SamplePool(alpha, "chat", values, iterations, np.asarray(disp))


def w_laplace(alpha, u):
    """Closed-form E[exp(-u W)] of the unit-mean population limit."""
    b = alpha - 1.0
    return 1.0 - u / (1.0 + u**b) ** (1.0 / b)


def sample_w_biased(alpha, rng, size=None):
    """Exact draws of the size-biased population limit.

    Differentiating the closed-form transform gives
    E[W exp(-u W)] = (1 + u^(alpha-1))^(-alpha/(alpha-1)), the transform of
    G^(1/(alpha-1)) * S with G ~ Gamma(alpha/(alpha-1)) and S positive
    (alpha-1)-stable. At alpha = 2 this is the Gamma(2) size-biasing of the
    exponential limit.
    """
    b = alpha - 1.0
    g = rng.gamma(alpha / b, size=size)
    return g ** (1.0 / b) * positive_stable(b, rng, size)


def w_laplace_estimate(alpha, rng, n, u):
    """(estimate, stderr) of E[exp(-u W)] from n exact size-biased draws.

    Uses E[1 - exp(-u W)] = E[(1 - exp(-u What))/What]; the weight
    (1 - e^(-ux))/x is bounded by u, so the estimator has finite variance
    even though 1/What alone does not.
    """
    what = sample_w_biased(alpha, rng, n)
    terms = -np.expm1(-u * what) / what
    return 1.0 - float(terms.mean()), float(terms.std() / math.sqrt(n))


def median_of_means(x, blocks=32):
    """(estimate, stderr) robust to heavy tails: median of block means."""
    n = (len(x) // blocks) * blocks
    bm = x[:n].reshape(blocks, -1).mean(axis=1)
    med = float(np.median(bm))
    mad = float(np.median(np.abs(bm - med)))
    se = 1.2533 * 1.4826 * mad / math.sqrt(blocks)
    return med, se


def _require(pools, attr, method):
    pool = getattr(pools, attr)
    if pool is None:
        raise ValueError(f"method {method!r} needs the {attr!r} pool")
    if pool.alpha != pools.alpha:
        raise ValueError("pool alphas are inconsistent")
    return pool


def estimate_lambda(alpha, pools: Pools, method, rng, n_samples=10**6,
                    companion_cap=None):
    """Typical-mass exponent by one of three routes.

    chat_mean: E[Chat] - 1 with median-of-means error bars.
    direct_logratio: E[N W_1 log((C_1+...+C_N)/C_1)] over fresh broods.
    biased_logratio: (alpha/(alpha-1)) E[log((Chat+C_2+..+C_Nhat)/Chat)].
    """
    if pools.alpha != alpha:
        raise ValueError(f"pools built for alpha={pools.alpha}, asked {alpha}")
    if method == "chat_mean":
        chat = _require(pools, "chat", method)
        lam, se = median_of_means(chat.values - 1.0)
        n = len(chat)
    elif method == "direct_logratio":
        joint = _require(pools, "joint", method)
        cvals = (pools.c or joint).c_values()
        theta = make_theta(alpha)
        counts = theta.sample(rng, n_samples)
        comp, _, _ = _segment_sums(cvals, counts - 1, rng)
        comp[counts == 1] = 0.0
        slot = rng.integers(0, len(joint), n_samples)
        w1 = joint.values[slot, 0]
        c1 = joint.values[slot, 1]
        s = counts * w1 * np.log1p(comp / c1)
        lam = float(s.mean())
        se = float(s.std() / math.sqrt(n_samples))
        n = n_samples
    elif method == "biased_logratio":
        chat = _require(pools, "chat", method)
        c_src = pools.c or pools.joint
        if c_src is None:
            raise ValueError("biased_logratio needs a C (or joint) pool")
        cvals = c_src.c_values()
        nhat = size_bias(make_theta(alpha))
        cap = companion_cap_for(alpha) if companion_cap is None else companion_cap
        comp = _biased_brood_sums(cvals, cvals.mean(), nhat, n_samples, rng, cap=cap)
        own = chat.values[rng.integers(0, len(chat), n_samples)]
        s = (alpha / (alpha - 1.0)) * np.log1p(comp / own)
        lam = float(s.mean())
        se = float(s.std() / math.sqrt(n_samples))
        n = n_samples
    else:
        raise ValueError(f"unknown method {method!r}")
    bound = 1.0 / (alpha - 1.0)
    return LambdaEstimate(
        alpha=alpha,
        lam=float(lam),
        stderr=float(se),
        method=method,
        n_samples=n,
        bound_violation=bool(lam < bound - 3.0 * se),
    )


def diagnostics(pools: Pools, rng, n_samples=10**6, ells=(0.5, 1.0, 2.0)):
    """Self-consistency checks of the converged pools.

    Returns a dict with the g=log pairing residual (per-sample, so the
    quoted error includes all cross terms) and the Laplace-transform ODE
    residual of the size-biased law at each requested argument.
    """
    alpha = pools.alpha
    kappa = alpha / (alpha - 1.0)
    chat = _require(pools, "chat", "diagnostics")
    c_src = pools.c or pools.joint
    cvals = c_src.c_values()
    nhat = size_bias(make_theta(alpha))

    own = chat.values[rng.integers(0, len(chat), n_samples)]
    comp = _biased_brood_sums(cvals, cvals.mean(), nhat, n_samples, rng)
    z = (own - 1.0) + kappa * np.log(own) - kappa * np.log(own + comp)
    g_resid, g_se = median_of_means(z)

    ode = []
    cv = cvals if len(cvals) <= n_samples else cvals[:n_samples]
    ch = chat.values
    for ell in ells:
        phi = np.exp(-ell * cv / 2.0)
        e = np.exp(-ell * ch / 2.0)
        a = 2.0 * ell * (ch / 2.0) ** 2 * e - ell * (ch / 2.0) * e
        factor = kappa * (1.0 - phi.mean()) ** (alpha - 1.0)
        resid_samples = a - factor * e
        resid = float(resid_samples.mean())
        se_a = resid_samples.std() / math.sqrt(len(ch))
        dfactor = kappa * (alpha - 1.0) * (1.0 - phi.mean()) ** (alpha - 2.0)
        se_phi = dfactor * e.mean() * phi.std() / math.sqrt(len(cv))
        ode.append((ell, resid, float(math.hypot(se_a, se_phi))))
    return {"g_log_residual": g_resid, "g_log_se": g_se, "ode": ode}
