"""Monte Carlo estimates of the first two truncated moments.

Two routes are available.  The full route samples the whole vector and
averages.  The partitioned route samples only the truncated block ``X1``
from its marginal truncated law and assembles the free block from
conditional expectations:

    E(X2)      = mu2 + S21 S11^-1 (xi1 - mu1)
    Cov(X1,X2) = Omega11 S11^-1 S12
    Cov(X2)    = w S22 - S21 S11^-1 (w I - Omega11 S11^-1) S12

where ``xi1``, ``Omega11`` are the truncated mean and covariance of ``X1`` and
``w`` (omega21) is a family-specific scale of the conditional covariance.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .dgf import Family
from .exceptions import ExistenceError, InvalidParameterError
from .partition import (
    PartitionedSpec,
    cn_posterior_weight,
    mahalanobis1,
    marginal_family,
    slash_variance_ratio,
    split,
)
from .rng import DEFAULT_SEED, child_seeds
from .sampler import TruncEllipticalSpec, slice_gibbs_sample

__all__ = [
    "Existence",
    "MomentEstimate",
    "existence_check",
    "omega21",
    "mc_moments_full",
    "mc_moments_partitioned",
    "mc_moments",
]

DEFAULT_N = 10_000
DEFAULT_THINNING = 3
_PARTITIONED_FAMILIES = ("normal", "t", "pvii", "slash", "cn")


@dataclass(frozen=True)
class Existence:
    """Which truncated moments are finite.

    ``mean_entries`` and ``cov_entries`` give the per-entry verdict; the
    scalar flags are their conjunctions.
    """

    mean_exists: bool
    cov_exists: bool
    reason: str
    mean_entries: np.ndarray = field(repr=False, compare=False)
    cov_entries: np.ndarray = field(repr=False, compare=False)

    def to_dict(self):
        return {"mean_exists": self.mean_exists, "cov_exists": self.cov_exists,
                "reason": self.reason}


@dataclass(frozen=True, eq=False)
class MomentEstimate:
    mean: np.ndarray
    second_moment: np.ndarray
    cov: np.ndarray
    omega21: float
    n_used: int
    existence: Existence
    mean_se: np.ndarray
    cov_se: np.ndarray
    route: str
    seed: int
    reliable: bool = True
    notes: tuple = ()

    def to_dict(self):
        return {
            "mean": self.mean.tolist(),
            "EXXt": self.second_moment.tolist(),
            "cov": self.cov.tolist(),
            "omega21": None if math.isnan(self.omega21) else self.omega21,
            "existence": self.existence.to_dict(),
            "n_used": self.n_used,
            "seed": self.seed,
            "route": self.route,
            "reliable": self.reliable,
            "mean_se": self.mean_se.tolist(),
            "cov_se": self.cov_se.tolist(),
            "notes": list(self.notes),
        }


def existence_check(family: Family, lower, upper) -> Existence:
    """Decide existence of ``E(X | X in A)`` and ``Cov(X | X in A)``.

    Coordinates bounded on both sides form a bounded block of size ``d``; the
    remaining ``q = p - d`` coordinates are treated as unbounded.  Moments of
    the bounded block always exist, moments involving the others need the
    conditional law given the bounded block to have them:

    * Pearson VII(m): free means need ``m > (q + 1)/2``, free covariances
      ``m > (q + 2)/2`` (with ``d = 0`` these are the untruncated rules).
    * Student-t(nu): read as Pearson VII with ``m = (nu + p)/2``, i.e. free
      means need ``nu + d > 1`` and free covariances ``nu + d > 2``.
    * slash(nu): the mixing variable given the bounded block has exponent
      ``nu + d/2``, so free means need ``nu + d/2 > 1/2`` and covariances
      ``nu + d/2 > 1``.
    * normal, power exponential, contaminated normal, Kotz: always.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    p = lower.shape[0]
    bounded = np.isfinite(lower) & np.isfinite(upper)
    d = int(bounded.sum())
    q = p - d
    name = family.name

    if q == 0 or name in ("normal", "pe", "cn", "kotz", "custom"):
        reason = "bounded region" if q == 0 else f"{name} has moments of all orders"
        if name == "custom" and q > 0:
            reason = "custom dgf: existence not verified"
        ones = np.ones(p, dtype=bool)
        return Existence(True, True, reason, ones, np.ones((p, p), dtype=bool))

    if name == "pvii" or name == "t":
        m = family.params[0] if name == "pvii" else 0.5 * (family.params[0] + p)
        mean_free = m > (q + 1) / 2
        cov_free = m > (q + 2) / 2
        label = f"m={m:g}" if name == "pvii" else f"nu={family.params[0]:g}"
        reason = (f"{name} {label}, {d} doubly truncated of {p}: "
                  f"free mean needs m > {(q + 1) / 2:g}, free cov needs m > {(q + 2) / 2:g}")
        if name == "t":
            reason = (f"t {label}, {d} doubly truncated of {p}: "
                      f"free mean needs nu > {1 - d:g}, free cov needs nu > {2 - d:g}")
    elif name == "slash":
        nu = family.params[0]
        mean_free = nu + d / 2 > 0.5
        cov_free = nu + d / 2 > 1.0
        reason = (f"slash nu={nu:g}, {d} doubly truncated of {p}: "
                  f"free mean needs nu > {0.5 - d / 2:g}, free cov needs nu > {1 - d / 2:g}")
    else:
        raise InvalidParameterError(f"unknown family {name}")

    mean_entries = bounded | mean_free
    cov_entries = np.empty((p, p), dtype=bool)
    for i in range(p):
        for j in range(p):
            if bounded[i] and bounded[j]:
                cov_entries[i, j] = True
            elif bounded[i] or bounded[j]:
                cov_entries[i, j] = mean_free
            else:
                cov_entries[i, j] = cov_free
    return Existence(bool(mean_entries.all()), bool(cov_entries.all()), reason,
                     mean_entries, cov_entries)


def _omega_terms(family: Family, part: PartitionedSpec, x1: np.ndarray):
    """Per-sample contributions ``h(x1_i)`` whose average is omega21."""
    n = x1.shape[0]
    name = family.name
    p1, p2 = part.p1, part.p2
    notes = []
    if name == "normal":
        return np.ones(n), notes
    delta = mahalanobis1(x1, part) if n > 0 else np.zeros(0)
    if name == "t":
        nu = family.params[0]
        den = nu + p1 - 2
        if den <= 0:
            raise ExistenceError(f"omega21 undefined: nu + p1 - 2 = {den} <= 0")
        return (nu + delta) / den, notes
    if name == "pvii":
        m, nu = family.params
        den = 2 * m - p2 - 2
        if den <= 0:
            raise ExistenceError(f"omega21 undefined: 2m - p2 - 2 = {den} <= 0")
        return (nu + delta) / den, notes
    if name == "slash":
        nu = family.params[0]
        if nu + 0.5 * p1 - 1 <= 0:
            raise ExistenceError(f"omega21 undefined for slash nu={nu} with p1={p1}")
        h = slash_variance_ratio(delta, nu, p1)
        bad = ~np.isfinite(h)
        if bad.any():
            frac = bad.mean()
            h = np.where(bad, np.nan, h)
            if frac > 0.01:
                notes.append(f"slash density ratio underflowed for {frac:.1%} of samples")
        return h, notes
    if name == "cn":
        nu, rho = family.params
        w = cn_posterior_weight(delta, nu, rho, p1)
        return w / rho + 1.0 - w, notes
    raise InvalidParameterError(f"omega21 is not defined for the {name} family")


def omega21(family: Family, part: PartitionedSpec, x1_samples, xi1=None, omega11=None) -> float:
    """Scale of ``E(Cov(X2 | X1) | X1 in A1)`` relative to ``S2.1``.

    For the t and Pearson VII families the average of ``delta1`` is taken
    through ``tr(Omega11 S11^-1) + (xi1 - mu1)' S11^-1 (xi1 - mu1)``.
    """
    x1 = np.atleast_2d(np.asarray(x1_samples, dtype=float))
    name = family.name
    if name == "normal":
        return 1.0
    if name in ("t", "pvii"):
        if xi1 is None:
            xi1 = x1.mean(axis=0)
        if omega11 is None:
            dx = x1 - xi1
            omega11 = dx.T @ dx / x1.shape[0]
        cf = part.chol11()
        e_delta = float(np.trace(cho_solve(cf, omega11)) + (xi1 - part.mu1) @ cho_solve(cf, xi1 - part.mu1))
        if name == "t":
            nu = family.params[0]
            den = nu + part.p1 - 2
        else:
            m, nu = family.params
            den = 2 * m - part.p2 - 2
        if den <= 0:
            raise ExistenceError(f"omega21 undefined for {name}: denominator {den} <= 0")
        return (nu + e_delta) / den
    # cn: the average of nu21/rho + 1 - nu21 is nu*/rho + 1 - nu*
    h, _ = _omega_terms(family, part, x1)
    return float(np.nanmean(h))


def _batch_means_se(values: np.ndarray) -> np.ndarray:
    """Batch-means standard error of the column means of ``values`` (n, ...)."""
    n = values.shape[0]
    nb = max(2, int(math.isqrt(n)))
    bs = n // nb
    if bs < 1:
        return np.full(values.shape[1:], np.nan)
    trimmed = values[: nb * bs].reshape((nb, bs) + values.shape[1:])
    bm = trimmed.mean(axis=1)
    return np.sqrt(bm.var(axis=0, ddof=1) / nb)


def _cov_batch_se(x: np.ndarray, extra=None, extra_block=None) -> np.ndarray:
    n, p = x.shape
    nb = max(2, int(math.isqrt(n)))
    bs = n // nb
    xc = x[: nb * bs] - x.mean(axis=0)
    xb = xc.reshape(nb, bs, p)
    bm = np.einsum("bip,biq->bpq", xb, xb) / bs
    if extra is not None:
        hb = extra[: nb * bs].reshape(nb, bs).mean(axis=1)
        bm = bm + hb[:, None, None] * extra_block[None]
    return np.sqrt(bm.var(axis=0, ddof=1) / nb)


def _check_existence(spec, allow_divergent):
    ex = existence_check(spec.family, spec.lower, spec.upper)
    if not (ex.mean_exists and ex.cov_exists) and not allow_divergent:
        what = "mean" if not ex.mean_exists else "covariance"
        raise ExistenceError(f"truncated {what} does not exist ({ex.reason})")
    return ex


def mc_moments_full(spec: TruncEllipticalSpec, n: int = DEFAULT_N, burn_in: int = 0,
                    thinning: int = DEFAULT_THINNING, seed: int = DEFAULT_SEED,
                    allow_divergent: bool = False) -> MomentEstimate:
    """Plain Monte Carlo moments over ``n`` kept draws of the full vector."""
    ex = _check_existence(spec, allow_divergent)
    chain = slice_gibbs_sample(spec, n, burn_in, thinning, seed)
    x = chain.samples
    mean = x.mean(axis=0)
    dx = x - mean
    cov = dx.T @ dx / n
    cov = 0.5 * (cov + cov.T)
    reliable = ex.mean_exists and ex.cov_exists
    notes = () if reliable else (f"divergent moments: {ex.reason}",)
    return MomentEstimate(mean, cov + np.outer(mean, mean), cov, math.nan, n, ex,
                          _batch_means_se(x), _cov_batch_se(x), "full", int(seed),
                          reliable, notes)


def mc_moments_partitioned(spec: TruncEllipticalSpec, n: int = DEFAULT_N, burn_in: int = 0,
                           thinning: int = DEFAULT_THINNING, seed: int = DEFAULT_SEED,
                           allow_divergent: bool = False) -> MomentEstimate:
    """Moments by sampling only the truncated block.

    Falls back to :func:`mc_moments_full` when nothing is free, nothing is
    truncated, the family has no usable marginal/conditional closure (power
    exponential, Kotz, custom), or divergent moments were explicitly allowed.
    """
    ex = _check_existence(spec, allow_divergent)
    part = split(spec)
    fam = spec.family
    if (part.p1 == 0 or part.p2 == 0 or fam.name not in _PARTITIONED_FAMILIES
            or not (ex.mean_exists and ex.cov_exists)):
        return mc_moments_full(spec, n, burn_in, thinning, seed, allow_divergent)

    fam1 = marginal_family(part)
    spec1 = TruncEllipticalSpec(part.mu1, part.s11, part.a1, part.b1, fam1)
    x1 = slice_gibbs_sample(spec1, n, burn_in, thinning, seed).samples

    xi1 = x1.mean(axis=0)
    dx = x1 - xi1
    om11 = dx.T @ dx / n
    om11 = 0.5 * (om11 + om11.T)
    h, notes = _omega_terms(fam, part, x1)
    w = omega21(fam, part, x1, xi1, om11) if fam.name in ("normal", "t", "pvii") else float(np.nanmean(h))

    cf = part.chol11()
    s11inv_s12 = cho_solve(cf, part.s12)             # (p1, p2)
    reg = s11inv_s12.T                               # S21 S11^-1
    mean2 = part.mu2 + reg @ (xi1 - part.mu1)
    c12 = om11 @ s11inv_s12
    c22 = w * part.s22 - reg @ (w * np.eye(part.p1) - om11 @ cho_solve(cf, np.eye(part.p1))) @ part.s12
    c22 = 0.5 * (c22 + c22.T)

    mean_b = np.concatenate([xi1, mean2])
    cov_b = np.block([[om11, c12], [c12.T, c22]])

    # standard errors from the per-sample form of the same estimator
    aug = np.hstack([x1, part.mu2 + (x1 - part.mu1) @ reg.T])
    schur_block = np.zeros((part.p, part.p))
    schur_block[part.p1:, part.p1:] = part.schur()
    h_se = np.where(np.isnan(h), w, h)
    mean_se = part.unpermute(_batch_means_se(aug))
    cov_se = part.unpermute(_cov_batch_se(aug, h_se, schur_block))

    mean = part.unpermute(mean_b)
    cov = part.unpermute(cov_b)
    return MomentEstimate(mean, cov + np.outer(mean, mean), cov, float(w), n, ex, mean_se, cov_se,
                          "partitioned", int(seed), True, tuple(notes))


def mc_moments(spec: TruncEllipticalSpec, n: int = DEFAULT_N, burn_in: int = 0,
               thinning: int = DEFAULT_THINNING, seed: int = DEFAULT_SEED,
               route: str = "partitioned", chains: int = 1,
               allow_divergent: bool = False) -> MomentEstimate:
    """Moment estimate, optionally averaged over ``chains`` independent chains."""
    fn = {"partitioned": mc_moments_partitioned, "full": mc_moments_full}.get(route)
    if fn is None:
        raise InvalidParameterError(f"route must be 'partitioned' or 'full', got {route!r}")
    if chains == 1:
        return fn(spec, n, burn_in, thinning, seed, allow_divergent)
    seeds = child_seeds(seed, chains)
    with ThreadPoolExecutor(max_workers=chains) as pool:
        ests = list(pool.map(lambda s: fn(spec, n, burn_in, thinning, s, allow_divergent), seeds))
    mean = np.mean([e.mean for e in ests], axis=0)
    second = np.mean([e.second_moment for e in ests], axis=0)
    cov = second - np.outer(mean, mean)
    cov = 0.5 * (cov + cov.T)
    k = len(ests)
    mean_se = np.sqrt(np.sum([e.mean_se ** 2 for e in ests], axis=0)) / k
    cov_se = np.sqrt(np.sum([e.cov_se ** 2 for e in ests], axis=0)) / k
    om = float(np.mean([e.omega21 for e in ests]))
    notes = tuple(sorted({nt for e in ests for nt in e.notes}))
    return MomentEstimate(mean, cov + np.outer(mean, mean), cov, om, n * k, ests[0].existence,
                          mean_se, cov_se, ests[0].route, int(seed),
                          all(e.reliable for e in ests), notes)
