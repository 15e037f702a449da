"""Slice sampling with Gibbs steps for truncated elliptical distributions.

The chain runs on the standardized problem ``TE(0, R; g, (a*, b*))`` with
``Sigma = Lambda R Lambda`` and is mapped back with ``Y = mu + Lambda X``.
Each iteration draws a slice height under ``g(x' R^{-1} x)``, converts it to
a bound ``kappa`` on the Mahalanobis form and then refreshes every coordinate
from the exact uniform interval cut out by the slice and the box.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from ._validation import as_square, as_vector, check_positive_int, check_spd
from .dgf import Family, dgf_inverse
from .exceptions import ConvergenceError, InvalidParameterError, SliceError
from .rng import DEFAULT_SEED, stream

__all__ = [
    "TruncEllipticalSpec",
    "StandardizedSpec",
    "Chain",
    "standardize",
    "coordinate_slice_bounds",
    "slice_gibbs_sample",
    "acf",
]

_CHUNK_VALUES = 1 << 18


@dataclass(frozen=True, eq=False)
class TruncEllipticalSpec:
    """Location, scale, truncation box and family of a truncated elliptical law."""

    mu: np.ndarray
    sigma: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    family: Family
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lower = as_vector(self.lower, "lower", allow_inf=True)
        p = lower.shape[0]
        upper = as_vector(self.upper, "upper", length=p, allow_inf=True)
        mu = as_vector(self.mu, "mu", length=p)
        sigma = as_square(self.sigma, "sigma", size=p)
        chol = check_spd(sigma, "sigma")
        sigma = 0.5 * (sigma + sigma.T)
        if np.any(lower == np.inf) or np.any(upper == -np.inf):
            raise InvalidParameterError("lower bounds cannot be +inf nor upper bounds -inf")
        if not np.all(lower < upper):
            bad = int(np.flatnonzero(~(lower < upper))[0])
            raise InvalidParameterError(f"lower[{bad}] must be < upper[{bad}]")
        family = self.family
        if family.p != p:
            family = family.with_dim(p)
        for name, arr in (("mu", mu), ("sigma", sigma), ("lower", lower), ("upper", upper),
                          ("chol", chol)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "family", family)

    @classmethod
    def create(cls, family: Family, lower, upper=None, mu=None, sigma=None):
        """Build a spec with the usual defaults (mu = 0, Sigma = I, upper = +inf)."""
        lower = as_vector(lower, "lower", allow_inf=True)
        p = lower.shape[0]
        upper = np.full(p, np.inf) if upper is None else upper
        mu = np.zeros(p) if mu is None else mu
        sigma = np.eye(p) if sigma is None else sigma
        return cls(mu, sigma, lower, upper, family)

    @property
    def p(self) -> int:
        return self.mu.shape[0]

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.mu, self.sigma, self.lower, self.upper):
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        h.update(repr((self.family.name, self.family.params, self.family.p)).encode())
        if not self.family.is_builtin:
            h.update(repr((self.family.g, self.family.g_inv)).encode())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class StandardizedSpec:
    corr: np.ndarray
    lower_std: np.ndarray
    upper_std: np.ndarray
    lam: np.ndarray
    rinv: np.ndarray


@dataclass(frozen=True, eq=False)
class Chain:
    """Kept states of one seeded chain, in the original coordinates."""

    samples: np.ndarray
    seed: int
    burn_in: int
    thinning: int
    spec_digest: str

    @property
    def n(self) -> int:
        return self.samples.shape[0]


def standardize(spec: TruncEllipticalSpec) -> StandardizedSpec:
    """Rescale to unit diagonal: ``R = L^-1 Sigma L^-1`` and ``a* = L^-1 (a - mu)``."""
    lam = np.sqrt(np.diag(spec.sigma))
    corr = spec.sigma / np.outer(lam, lam)
    np.fill_diagonal(corr, 1.0)
    check_spd(corr, "correlation matrix")
    with np.errstate(invalid="ignore"):
        lower_std = (spec.lower - spec.mu) / lam
        upper_std = (spec.upper - spec.mu) / lam
    rinv = np.linalg.inv(corr)
    rinv = 0.5 * (rinv + rinv.T)
    return StandardizedSpec(corr, lower_std, upper_std, lam, rinv)


def coordinate_slice_bounds(x, j, rinv, kappa_y, lower_std, upper_std):
    """Interval of admissible values for coordinate ``j`` inside the slice.

    The quadratic form is rewritten as
    ``rho_jj (x_j - lambda_j)^2 - rho_jj lambda_j^2 + eta_j`` so the slice
    ``x' R^{-1} x < kappa`` becomes ``|x_j - lambda_j| < tau_j``; the result is
    intersected with the box.
    """
    x = np.asarray(x, dtype=float)
    rinv = np.asarray(rinv, dtype=float)
    others = np.arange(x.shape[0]) != j
    rjj = rinv[j, j]
    eta = x[others] @ rinv[np.ix_(others, others)] @ x[others]
    lam = -(rinv[j, others] @ x[others]) / rjj
    rad = lam * lam + (kappa_y - eta) / rjj
    if rad < 0:
        if rad < -1e-12 * (1.0 + lam * lam + abs(kappa_y - eta) / rjj):
            raise SliceError(f"negative radicand {rad} for coordinate {j}")
        rad = 0.0
    tau = math.sqrt(rad)
    return max(lower_std[j], lam - tau), min(upper_std[j], lam + tau)


def _default_start(lower, upper):
    x0 = np.zeros_like(lower)
    both = np.isfinite(lower) & np.isfinite(upper)
    x0[both] = 0.5 * (lower[both] + upper[both])
    lo_only = np.isfinite(lower) & ~np.isfinite(upper)
    x0[lo_only] = lower[lo_only] + 1.0
    up_only = ~np.isfinite(lower) & np.isfinite(upper)
    x0[up_only] = upper[up_only] - 1.0
    return x0


def _nudge_off_pole(x0, lower, upper):
    # a dgf with g(0) = inf would pin a chain started exactly at the origin
    j = 0
    width = upper[j] - lower[j]
    step = 1e-3 * width if np.isfinite(width) else 1e-3
    x0 = x0.copy()
    x0[j] += step
    return x0


def _run_chunk_py(x, rinv, lower, upper, family, u_slice, u_coord, out, check):
    """Pure-Python twin of the compiled kernel, used for custom dgfs."""
    g = family.g
    p = x.shape[0]
    for i in range(u_slice.shape[0]):
        q = float(x @ rinv @ x)
        gq = float(g(q))
        y = gq * u_slice[i]
        if not y > 0:
            raise SliceError(f"slice height underflowed at quadratic form {q}")
        kappa = max(dgf_inverse(family, min(y, gq)), q)
        for j in range(p):
            rjj = rinv[j, j]
            s = float(rinv[j] @ x) - rjj * x[j]
            lam = -s / rjj
            eta = q - rjj * x[j] ** 2 - 2.0 * x[j] * s
            rad = lam * lam + (kappa - eta) / rjj
            if rad < 0:
                if rad < -1e-12 * (1.0 + lam * lam + abs(kappa - eta) / rjj):
                    return K.BAD_RADICAND
                rad = 0.0
            tau = math.sqrt(rad)
            lo = max(lower[j], lam - tau)
            hi = min(upper[j], lam + tau)
            xn = lo + (hi - lo) * u_coord[i, j]
            if not (lower[j] < xn < upper[j]) or hi < lo:
                xn = x[j]
            q = eta + rjj * xn * xn + 2.0 * xn * s
            x[j] = xn
        if check and g(q) < y * (1 - 1e-9):
            return K.BAD_RADICAND
        out[i] = x
    return K.OK


def slice_gibbs_sample(spec: TruncEllipticalSpec, n: int, burn_in: int = 0, thinning: int = 1,
                       seed: int = DEFAULT_SEED, x0: Optional[np.ndarray] = None,
                       check: bool = False) -> Chain:
    """Draw ``n`` states from a truncated elliptical distribution.

    Parameters
    ----------
    spec : TruncEllipticalSpec
        Target distribution.
    n : int
        Number of states to keep.
    burn_in : int
        Iterations discarded before the first kept state.
    thinning : int
        Keep every ``thinning``-th state after burn-in; the chain runs
        ``burn_in + n * thinning`` iterations in total.
    seed : int
        Seed of the Philox stream driving this chain.
    x0 : array_like, optional
        Starting point strictly inside the box (original coordinates).
    check : bool
        Verify slice membership after every sweep.

    Returns
    -------
    Chain
    """
    n = check_positive_int(n, "n")
    burn_in = check_positive_int(burn_in, "burn_in", minimum=0)
    thinning = check_positive_int(thinning, "thinning")
    std = standardize(spec)
    p = spec.p
    fam = spec.family
    if x0 is None:
        x = _default_start(std.lower_std, std.upper_std)
    else:
        x0 = as_vector(x0, "x0", length=p)
        if not (np.all(x0 > spec.lower) and np.all(x0 < spec.upper)):
            raise InvalidParameterError("x0 must lie strictly inside (lower, upper)")
        x = (x0 - spec.mu) / std.lam
    x = np.ascontiguousarray(x, dtype=float)
    if fam.name == "kotz" and fam.params[2] < 1 and not np.any(x != 0):
        x = _nudge_off_pole(x, std.lower_std, std.upper_std)

    total = burn_in + n * thinning
    chunk = max(1, min(total, _CHUNK_VALUES // (p + 1)))
    rng = stream(seed)
    kept = np.empty((n, p))
    nk = 0
    done = 0
    buf = np.empty((chunk, p))
    par = fam.kernel_params()
    while done < total:
        m = min(chunk, total - done)
        # one row of uniforms per iteration keeps the stream independent of chunking
        u = rng.random((m, p + 1))
        u_slice = np.ascontiguousarray(1.0 - u[:, 0])
        u_coord = np.ascontiguousarray(u[:, 1:])
        out = buf[:m]
        if fam.is_builtin:
            status = K.run_chunk(x, std.rinv, std.lower_std, std.upper_std, fam.code, par,
                                 u_slice, u_coord, out, check)
        else:
            status = _run_chunk_py(x, std.rinv, std.lower_std, std.upper_std, fam,
                                   u_slice, u_coord, out, check)
        if status == K.BAD_RADICAND:
            raise SliceError("current state left its slice")
        if status == K.NO_CONVERGENCE:
            raise ConvergenceError(f"dgf inverse for {fam.name} did not converge")
        idx = np.arange(done + 1, done + m + 1)
        sel = (idx > burn_in) & ((idx - burn_in) % thinning == 0)
        k = int(sel.sum())
        kept[nk:nk + k] = out[sel]
        nk += k
        done += m
    samples = spec.mu + kept * std.lam
    # keep the open-box contract after the affine map's rounding
    samples = np.clip(samples, np.nextafter(spec.lower, np.inf), np.nextafter(spec.upper, -np.inf))
    samples.setflags(write=False)
    return Chain(samples, int(seed), burn_in, thinning, spec.digest())


def acf(chain, max_lag: int) -> np.ndarray:
    """Sample autocorrelations at lags ``1..max_lag`` for each coordinate.

    Accepts a :class:`Chain` or an ``(n, p)`` array.  Constant coordinates
    yield NaN columns.
    """
    x = chain.samples if isinstance(chain, Chain) else np.asarray(chain, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    max_lag = check_positive_int(max_lag, "max_lag")
    n = x.shape[0]
    if n <= max_lag:
        raise InvalidParameterError(f"chain length {n} must exceed max_lag {max_lag}")
    xc = x - x.mean(axis=0)
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, n=nfft, axis=0)
    ac = np.fft.irfft(f * np.conj(f), n=nfft, axis=0)[: max_lag + 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        r = ac / ac[0]
    r[:, ac[0] <= 0] = np.nan
    return r[1:]
