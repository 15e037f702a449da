"""Marginal and conditional laws of a partitioned elliptical vector.

Coordinates with at least one finite bound form the truncated block ``X1``;
the rest form the free block ``X2``.  Closure under marginalization and
conditioning gives ``X1 ~ El(mu1, S11; g1)`` and
``X2 | X1 = x ~ El(mu2 + S21 S11^-1 (x - mu1), S22 - S21 S11^-1 S12; g_x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from . import _kernels as K
from .dgf import Family
from .exceptions import InvalidParameterError
from .sampler import TruncEllipticalSpec

__all__ = [
    "PartitionedSpec",
    "ConditionalParams",
    "NOT_CLOSED",
    "split",
    "mahalanobis1",
    "conditional_params",
    "marginal_family",
    "log_slash_density",
]

NOT_CLOSED = None


@dataclass(frozen=True, eq=False)
class PartitionedSpec:
    idx_trunc: np.ndarray
    idx_free: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    s11: np.ndarray
    s22: np.ndarray
    s12: np.ndarray
    s21: np.ndarray
    a1: np.ndarray
    b1: np.ndarray
    family: Family
    perm: np.ndarray

    @property
    def p1(self) -> int:
        return self.idx_trunc.shape[0]

    @property
    def p2(self) -> int:
        return self.idx_free.shape[0]

    @property
    def p(self) -> int:
        return self.p1 + self.p2

    def chol11(self):
        return cho_factor(self.s11, lower=True)

    def regression(self) -> np.ndarray:
        """``S21 S11^-1`` as a ``(p2, p1)`` matrix."""
        if self.p1 == 0:
            return np.zeros((self.p2, 0))
        return cho_solve(self.chol11(), self.s12).T

    def schur(self) -> np.ndarray:
        """``S2.1 = S22 - S21 S11^-1 S12``."""
        if self.p1 == 0:
            return self.s22.copy()
        out = self.s22 - self.regression() @ self.s12
        return 0.5 * (out + out.T)

    def unpermute(self, vec_or_mat):
        """Map a block-ordered vector or matrix back to the original order."""
        inv = np.argsort(self.perm)
        arr = np.asarray(vec_or_mat)
        if arr.ndim == 1:
            return arr[inv]
        return arr[np.ix_(inv, inv)]


@dataclass(frozen=True, eq=False)
class ConditionalParams:
    """Law of ``X2 | X1 = x1``.

    ``family_cond`` is a :class:`Family` when the conditional law stays in a
    named family (normal, t, Pearson VII, contaminated normal); for slash and
    power exponential it is ``None`` and ``cond_dgf`` holds the dgf.
    ``scale`` multiplies ``s21_base`` (the t family's lambda, 1 otherwise).
    """

    mu21: np.ndarray
    s21_base: np.ndarray
    regression: np.ndarray
    family_cond: Optional[Family]
    scale: float
    delta1: float
    nu21: float
    cond_dgf: Optional[object] = None


def split(spec: TruncEllipticalSpec) -> PartitionedSpec:
    finite = np.isfinite(spec.lower) | np.isfinite(spec.upper)
    idx_trunc = np.flatnonzero(finite)
    idx_free = np.flatnonzero(~finite)
    perm = np.concatenate([idx_trunc, idx_free])
    sig = spec.sigma
    return PartitionedSpec(
        idx_trunc=idx_trunc,
        idx_free=idx_free,
        mu1=spec.mu[idx_trunc],
        mu2=spec.mu[idx_free],
        s11=sig[np.ix_(idx_trunc, idx_trunc)],
        s22=sig[np.ix_(idx_free, idx_free)],
        s12=sig[np.ix_(idx_trunc, idx_free)],
        s21=sig[np.ix_(idx_free, idx_trunc)],
        a1=spec.lower[idx_trunc],
        b1=spec.upper[idx_trunc],
        family=spec.family,
        perm=perm,
    )


def mahalanobis1(x1, part: PartitionedSpec) -> np.ndarray:
    """Squared Mahalanobis distance of truncated-block points; accepts ``(p1,)`` or ``(n, p1)``."""
    x1 = np.asarray(x1, dtype=float)
    single = x1.ndim == 1
    d = np.atleast_2d(x1) - part.mu1
    if d.shape[1] != part.p1:
        raise InvalidParameterError(f"x1 must have {part.p1} columns")
    c = np.linalg.cholesky(part.s11)
    z = solve_triangular(c, d.T, lower=True)
    out = np.einsum("ij,ij->j", z, z)
    return float(out[0]) if single else out


def marginal_family(part: PartitionedSpec) -> Optional[Family]:
    """Family of ``X1``, or ``NOT_CLOSED`` when it has no closed form here."""
    if part.p1 < 1:
        raise InvalidParameterError("marginal of an empty block")
    fam = part.family
    p1, p2 = part.p1, part.p2
    if fam.name in ("normal", "t", "slash", "cn"):
        return fam.with_dim(p1)
    if fam.name == "pvii":
        m, nu = fam.params
        if m - p2 / 2 <= p1 / 2:
            raise InvalidParameterError(
                f"pvii marginal parameter m - p2/2 = {m - p2 / 2} must exceed p1/2 = {p1 / 2}")
        return Family("pvii", (m - p2 / 2, nu), p1)
    return NOT_CLOSED


def log_normal_density(delta, p, logdet):
    return -0.5 * (p * math.log(2 * math.pi) + logdet + delta)


def cn_posterior_weight(delta, nu, rho, p1):
    """Weight of the inflated component given squared distance ``delta`` (vectorized)."""
    delta = np.asarray(delta, dtype=float)
    l1 = math.log(nu) + 0.5 * p1 * math.log(rho) - 0.5 * rho * delta
    l2 = math.log1p(-nu) - 0.5 * delta
    return np.exp(l1 - np.logaddexp(l1, l2))


def log_slash_density(delta, nu, p, logdet):
    """log SL_p at a point with squared distance ``delta`` from the center."""
    a = nu + 0.5 * p
    integral = np.array([K.log_slash_integral(a, float(d)) for d in np.atleast_1d(delta)])
    return math.log(nu) - 0.5 * p * math.log(2 * math.pi) - 0.5 * logdet + integral


def slash_variance_ratio(delta, nu, p1):
    """``nu/(nu-1) * SL(x; nu-1) / SL(x; nu)`` evaluated in log space (vectorized)."""
    a = nu + 0.5 * p1
    d = np.atleast_1d(np.asarray(delta, dtype=float))
    num = np.array([K.log_slash_integral(a - 1.0, float(v)) for v in d])
    den = np.array([K.log_slash_integral(a, float(v)) for v in d])
    return np.exp(num - den)


def conditional_params(part: PartitionedSpec, x1) -> ConditionalParams:
    if part.p1 == 0 or part.p2 == 0:
        raise InvalidParameterError("conditional law needs two non-empty blocks")
    x1 = np.asarray(x1, dtype=float)
    reg = part.regression()
    mu21 = part.mu2 + reg @ (x1 - part.mu1)
    base = part.schur()
    delta = mahalanobis1(x1, part)
    fam = part.family
    p1, p2 = part.p1, part.p2
    scale, nu21, fam_cond, cond_dgf = 1.0, math.nan, None, None
    if fam.name == "normal":
        fam_cond = fam.with_dim(p2)
    elif fam.name == "t":
        nu = fam.params[0]
        scale = (nu + delta) / (nu + p1)
        fam_cond = Family("t", (nu + p1,), p2)
    elif fam.name == "pvii":
        m, nu = fam.params
        fam_cond = Family("pvii", (m, nu + delta), p2)
    elif fam.name == "cn":
        nu, rho = fam.params
        nu21 = float(cn_posterior_weight(delta, nu, rho, p1))
        fam_cond = Family("cn", (nu21, rho), p2, check=False)
    elif fam.name == "slash":
        nu = fam.params[0]
        p = fam.p
        cond_dgf = lambda t, _d=delta: math.exp(K.log_slash_integral(nu + 0.5 * p, t + _d))
    elif fam.name == "pe":
        beta = fam.params[0]
        cond_dgf = lambda t, _d=delta: math.exp(-0.5 * (t + _d) ** beta)
    else:
        raise InvalidParameterError(f"no conditional law available for the {fam.name} family")
    return ConditionalParams(mu21, base, reg, fam_cond, scale, delta, nu21, cond_dgf)
