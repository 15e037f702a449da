"""Monte Carlo EM for the censored Gaussian spatial linear model.

The response follows ``Z = X beta + xi`` with
``xi ~ N(0, sigma2 * (R(phi) + nu2 I))`` and ``nu2 = tau2 / sigma2``, where
``R(phi)`` is an exponential correlation matrix.  Some responses are only
known to lie in an interval ``[V1, V2]`` (e.g. below a detection limit).
The E-step needs the first two moments of the censored responses given the
observed ones, a truncated normal problem handled by :mod:`trellip.moments`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import optimize, special
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .dgf import normal
from .exceptions import ConvergenceError, InvalidParameterError
from .moments import mc_moments_partitioned
from .rng import DEFAULT_SEED, child_seeds, stream
from .sampler import TruncEllipticalSpec

__all__ = [
    "SclDataset",
    "SclParams",
    "SclFit",
    "exp_corr",
    "e_step",
    "m_step",
    "fit_mcem",
    "observed_loglik",
    "initial_params",
    "simulate",
    "CensoredSpatialRegressor",
]

TRACE_COLUMNS_FIXED = ("sigma2", "phi", "tau2")


@dataclass(frozen=True, eq=False)
class SclDataset:
    """Sites, design matrix and (possibly interval-censored) responses.

    For censored sites (``cens[i]``) the response is known to lie in
    ``[v_lower[i], v_upper[i]]``; otherwise ``observed[i]`` holds it.
    """

    coords: np.ndarray
    design: np.ndarray
    v_lower: np.ndarray
    v_upper: np.ndarray
    observed: np.ndarray
    cens: np.ndarray

    def __post_init__(self):
        coords = check_array(self.coords, input_name="coords")
        n = coords.shape[0]
        design = check_array(self.design, input_name="design")
        if design.shape[0] != n:
            raise InvalidParameterError("design and coords must have the same number of rows")
        cens = np.asarray(self.cens).astype(bool).reshape(-1)
        lo = np.asarray(self.v_lower, dtype=float).reshape(-1)
        up = np.asarray(self.v_upper, dtype=float).reshape(-1)
        obs = np.asarray(self.observed, dtype=float).reshape(-1)
        for name, arr in (("cens", cens), ("v_lower", lo), ("v_upper", up), ("observed", obs)):
            if arr.shape[0] != n:
                raise InvalidParameterError(f"{name} must have length {n}")
        if not np.all(lo[cens] < up[cens]):
            raise InvalidParameterError("censored sites need v_lower < v_upper")
        if not np.all(np.isfinite(obs[~cens])):
            raise InvalidParameterError("uncensored sites need a finite observed value")
        d = cdist(coords, coords)
        if n > 1 and np.min(d[~np.eye(n, dtype=bool)]) <= 0:
            raise InvalidParameterError("duplicated site coordinates")
        for name, arr in (("coords", coords), ("design", design), ("v_lower", lo),
                          ("v_upper", up), ("observed", obs), ("cens", cens)):
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_dist", d)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def q(self) -> int:
        return self.design.shape[1]

    @property
    def distances(self) -> np.ndarray:
        return self._dist


@dataclass(frozen=True)
class SclParams:
    beta: np.ndarray = field(compare=False)
    sigma2: float
    phi: float
    tau2: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        if not (self.sigma2 > 0 and self.phi > 0 and self.tau2 >= 0):
            raise InvalidParameterError(
                f"need sigma2 > 0, phi > 0, tau2 >= 0; got {self.sigma2}, {self.phi}, {self.tau2}")

    @property
    def nu2(self) -> float:
        return self.tau2 / self.sigma2

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, [self.sigma2, self.phi, self.tau2]])

    @classmethod
    def from_vector(cls, vec, q):
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:q], float(vec[q]), float(vec[q + 1]), float(vec[q + 2]))

    def to_dict(self):
        return {"beta": self.beta.tolist(), "sigma2": self.sigma2, "phi": self.phi,
                "tau2": self.tau2}


@dataclass(frozen=True, eq=False)
class SclFit:
    params: SclParams
    trace: np.ndarray
    trace_columns: tuple
    loglik: float
    aic: float
    bic: float
    runtime: float
    n_params: int

    def to_dict(self):
        return {"params": self.params.to_dict(), "loglik": self.loglik, "AIC": self.aic,
                "BIC": self.bic, "runtime": self.runtime, "n_params": self.n_params}


def exp_corr(coords, phi: float) -> np.ndarray:
    """Exponential correlation ``exp(-d_ij / phi)`` between sites."""
    if not phi > 0:
        raise InvalidParameterError(f"phi must be > 0, got {phi}")
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    return np.exp(-cdist(coords, coords) / phi)


def _psi(data: SclDataset, phi: float, nu2: float) -> np.ndarray:
    psi = np.exp(-data.distances / phi)
    psi[np.diag_indices_from(psi)] += nu2
    return psi


def _chol(mat, what="covariance"):
    try:
        return cho_factor(mat, lower=True)
    except np.linalg.LinAlgError as exc:
        raise InvalidParameterError(f"{what} is not positive definite") from exc


def _conditional_censored(data: SclDataset, params: SclParams):
    """Normal law of the censored responses given the observed ones."""
    cov = params.sigma2 * _psi(data, params.phi, params.nu2)
    mean = data.design @ params.beta
    c = data.cens
    o = ~c
    if not o.any():
        return mean[c], cov[np.ix_(c, c)]
    cf = _chol(cov[np.ix_(o, o)])
    s_co = cov[np.ix_(c, o)]
    mu_c = mean[c] + s_co @ cho_solve(cf, data.observed[o] - mean[o])
    s_c = cov[np.ix_(c, c)] - s_co @ cho_solve(cf, s_co.T)
    return mu_c, 0.5 * (s_c + s_c.T)


def e_step(data: SclDataset, params: SclParams, n_mc: int = 1000, seed: int = DEFAULT_SEED,
           burn_in: int = 0, thinning: int = 3):
    """Return ``(E[Z | V, C], E[Z Z' | V, C])`` at the current parameters."""
    z = np.where(data.cens, 0.0, data.observed)
    c = data.cens
    if not c.any():
        return z.copy(), np.outer(z, z)
    mu_c, s_c = _conditional_censored(data, params)
    spec = TruncEllipticalSpec(mu_c, s_c, data.v_lower[c], data.v_upper[c], normal(int(c.sum())))
    est = mc_moments_partitioned(spec, n_mc, burn_in, thinning, seed)
    zhat = z.copy()
    zhat[c] = est.mean
    zz = np.outer(zhat, zhat)
    zz[np.ix_(c, c)] = est.second_moment
    return zhat, zz


def _quadratic_terms(data, zhat, zz, beta, psi_cf):
    x = data.design
    pz = cho_solve(psi_cf, zhat)
    px = cho_solve(psi_cf, x)
    tr = float(np.sum(zz * cho_solve(psi_cf, np.eye(data.n))))
    return tr - 2.0 * float(pz @ x @ beta) + float(beta @ (x.T @ px) @ beta)


def _alpha_bounds(data):
    d = data.distances[~np.eye(data.n, dtype=bool)]
    dmin = float(d.min()) if d.size else 1.0
    dmax = float(d.max()) if d.size else 1.0
    return [(math.log(1e-3 * dmin), math.log(1e3 * dmax)), (math.log(1e-8), math.log(1e4))]


def m_step(data: SclDataset, zhat, zz, params_prev: SclParams,
           fix_phi: Optional[float] = None, fix_nu2: Optional[float] = None) -> SclParams:
    """Conditional maximization of the expected complete-data log-likelihood.

    ``beta`` and ``sigma2`` have closed forms at the previous ``Psi``;
    ``(phi, nu2)`` maximize the profile objective by bounded Nelder-Mead on
    the log scale, restarted from the previous values.  Either of the two may
    be held fixed.
    """
    x = data.design
    psi_cf = _chol(_psi(data, params_prev.phi, params_prev.nu2), "Psi")
    px = cho_solve(psi_cf, x)
    xtpx = x.T @ px
    try:
        beta = np.linalg.solve(xtpx, px.T @ zhat)
    except np.linalg.LinAlgError as exc:
        raise InvalidParameterError("singular design: X' Psi^-1 X is not invertible") from exc
    sigma2 = _quadratic_terms(data, zhat, zz, beta, psi_cf) / data.n
    if not sigma2 > 0:
        raise ConvergenceError(f"non-positive sigma2 update {sigma2}")

    phi = params_prev.phi if fix_phi is None else float(fix_phi)
    nu2 = params_prev.nu2 if fix_nu2 is None else float(fix_nu2)
    if fix_phi is None or fix_nu2 is None:
        bounds = _alpha_bounds(data)

        def unpack(theta):
            ph = math.exp(theta[0]) if fix_phi is None else phi
            n2 = math.exp(theta[-1]) if fix_nu2 is None else nu2
            return ph, n2

        def objective(theta):
            ph, n2 = unpack(theta)
            try:
                cf = cho_factor(_psi(data, ph, n2), lower=True)
            except np.linalg.LinAlgError:
                return 1e300
            logdet = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
            return 0.5 * logdet + 0.5 * _quadratic_terms(data, zhat, zz, beta, cf) / sigma2

        start, bnds = [], []
        if fix_phi is None:
            start.append(math.log(phi))
            bnds.append(bounds[0])
        if fix_nu2 is None:
            start.append(math.log(max(nu2, 1e-8)))
            bnds.append(bounds[1])
        start = [min(max(s, lo), hi) for s, (lo, hi) in zip(start, bnds)]
        res = optimize.minimize(objective, np.array(start), method="Nelder-Mead", bounds=bnds,
                                options={"xatol": 1e-6, "fatol": 1e-9, "maxiter": 2000})
        if not np.all(np.isfinite(res.x)):
            raise ConvergenceError(f"M-step optimizer failed: {res.message}")
        phi, nu2 = unpack(res.x)
    return SclParams(beta, float(sigma2), float(phi), float(nu2 * sigma2))


def observed_loglik(data: SclDataset, params: SclParams, n_mc: int = 10_000,
                    seed: int = DEFAULT_SEED) -> float:
    """Observed-data log-likelihood.

    The uncensored block contributes its Gaussian log-density; the censored
    block contributes the log-probability of its box under the conditional
    normal, estimated by the GHK simulator with antithetic uniform pairs.
    """
    cov = params.sigma2 * _psi(data, params.phi, params.nu2)
    mean = data.design @ params.beta
    c = data.cens
    o = ~c
    ll = 0.0
    if o.any():
        cf = _chol(cov[np.ix_(o, o)])
        r = data.observed[o] - mean[o]
        logdet = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
        ll += -0.5 * (o.sum() * math.log(2 * math.pi) + logdet + float(r @ cho_solve(cf, r)))
    if c.any():
        mu_c, s_c = _conditional_censored(data, params)
        ll += _ghk_log_prob(mu_c, s_c, data.v_lower[c], data.v_upper[c], n_mc, seed)
    return float(ll)


def _ghk_log_prob(mu, cov, lower, upper, n_mc, seed):
    k = mu.shape[0]
    chol = np.linalg.cholesky(cov)
    half = max(1, n_mc // 2)
    u = stream(seed).random((half, k))
    u = np.vstack([u, 1.0 - u])
    m = u.shape[0]
    z = np.zeros((m, k))
    logw = np.zeros(m)
    for j in range(k):
        shift = mu[j] + z[:, :j] @ chol[j, :j]
        a = (lower[j] - shift) / chol[j, j]
        b = (upper[j] - shift) / chol[j, j]
        # work in whichever tail keeps the probabilities away from 1
        flip = a > 0
        lo = np.where(flip, -b, a)
        hi = np.where(flip, -a, b)
        log_plo = special.log_ndtr(lo)
        log_phi = special.log_ndtr(hi)
        log_mass = log_phi + np.log1p(-np.exp(np.minimum(log_plo - log_phi, 0.0)))
        logw += log_mass
        plo = np.exp(log_plo)
        prob = plo + u[:, j] * np.exp(log_mass)
        draw = special.ndtri(np.clip(prob, 1e-300, 1 - 1e-16))
        draw = np.clip(draw, lo, hi)
        z[:, j] = np.where(flip, -draw, draw)
    top = logw.max()
    return float(top + math.log(np.mean(np.exp(logw - top))))


def _schedule(n_mc, iters):
    if np.isscalar(n_mc):
        return [int(n_mc)] * iters
    lo, hi = n_mc
    if iters == 1:
        return [int(lo)]
    return [int(round(v)) for v in np.linspace(lo, hi, iters)]


def initial_params(data: SclDataset) -> SclParams:
    """Rough starting values: OLS on responses with censored sites at an interval end."""
    fill = np.where(np.isfinite(data.v_upper), data.v_upper, data.v_lower)
    z = np.where(data.cens, fill, data.observed)
    beta, *_ = np.linalg.lstsq(data.design, z, rcond=None)
    var = float(np.var(z - data.design @ beta)) or 1.0
    d = data.distances[~np.eye(data.n, dtype=bool)]
    phi = 0.1 * float(d.max()) if d.size else 1.0
    return SclParams(beta, 0.9 * var, phi, 0.1 * var)


def fit_mcem(data: SclDataset, init: Optional[SclParams] = None, iters: int = 200,
             n_mc: Union[int, Sequence[int]] = 1000, seed: int = DEFAULT_SEED,
             burn_in: Optional[int] = None, thinning: int = 3, mc_thinning: int = 3,
             loglik_mc: int = 10_000, callback=None) -> SclFit:
    """Run MCEM for ``iters`` iterations.

    ``n_mc`` is either a constant Monte Carlo size or a ``(start, end)`` pair
    for linearly increasing sizes.  The final estimate averages the
    per-iteration estimates after discarding ``burn_in`` of them (default:
    half) and keeping every ``thinning``-th.
    """
    if iters < 1:
        raise InvalidParameterError("iters must be >= 1")
    if burn_in is None:
        burn_in = iters // 2
    if not 0 <= burn_in < iters:
        raise InvalidParameterError(f"burn_in must lie in [0, {iters}), got {burn_in}")
    start = time.perf_counter()
    params = initial_params(data) if init is None else init
    sizes = _schedule(n_mc, iters)
    seeds = child_seeds(seed, iters)
    trace = [params.as_vector()]
    for k in range(iters):
        zhat, zz = e_step(data, params, sizes[k], seeds[k], thinning=mc_thinning)
        params = m_step(data, zhat, zz, params)
        trace.append(params.as_vector())
        if callback is not None:
            callback(k, params)
    trace = np.array(trace)
    kept = trace[1:][burn_in::thinning]
    final = SclParams.from_vector(kept.mean(axis=0), data.q)
    ll = observed_loglik(data, final, loglik_mc, seed)
    k_par = data.q + 3
    cols = tuple(f"beta{i}" for i in range(data.q)) + TRACE_COLUMNS_FIXED
    return SclFit(final, trace, cols, ll, -2 * ll + 2 * k_par, -2 * ll + k_par * math.log(data.n),
                  time.perf_counter() - start, k_par)


def simulate(n: int = 100, beta=(2.0,), sigma2: float = 2.0, phi: float = 4.0, tau2: float = 0.5,
             cens_frac: float = 0.3, extent: float = 30.0, seed: int = DEFAULT_SEED) -> SclDataset:
    """Left-censored dataset from the model with random sites in a square.

    The detection limit is the ``cens_frac`` quantile of the simulated
    responses, so exactly that fraction (rounded) is censored.  The design
    has an intercept plus ``len(beta) - 1`` standard-normal covariates.
    """
    rng = stream(seed)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    coords = rng.uniform(0.0, extent, size=(n, 2))
    design = np.ones((n, beta.shape[0]))
    if beta.shape[0] > 1:
        design[:, 1:] = rng.standard_normal((n, beta.shape[0] - 1))
    cov = sigma2 * exp_corr(coords, phi) + tau2 * np.eye(n)
    z = design @ beta + np.linalg.cholesky(cov) @ rng.standard_normal(n)
    n_cens = int(round(cens_frac * n))
    order = np.argsort(z)
    cens = np.zeros(n, dtype=bool)
    cens[order[:n_cens]] = True
    lod = 0.5 * (z[order[n_cens - 1]] + z[order[n_cens]]) if 0 < n_cens < n else np.inf
    lower = np.full(n, -np.inf)
    upper = np.where(cens, lod, np.inf)
    observed = np.where(cens, np.nan, z)
    return SclDataset(coords, design, lower, upper, observed, cens)


class CensoredSpatialRegressor(BaseEstimator):
    """Censored Gaussian spatial regression with exponential correlation, fit by MCEM.

    Parameters
    ----------
    n_iter : int
        EM iterations.
    n_mc : int or (int, int)
        Monte Carlo size per E-step, constant or linearly increasing.
    burn_in, thinning : int
        Applied to the parameter trace to form the final estimate.
    mc_thinning : int
        Thinning of the sampler inside each E-step.
    loglik_mc : int
        Draws for the censored-block probability in the log-likelihood.
    random_state : int
        Master seed.
    """

    def __init__(self, n_iter=200, n_mc=1000, burn_in=None, thinning=3, mc_thinning=3,
                 loglik_mc=10_000, random_state=DEFAULT_SEED):
        self.n_iter = n_iter
        self.n_mc = n_mc
        self.burn_in = burn_in
        self.thinning = thinning
        self.mc_thinning = mc_thinning
        self.loglik_mc = loglik_mc
        self.random_state = random_state

    def fit(self, X, y, coords, censored=None, lower=None, upper=None, init=None):
        """Fit from design ``X``, responses ``y`` and site ``coords``.

        Censored entries of ``y`` are ignored; their intervals come from
        ``lower``/``upper`` (missing ends mean unbounded).
        """
        X = check_array(X)
        y = np.asarray(y, dtype=float).reshape(-1)
        n = X.shape[0]
        cens = np.zeros(n, dtype=bool) if censored is None else np.asarray(censored, dtype=bool)
        lo = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
        up = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
        data = SclDataset(coords, X, lo, up, np.where(cens, np.nan, y), cens)
        fit = fit_mcem(data, init, self.n_iter, self.n_mc, self.random_state, self.burn_in,
                       self.thinning, self.mc_thinning, self.loglik_mc)
        self.fit_ = fit
        self.beta_ = fit.params.beta
        self.sigma2_ = fit.params.sigma2
        self.phi_ = fit.params.phi
        self.tau2_ = fit.params.tau2
        self.loglik_ = fit.loglik
        self.aic_ = fit.aic
        self.bic_ = fit.bic
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        """Mean response ``X beta`` (no kriging)."""
        check_is_fitted(self, "beta_")
        return check_array(X) @ self.beta_
