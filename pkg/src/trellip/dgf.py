"""Density generating functions of the elliptical family.

A family is described by its density generating function ``g`` (the dgf),
which defines the density up to a constant through the Mahalanobis form
``t = (x - mu)' Sigma^{-1} (x - mu)``.  Normalizing constants are never
needed: the slice sampler only looks at ratios of ``g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from . import _kernels as K
from .exceptions import ConvergenceError, InvalidParameterError

__all__ = [
    "Family",
    "normal",
    "student_t",
    "power_exponential",
    "pearson_vii",
    "slash",
    "contaminated_normal",
    "kotz",
    "custom",
    "from_name",
    "dgf_eval",
    "log_dgf_eval",
    "dgf_inverse",
    "validate_strictly_decreasing",
]

_CODES = {
    "normal": K.NORMAL,
    "t": K.STUDENT_T,
    "pe": K.POWER_EXP,
    "pvii": K.PEARSON_VII,
    "slash": K.SLASH,
    "cn": K.CONTAM_NORMAL,
    "kotz": K.KOTZ,
}
_N_PARAMS = {"normal": 0, "t": 1, "pe": 1, "pvii": 2, "slash": 1, "cn": 2, "kotz": 3}
_ALIASES = {
    "normal": "normal", "gaussian": "normal",
    "t": "t", "student": "t", "student_t": "t",
    "pe": "pe", "power_exponential": "pe",
    "pvii": "pvii", "pearson_vii": "pvii",
    "slash": "slash",
    "cn": "cn", "contaminated_normal": "cn",
    "kotz": "kotz",
}


@dataclass(frozen=True)
class Family:
    """Tagged descriptor of a density generating function.

    Parameters
    ----------
    name : str
        One of ``normal, t, pe, pvii, slash, cn, kotz, custom``.
    params : tuple of float
        ``(nu,)`` for t and slash, ``(beta,)`` for pe, ``(m, nu)`` for pvii,
        ``(nu, rho)`` for cn, ``(r, s, N)`` for kotz, empty otherwise.
    p : int
        Dimension; the t, slash and contaminated-normal dgfs depend on it.
    g, g_inv : callable, optional
        Only for ``custom``: the dgf and, optionally, its inverse.
    check : bool
        Validate parameters (and strict decrease) at construction.
    """

    name: str
    params: tuple = ()
    p: int = 1
    g: Optional[Callable[[float], float]] = field(default=None, compare=False)
    g_inv: Optional[Callable[[float], float]] = field(default=None, compare=False)
    check: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))
        if self.name != "custom" and self.name not in _CODES:
            raise InvalidParameterError(f"unknown family {self.name!r}")
        if int(self.p) != self.p or self.p < 1:
            raise InvalidParameterError(f"dimension p must be a positive integer, got {self.p}")
        object.__setattr__(self, "p", int(self.p))
        if self.check:
            _check_params(self)
            if self.name in ("kotz", "custom") and not validate_strictly_decreasing(self):
                raise InvalidParameterError(f"{self.name} dgf is not strictly decreasing on [0, inf)")

    @property
    def code(self) -> int:
        return _CODES.get(self.name, -1)

    @property
    def is_builtin(self) -> bool:
        return self.name != "custom"

    def kernel_params(self) -> np.ndarray:
        """Flat parameter vector understood by the compiled kernels."""
        out = np.zeros(4)
        out[: len(self.params)] = self.params
        out[3] = self.p
        return out

    def with_dim(self, p: int) -> "Family":
        return replace(self, p=p)


def _check_params(fam: Family) -> None:
    name, par, p = fam.name, fam.params, fam.p
    if name == "custom":
        if not callable(fam.g):
            raise InvalidParameterError("custom family needs a callable g")
        return
    if len(par) != _N_PARAMS[name]:
        raise InvalidParameterError(f"{name} expects {_N_PARAMS[name]} parameter(s), got {len(par)}")
    if not all(math.isfinite(v) for v in par):
        raise InvalidParameterError(f"{name} parameters must be finite")
    if name in ("t", "slash", "pe") and par[0] <= 0:
        raise InvalidParameterError(f"{name} parameter must be > 0, got {par[0]}")
    if name == "pvii":
        m, nu = par
        if nu <= 0:
            raise InvalidParameterError(f"pvii nu must be > 0, got {nu}")
        if m <= p / 2:
            raise InvalidParameterError(f"pvii m must exceed p/2 = {p / 2}, got {m}")
    if name == "cn":
        nu, rho = par
        if not (0 < nu < 1 and 0 < rho < 1):
            raise InvalidParameterError(f"cn needs nu, rho in (0, 1), got {par}")
    if name == "kotz":
        r, s, n = par
        if r <= 0 or s <= 0:
            raise InvalidParameterError(f"kotz needs r > 0 and s > 0, got r={r}, s={s}")


def normal(p: int = 1) -> Family:
    return Family("normal", (), p)


def student_t(nu: float, p: int = 1) -> Family:
    return Family("t", (nu,), p)


def power_exponential(beta: float, p: int = 1) -> Family:
    return Family("pe", (beta,), p)


def pearson_vii(m: float, nu: float, p: int = 1) -> Family:
    return Family("pvii", (m, nu), p)


def slash(nu: float, p: int = 1) -> Family:
    return Family("slash", (nu,), p)


def contaminated_normal(nu: float, rho: float, p: int = 1) -> Family:
    return Family("cn", (nu, rho), p)


def kotz(r: float, s: float, n: float, p: int = 1) -> Family:
    return Family("kotz", (r, s, n), p)


def custom(g: Callable[[float], float], g_inv: Optional[Callable[[float], float]] = None,
           p: int = 1) -> Family:
    """Family from a user dgf.  ``g`` must be strictly decreasing on [0, inf)."""
    return Family("custom", (), p, g=g, g_inv=g_inv)


def from_name(name: str, nu=None, p: int = 1) -> Family:
    """Build a family from the short names used on the command line."""
    key = _ALIASES.get(name.lower())
    if key is None:
        raise InvalidParameterError(f"unknown distribution {name!r}")
    if nu is None:
        nu = ()
    elif np.isscalar(nu):
        nu = (nu,)
    return Family(key, tuple(nu), p)


def log_dgf_eval(family: Family, t: float) -> float:
    """Natural log of ``g(t)``."""
    t = float(t)
    if not t >= 0:
        raise InvalidParameterError(f"dgf argument must be >= 0, got {t}")
    if family.is_builtin:
        return float(K.log_g(family.code, family.kernel_params(), t))
    val = float(family.g(t))
    return math.log(val) if val > 0 else -math.inf


def dgf_eval(family: Family, t: float) -> float:
    """Evaluate the density generating function ``g(t)``.

    Examples
    --------
    >>> dgf_eval(normal(), 0.0)
    1.0
    >>> round(dgf_eval(student_t(3.0, p=2), 3.0), 6)
    0.353553
    """
    if family.is_builtin:
        return math.exp(log_dgf_eval(family, t))
    if not t >= 0:
        raise InvalidParameterError(f"dgf argument must be >= 0, got {t}")
    return float(family.g(float(t)))


def dgf_inverse(family: Family, y: float) -> float:
    """Return ``kappa`` with ``g(kappa) = y``.

    Closed forms are used for the normal, t, power exponential and Pearson VII
    families, Newton's method for the contaminated normal and Brent's method
    for the slash and Kotz families.  Custom families use ``g_inv`` when given
    and Brent's method on a doubling bracket otherwise.
    """
    y = float(y)
    if not y > 0:
        raise InvalidParameterError(f"dgf_inverse needs y > 0, got {y}")
    g0 = dgf_eval(family, 0.0)
    if y > g0 * (1 + 1e-12):
        raise InvalidParameterError(f"y={y} exceeds g(0)={g0}")
    if family.is_builtin:
        t, ok = K.inv_log_g(family.code, family.kernel_params(), math.log(y))
        if not ok:
            raise ConvergenceError(f"inverse of {family.name} dgf did not converge at y={y}")
        return float(t)
    if family.g_inv is not None:
        return float(family.g_inv(y))
    return _custom_inverse(family.g, y)


def _custom_inverse(g: Callable[[float], float], y: float) -> float:
    lo, hi = 0.0, 1.0
    if g(lo) <= y:
        return 0.0
    while g(hi) > y:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise ConvergenceError(f"could not bracket g(t) = {y}")
    if not math.isfinite(g(lo)):
        lo = hi
        while g(lo) <= y:
            lo *= 0.5
            if lo < 1e-300:
                return 0.0
    try:
        return optimize.brentq(lambda t: g(t) - y, lo, hi, xtol=1e-12, rtol=1e-12, maxiter=200)
    except RuntimeError as exc:
        raise ConvergenceError(str(exc)) from exc


def validate_strictly_decreasing(family: Family) -> bool:
    """Check that ``g`` is strictly decreasing on ``[0, inf)``.

    Built-in families are decided analytically (only Kotz can fail, and only
    through ``N``).  Custom dgfs are checked on 512 log-spaced points up to
    the point where ``g`` has fallen by twelve orders of magnitude.
    """
    if family.name == "kotz":
        _, _, n = family.params
        return (2 - family.p) / 2 < n <= 1
    if family.is_builtin:
        return True
    g = family.g
    g0 = g(0.0)
    ref = g0 if math.isfinite(g0) else g(1e-8)
    if not (ref > 0):
        return False
    t_max = 1.0
    while g(t_max) >= 1e-12 * ref and t_max < 1e300:
        t_max *= 2.0
    grid = np.concatenate(([0.0], np.logspace(-8, math.log10(t_max), 511)))
    vals = np.array([g(float(t)) for t in grid])
    if np.any(np.isnan(vals)) or np.any(vals < 0):
        return False
    # underflow to an exact plateau at zero is not a violation; neither are
    # rounding ties next to the origin, where a smooth g has zero slope
    pos = vals > 0
    diffs = np.diff(vals)
    tie_ok = (diffs <= 4 * np.finfo(float).eps * vals[1:]) & (grid[1:] <= 1e-6)
    return bool(np.all((diffs < 0) | tie_ok | (~pos[1:])))
