"""Compiled inner loops: log-dgf evaluation, its inverse, and the slice/Gibbs sweep.

Every function here works on the log scale of g so that very small slice
heights never underflow.  Families are dispatched on an integer code with a
flat parameter vector ``par = (theta0, theta1, theta2, p)``.
"""

import math

import numpy as np
from numba import njit

NORMAL, STUDENT_T, POWER_EXP, PEARSON_VII, SLASH, CONTAM_NORMAL, KOTZ = range(7)

# relative root tolerance; near a pole of g only machine precision keeps g(t) accurate
_BRENT_TOL = 4.0 * 2.2e-16
_BRENT_MAXITER = 200
_NEWTON_MAXITER = 100

# status codes returned by run_chunk
OK = 0
BAD_RADICAND = 1
NO_CONVERGENCE = 2


@njit(cache=True)
def log_slash_integral(a, t):
    """log of int_0^1 u^(a-1) exp(-u t / 2) du for a > 0, t >= 0."""
    x = 0.5 * t
    if x == 0.0:
        return -math.log(a)
    if x < a + 1.0:
        # Kummer series: e^{-x} sum_k x^k / (a (a+1) ... (a+k))
        term = 1.0 / a
        total = term
        k = 1
        while k < 100000:
            term *= x / (a + k)
            total += term
            if term < total * 1e-17:
                break
            k += 1
        return -x + math.log(total)
    # upper incomplete gamma by modified Lentz continued fraction
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    i = 1
    while i < 100000:
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
        i += 1
    lgam = math.lgamma(a)
    log_q = -x + a * math.log(x) - lgam + math.log(h)
    return lgam - a * math.log(x) + math.log1p(-math.exp(log_q))


@njit(cache=True)
def log_g(code, par, t):
    p = par[3]
    if code == NORMAL:
        return -0.5 * t
    elif code == STUDENT_T:
        nu = par[0]
        return -0.5 * (nu + p) * math.log1p(t / nu)
    elif code == POWER_EXP:
        return -0.5 * t ** par[0]
    elif code == PEARSON_VII:
        return -par[0] * math.log1p(t / par[1])
    elif code == SLASH:
        return log_slash_integral(par[0] + 0.5 * p, t)
    elif code == CONTAM_NORMAL:
        nu = par[0]
        rho = par[1]
        l1 = math.log(nu) + 0.5 * p * math.log(rho) - 0.5 * rho * t
        l2 = math.log1p(-nu) - 0.5 * t
        hi = max(l1, l2)
        return hi + math.log(math.exp(l1 - hi) + math.exp(l2 - hi))
    else:
        r = par[0]
        s = par[1]
        n = par[2]
        if t == 0.0:
            if n < 1.0:
                return math.inf
            elif n == 1.0:
                return 0.0
            return -math.inf
        return (n - 1.0) * math.log(t) - r * t ** s


@njit(cache=True)
def _cn_newton(par, log_y):
    # log g is convex and decreasing, so Newton from t=0 approaches the root monotonically
    nu = par[0]
    rho = par[1]
    p = par[3]
    c1 = math.log(nu) + 0.5 * p * math.log(rho)
    c2 = math.log1p(-nu)
    t = 0.0
    for _ in range(_NEWTON_MAXITER):
        l1 = c1 - 0.5 * rho * t
        l2 = c2 - 0.5 * t
        hi = max(l1, l2)
        w1 = math.exp(l1 - hi)
        w2 = math.exp(l2 - hi)
        lg = hi + math.log(w1 + w2)
        slope = -0.5 * (rho * w1 + w2) / (w1 + w2)
        step = (lg - log_y) / slope
        t_new = t - step
        if t_new < 0.0:
            t_new = 0.0
        if abs(t_new - t) <= 1e-13 * (1.0 + t):
            return t_new, True
        t = t_new
    return t, False


@njit(cache=True)
def _bisect_fallback(code, par, log_y, lo, hi):
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if log_g(code, par, mid) > log_y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= _BRENT_TOL * hi + 1e-300:
            break
    return 0.5 * (lo + hi)


@njit(cache=True)
def _brent(code, par, log_y, a, b):
    """Brent's zeroin for log g(t) - log_y on a bracket [a, b]."""
    fa = log_g(code, par, a) - log_y
    fb = log_g(code, par, b) - log_y
    if fa == 0.0:
        return a, True
    if fb == 0.0:
        return b, True
    c = a
    fc = fa
    d = b - a
    e = d
    for _ in range(_BRENT_MAXITER):
        if (fb > 0.0) == (fc > 0.0):
            c = a
            fc = fa
            d = b - a
            e = d
        if abs(fc) < abs(fb):
            a = b
            b = c
            c = a
            fa = fb
            fb = fc
            fc = fa
        tol = _BRENT_TOL * abs(b) + 1e-300
        m = 0.5 * (c - b)
        if abs(m) <= tol or fb == 0.0:
            return b, True
        if abs(e) >= tol and abs(fa) > abs(fb):
            s = fb / fa
            if a == c:
                pp = 2.0 * m * s
                q = 1.0 - s
            else:
                q = fa / fc
                r = fb / fc
                pp = s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0))
                q = (q - 1.0) * (r - 1.0) * (s - 1.0)
            if pp > 0.0:
                q = -q
            else:
                pp = -pp
            if 2.0 * pp < min(3.0 * m * q - abs(tol * q), abs(e * q)):
                e = d
                d = pp / q
            else:
                d = m
                e = m
        else:
            d = m
            e = m
        a = b
        fa = fb
        if abs(d) > tol:
            b += d
        elif m > 0.0:
            b += tol
        else:
            b -= tol
        fb = log_g(code, par, b) - log_y
    return b, False


@njit(cache=True)
def _numeric_inverse(code, par, log_y):
    lo = 0.0
    if log_g(code, par, lo) <= log_y:
        return 0.0, True
    hi = 1.0
    while log_g(code, par, hi) > log_y:
        lo = hi
        hi *= 2.0
        if hi > 1e300:
            return math.inf, True
    if code == KOTZ and lo == 0.0:
        # g(0) may be infinite: move the left end off zero
        lo = hi
        while lo > 1e-300 and log_g(code, par, lo) <= log_y:
            lo *= 0.5
        if log_g(code, par, lo) <= log_y:
            return 0.0, True
    t, ok = _brent(code, par, log_y, lo, hi)
    if not ok:
        t = _bisect_fallback(code, par, log_y, lo, hi)
    return t, True


@njit(cache=True)
def inv_log_g(code, par, log_y):
    """Largest t with log g(t) >= log_y; returns (t, converged)."""
    if log_y == -math.inf:
        return math.inf, True
    p = par[3]
    if code == NORMAL:
        return max(-2.0 * log_y, 0.0), True
    elif code == STUDENT_T:
        nu = par[0]
        return max(nu * math.expm1(-2.0 * log_y / (nu + p)), 0.0), True
    elif code == POWER_EXP:
        v = -2.0 * log_y
        if v <= 0.0:
            return 0.0, True
        return v ** (1.0 / par[0]), True
    elif code == PEARSON_VII:
        return max(par[1] * math.expm1(-log_y / par[0]), 0.0), True
    elif code == CONTAM_NORMAL:
        if log_g(code, par, 0.0) <= log_y:
            return 0.0, True
        t, ok = _cn_newton(par, log_y)
        if not ok:
            hi = 1.0
            while log_g(code, par, hi) > log_y:
                hi *= 2.0
            t = _bisect_fallback(code, par, log_y, 0.0, hi)
        return t, True
    return _numeric_inverse(code, par, log_y)


@njit(cache=True, nogil=True)
def run_chunk(x, rinv, lower, upper, code, par, u_slice, u_coord, out, check):
    """Run ``len(u_slice)`` slice/Gibbs iterations in place on ``x``.

    Iteration ``i`` consumes ``u_slice[i]`` in (0, 1] for the height and
    ``u_coord[i, :]`` in [0, 1) for the coordinate draws, and stores the
    post-sweep state in ``out[i]``.  Returns a status code.
    """
    p = x.shape[0]
    niter = u_slice.shape[0]
    for i in range(niter):
        q = 0.0
        for a in range(p):
            acc = 0.0
            for b in range(p):
                acc += rinv[a, b] * x[b]
            q += x[a] * acc
        log_y = log_g(code, par, q) + math.log(u_slice[i])
        kappa, ok = inv_log_g(code, par, log_y)
        if not ok:
            return NO_CONVERGENCE
        if kappa < q:
            kappa = q
        for j in range(p):
            rjj = rinv[j, j]
            s = 0.0
            for r in range(p):
                if r != j:
                    s += rinv[j, r] * x[r]
            lam = -s / rjj
            eta = q - rjj * x[j] * x[j] - 2.0 * x[j] * s
            rad = lam * lam + (kappa - eta) / rjj
            if rad < 0.0:
                if rad < -1e-12 * (1.0 + lam * lam + abs(kappa - eta) / rjj):
                    return BAD_RADICAND
                rad = 0.0
            tau = math.sqrt(rad)
            lo = max(lower[j], lam - tau)
            hi = min(upper[j], lam + tau)
            xn = lo + (hi - lo) * u_coord[i, j]
            if not (xn > lower[j] and xn < upper[j]) or hi < lo:
                xn = x[j]
            q = eta + rjj * xn * xn + 2.0 * xn * s
            x[j] = xn
        if check and log_g(code, par, q) < log_y - 1e-9 * (1.0 + abs(log_y)):
            return BAD_RADICAND
        for j in range(p):
            out[i, j] = x[j]
    return OK
