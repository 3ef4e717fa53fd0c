"""Independent oracles used by the test suite.

Everything here is deliberately primitive: plain bisection, golden-section
and brute-force grid search, written without reference to the package
internals, so that closed-form results in the package can be checked against
a second, dumber route.
"""

import math

import numpy as np


def bisect_root(f, lo, hi, tol=1e-13, max_iter=200):
    """Root of f on [lo, hi] by plain bisection; f(lo), f(hi) must straddle 0."""
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    assert flo * fhi < 0.0, "root not bracketed"
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0 or (hi - lo) < tol * max(1.0, abs(mid)):
            return mid
        if flo * fm < 0.0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


def invert_increasing(f, y, lo=0.0, hi=1.0, tol=1e-13):
    """Inverse of a strictly increasing scalar map by bracket growth + bisection."""
    while f(hi) < y:
        hi *= 2.0
        assert hi < 1e9, "bracket expansion failed"
    while f(lo) > y:
        lo = lo * 2.0 if lo < 0 else (lo - 1.0 if lo == 0.0 else lo / 2.0)
        assert lo > -1e9, "bracket expansion failed"
    return bisect_root(lambda t: f(t) - y, lo, hi, tol=tol)


def golden_max(f, lo, hi, tol=1e-10, max_iter=300):
    """Golden-section maximization of a unimodal scalar function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
    xm = 0.5 * (a + b)
    return xm, f(xm)


def grid_argmax(f, lo, hi, n):
    """Brute-force argmax of f over a uniform grid, as a maximization oracle."""
    xs = np.linspace(lo, hi, n)
    vals = f(xs)
    k = int(np.argmax(vals))
    return xs[k], vals[k]


def newton_invert(f, df, y, x0, tol=1e-14, max_iter=100):
    """Solve f(x) = y by Newton iteration, as an inversion oracle."""
    x = x0
    for _ in range(max_iter):
        step = (f(x) - y) / df(x)
        x -= step
        if abs(step) <= tol * max(1.0, abs(x)):
            return x
    return x
