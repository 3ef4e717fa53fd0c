"""Economic primitives shared by every solver in the suite.

The principal pays a rent stream to an agent whose effort a moves expected
output through a bounded concave impact function phi, at a convex private
cost h, while the agent values consumption through a strictly concave
utility U satisfying Inada conditions. The default parametric family is

    phi(a) = phi_max * (1 - exp(-alpha a))
    h(a)   = exp(beta a) - 1
    U(x)   = c * x**p,  0 < p < 1

for which every derivative and inverse used downstream is available in
closed form. A generic family built from raw callables is also supported;
its inverses fall back to bisection on the guaranteed-monotone maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

# Baseline calibration used when a config file leaves keys unset.
DEFAULTS = {
    "alpha": 0.1,
    "beta": 0.1,
    "phi_max": 3.0,
    "c": 1.0,
    "p": 0.25,
    "lambda": 0.2,
    "delta": 0.08,
    "sigma": 1.85,
    "x_reserve": 0.1,
}

MODEL_KEYS = tuple(DEFAULTS)


class InvalidParam(NamedTuple):
    name: str
    constraint: str


class InvalidParams(ValueError):
    """Raised by validate(); carries every violated constraint, not just the first."""

    def __init__(self, violations):
        self.violations = list(violations)
        msg = "; ".join(f"{v.name}: {v.constraint}" for v in self.violations)
        super().__init__(f"invalid parameters: {msg}")


class UnsupportedFamily(ValueError):
    """An operation that needs the parametric family was given a generic one."""


@dataclass(frozen=True)
class EffortImpact:
    """phi(a) = phi_max * (1 - exp(-alpha a)): bounded, increasing, concave."""

    phi_max: float = 3.0
    alpha: float = 0.1

    parametric = True

    def __call__(self, a):
        return self.phi_max * -np.expm1(-self.alpha * np.asarray(a, dtype=float))

    def deriv(self, a):
        return self.phi_max * self.alpha * np.exp(-self.alpha * np.asarray(a, dtype=float))


@dataclass(frozen=True)
class EffortCost:
    """h(a) = exp(beta a) - 1: increasing, strictly convex, h(0) = 0."""

    beta: float = 0.1

    parametric = True

    def __call__(self, a):
        return np.expm1(self.beta * np.asarray(a, dtype=float))

    def deriv(self, a):
        return self.beta * np.exp(self.beta * np.asarray(a, dtype=float))


@dataclass(frozen=True)
class AgentUtility:
    """U(x) = c x**p with 0 < p < 1: strictly concave, Inada at 0 and infinity."""

    c: float = 1.0
    p: float = 0.25

    parametric = True

    def __call__(self, x):
        return self.c * np.asarray(x, dtype=float) ** self.p

    def deriv(self, x):
        return self.c * self.p * np.asarray(x, dtype=float) ** (self.p - 1.0)

    def inverse(self, y):
        return (np.asarray(y, dtype=float) / self.c) ** (1.0 / self.p)

    def deriv_inverse(self, y):
        # (U')^{-1}(y) = (y / (p c))^{1/(p-1)}, decreasing on (0, inf)
        return (np.asarray(y, dtype=float) / (self.p * self.c)) ** (1.0 / (self.p - 1.0))


class GenericEffortImpact:
    """Effort impact from raw callables (value and derivative)."""

    parametric = False

    def __init__(self, f: Callable, df: Callable, phi_max: float):
        self._f, self._df = f, df
        self.phi_max = float(phi_max)

    def __call__(self, a):
        return self._f(np.asarray(a, dtype=float))

    def deriv(self, a):
        return self._df(np.asarray(a, dtype=float))


class GenericEffortCost:
    parametric = False

    def __init__(self, f: Callable, df: Callable):
        self._f, self._df = f, df

    def __call__(self, a):
        return self._f(np.asarray(a, dtype=float))

    def deriv(self, a):
        return self._df(np.asarray(a, dtype=float))


class GenericUtility:
    """Utility from raw callables; missing inverses are bisected on demand."""

    parametric = False

    def __init__(self, f, df, inverse=None, deriv_inverse=None):
        self._f, self._df = f, df
        self._inv, self._dinv = inverse, deriv_inverse

    def __call__(self, x):
        return self._f(np.asarray(x, dtype=float))

    def deriv(self, x):
        return self._df(np.asarray(x, dtype=float))

    def inverse(self, y):
        if self._inv is not None:
            return self._inv(np.asarray(y, dtype=float))
        return _invert_scalar_map(self._f, y, increasing=True)

    def deriv_inverse(self, y):
        if self._dinv is not None:
            return self._dinv(np.asarray(y, dtype=float))
        return _invert_scalar_map(self._df, y, increasing=False)


def _invert_scalar_map(f, y, increasing, lo=1e-300, hi=1.0, iters=200):
    """Bisection inverse of a monotone map on (0, inf); vectorizes over y."""

    def solve_one(target):
        a, b = lo, hi
        fb = f(b)
        # grow the upper end until the target is enclosed
        while (fb < target) == increasing and b < 1e12:
            b *= 4.0
            fb = f(b)
        fa = f(a)
        if (fa > target) == increasing:
            # target below the map's reachable range at the tiny end
            return a
        for _ in range(iters):
            m = 0.5 * (a + b)
            if (f(m) < target) == increasing:
                a = m
            else:
                b = m
        return 0.5 * (a + b)

    y_arr = np.asarray(y, dtype=float)
    if y_arr.ndim == 0:
        return float(solve_one(float(y_arr)))
    return np.array([solve_one(float(t)) for t in y_arr.ravel()]).reshape(y_arr.shape)


@dataclass(frozen=True)
class ModelParams:
    """Validated primitives plus discount rates, volatility and reservation value.

    Immutable after construction; safe to share freely. lam >= delta > 0 is the
    standing impatience assumption (the principal discounts no faster than the
    agent), sigma > 0 keeps output informative about effort.
    """

    effort_impact: EffortImpact
    effort_cost: EffortCost
    utility: AgentUtility
    lam: float
    delta: float
    sigma: float
    x_reserve: float

    # convenience passthroughs, so callers read params.phi(a) etc.
    def phi(self, a):
        return self.effort_impact(a)

    def dphi(self, a):
        return self.effort_impact.deriv(a)

    def h(self, a):
        return self.effort_cost(a)

    def dh(self, a):
        return self.effort_cost.deriv(a)

    def u(self, x):
        return self.utility(x)

    def du(self, x):
        return self.utility.deriv(x)

    def u_inv(self, y):
        return self.utility.inverse(y)

    def du_inv(self, y):
        return self.utility.deriv_inverse(y)

    def cost_impact_ratio(self, a):
        """h'(a) / phi'(a): strictly increasing since h is convex and phi concave."""
        return self.dh(a) / self.dphi(a)

    @property
    def parametric(self):
        return (
            self.effort_impact.parametric
            and self.effort_cost.parametric
            and self.utility.parametric
        )


def validate(raw) -> ModelParams:
    """Check a raw key->value mapping and build ModelParams.

    Collects every violated constraint into one InvalidParams rejection
    instead of stopping at the first. lam < delta is a rejection, not a
    warning.
    """
    violations = []
    vals = {}
    for key in MODEL_KEYS:
        if key not in raw:
            violations.append(InvalidParam(key, "missing"))
            continue
        try:
            v = float(raw[key])
        except (TypeError, ValueError):
            violations.append(InvalidParam(key, "not a number"))
            continue
        if not math.isfinite(v):
            violations.append(InvalidParam(key, "must be finite"))
            continue
        vals[key] = v
    for key in raw:
        if key not in MODEL_KEYS:
            violations.append(InvalidParam(str(key), "unknown parameter"))

    def check(name, ok, constraint):
        if name in vals and not ok:
            violations.append(InvalidParam(name, constraint))

    check("alpha", vals.get("alpha", 1.0) > 0.0, "alpha > 0")
    check("beta", vals.get("beta", 1.0) > 0.0, "beta > 0")
    check("phi_max", vals.get("phi_max", 1.0) > 0.0, "phi_max > 0")
    check("c", vals.get("c", 1.0) > 0.0, "c > 0")
    check("p", 0.0 < vals.get("p", 0.5) < 1.0, "0 < p < 1")
    check("delta", vals.get("delta", 1.0) > 0.0, "delta > 0")
    if "lambda" in vals and "delta" in vals and not vals["lambda"] >= vals["delta"]:
        violations.append(InvalidParam("lambda", "lambda >= delta"))
    check("sigma", vals.get("sigma", 1.0) > 0.0, "sigma > 0")
    check("x_reserve", vals.get("x_reserve", 0.0) >= 0.0, "x_reserve >= 0")

    if violations:
        raise InvalidParams(violations)

    return ModelParams(
        effort_impact=EffortImpact(phi_max=vals["phi_max"], alpha=vals["alpha"]),
        effort_cost=EffortCost(beta=vals["beta"]),
        utility=AgentUtility(c=vals["c"], p=vals["p"]),
        lam=vals["lambda"],
        delta=vals["delta"],
        sigma=vals["sigma"],
        x_reserve=vals["x_reserve"],
    )


def default_params() -> ModelParams:
    return validate(DEFAULTS)


def ratio_inverse(params: ModelParams, y):
    """(h'/phi')^{-1}(y) for y > 0.

    Closed form for the parametric family:
        (1/(alpha+beta)) * ln(phi_max * alpha * y / beta).
    The result may be negative; callers clamp at zero where effort must be
    non-negative. Generic families are inverted by bisection on the increasing
    ratio map, which only reaches values >= ratio(0), so the generic route
    returns 0 for targets at or below that point.
    """
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr <= 0.0):
        raise ValueError("ratio_inverse requires y > 0")
    if params.parametric:
        fam_phi, fam_h = params.effort_impact, params.effort_cost
        out = (1.0 / (fam_phi.alpha + fam_h.beta)) * np.log(
            fam_phi.phi_max * fam_phi.alpha * y_arr / fam_h.beta
        )
        return float(out) if out.ndim == 0 else out
    return _invert_scalar_map(
        lambda a: params.cost_impact_ratio(a), y_arr, increasing=True, lo=0.0, hi=1.0
    )
