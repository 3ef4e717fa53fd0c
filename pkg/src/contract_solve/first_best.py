"""Full-information contract: Lagrange multiplier, schedules, offer decision.

With observable effort the optimal rent and effort paths are deterministic:

    R_t = (U')^{-1}(e^{(lam-delta) t} / m)
    A_t = (h'/phi')^{-1}(e^{(lam-delta) t} / m)  clamped at 0

where the multiplier m solves G(m) = x, G being the discounted agent payoff

    G(m) = int_0^inf e^{-lam s} [U(R_s) - h(A_s)] ds.

G is strictly increasing in m, so the multiplier is found by bracketed
bisection. The principal offers the contract iff the discounted surplus
I(x) = int_0^inf e^{-delta s} (phi(A_s) - R_s) ds is positive; I is
decreasing in x and its zero crossing is the largest reservation value at
which the contract is ever offered.

All integrands decay exponentially; integration truncates where an explicit
tail bound drops below 1e-10 and proceeds by adaptive composite 15-point
Gauss-Legendre panels. Schedule factors are evaluated in log space:
e^{(lam-delta) t} alone overflows long before the truncation cap, while
log R_t and A_t are linear in t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .model import ModelParams, UnsupportedFamily, ratio_inverse

T_CAP = 1e4  # hard ceiling on the truncation horizon
_TAIL = 1e-10  # tail mass allowed beyond the truncation point
_PANEL_TOL = 1e-9  # per-panel acceptance for the adaptive refinement
_PANEL_BUDGET = 40000  # max panels before giving up
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(15)


class QuadratureFailure(RuntimeError):
    """Adaptive quadrature exhausted its refinement budget."""


class BracketFailure(RuntimeError):
    """Root bracketing or bisection failed within the allowed range."""


class TauStar(Enum):
    ZERO = "ZERO"
    INFINITY = "INFINITY"


@dataclass(frozen=True)
class FirstBestSolution:
    """Multiplier, schedules and offer decision for one reservation value."""

    x: float
    lambda_lag: float
    rent: Callable  # t -> R_t
    effort: Callable  # t -> A_t
    h_profile: Callable  # t -> phi(A_t) - R_t
    tau_star: TauStar
    value: float  # discounted principal surplus; 0 when tau_star is ZERO


def _batch_panels(f, lo, hi):
    """15-point Gauss-Legendre values of f over each [lo_i, hi_i], vectorized."""
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = half[:, None] * _GL_NODES[None, :] + mid[:, None]
    vals = f(nodes.ravel()).reshape(nodes.shape)
    return half * (vals @ _GL_WEIGHTS)


def _adaptive_gauss_legendre(f, breakpoints, panel_tol=_PANEL_TOL, budget=_PANEL_BUDGET):
    """Integrate f over [breakpoints[0], breakpoints[-1]].

    Whole panels and their two-half refinements are evaluated in batches;
    a panel is accepted when the refinement agrees with the whole-panel rule
    to panel_tol, otherwise its halves are queued again. Deterministic: the
    queue is processed in a fixed order.
    """
    lo = np.asarray(breakpoints[:-1], dtype=float)
    hi = np.asarray(breakpoints[1:], dtype=float)
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    span = float(breakpoints[-1]) - float(breakpoints[0])

    whole = _batch_panels(f, lo, hi)
    used = lo.size
    total = 0.0
    while lo.size:
        used += 2 * lo.size
        if used > budget:
            raise QuadratureFailure(f"panel budget {budget} exhausted")
        mid = 0.5 * (lo + hi)
        left = _batch_panels(f, lo, mid)
        right = _batch_panels(f, mid, hi)
        refined = left + right
        ok = np.abs(refined - whole) <= panel_tol
        if np.any(~ok & (hi - lo < 1e-12 * span)):
            raise QuadratureFailure("panel refinement stalled below resolution")
        total += float(np.sum(refined[ok]))
        bad = ~ok
        lo = np.concatenate([lo[bad], mid[bad]])
        hi = np.concatenate([mid[bad], hi[bad]])
        whole = np.concatenate([left[bad], right[bad]])
    return total


def _log_growth(params, lambda_lag, t):
    """ln of e^{(lam-delta) t} / lambda_lag, the common schedule argument."""
    return (params.lam - params.delta) * np.asarray(t, dtype=float) - math.log(lambda_lag)


def _schedule_pieces(params: ModelParams, lambda_lag: float, t):
    """(rent, effort, ln_rent) at times t, stable for arbitrarily large t."""
    ln_y = _log_growth(params, lambda_lag, t)
    if params.parametric:
        fam_u = params.utility
        fam_phi, fam_h = params.effort_impact, params.effort_cost
        ln_rent = (ln_y - math.log(fam_u.p * fam_u.c)) / (fam_u.p - 1.0)
        rent = np.exp(ln_rent)
        effort = np.maximum(
            0.0,
            (math.log(fam_phi.phi_max * fam_phi.alpha / fam_h.beta) + ln_y)
            / (fam_phi.alpha + fam_h.beta),
        )
        return rent, effort, ln_rent
    # generic family: direct evaluation with the growth factor capped so the
    # exponential cannot overflow; the cap only bites where the e^{-lam s}
    # discount has already annihilated the integrand
    y = np.exp(np.minimum(ln_y, 644.0))
    rent = params.du_inv(y)
    effort = np.maximum(0.0, ratio_inverse(params, y))
    with np.errstate(divide="ignore"):
        ln_rent = np.log(rent)
    return rent, effort, ln_rent


def schedules(params: ModelParams, lambda_lag: float, t):
    """Rent R_t, effort A_t (clamped at 0) and surplus rate H_t = phi(A_t) - R_t."""
    if lambda_lag <= 0.0:
        raise ValueError("lambda_lag must be positive")
    rent, effort, _ = _schedule_pieces(params, lambda_lag, t)
    h_profile = params.phi(effort) - rent
    return rent, effort, h_profile


def _truncation_time(bound: float, exp_rate: float, div_rate: float) -> float:
    """Smallest T with e^{-exp_rate T} * bound / div_rate < _TAIL, capped at T_CAP.

    bound dominates the integrand's non-exponential factor, so the remaining
    mass past T is below _TAIL. A non-finite bound falls back to the cap
    (conservative: the extra panels sit where the integrand is already zero).
    """
    if not math.isfinite(bound):
        return T_CAP
    t_star = (math.log(bound) - math.log(div_rate) - math.log(_TAIL)) / exp_rate
    return min(T_CAP, max(0.0, t_star))


def _effort_kink_time(params: ModelParams, lambda_lag: float) -> float:
    """Time at which the effort clamp releases (A_t crosses 0), or 0.0."""
    fam_phi, fam_h = params.effort_impact, params.effort_cost
    if params.parametric:
        gap = math.log(lambda_lag * fam_h.beta / (fam_phi.phi_max * fam_phi.alpha))
    else:
        ratio0 = float(params.cost_impact_ratio(0.0))
        gap = math.log(lambda_lag * ratio0)
    if gap <= 0.0 or params.lam == params.delta:
        return 0.0
    return gap / (params.lam - params.delta)


def _integration_breakpoints(params, lambda_lag, t_star):
    kink = _effort_kink_time(params, lambda_lag)
    points = [0.0]
    if 0.0 < kink < t_star:
        points.append(kink)
    points.append(t_star)
    # cut long smooth stretches into <= 20-unit panels up front
    refined = []
    for seg_lo, seg_hi in zip(points[:-1], points[1:]):
        k = max(1, int(math.ceil((seg_hi - seg_lo) / 20.0)))
        refined.extend(np.linspace(seg_lo, seg_hi, k + 1)[:-1])
    refined.append(points[-1])
    return refined


def _cost_bound(params: ModelParams, lambda_lag: float) -> float:
    """phi_max + R_0 + h(A_{T_CAP}), the factor bound for the agent integrand."""
    rent0, _, _ = _schedule_pieces(params, lambda_lag, 0.0)
    _, effort_cap, _ = _schedule_pieces(params, lambda_lag, T_CAP)
    with np.errstate(over="ignore"):
        return params.effort_impact.phi_max + float(rent0) + float(params.h(effort_cap))


def reservation_integral(params: ModelParams, lambda_lag: float) -> float:
    """G(m) = int_0^inf e^{-lam s} [U(R_s) - h(A_s)] ds by adaptive quadrature.

    Strictly increasing in m; absolute error <= 1e-8.
    """
    if lambda_lag <= 0.0:
        raise ValueError("lambda_lag must be positive")
    lam = params.lam

    if params.parametric:
        fam_u = params.utility
        fam_h = params.effort_cost
        p, c = fam_u.p, fam_u.c
        beta = fam_h.beta

        def integrand(s):
            _, effort, ln_rent = _schedule_pieces(params, lambda_lag, s)
            util = c * np.exp(-lam * s + p * ln_rent)
            cost = np.where(
                effort > 0.0,
                np.exp(-lam * s + beta * effort) - np.exp(-lam * s),
                0.0,
            )
            return util - cost

    else:

        def integrand(s):
            rent, effort, _ = _schedule_pieces(params, lambda_lag, s)
            return np.exp(-lam * s) * (params.u(rent) - params.h(effort))

    t_star = _truncation_time(
        _cost_bound(params, lambda_lag),
        exp_rate=max(params.lam, params.delta),
        div_rate=min(params.lam, params.delta),
    )
    return _adaptive_gauss_legendre(integrand, _integration_breakpoints(params, lambda_lag, t_star))


def closed_form_G(params: ModelParams, lambda_lag: float) -> float:
    """Piecewise closed form of G for the parametric family.

    Writing q = phi_max alpha / (beta m):

        term1 = c / ((p c m)^{p/(p-1)} (lam - p/(p-1) (lam-delta)))
        m <= phi_max alpha / beta:
            G = term1 + 1/lam - q^{beta/(alpha+beta)} (alpha+beta)/(lam alpha + beta delta)
        m  > phi_max alpha / beta:
            G = term1 + q^{lam/(lam-delta)} (1/lam - (alpha+beta)/(lam alpha + beta delta))
            (bracket killed when lam = delta: effort stays clamped forever)
    """
    if lambda_lag <= 0.0:
        raise ValueError("lambda_lag must be positive")
    if not params.parametric:
        raise UnsupportedFamily("closed form exists only for the parametric family")
    lam, delta = params.lam, params.delta
    fam_u, fam_phi, fam_h = params.utility, params.effort_impact, params.effort_cost
    p, c = fam_u.p, fam_u.c
    alpha, beta, phi_max = fam_phi.alpha, fam_h.beta, fam_phi.phi_max

    ppm1 = p / (p - 1.0)
    term1 = c / ((p * c * lambda_lag) ** ppm1 * (lam - ppm1 * (lam - delta)))
    q = phi_max * alpha / (beta * lambda_lag)
    if lambda_lag <= phi_max * alpha / beta:
        return term1 + 1.0 / lam - q ** (beta / (alpha + beta)) * (alpha + beta) / (
            lam * alpha + beta * delta
        )
    if lam == delta:
        return term1
    return term1 + q ** (lam / (lam - delta)) * (
        1.0 / lam - (alpha + beta) / (lam * alpha + beta * delta)
    )


def solve_lagrange(params: ModelParams, x: float, tol: float = 1e-9) -> float:
    """Multiplier m with |G(m) - x| <= tol, by bracket expansion then bisection.

    Roots the quadrature route (reservation_integral), which is the G that
    callers re-evaluate when checking the fixed point. Accepts x >= 0: G
    ranges below 0 for small m, so x = 0 is solvable even though the
    contract itself only binds for positive reservation values.
    """
    if not (x >= 0.0):
        raise ValueError("reservation value x must be >= 0")

    def g(m):
        return reservation_integral(params, m)

    lo = hi = 1.0
    g_lo = g_hi = g(1.0)
    while g_lo > x:
        lo /= 8.0
        if lo < 1e-12:
            raise BracketFailure(f"no lower bracket above 1e-12 for x={x}")
        g_lo = g(lo)
    while g_hi < x:
        hi *= 8.0
        if hi > 1e12:
            raise BracketFailure(f"no upper bracket below 1e12 for x={x}")
        g_hi = g(hi)

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g_mid = g(mid)
        if abs(g_mid - x) <= tol:
            return mid
        if g_mid < x:
            lo = mid
        else:
            hi = mid
    raise BracketFailure("bisection did not reach tolerance in 200 steps")


def _offer_integral(params: ModelParams, lambda_lag: float) -> float:
    """I = int_0^inf e^{-delta s} (phi(A_s) - R_s) ds, the offer criterion.

    The factor phi(A_s) - R_s is bounded by phi_max + R_0 in absolute value
    (phi is bounded, R decreasing), which gives the truncation tail bound at
    this integral's own discount rate.
    """
    delta = params.delta

    def integrand(s):
        rent, effort, ln_rent = _schedule_pieces(params, lambda_lag, s)
        surplus = np.exp(-delta * s) * params.phi(effort)
        if params.parametric:
            return surplus - np.exp(-delta * s + ln_rent)
        return surplus - np.exp(-delta * s) * rent

    rent0, _, _ = _schedule_pieces(params, lambda_lag, 0.0)
    bound = params.effort_impact.phi_max + float(rent0)
    t_star = _truncation_time(bound, exp_rate=delta, div_rate=delta)
    return _adaptive_gauss_legendre(integrand, _integration_breakpoints(params, lambda_lag, t_star))


def principal_value_fb(params: ModelParams, x: float) -> FirstBestSolution:
    """First-best solution at reservation value x.

    The contract is offered (tau_star = INFINITY) iff the discounted surplus
    I(x) is strictly positive; an exact tie reports ZERO.
    """
    m = solve_lagrange(params, x)
    surplus = _offer_integral(params, m)
    offered = surplus > 0.0

    def rent(t):
        return schedules(params, m, t)[0]

    def effort(t):
        return schedules(params, m, t)[1]

    def h_profile(t):
        return schedules(params, m, t)[2]

    return FirstBestSolution(
        x=float(x),
        lambda_lag=m,
        rent=rent,
        effort=effort,
        h_profile=h_profile,
        tau_star=TauStar.INFINITY if offered else TauStar.ZERO,
        value=surplus if offered else 0.0,
    )


def continuation_boundary(params: ModelParams, tol: float = 1e-4) -> float:
    """Largest reservation value at which the contract is still offered.

    Bisection on x -> I(x), which is decreasing in x; resolved to tol in x.
    """

    def offer(x):
        return _offer_integral(params, solve_lagrange(params, x))

    lo = min(1.0, max(params.x_reserve, 0.1))
    if offer(lo) <= 0.0:
        while lo > 1e-6:
            lo /= 4.0
            if offer(lo) > 0.0:
                break
        else:
            raise BracketFailure("surplus is non-positive down to x ~ 0")
    hi = 2.0 * lo
    while offer(hi) > 0.0:
        hi *= 2.0
        if hi > 1e3:
            raise BracketFailure("surplus stays positive up to x = 1e3")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if offer(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
