"""Expected operating cost per period and terminal storage valuation.

The electricity bill over one period is the time integral of

    Psi(t) = S(t) (P_H - P_W(t))^+  -  delta * (S(t) - eta) (P_H - P_W(t))^-,

with P_H the (constant) heat-pump draw and P_W the turbine output.  The
inner expectation over the joint lognormal-normal law of (W(t), S(t)) has a
closed form built from partial expectations

    E(t, k, [a,b)) = E[ 1_{a <= W < b} W^k S ],

so only the outer time integral needs numerics (closed Newton-Cotes).  The
wind axis is partitioned wherever the sign of P_H - P_W(w) changes: below
cut-in and above cut-out the turbine is off, in the rated band it delivers
P_max, and inside the polynomial band the crossings of P_W(w) = P_H are the
real roots of a degree-6 polynomial (zero, one or two of them, since the
fitted polynomial is not monotone near its top).  Prices are EUR/MWh and
powers kW, so money terms carry a 1/1000 factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

from .exogenous import (OUParams, SeasonalityParams, _variance_terms,
                        mean_coefficients, seasonal_mean)
from .physical import (Action, PowerCurve, State, SystemParams, eval_F1,
                       eval_F2, power_consumption, solve_shaft_speed,
                       wind_power)

KW_PER_MW = 1000.0

# Closed Newton-Cotes weights, normalized to sum 1 over the period.
NEWTON_COTES_WEIGHTS = {
    1: np.array([1, 1]) / 2,
    2: np.array([1, 4, 1]) / 6,
    3: np.array([1, 3, 3, 1]) / 8,
    4: np.array([7, 32, 12, 32, 7]) / 90,
    5: np.array([19, 75, 50, 50, 75, 19]) / 288,
    6: np.array([41, 216, 27, 272, 27, 216, 41]) / 840,
}


class PowerOutOfRangeError(ValueError):
    """P_H outside the range covered by the region-2 polynomial split."""


class AlwaysBuyingSignal(PowerOutOfRangeError):
    """P_H at or above rated turbine power: no buy/sell split exists."""


@dataclass(frozen=True)
class CostParams:
    delta: int = 0                 # 1 if selling surplus is allowed
    eta: float = 0.0               # buy/sell spread [EUR/MWh]
    s_Pen: float = 90.0            # terminal penalty price [EUR/MWh]
    s_Liq: float = 0.0             # terminal liquidation price [EUR/MWh]
    r_crit: float | None = None    # critical storage temperature [degC]
    newton_cotes_degree: int = 4

    def __post_init__(self):
        if self.delta not in (0, 1):
            raise ValueError("delta must be 0 or 1")
        if self.s_Pen < 0 or self.s_Liq < 0:
            raise ValueError("terminal prices must be non-negative")
        if self.newton_cotes_degree not in NEWTON_COTES_WEIGHTS:
            raise ValueError("newton_cotes_degree must be in 1..6")

    def resolve_r_crit(self, params: SystemParams) -> float:
        if self.r_crit is None:
            return 0.5 * (params.r_min + params.r_max)
        if not params.r_min <= self.r_crit <= params.r_max:
            raise ValueError("r_crit outside the storage temperature range")
        return self.r_crit


@dataclass(frozen=True)
class RegionSplit:
    """Wind-axis partition induced by a power level P_H.

    ``w_star`` is the first upward crossing of the region-2 polynomial with
    P_H (None when P_H clears the polynomial everywhere).  ``buy``/``sell``
    are tuples of (lo, hi, source) with source in {"off", "poly", "rated"}.
    """

    w_star: float | None
    buy: tuple
    sell: tuple


def region2_roots(p_h: float, curve: PowerCurve):
    """Real roots of P_region2(w) = p_h inside (w_in, w_r), ascending.

    Companion-matrix roots; the reference for the fast vectorized path."""
    coeffs = np.asarray(curve.coeffs, dtype=float).copy()
    coeffs[0] -= p_h
    roots = np.polynomial.Polynomial(coeffs).roots()
    eps = 1e-12
    return sorted(r.real for r in roots
                  if abs(r.imag) < 1e-9 and curve.w_in + eps < r.real < curve.w_r - eps)


@lru_cache(maxsize=8)
def _two_branch_structure(curve: PowerCurve):
    """(w_peak, p_peak) if the polynomial band has a single interior maximum
    (rises monotonically, then falls), else None."""
    der = np.polynomial.Polynomial(np.asarray(curve.coeffs)).deriv()
    crit = sorted(r.real for r in der.roots()
                  if abs(r.imag) < 1e-9 and curve.w_in < r.real < curve.w_r)
    if len(crit) != 1:
        return None
    w_peak = crit[0]
    if curve.region2(w_peak) <= curve.region2(curve.w_in):
        return None
    return w_peak, float(curve.region2(w_peak))


def _branch_bisect(p, lo, hi, curve, increasing, iters=80):
    """Vectorized bisection of region2(w) = p on a monotone branch."""
    lo = np.full_like(p, lo)
    hi = np.full_like(p, hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = (curve.region2(mid) < p) == increasing
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def region2_crossings(p_h, curve: PowerCurve):
    """Crossings of the polynomial band with each power level, vectorized.

    Returns (lo, hi, count): first/last crossing (NaN where absent) and the
    number of crossings in {0, 1, 2} per level.  Levels at or above rated
    power are reported rootless (the split is not consulted there).
    """
    p = np.atleast_1d(np.asarray(p_h, dtype=float))
    lo = np.full(p.shape, np.nan)
    hi = np.full(p.shape, np.nan)
    count = np.zeros(p.shape, dtype=int)
    structure = _two_branch_structure(curve)
    below_rated = p < curve.P_max
    if structure is None:
        for i in np.ndindex(p.shape):
            if not below_rated[i]:
                continue
            rts = region2_roots(float(p[i]), curve)
            count[i] = len(rts)
            if rts:
                lo[i], hi[i] = rts[0], rts[-1]
        return lo, hi, count
    w_peak, p_peak = structure
    p_in = curve.region2(curve.w_in)
    p_end = curve.region2(curve.w_r)
    up = below_rated & (p > p_in) & (p < p_peak)
    down = below_rated & (p > max(p_end, p_in)) & (p < p_peak)
    if np.any(up):
        lo_up = _branch_bisect(p[up], curve.w_in, w_peak, curve, increasing=True)
        lo[up] = lo_up
        hi[up] = lo_up
        count[up] = 1
    if np.any(down):
        hi[down] = _branch_bisect(p[down], w_peak, curve.w_r, curve, increasing=False)
        count[down] = 2
    return lo, hi, count


def region_split(p_h: float, curve: PowerCurve) -> RegionSplit:
    """Partition (0, inf) into buy and sell pieces for power level p_h."""
    buy = [(0.0, curve.w_in, "off")]
    sell = []
    roots = [] if p_h >= curve.P_max else region2_roots(p_h, curve)
    edges = [curve.w_in] + roots + [curve.w_r]
    for lo, hi in zip(edges[:-1], edges[1:]):
        if p_h >= curve.region2(0.5 * (lo + hi)):
            buy.append((lo, hi, "poly"))
        else:
            sell.append((lo, hi, "poly"))
    if p_h >= curve.P_max:
        buy.append((curve.w_r, curve.w_out, "rated"))
    else:
        sell.append((curve.w_r, curve.w_out, "rated"))
    buy.append((curve.w_out, math.inf, "off"))
    return RegionSplit(w_star=roots[0] if roots else None,
                       buy=tuple(buy), sell=tuple(sell))


def find_w_star(p_h: float, curve: PowerCurve, tol=1e-6):
    """First wind speed in the polynomial band whose turbine output meets p_h.

    Bracketed bisection after a coarse pre-scan, so the first upward
    crossing is returned even where the polynomial is not monotone.
    """
    if p_h >= curve.P_max:
        raise AlwaysBuyingSignal(
            f"P_H={p_h} >= rated power {curve.P_max}: always buying")
    p_in = curve.region2(curve.w_in)
    if p_h < p_in:
        raise PowerOutOfRangeError(
            f"P_H={p_h} below cut-in turbine power {p_in:.3f} kW")
    grid = np.linspace(curve.w_in, curve.w_r, 2049)
    vals = curve.region2(grid) - p_h
    above = np.nonzero(vals >= 0)[0]
    if len(above) == 0:
        raise PowerOutOfRangeError(
            f"P_H={p_h} above the polynomial-band maximum "
            f"{curve.region2_peak()[1]:.3f} kW: no crossing exists")
    i = above[0]
    if i == 0:
        return curve.w_in
    lo, hi = grid[i - 1], grid[i]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = curve.region2(mid) - p_h
        if abs(fm) <= tol or hi - lo < 1e-13:
            return mid
        if fm < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Closed-form partial expectations of the lognormal-normal pair
# ---------------------------------------------------------------------------

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _u_of(w, m_w, s_w):
    """Standardized log coordinate; -inf at w=0, +inf at w=inf."""
    w = np.asarray(w, dtype=float)
    pos = w > 0
    with np.errstate(divide="ignore"):
        u = np.where(pos, (np.log(np.where(pos, w, 1.0)) - m_w) / s_w, -np.inf)
    return np.where(np.isinf(w), np.inf, u)


def _pdf_cdf(u):
    u = np.asarray(u, dtype=float)
    finite = np.isfinite(u)
    pdf = np.where(finite, np.exp(-0.5 * np.square(np.where(finite, u, 0.0))), 0.0) / _SQRT_2PI
    cdf = ndtr(np.clip(u, -40.0, 40.0))
    cdf = np.where(u <= -40.0, 0.0, np.where(u >= 40.0, 1.0, cdf))
    return pdf, cdf


def _interval_AB(k, u_lo, u_hi, m_w, s_w, s_s, rho):
    """(dA, dB) with E(k, [a,b)) = dA + m_S * dB and E0(k, [a,b)) = dB."""
    shift = k * s_w
    factor = np.exp(0.5 * shift**2 + k * np.asarray(m_w, dtype=float))
    pdf_lo, cdf_lo = _pdf_cdf(u_lo - shift)
    pdf_hi, cdf_hi = _pdf_cdf(u_hi - shift)
    d_phi = cdf_hi - cdf_lo
    d_a = factor * (rho * s_s) * (pdf_lo - pdf_hi + shift * d_phi)
    d_b = factor * d_phi
    return d_a, d_b


def partial_expectation_E(k, a, b, m_w, s_w, m_s, s_s, rho):
    """E[1_{a <= W < b} W^k S] for lognormal(m_w, s_w) W, normal(m_s, s_s) S."""
    if not 0 <= k <= 6:
        raise ValueError("k must be in 0..6")
    if not 0 <= a < b:
        raise ValueError("need 0 <= a < b")
    u_lo = _u_of(a, m_w, s_w)
    u_hi = _u_of(b, m_w, s_w)
    d_a, d_b = _interval_AB(k, u_lo, u_hi, m_w, s_w, s_s, rho)
    out = d_a + m_s * d_b
    return out if np.ndim(out) else float(out)


def partial_expectation_E0(k, a, b, m_w, s_w):
    """E[1_{a <= W < b} W^k]: the price-free special case."""
    if not 0 <= k <= 6:
        raise ValueError("k must be in 0..6")
    if not 0 <= a < b:
        raise ValueError("need 0 <= a < b")
    _, d_b = _interval_AB(k, _u_of(a, m_w, s_w), _u_of(b, m_w, s_w),
                          m_w, s_w, 0.0, 0.0)
    return d_b if np.ndim(d_b) else float(d_b)


# ---------------------------------------------------------------------------
# Node moments and the vectorized cost kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NodeMoments:
    """Conditional moments of (log W(t), S(t)) at a fixed in-period offset.

    Vectorized over a wind axis; the conditional price mean is affine in
    the period-start price: m_S(i, s) = ms_const[i] + ms_scoef * s.
    """

    m_w: np.ndarray       # (n_w,)
    ms_const: np.ndarray  # (n_w,)
    ms_scoef: float
    s_w: float
    s_s: float
    rho: float


def node_moments(t_n, tau, w_pts, ou: OUParams, seas: SeasonalityParams) -> NodeMoments:
    """Moments at time t_n + tau conditional on W(t_n) = w, S(t_n) = s."""
    w_pts = np.asarray(w_pts, dtype=float)
    e_w, e_s, g = mean_coefficients(tau, ou)
    y_w = np.log(w_pts) - seasonal_mean(t_n, "wind", seas)
    m_w = seasonal_mean(t_n + tau, "wind", seas) + e_w * y_w
    ms_const = (seasonal_mean(t_n + tau, "price", seas)
                - e_s * seasonal_mean(t_n, "price", seas) - g * y_w)
    var_w, var_s, cov = _variance_terms(tau, ou)
    s_w = math.sqrt(var_w)
    s_s = math.sqrt(var_s)
    return NodeMoments(m_w=m_w, ms_const=ms_const, ms_scoef=e_s,
                       s_w=s_w, s_s=s_s, rho=cov / (s_w * s_s))


class _NodeKernel:
    """Partial-expectation evaluator for one time node, batched over actions.

    Endpoints may be scalars or per-action columns of shape (n_g, 1); all
    interval terms broadcast against the wind axis (n_w,).  The power index
    k = 0..6 is carried as a leading axis so each endpoint costs a single
    pdf/cdf evaluation.
    """

    def __init__(self, mom: NodeMoments, curve: PowerCurve):
        self.mom = mom
        self.curve = curve
        self.coeffs = np.asarray(curve.coeffs, dtype=float)
        self.k_range = np.arange(7.0)
        self.shifts = self.k_range * mom.s_w                      # (7,)
        k_col = self.k_range.reshape((7,) + (1,) * np.ndim(mom.m_w))
        self.factors = np.exp(0.5 * (k_col * mom.s_w)**2 + k_col * mom.m_w)
        self._ep_cache = {}

    def _eval(self, w):
        u = _u_of(w, self.mom.m_w, self.mom.s_w)
        shift = self.shifts.reshape((7,) + (1,) * np.ndim(u))
        return _pdf_cdf(u[None, ...] - shift)   # pdf, cdf of shape (7, ...)

    def endpoint(self, w):
        """Stacked (pdf, cdf) over k = 0..6 at a fixed scalar endpoint."""
        key = float(w)
        if key not in self._ep_cache:
            self._ep_cache[key] = self._eval(w)
        return self._ep_cache[key]

    def endpoint_arr(self, w_col):
        """Same for a per-action endpoint array."""
        return self._eval(np.asarray(w_col, dtype=float))

    def ab(self, k, ep_lo, ep_hi):
        pdf_lo, cdf_lo = ep_lo[0][k], ep_lo[1][k]
        pdf_hi, cdf_hi = ep_hi[0][k], ep_hi[1][k]
        d_phi = cdf_hi - cdf_lo
        shift = self.shifts[k]
        d_a = self.factors[k] * (self.mom.rho * self.mom.s_s) * (pdf_lo - pdf_hi + shift * d_phi)
        d_b = self.factors[k] * d_phi
        return d_a, d_b

    def poly_sum(self, ep_lo, ep_hi):
        """(sum_k c_k dA_k, sum_k c_k dB_k) over one polynomial-band piece."""
        tot_a = 0.0
        tot_b = 0.0
        for k in range(7):
            d_a, d_b = self.ab(k, ep_lo, ep_hi)
            tot_a = tot_a + self.coeffs[k] * d_a
            tot_b = tot_b + self.coeffs[k] * d_b
        return tot_a, tot_b


def _psi_node_batch(kern: _NodeKernel, p_h, roots_lo, roots_hi, no_root,
                    two_root, delta, eta):
    """(alpha, beta) with Psi = (alpha + beta * m_S) / 1000 at one node.

    All of p_h, roots_lo/roots_hi (NaN-free placeholders where absent) and
    the root-count masks must be broadcast-compatible with the wind-axis
    moment arrays: (n_a, 1) against (n_w,) for a full table, or (n,)
    against (n,) for paired evaluation.  Rows with p_h >= rated power are
    the always-buying case.
    """
    curve = kern.curve
    ep_win = kern.endpoint(curve.w_in)
    ep_wr = kern.endpoint(curve.w_r)
    ep_wout = kern.endpoint(curve.w_out)
    ep_zero = kern.endpoint(0.0)
    ep_inf = kern.endpoint(math.inf)

    shape = np.broadcast_shapes(np.shape(p_h), kern.mom.m_w.shape)
    alpha = np.zeros(shape)
    beta = np.zeros(shape)

    a0_r1, b0_r1 = kern.ab(0, ep_zero, ep_win)      # below cut-in, turbine off
    a0_r4, b0_r4 = kern.ab(0, ep_wout, ep_inf)      # above cut-out, turbine off
    a0_r3, b0_r3 = kern.ab(0, ep_wr, ep_wout)       # rated band
    alpha += p_h * (a0_r1 + a0_r4)
    beta += p_h * (b0_r1 + b0_r4)

    rated_buy = p_h >= curve.P_max
    alpha += np.where(rated_buy, p_h * a0_r3 - curve.P_max * a0_r3, 0.0)
    beta += np.where(rated_buy, p_h * b0_r3 - curve.P_max * b0_r3, 0.0)
    if delta:
        # selling the rated surplus: -(S - eta)(P_max - P_H) on the band
        sell_a = -(curve.P_max * a0_r3 - p_h * a0_r3
                   - eta * curve.P_max * b0_r3 + eta * p_h * b0_r3)
        sell_b = -(curve.P_max * b0_r3 - p_h * b0_r3)
        alpha += np.where(~rated_buy, sell_a, 0.0)
        beta += np.where(~rated_buy, sell_b, 0.0)

    # Polynomial band, grouped by the number of crossings with p_h.
    if np.any(no_root):
        pa, pb = kern.poly_sum(ep_win, ep_wr)
        a0, b0 = kern.ab(0, ep_win, ep_wr)
        alpha += np.where(no_root, p_h * a0 - pa, 0.0)
        beta += np.where(no_root, p_h * b0 - pb, 0.0)

    any_root = ~no_root
    if np.any(any_root):
        lo_col = np.where(any_root, roots_lo, curve.w_in)
        ep_lo = kern.endpoint_arr(lo_col)
        pa, pb = kern.poly_sum(ep_win, ep_lo)       # [w_in, first root): buy
        a0, b0 = kern.ab(0, ep_win, ep_lo)
        alpha += np.where(any_root, p_h * a0 - pa, 0.0)
        beta += np.where(any_root, p_h * b0 - pb, 0.0)
        if delta:
            # sell on [first root, w_r) (one root) or [first, second) (two)
            hi_col = np.where(two_root, roots_hi, curve.w_r)
            ep_hi = kern.endpoint_arr(np.where(any_root, hi_col, curve.w_r))
            pa_s, pb_s = kern.poly_sum(ep_lo, ep_hi)
            a0_s, b0_s = kern.ab(0, ep_lo, ep_hi)
            alpha += np.where(any_root,
                              -(pa_s - p_h * a0_s - eta * pb_s + eta * p_h * b0_s), 0.0)
            beta += np.where(any_root, -(pb_s - p_h * b0_s), 0.0)

    if np.any(two_root):
        hi_col = np.where(two_root, roots_hi, curve.w_r)
        ep_hi = kern.endpoint_arr(hi_col)
        pa, pb = kern.poly_sum(ep_hi, ep_wr)        # [second root, w_r): buy again
        a0, b0 = kern.ab(0, ep_hi, ep_wr)
        alpha += np.where(two_root, p_h * a0 - pa, 0.0)
        beta += np.where(two_root, p_h * b0 - pb, 0.0)

    return alpha, beta


def _psi_reference(p_h, split: RegionSplit, mom: NodeMoments, curve: PowerCurve,
                   delta, eta):
    """Straightforward piece-by-piece evaluation; reference for the kernel."""
    coeffs = np.asarray(curve.coeffs)

    def piece(lo, hi, source, sell):
        u_lo = _u_of(lo, mom.m_w, mom.s_w)
        u_hi = _u_of(hi, mom.m_w, mom.s_w)

        def ab(k):
            return _interval_AB(k, u_lo, u_hi, mom.m_w, mom.s_w, mom.s_s, mom.rho)

        a0, b0 = ab(0)
        if source == "off":
            pw_a = pw_b = 0.0
        elif source == "rated":
            pw_a, pw_b = curve.P_max * a0, curve.P_max * b0
        else:
            pw_a = pw_b = 0.0
            for k in range(7):
                d_a, d_b = ab(k)
                pw_a = pw_a + coeffs[k] * d_a
                pw_b = pw_b + coeffs[k] * d_b
        if not sell:
            return p_h * a0 - pw_a, p_h * b0 - pw_b
        if not delta:
            return 0.0, 0.0
        return (-(pw_a - p_h * a0 - eta * pw_b + eta * p_h * b0),
                -(pw_b - p_h * b0))

    alpha = 0.0
    beta = 0.0
    for lo, hi, source in split.buy:
        d_a, d_b = piece(lo, hi, source, False)
        alpha, beta = alpha + d_a, beta + d_b
    for lo, hi, source in split.sell:
        d_a, d_b = piece(lo, hi, source, True)
        alpha, beta = alpha + d_a, beta + d_b
    return alpha, beta


def psi_realized(p_h, w, s, curve: PowerCurve, cost: CostParams):
    """Pointwise cost rate [EUR/h] at observed wind w and price s."""
    gap = np.asarray(p_h) - wind_power(w, curve)
    pos = np.maximum(gap, 0.0)
    neg = np.maximum(-gap, 0.0)
    out = (np.asarray(s) * pos - cost.delta * (np.asarray(s) - cost.eta) * neg) / KW_PER_MW
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class CostTable:
    """Expected period cost of a batch of power levels over a wind axis.

    C(a, i, j) = base[a, i] + slope[a, i] * s_j, exact in the start price
    because the conditional price mean is affine in it.
    """

    base: np.ndarray   # (n_actions, n_w)
    slope: np.ndarray  # (n_actions, n_w)

    def at(self, s_pts):
        s_pts = np.asarray(s_pts, dtype=float)
        return self.base[..., None] + self.slope[..., None] * s_pts


def _expected_cost(n, w_pts, p_h, params, curve, ou, seas, cost, paired):
    """Shared Newton-Cotes assembly for table (outer) and paired layouts."""
    weights = NEWTON_COTES_WEIGHTS[cost.newton_cotes_degree]
    n_nodes = len(weights)
    t_n = n * params.dt

    p_in = curve.region2(curve.w_in)
    if np.any(p_h < p_in):
        bad = float(p_h.flat[int(np.argmax(np.ravel(p_h < p_in)))])
        raise PowerOutOfRangeError(
            f"P_H={bad} below cut-in turbine power {p_in:.3f} kW")
    lo, hi, count = region2_crossings(p_h, curve)
    roots_lo = np.where(count > 0, lo, curve.w_in)
    roots_hi = np.where(count > 1, hi, curve.w_r)
    no_root = count == 0
    two_root = count == 2
    if not paired:
        p_h = p_h[:, None]
        roots_lo = roots_lo[:, None]
        roots_hi = roots_hi[:, None]
        no_root = no_root[:, None]
        two_root = two_root[:, None]

    # Node 0 is the period start: (w, s) are known, the rate is pointwise.
    p_wind = wind_power(w_pts, curve)
    gap = p_h - (p_wind if paired else p_wind[None, :])
    pos = np.maximum(gap, 0.0)
    neg = np.maximum(-gap, 0.0)
    base = weights[0] * (cost.delta * cost.eta * neg) / KW_PER_MW
    slope = weights[0] * (pos - cost.delta * neg) / KW_PER_MW

    for q in range(1, n_nodes):
        tau = q * params.dt / (n_nodes - 1)
        mom = node_moments(t_n, tau, w_pts, ou, seas)
        kern = _NodeKernel(mom, curve)
        alpha, beta = _psi_node_batch(kern, p_h, roots_lo, roots_hi, no_root,
                                      two_root, cost.delta, cost.eta)
        base += weights[q] * (alpha + beta * mom.ms_const) / KW_PER_MW
        slope += weights[q] * beta * mom.ms_scoef / KW_PER_MW
    return base * params.dt, slope * params.dt


def cost_table(n, w_pts, p_h_values, params: SystemParams, curve: PowerCurve,
               ou: OUParams, seas: SeasonalityParams, cost: CostParams) -> CostTable:
    """Expected period cost for every (power level, wind point) pair."""
    w_pts = np.asarray(w_pts, dtype=float)
    p_h = np.atleast_1d(np.asarray(p_h_values, dtype=float))
    base, slope = _expected_cost(n, w_pts, p_h, params, curve, ou, seas, cost,
                                 paired=False)
    return CostTable(base=base, slope=slope)


def cost_pairs(n, w_vals, p_h_vals, params: SystemParams, curve: PowerCurve,
               ou: OUParams, seas: SeasonalityParams, cost: CostParams):
    """Expected period cost for aligned (power level, wind) pairs.

    Returns (base, slope) with C = base + slope * own start price; the
    arithmetic per element is identical to the full table's.
    """
    w_vals = np.asarray(w_vals, dtype=float)
    p_h = np.asarray(p_h_vals, dtype=float)
    if w_vals.shape != p_h.shape:
        raise ValueError("paired layout needs equal shapes")
    return _expected_cost(n, w_vals, p_h, params, curve, ou, seas, cost,
                          paired=True)


def running_cost(n, x: State, a: Action, params: SystemParams, curve: PowerCurve,
                 ou: OUParams, seas: SeasonalityParams, cost: CostParams) -> float:
    """Expected cost [EUR] of holding action ``a`` over period n from state x."""
    p_h = power_consumption(a, params)
    table = cost_table(n, np.array([x.w]), np.array([p_h]), params, curve, ou, seas, cost)
    return float(table.base[0, 0] + table.slope[0, 0] * x.s)


# ---------------------------------------------------------------------------
# Terminal cost
# ---------------------------------------------------------------------------


def max_consumption(params: SystemParams) -> float:
    """Heat-pump power at full shaft speed with cold inlet [kW]."""
    return params.n_H * eval_F1(params.T_SG_out, params.mdot, params.T_air_in, params.d_max)


def idle_consumption(params: SystemParams) -> float:
    """Heat-pump power in idle mode [kW]."""
    d_idle = solve_shaft_speed(params.T_SG_in, params.T_SG_out, params)
    return params.n_H * eval_F1(params.T_SG_out, params.mdot, params.T_air_in, d_idle)


def min_consumption(params: SystemParams) -> float:
    """Heat-pump power while discharging at the maximum inlet temperature [kW]."""
    d_star = solve_shaft_speed(params.T_SG_in, params.a_I_max, params)
    return params.n_H * eval_F1(params.a_I_max, params.mdot, params.T_air_in, d_star)


def terminal_cost(x, cost: CostParams, params: SystemParams):
    """Terminal valuation [EUR] of the storage temperature; vectorized in r.

    Below r_crit: cost of force-charging back to r_crit at full shaft speed
    from the grid.  At or above: revenue from discharging the surplus down
    to r_crit (zero when the liquidation price is zero).  The durations of
    both corrective runs follow from the storage energy balance.
    """
    r = np.asarray(x.r if isinstance(x, State) else x, dtype=float)
    r_crit = cost.resolve_r_crit(params)
    a_o_max = eval_F2(params.T_SG_out, params.mdot, params.T_air_in, params.d_max)

    dt_pen = (r_crit - r) / (params.tes_rate * (a_o_max - params.T_SG_in))   # [h]
    pen = dt_pen * max_consumption(params) * cost.s_Pen / KW_PER_MW

    if cost.s_Liq > 0.0:
        dt_liq = (r - r_crit) / (params.tes_rate * (params.a_I_max - params.T_SG_out))
        saved = idle_consumption(params) - min_consumption(params)           # [kW]
        liq = -dt_liq * saved * cost.s_Liq / KW_PER_MW
    else:
        liq = np.zeros_like(r)
    out = np.where(r < r_crit, pen, liq)
    return out if out.ndim else float(out)
