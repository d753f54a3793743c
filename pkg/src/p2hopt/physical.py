"""Deterministic physics of the power-to-heat plant.

Surrogate polynomials for the heat pump (electrical power F1, oil outlet
temperature F2) and the steam generator (inlet/outlet temperatures from the
oil mass flow), the wind-turbine power curve, the storage temperature
recursion, bypass factors and the state-dependent feasible control sets.

Conventions: temperatures in degC, power in kW, mass flow in kg/s, heat
capacities in kJ/(kg K), period length in hours.  All functions are pure;
parameter objects are frozen dataclasses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

# Validity box of the heat-pump surrogate polynomials.
MDOT_BOX = (5.0, 16.0)
T_AIR_BOX = (60.0, 100.0)
D_BOX = (0.8, 1.53)

# F1 (single heat pump electrical power, kW): quadratic surrogate,
# coefficient order matches _F1_TERMS.
F1_COEFFS = np.array([
    127.87,         # 1
    2.06342,        # a_I
    2.55723,        # mdot
    0.756419,       # T_air
    -1164.84,       # d
    -0.0168942,     # a_I*mdot
    -2.60579,       # a_I*d
    -0.540713,      # mdot^2
    13.3204,        # mdot*d
    -1.3829,        # T_air*d
    1556.66,        # d^2
])

# F2 (oil temperature at the HTHX outlet, degC): cubic surrogate.
F2_COEFFS = np.array([
    95.9612,        # 1
    0.93433,        # a_I
    -0.327753,      # mdot
    0.0146542,      # T_air
    -271.354,       # d
    0.00104853,     # a_I^2
    0.0211819,      # a_I*mdot
    -0.706122,      # a_I*d
    1.04924,        # mdot^2
    -0.00388073,    # mdot*T_air
    -29.4801,       # mdot*d
    0.0595068,      # T_air*d
    562.428,        # d^2
    -0.000716825,   # a_I^2*d
    -0.00148575,    # a_I*mdot^2
    0.0229386,      # a_I*mdot*d
    0.203578,       # a_I*d^2
    -0.0405702,     # mdot^3
    0.881391,       # mdot^2*d
    -2.18172,       # mdot*d^2
    -151.476,       # d^3
])

# Region-2 polynomial of the turbine power curve, ascending degree in w.
# The source table lists these highest-degree-first; read that way the fit
# reproduces the V150-4.2 datasheet curve (about 3.63 MW at 10 m/s).
REGION2_COEFFS = np.array([
    9941.94, -11117.58, 4918.22, -1101.46, 133.46, -8.16, 0.1959,
])

SECONDS_PER_HOUR = 3600.0


class DomainError(ValueError):
    """Surrogate input outside the fitted validity box."""


class InfeasibleOutletError(ValueError):
    """Requested outlet temperature not attainable for any shaft speed."""


class AmbiguousRootError(ValueError):
    """Multiple shaft speeds reproduce the outlet temperature."""


class InfeasibleActionError(ValueError):
    """Action drives the storage temperature outside its bounds."""


class ConstraintViolationError(ValueError):
    """A bypass factor left [0, 1]; indicates a bound bug upstream."""


def sg_temperatures(mdot):
    """Steam-generator inlet/outlet oil temperatures for mass flow ``mdot``.

    The flows of the parallel heat pumps merge before the steam generator,
    hence the 3*mdot denominator.
    """
    if mdot <= 0:
        raise DomainError(f"mdot must be positive, got {mdot}")
    t_in = 201.92 + 1819.32 / (3.0 * mdot)
    t_out = 196.3 - 188.4 / (3.0 * mdot)
    return t_in, t_out


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the plant plus the time discretization."""

    mdot: float = 6.0          # thermal oil mass flow [kg/s]
    m_S: float = 600_000.0     # storage mass [kg]
    c_S: float = 1.025         # storage heat capacity [kJ/(kg K)]
    c_F: float = 2.314         # oil heat capacity [kJ/(kg K)]
    T_air_in: float = 80.0     # waste-heat air temperature [degC]
    n_H: int = 3               # parallel heat pumps
    eps_C: float = 0.9         # charging efficiency
    eps_D: float = 0.9         # discharging efficiency
    d_min: float = 0.8         # shaft-speed bounds [-]
    d_max: float = 1.53
    a_I_max: float = 250.0     # max oil temperature at the HTHX inlet [degC]
    dt: float = 1.0            # period length [h]
    N: int = 120               # number of periods
    T_SG_in: float = field(init=False)
    T_SG_out: float = field(init=False)

    def __post_init__(self):
        if not MDOT_BOX[0] <= self.mdot <= MDOT_BOX[1]:
            raise DomainError(f"mdot={self.mdot} outside {MDOT_BOX}")
        if not T_AIR_BOX[0] <= self.T_air_in <= T_AIR_BOX[1]:
            raise DomainError(f"T_air_in={self.T_air_in} outside {T_AIR_BOX}")
        if not 0 < self.d_min < self.d_max:
            raise ValueError("require 0 < d_min < d_max")
        if not (0 <= self.eps_C <= 1 and 0 <= self.eps_D <= 1):
            raise ValueError("efficiencies must lie in [0, 1]")
        if self.n_H < 1:
            raise ValueError("n_H must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        t_in, t_out = sg_temperatures(self.mdot)
        object.__setattr__(self, "T_SG_in", t_in)
        object.__setattr__(self, "T_SG_out", t_out)

    @property
    def r_min(self):
        return self.T_SG_out

    @property
    def r_max(self):
        return self.T_SG_in

    @property
    def delta_T_SG(self):
        return self.T_SG_in - self.T_SG_out

    @property
    def tes_rate(self):
        """Storage temperature change per degC of net oil heating, per hour.

        n_H*mdot*c_F is kW/K; the 3600 converts to kJ/(h K) so the ratio to
        m_S*c_S (kJ/K) is 1/h.  The boundary identities of the feasible-set
        bounds (charging to exactly r_max, discharging to exactly r_min)
        validate this conversion.
        """
        return self.n_H * self.mdot * self.c_F * SECONDS_PER_HOUR / (self.m_S * self.c_S)


@dataclass(frozen=True)
class State:
    """MDP state: storage temperature, wind speed, electricity price."""

    r: float   # [degC], in [T_SG_out, T_SG_in]
    w: float   # [m/s], > 0
    s: float   # [EUR/MWh]


@dataclass(frozen=True)
class Action:
    """Oil temperatures at the HTHX outlet/inlet.

    Charging: a_O > T_SG_in, a_I = T_SG_out.  Discharging: a_I > T_SG_out,
    a_O = T_SG_in.  Idle: both at their lower bounds.
    """

    a_O: float  # [degC]
    a_I: float  # [degC]

    def mode(self, params: SystemParams, tol: float = 1e-9) -> int:
        """+1 charging, -1 discharging, 0 idle."""
        if self.a_O > params.T_SG_in + tol:
            return 1
        if self.a_I > params.T_SG_out + tol:
            return -1
        return 0


@dataclass(frozen=True)
class FeasibleBounds:
    """Upper control bounds at a given storage temperature.

    tau_O_* bound the outlet temperature while charging (shaft-speed limit,
    charging factor <= 1, storage cap), tau_I_* the inlet temperature while
    discharging (hardware limit, discharging factor <= 1, storage floor).
    """

    tau_O1: float
    tau_O2: float
    tau_O3: float
    tau_I1: float
    tau_I2: float
    tau_I3: float
    a_O_upper: float
    a_I_upper: float


@dataclass(frozen=True)
class PowerCurve:
    """Piecewise turbine power curve: cut-in, polynomial rise, rated, cut-out."""

    coeffs: tuple = tuple(REGION2_COEFFS)  # ascending degree
    w_in: float = 3.0       # cut-in speed [m/s]
    w_r: float = 11.5       # rated speed [m/s]
    w_out: float = 22.5     # cut-out speed [m/s]
    P_max: float = 4200.0   # rated power [kW]

    def region2(self, w):
        return np.polynomial.polynomial.polyval(w, np.asarray(self.coeffs))

    def region2_peak(self):
        """(w, P) of the maximum of the region-2 polynomial on [w_in, w_r]."""
        der = np.polynomial.Polynomial(np.asarray(self.coeffs)).deriv()
        crit = [r.real for r in der.roots()
                if abs(r.imag) < 1e-9 and self.w_in < r.real < self.w_r]
        cand = [self.w_in, self.w_r] + crit
        vals = [self.region2(w) for w in cand]
        i = int(np.argmax(vals))
        return cand[i], vals[i]


def _check_box(mdot, T_air, d):
    if np.any(mdot < MDOT_BOX[0]) or np.any(mdot > MDOT_BOX[1]):
        raise DomainError(f"mdot={mdot} outside {MDOT_BOX}")
    if np.any(T_air < T_AIR_BOX[0]) or np.any(T_air > T_AIR_BOX[1]):
        raise DomainError(f"T_air={T_air} outside {T_AIR_BOX}")
    if np.any(np.asarray(d) < D_BOX[0] - 1e-12) or np.any(np.asarray(d) > D_BOX[1] + 1e-12):
        raise DomainError(f"d={d} outside {D_BOX}")


def eval_F1(a_I, mdot, T_air, d, coeffs=None):
    """Electrical power of a single heat pump [kW]."""
    _check_box(mdot, T_air, d)
    c = F1_COEFFS if coeffs is None else np.asarray(coeffs)
    a_I = np.asarray(a_I, dtype=float)
    d = np.asarray(d, dtype=float)
    terms = (1.0, a_I, mdot, T_air, d, a_I * mdot, a_I * d, mdot**2,
             mdot * d, T_air * d, d**2)
    out = 0.0
    for ci, ti in zip(c, terms):
        out = out + ci * ti
    return out if np.ndim(out) else float(out)


def eval_F2(a_I, mdot, T_air, d, coeffs=None):
    """Oil temperature at the HTHX outlet [degC]."""
    _check_box(mdot, T_air, d)
    c = F2_COEFFS if coeffs is None else np.asarray(coeffs)
    a_I = np.asarray(a_I, dtype=float)
    d = np.asarray(d, dtype=float)
    terms = (1.0, a_I, mdot, T_air, d, a_I**2, a_I * mdot, a_I * d, mdot**2,
             mdot * T_air, mdot * d, T_air * d, d**2, a_I**2 * d,
             a_I * mdot**2, a_I * mdot * d, a_I * d**2, mdot**3,
             mdot**2 * d, mdot * d**2, d**3)
    out = 0.0
    for ci, ti in zip(c, terms):
        out = out + ci * ti
    return out if np.ndim(out) else float(out)


def _f2_scalar(a_I, mdot, T_air, d):
    """Pure-float F2 with the same term order as eval_F2 (hot-path helper)."""
    c = F2_COEFFS
    terms = (1.0, a_I, mdot, T_air, d, a_I**2, a_I * mdot, a_I * d, mdot**2,
             mdot * T_air, mdot * d, T_air * d, d**2, a_I**2 * d,
             a_I * mdot**2, a_I * mdot * d, a_I * d**2, mdot**3,
             mdot**2 * d, mdot * d**2, d**3)
    out = 0.0
    for ci, ti in zip(c, terms):
        out = out + ci * ti
    return out


@lru_cache(maxsize=8)
def _f2_monotone_in_d(mdot, T_air, d_min, d_max, a_I_lo, a_I_hi):
    """One-time check that F2 increases in d on the operating envelope."""
    d = np.linspace(d_min, d_max, 1000)
    for a_I in np.linspace(a_I_lo, a_I_hi, 12):
        vals = eval_F2(a_I, mdot, T_air, d)
        if np.any(np.diff(vals) <= 0):
            return False
    return True


def _f2_is_monotone(params: SystemParams) -> bool:
    return _f2_monotone_in_d(params.mdot, params.T_air_in, params.d_min,
                             params.d_max, params.T_SG_out, params.a_I_max)


def solve_shaft_speed(a_O, a_I, params: SystemParams, tol=1e-10, max_iter=80):
    """Shaft speed d* with F2(a_I, ., ., d*) = a_O, by bracketed bisection."""
    lo, hi = params.d_min, params.d_max
    a_O = float(a_O)
    a_I = float(a_I)
    mdot, t_air = params.mdot, params.T_air_in
    _check_box(mdot, t_air, lo)
    f_lo = _f2_scalar(a_I, mdot, t_air, lo) - a_O
    f_hi = _f2_scalar(a_I, mdot, t_air, hi) - a_O

    if not _f2_is_monotone(params):
        # Scan for sign changes; the outlet map should still be invertible.
        dd = np.linspace(lo, hi, 1000)
        vals = eval_F2(a_I, params.mdot, params.T_air_in, dd) - a_O
        sign_changes = np.nonzero(np.diff(np.sign(vals)) != 0)[0]
        if len(sign_changes) > 1:
            raise AmbiguousRootError(
                f"multiple shaft speeds give outlet {a_O} at inlet {a_I}")
        if len(sign_changes) == 1:
            lo, hi = dd[sign_changes[0]], dd[sign_changes[0] + 1]
            f_lo = vals[sign_changes[0]]
            f_hi = vals[sign_changes[0] + 1]

    slack = 1e-9  # degC, admits round-trips at the exact bracket ends
    if f_lo > slack or f_hi < -slack:
        raise InfeasibleOutletError(
            f"outlet {a_O} degC not attainable at inlet {a_I} degC: "
            f"F2 range [{f_lo + a_O:.4f}, {f_hi + a_O:.4f}]")
    if f_lo >= 0:
        return lo
    if f_hi <= 0:
        return hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = _f2_scalar(a_I, mdot, t_air, mid) - a_O
        if abs(f_mid) <= tol or hi - lo < 1e-15:
            return mid
        if f_mid < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_shaft_speed_many(a_O, a_I, params: SystemParams, max_iter=80):
    """Vectorized bisection for arrays of (a_O, a_I) pairs.

    Requires F2 monotone in d on the operating envelope (checked once);
    non-monotone surrogates must go through the scalar path.
    """
    if not _f2_is_monotone(params):
        raise AmbiguousRootError("F2 not monotone in d; use solve_shaft_speed")
    a_O = np.asarray(a_O, dtype=float)
    a_I = np.asarray(a_I, dtype=float)
    lo = np.full(a_O.shape, params.d_min)
    hi = np.full(a_O.shape, params.d_max)
    f_lo = eval_F2(a_I, params.mdot, params.T_air_in, lo) - a_O
    f_hi = eval_F2(a_I, params.mdot, params.T_air_in, hi) - a_O
    slack = 1e-9
    if np.any(f_lo > slack) or np.any(f_hi < -slack):
        bad = np.argmax(f_lo > slack) if np.any(f_lo > slack) else np.argmax(f_hi < -slack)
        raise InfeasibleOutletError(
            f"outlet {a_O.flat[bad]} degC not attainable at inlet {a_I.flat[bad]} degC")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = eval_F2(a_I, params.mdot, params.T_air_in, mid) - a_O
        below = f_mid < 0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    d = 0.5 * (lo + hi)
    # Exact bracket-end round trips.
    d = np.where(f_lo >= 0, params.d_min, d)
    d = np.where(f_hi <= 0, params.d_max, d)
    return d


def power_consumption(a: Action, params: SystemParams) -> float:
    """Total heat-pump electrical power [kW] for action ``a``."""
    d_star = solve_shaft_speed(a.a_O, a.a_I, params)
    return params.n_H * eval_F1(a.a_I, params.mdot, params.T_air_in, d_star)


def tes_step(x: State, a: Action, params: SystemParams, tol=1e-9) -> float:
    """Storage temperature after one period [degC]."""
    r_next = x.r + params.tes_rate * (a.a_O - a.a_I - params.delta_T_SG) * params.dt
    if r_next < params.r_min - tol or r_next > params.r_max + tol:
        raise InfeasibleActionError(
            f"action ({a.a_O:.3f}, {a.a_I:.3f}) drives r from {x.r:.3f} to "
            f"{r_next:.3f}, outside [{params.r_min:.3f}, {params.r_max:.3f}]")
    return min(max(r_next, params.r_min), params.r_max)


def heat_flows(a: Action, params: SystemParams):
    """Storage heat inflow I_C >= 0 and outflow I_D <= 0 [kW]."""
    k = params.n_H * params.mdot * params.c_F
    i_c = k * (a.a_O - params.T_SG_in)
    i_d = k * (params.T_SG_out - a.a_I)
    return i_c, i_d


def tes_temperature_at(t_offset: float, x: State, a: Action, params: SystemParams) -> float:
    """Storage temperature t_offset hours into the period (linear in time)."""
    i_c, i_d = heat_flows(a, params)
    return x.r + (i_c + i_d) * SECONDS_PER_HOUR * t_offset / (params.m_S * params.c_S)


def bypass_factors(t_offset: float, a: Action, r_t: float, params: SystemParams):
    """Charging/discharging bypass fractions (l_C, l_D) at time offset.

    r_t is the storage temperature at that offset.  Complementary by
    construction of the action space: at most one factor is positive.
    """
    l_c = 0.0
    l_d = 0.0
    if a.a_O > params.T_SG_in:
        l_c = (a.a_O - params.T_SG_in) / (params.eps_C * (a.a_O - r_t))
    if a.a_I > params.T_SG_out:
        l_d = (a.a_I - params.T_SG_out) / (params.eps_D * (r_t - params.T_SG_out))
    tol = 1e-9
    if not (-tol <= l_c <= 1 + tol) or not (-tol <= l_d <= 1 + tol):
        raise ConstraintViolationError(
            f"bypass factor outside [0,1]: l_C={l_c}, l_D={l_d}")
    return min(max(l_c, 0.0), 1.0), min(max(l_d, 0.0), 1.0)


def feasible_bounds(x, params: SystemParams) -> FeasibleBounds:
    """State-dependent upper bounds of the two controls at state ``x``.

    Accepts a State or a bare storage temperature (the bounds depend on the
    state only through r).
    """
    r = x.r if isinstance(x, State) else float(x)
    k = params.tes_rate * params.dt  # dimensionless per period
    tau_o1 = eval_F2(params.T_SG_out, params.mdot, params.T_air_in, params.d_max)
    tau_o2 = params.T_SG_in + params.eps_C * (params.T_SG_in - r) / (
        1.0 - params.eps_C + k * params.eps_C)
    tau_o3 = params.T_SG_in + (params.T_SG_in - r) / k
    tau_i1 = params.a_I_max
    tau_i2 = params.T_SG_out + params.eps_D * (r - params.T_SG_out) / (
        1.0 + k * params.eps_D)
    tau_i3 = params.T_SG_out + (r - params.T_SG_out) / k
    return FeasibleBounds(
        tau_O1=tau_o1, tau_O2=tau_o2, tau_O3=tau_o3,
        tau_I1=tau_i1, tau_I2=tau_i2, tau_I3=tau_i3,
        a_O_upper=min(tau_o1, tau_o2, tau_o3),
        a_I_upper=min(tau_i1, tau_i2, tau_i3),
    )


def control_upper_bounds(r, params: SystemParams):
    """Vectorized (a_O_upper, a_I_upper) for an array of storage temperatures."""
    r = np.asarray(r, dtype=float)
    k = params.tes_rate * params.dt
    tau_o1 = eval_F2(params.T_SG_out, params.mdot, params.T_air_in, params.d_max)
    tau_o2 = params.T_SG_in + params.eps_C * (params.T_SG_in - r) / (
        1.0 - params.eps_C + k * params.eps_C)
    tau_o3 = params.T_SG_in + (params.T_SG_in - r) / k
    tau_i2 = params.T_SG_out + params.eps_D * (r - params.T_SG_out) / (
        1.0 + k * params.eps_D)
    tau_i3 = params.T_SG_out + (r - params.T_SG_out) / k
    a_o = np.minimum(tau_o1, np.minimum(tau_o2, tau_o3))
    a_i = np.minimum(params.a_I_max, np.minimum(tau_i2, tau_i3))
    return a_o, a_i


def idle_action(params: SystemParams) -> Action:
    return Action(a_O=params.T_SG_in, a_I=params.T_SG_out)


def action_from_levels(mode: int, level: float, r: float, params: SystemParams) -> Action:
    """Absolute action from (mode, relative level in [0,1]) at temperature r."""
    a_o_up, a_i_up = control_upper_bounds(np.asarray([r]), params)
    if mode > 0:
        return Action(a_O=params.T_SG_in + level * (a_o_up[0] - params.T_SG_in),
                      a_I=params.T_SG_out)
    if mode < 0:
        return Action(a_O=params.T_SG_in,
                      a_I=params.T_SG_out + level * (a_i_up[0] - params.T_SG_out))
    return idle_action(params)


def enumerate_actions(r: float, params: SystemParams, n_O: int, n_I: int,
                      degenerate_tol: float = 1e-9):
    """Discretized feasible action set at storage temperature ``r``.

    n_O equidistant relative levels on the charging segment and n_I on the
    discharging segment, each including its idle endpoint; the duplicate
    idle is counted once.  Collapsed segments contribute only idle.  Ordered
    idle-first, then by |heat flow| (ties: charging first), which is the
    tie-break order of the solvers.

    Returns a list of (mode, level, Action).
    """
    a_o_up, a_i_up = (float(v[0]) for v in control_upper_bounds(np.asarray([r]), params))
    out = [(0, 0.0, idle_action(params))]
    span_o = a_o_up - params.T_SG_in
    span_i = a_i_up - params.T_SG_out
    charge = []
    if span_o > degenerate_tol and n_O > 1:
        for lev in np.linspace(0.0, 1.0, n_O)[1:]:
            charge.append((1, float(lev),
                           Action(a_O=params.T_SG_in + lev * span_o, a_I=params.T_SG_out)))
    discharge = []
    if span_i > degenerate_tol and n_I > 1:
        for lev in np.linspace(0.0, 1.0, n_I)[1:]:
            discharge.append((-1, float(lev),
                              Action(a_O=params.T_SG_in, a_I=params.T_SG_out + lev * span_i)))
    merged = sorted(charge + discharge,
                    key=lambda t: (abs(heat_flows(t[2], params)[0] + heat_flows(t[2], params)[1]),
                                   -t[0]))
    out.extend(merged)
    return out


def wind_power(w, curve: PowerCurve):
    """Turbine output [kW] at wind speed ``w`` [m/s]; vectorized."""
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("wind speed must be non-negative")
    out = np.zeros_like(w)
    in2 = (w >= curve.w_in) & (w < curve.w_r)
    out = np.where(in2, curve.region2(w), out)
    out = np.where((w >= curve.w_r) & (w < curve.w_out), curve.P_max, out)
    return out if out.ndim else float(out)
