"""Coupled stochastic model of wind speed and electricity price.

log-wind and price are each a deterministic seasonal trend plus a
zero-reverting Ornstein-Uhlenbeck fluctuation; the price fluctuation is
additionally pulled by the wind fluctuation (coupling constant c_W >= 0),
which induces the negative wind/price correlation seen in market data:

    d y_W = -lam_W y_W dt + sig_W dB_W
    d y_S = -lam_S (c_W y_W + y_S) dt + sig_S dB_S

The linear SDE system has an exact conditional Gaussian law over any step,
so transitions are sampled and integrated without discretization error.
Time is measured in hours throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

YEAR_HOURS = 8760.0
DAY_HOURS = 24.0
HALF_DAY_HOURS = 12.0


class DegenerateRatesError(ValueError):
    """lam_S too close to lam_W: the transition formulas divide by their gap."""


@dataclass(frozen=True)
class OUParams:
    lambda_W: float = 0.1702   # mean-reversion rate of log-wind [1/h]
    lambda_S: float = 0.2534   # mean-reversion rate of price [1/h]
    sigma_W: float = 0.2486    # log-wind volatility [1/sqrt(h)]
    sigma_S: float = 0.1072    # price volatility [EUR/(MWh sqrt(h))]
    c_W: float = 0.5483        # wind-into-price coupling [-]

    def __post_init__(self):
        if self.lambda_W <= 0 or self.lambda_S <= 0:
            raise ValueError("mean-reversion rates must be positive")
        if self.sigma_W <= 0 or self.sigma_S <= 0:
            raise ValueError("volatilities must be positive")
        if self.c_W < 0:
            raise ValueError("coupling c_W must be non-negative")
        if abs(self.lambda_S - self.lambda_W) < 1e-8:
            raise DegenerateRatesError(
                "lambda_S and lambda_W must differ (formulas divide by the gap)")


@dataclass(frozen=True)
class SeasonalityParams:
    """Cosine-sum trends: yearly + daily for log-wind, plus half-daily for price.

    The defaults are illustrative (winter-peaked wind and price, an evening
    price peak) and are normally replaced by calibrated values; they are
    chosen so the trend passes through 4.0 m/s and 37 EUR/MWh at t = 0.
    """

    wind_level: float = 1.1862943611198906   # log(4.0) - yearly amplitude
    wind_yearly_amp: float = 0.20
    wind_yearly_phase: float = 0.0           # [h]
    wind_daily_amp: float = 0.08
    wind_daily_phase: float = 18.0
    price_level: float = 31.0
    price_yearly_amp: float = 6.0
    price_yearly_phase: float = 0.0
    price_daily_amp: float = 7.0
    price_daily_phase: float = 18.0
    price_halfdaily_amp: float = 2.5
    price_halfdaily_phase: float = 3.0


def seasonal_mean(t, which: str, seas: SeasonalityParams):
    """Seasonal trend at time t [h]: log m/s for wind, EUR/MWh for price."""
    t = np.asarray(t, dtype=float)
    two_pi = 2.0 * np.pi
    if which == "wind":
        out = (seas.wind_level
               + seas.wind_yearly_amp * np.cos(two_pi * (t - seas.wind_yearly_phase) / YEAR_HOURS)
               + seas.wind_daily_amp * np.cos(two_pi * (t - seas.wind_daily_phase) / DAY_HOURS))
    elif which == "price":
        out = (seas.price_level
               + seas.price_yearly_amp * np.cos(two_pi * (t - seas.price_yearly_phase) / YEAR_HOURS)
               + seas.price_daily_amp * np.cos(two_pi * (t - seas.price_daily_phase) / DAY_HOURS)
               + seas.price_halfdaily_amp * np.cos(two_pi * (t - seas.price_halfdaily_phase) / HALF_DAY_HOURS))
    else:
        raise ValueError(f"which must be 'wind' or 'price', got {which!r}")
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class GaussianTransition:
    """Conditional Gaussian law of the pair over one step.

    In Y-coordinates the mean is (m of y_W, m of y_S); pushed to state
    coordinates it is (mean of log W', mean of S').  chol is the lower
    Cholesky factor [[S_W, 0], [rho*S_S, sqrt(1-rho^2)*S_S]].
    """

    mean: np.ndarray       # shape (2,)
    cov: np.ndarray        # shape (2, 2)
    chol: np.ndarray       # shape (2, 2), lower
    rho: float

    @property
    def sigma_W(self):
        return self.chol[0, 0]

    @property
    def sigma_S(self):
        return math.sqrt(self.cov[1, 1])


def _variance_terms(tau, ou: OUParams):
    """(var_W, var_S, cov_WS) of the fluctuation pair over a step tau."""
    lw, ls = ou.lambda_W, ou.lambda_S
    sw2, ss2 = ou.sigma_W**2, ou.sigma_S**2
    var_yw = sw2 / (2 * lw) * (1 - np.exp(-2 * lw * tau))
    var_ys = ss2 / (2 * ls) * (1 - np.exp(-2 * ls * tau))
    cross = sw2 / (ls + lw) * (1 - np.exp(-(ls + lw) * tau))
    g = ls * ou.c_W / (ls - lw)
    var_s = var_ys + g**2 * (var_yw + (sw2 / ss2) * var_ys - 2 * cross)
    cov = -g * (var_yw - cross)
    return var_yw, var_s, cov


def conditional_moments(tau: float, y_W: float, y_S: float, ou: OUParams) -> GaussianTransition:
    """Exact conditional law of (y_W, y_S) after tau hours from (y_W, y_S)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    lw, ls = ou.lambda_W, ou.lambda_S
    m_w = y_W * math.exp(-lw * tau)
    m_s = (y_S * math.exp(-ls * tau)
           - ls * ou.c_W / (ls - lw) * y_W * (math.exp(-lw * tau) - math.exp(-ls * tau)))
    var_w, var_s, cov_ws = _variance_terms(tau, ou)
    cov = np.array([[var_w, cov_ws], [cov_ws, var_s]])
    s_w = math.sqrt(var_w)
    s_s = math.sqrt(var_s)
    rho = cov_ws / (s_w * s_s)
    chol = np.array([[s_w, 0.0],
                     [rho * s_s, math.sqrt(max(1.0 - rho**2, 0.0)) * s_s]])
    return GaussianTransition(mean=np.array([m_w, m_s]), cov=cov, chol=chol, rho=rho)


def mean_coefficients(tau: float, ou: OUParams):
    """Coefficients (e_W, e_S, g) of the affine conditional mean.

    m_W' = e_W * y_W and m_S' = e_S * y_S - g * y_W, used by the vectorized
    cost and grid code.
    """
    e_w = math.exp(-ou.lambda_W * tau)
    e_s = math.exp(-ou.lambda_S * tau)
    g = ou.lambda_S * ou.c_W / (ou.lambda_S - ou.lambda_W) * (e_w - e_s)
    return e_w, e_s, g


def ws_transition(n: int, w: float, s: float, ou: OUParams, seas: SeasonalityParams,
                  dt: float = 1.0) -> GaussianTransition:
    """Conditional law of (log W, S) at period n+1 given (w, s) at period n."""
    if w <= 0:
        raise ValueError("wind speed must be positive")
    t_n = n * dt
    y_w = math.log(w) - seasonal_mean(t_n, "wind", seas)
    y_s = s - seasonal_mean(t_n, "price", seas)
    base = conditional_moments(dt, y_w, y_s, ou)
    mean = np.array([seasonal_mean(t_n + dt, "wind", seas) + base.mean[0],
                     seasonal_mean(t_n + dt, "price", seas) + base.mean[1]])
    return GaussianTransition(mean=mean, cov=base.cov, chol=base.chol, rho=base.rho)


def step_ws(n: int, w: float, s: float, eps, ou: OUParams, seas: SeasonalityParams,
            dt: float = 1.0):
    """Next (wind, price) as a deterministic map of a standard normal pair."""
    tr = ws_transition(n, w, s, ou, seas, dt)
    eps = np.asarray(eps, dtype=float)
    w_next = math.exp(tr.mean[0] + tr.sigma_W * eps[0])
    s_next = tr.mean[1] + tr.sigma_S * (tr.rho * eps[0]
                                        + math.sqrt(max(1 - tr.rho**2, 0.0)) * eps[1])
    return w_next, s_next


def joint_density(w_next, s_next, n: int, w: float, s: float, ou: OUParams,
                  seas: SeasonalityParams, dt: float = 1.0):
    """Transition density of (W', S'): lognormal-normal pair; 0 for w' <= 0."""
    tr = ws_transition(n, w, s, ou, seas, dt)
    return transition_density(w_next, s_next, tr)


def transition_density(w_next, s_next, tr: GaussianTransition):
    w_next = np.asarray(w_next, dtype=float)
    s_next = np.asarray(s_next, dtype=float)
    s1 = tr.sigma_W
    s2 = tr.sigma_S
    rho = tr.rho
    with np.errstate(divide="ignore", invalid="ignore"):
        z1 = (np.log(np.where(w_next > 0, w_next, np.nan)) - tr.mean[0]) / s1
        z2 = (s_next - tr.mean[1]) / s2
        quad = (z1**2 - 2 * rho * z1 * z2 + z2**2) / (2 * (1 - rho**2))
        dens = np.exp(-quad) / (2 * np.pi * s1 * s2 * math.sqrt(1 - rho**2) * w_next)
    dens = np.where(w_next > 0, dens, 0.0)
    return dens if dens.ndim else float(dens)


def stationary_moments(ou: OUParams) -> GaussianTransition:
    """Stationary law of the fluctuation pair (tau -> infinity limit)."""
    lw, ls = ou.lambda_W, ou.lambda_S
    sw2, ss2 = ou.sigma_W**2, ou.sigma_S**2
    var_yw = sw2 / (2 * lw)
    var_ys = ss2 / (2 * ls)
    cross = sw2 / (ls + lw)
    g = ls * ou.c_W / (ls - lw)
    var_s = var_ys + g**2 * (var_yw + (sw2 / ss2) * var_ys - 2 * cross)
    cov_ws = -g * (var_yw - cross)
    cov = np.array([[var_yw, cov_ws], [cov_ws, var_s]])
    s_w, s_s = math.sqrt(var_yw), math.sqrt(var_s)
    rho = cov_ws / (s_w * s_s)
    chol = np.array([[s_w, 0.0],
                     [rho * s_s, math.sqrt(max(1 - rho**2, 0.0)) * s_s]])
    return GaussianTransition(mean=np.zeros(2), cov=cov, chol=chol, rho=rho)


def trajectory_rng(seed: int, trajectory: int, period: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, trajectory, period).

    Philox streams are independent per key, so simulations decompose
    reproducibly regardless of evaluation order or threading.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(trajectory, period))
    return np.random.Generator(np.random.Philox(ss))
