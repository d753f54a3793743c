"""Fit the exogenous model from hourly wind-speed and price series.

Pipeline per series: 3-sigma outlier removal on the raw values, seasonal
trend fit (least squares in a cosine/sine basis at the fixed periods 8760 h
and 24 h, plus 12 h for the price), then closed-form maximum-likelihood
estimation of the autoregressive transition the exact SDE solution induces
on the detrended hourly values:

    y^W_{i+1} = p_W y^W_i + S_W eps,     p_W = exp(-lam_W dt)
    y^S_{i+1} = p_S y^S_i + q_S y^W_i + S_S eps'

Input CSV: header ``hour,value``, one row per hour; gaps are allowed and
simply drop the lag pairs that straddle them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .exogenous import OUParams, SeasonalityParams, seasonal_mean

YEAR_HOURS = 8760.0


class NonMeanRevertingError(ValueError):
    """AR coefficient outside (0, 1): no positive mean-reversion rate exists."""


class CollinearityError(ValueError):
    """Wind and price residuals collinear: the joint regression is singular."""


class InconsistentKappaError(ValueError):
    """Implied innovation variance of the price channel is non-positive."""


@dataclass(frozen=True)
class HourlySeries:
    hours: np.ndarray          # strictly increasing integer hour stamps
    values: np.ndarray
    kind: str                  # "wind" or "price"
    warnings: tuple = ()

    def __post_init__(self):
        if self.kind not in ("wind", "price"):
            raise ValueError("kind must be 'wind' or 'price'")
        if len(self.hours) != len(self.values):
            raise ValueError("hours and values length mismatch")
        if len(self.hours) > 1 and np.any(np.diff(self.hours) <= 0):
            raise ValueError("hour stamps must be strictly increasing")


@dataclass(frozen=True)
class AREstimates:
    p_hat: float
    q_hat: float               # 0 for the wind channel
    innovation_var: float      # variance of the one-step regression residual
    lambda_hat: float
    sigma_hat: float
    c_w_hat: float = 0.0


def read_series_csv(path, kind: str) -> HourlySeries:
    hours = []
    values = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip().lower() for h in header[:2]] != ["hour", "value"]:
            raise ValueError(f"{path}: expected header 'hour,value', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or not row[0].strip():
                continue
            try:
                hours.append(int(row[0]))
                values.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from exc
    return HourlySeries(hours=np.asarray(hours, dtype=int),
                        values=np.asarray(values, dtype=float), kind=kind)


def write_series_csv(path, series: HourlySeries):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hour", "value"])
        for h, v in zip(series.hours, series.values):
            writer.writerow([int(h), f"{v:.10g}"])


def clean_series(raw: HourlySeries, n_sigma: float = 3.0) -> HourlySeries:
    """Drop points outside mean +- n_sigma stdev (both computed once on the
    raw series); wind series additionally lose non-positive values."""
    if len(raw.values) < 100:
        raise ValueError("need at least 100 points to clean a series")
    mu = raw.values.mean()
    sd = raw.values.std()
    keep = np.ones(len(raw.values), dtype=bool) if sd == 0.0 else \
        np.abs(raw.values - mu) <= n_sigma * sd
    if raw.kind == "wind":
        keep &= raw.values > 0
    removed = 1.0 - keep.mean()
    warnings = raw.warnings
    if removed > 0.10:
        warnings = warnings + (
            f"3-sigma rule removed {removed:.1%} of the {raw.kind} series",)
    return HourlySeries(hours=raw.hours[keep], values=raw.values[keep],
                        kind=raw.kind, warnings=warnings)


@dataclass(frozen=True)
class SeasonalFit:
    """Amplitude/phase form of one fitted trend plus its residuals."""

    kind: str
    level: float
    components: tuple          # ((period, amplitude, phase), ...)
    hours: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full_like(t, self.level, dtype=float)
        for period, amp, phase in self.components:
            out = out + amp * np.cos(2 * np.pi * (t - phase) / period)
        return out


def fit_seasonality(series: HourlySeries, kind: str | None = None) -> SeasonalFit:
    """Least-squares cosine-sum fit at the fixed periods.

    Solved exactly in the equivalent linear cos/sin basis (amp*cos(x-phi) =
    a*cos x + b*sin x), then converted back to amplitude/phase; phases are
    reported in [0, period).
    """
    kind = kind or series.kind
    periods = (YEAR_HOURS, 24.0) if kind == "wind" else (YEAR_HOURS, 24.0, 12.0)
    t = series.hours.astype(float)
    z = series.values
    if kind == "wind":
        if np.any(z <= 0):
            raise ValueError("wind series must be positive before the log transform")
        z = np.log(z)
    cols = [np.ones_like(t)]
    for period in periods:
        ang = 2 * np.pi * t / period
        cols.append(np.cos(ang))
        cols.append(np.sin(ang))
    design = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(design, z, rcond=None)
    level = coef[0]
    comps = []
    for i, period in enumerate(periods):
        a, b = coef[1 + 2 * i], coef[2 + 2 * i]
        amp = math.hypot(a, b)
        phase = (period * math.atan2(b, a) / (2 * math.pi)) % period
        comps.append((period, amp, phase))
    residuals = z - design @ coef
    return SeasonalFit(kind=kind, level=float(level), components=tuple(comps),
                       hours=series.hours.copy(), residuals=residuals)


def merge_seasonality(wind: SeasonalFit, price: SeasonalFit) -> SeasonalityParams:
    (wy, wd) = wind.components
    (py, pd, ph) = price.components
    return SeasonalityParams(
        wind_level=wind.level,
        wind_yearly_amp=wy[1], wind_yearly_phase=wy[2],
        wind_daily_amp=wd[1], wind_daily_phase=wd[2],
        price_level=price.level,
        price_yearly_amp=py[1], price_yearly_phase=py[2],
        price_daily_amp=pd[1], price_daily_phase=pd[2],
        price_halfdaily_amp=ph[1], price_halfdaily_phase=ph[2])


def _lag_pairs(hours, values):
    """(previous, current) pairs over consecutive hours only."""
    consecutive = np.diff(hours) == 1
    return values[:-1][consecutive], values[1:][consecutive]


def mle_wind(residuals, hours=None, dt: float = 1.0) -> AREstimates:
    """Closed-form AR(1) maximum likelihood for the detrended log-wind."""
    y = np.asarray(residuals, dtype=float)
    if len(y) < 2:
        raise ValueError("need at least 2 residuals")
    if not np.any(y != 0):
        raise NonMeanRevertingError("all-zero residuals: AR denominator vanishes")
    hours = np.arange(len(y)) if hours is None else np.asarray(hours)
    prev, curr = _lag_pairs(hours, y)
    denom = np.dot(prev, prev)
    if denom == 0:
        raise NonMeanRevertingError("zero lag energy: AR denominator vanishes")
    p_hat = np.dot(curr, prev) / denom
    if not 0.0 < p_hat < 1.0:
        raise NonMeanRevertingError(f"AR coefficient {p_hat:.4f} outside (0, 1)")
    resid = curr - p_hat * prev
    innovation_var = np.dot(resid, resid) / (len(y) + 1)
    lambda_hat = -math.log(p_hat) / dt
    sigma2 = 2 * lambda_hat * innovation_var / (1 - math.exp(-2 * lambda_hat * dt))
    return AREstimates(p_hat=float(p_hat), q_hat=0.0,
                       innovation_var=float(innovation_var),
                       lambda_hat=lambda_hat, sigma_hat=math.sqrt(sigma2))


def mle_price(price_residuals, wind_residuals, wind_est: AREstimates,
              hours=None, dt: float = 1.0) -> AREstimates:
    """Joint maximum likelihood for the coupled price channel.

    The (p_S, q_S) estimators reference each other; the pair is the unique
    solution of the bivariate regression normal equations, solved exactly.
    """
    y_s = np.asarray(price_residuals, dtype=float)
    y_w = np.asarray(wind_residuals, dtype=float)
    if len(y_s) != len(y_w):
        raise ValueError("price and wind residuals must align")
    if len(y_s) < 2:
        raise ValueError("need at least 2 residuals")
    hours = np.arange(len(y_s)) if hours is None else np.asarray(hours)
    s_prev, s_curr = _lag_pairs(hours, y_s)
    w_prev, _ = _lag_pairs(hours, y_w)

    gram = np.array([[np.dot(s_prev, s_prev), np.dot(s_prev, w_prev)],
                     [np.dot(s_prev, w_prev), np.dot(w_prev, w_prev)]])
    rhs = np.array([np.dot(s_curr, s_prev), np.dot(s_curr, w_prev)])
    det = gram[0, 0] * gram[1, 1] - gram[0, 1] ** 2
    scale = gram[0, 0] * gram[1, 1]
    if scale == 0 or det <= 1e-12 * scale:
        raise CollinearityError("wind and price residuals are collinear")
    p_hat, q_hat = np.linalg.solve(gram, rhs)
    if not 0.0 < p_hat < 1.0:
        raise NonMeanRevertingError(f"price AR coefficient {p_hat:.4f} outside (0, 1)")

    resid = s_curr - p_hat * s_prev - q_hat * w_prev
    innovation_var = np.dot(resid, resid) / (len(y_s) + 1)
    lam_s = -math.log(p_hat) / dt
    lam_w = wind_est.lambda_hat
    c_w = -q_hat * (lam_s - lam_w) / (lam_s * (math.exp(-lam_w * dt) - math.exp(-lam_s * dt)))

    # Split the innovation variance into its own-noise part and the part fed
    # in through the wind channel; the bracket matches the exact one-step
    # covariance of the coupled SDE solution.
    sw2 = wind_est.sigma_hat ** 2
    kappa = (lam_s * c_w / (lam_s - lam_w)) ** 2 * (
        wind_est.innovation_var
        + sw2 / (2 * lam_s) * (1 - math.exp(-2 * lam_s * dt))
        - 2 * sw2 / (lam_s + lam_w) * (1 - math.exp(-(lam_s + lam_w) * dt)))
    own_var = innovation_var - kappa
    if own_var <= 0:
        raise InconsistentKappaError(
            f"implied price noise variance {own_var:.3e} <= 0 "
            f"(innovation {innovation_var:.3e}, wind feed-through {kappa:.3e})")
    sigma2 = 2 * lam_s * own_var / (1 - math.exp(-2 * lam_s * dt))
    return AREstimates(p_hat=float(p_hat), q_hat=float(q_hat),
                       innovation_var=float(innovation_var),
                       lambda_hat=lam_s, sigma_hat=math.sqrt(sigma2),
                       c_w_hat=float(c_w))


@dataclass(frozen=True)
class CalibrationResult:
    ou: OUParams
    seasonality: SeasonalityParams
    wind_fit: SeasonalFit
    price_fit: SeasonalFit
    wind_ar: AREstimates
    price_ar: AREstimates
    warnings: tuple


def calibrate(wind_raw: HourlySeries, price_raw: HourlySeries,
              dt: float = 1.0) -> CalibrationResult:
    """Full pipeline: clean, detrend, estimate, assemble model parameters."""
    wind = clean_series(wind_raw)
    price = clean_series(price_raw)
    wind_fit = fit_seasonality(wind)
    price_fit = fit_seasonality(price)

    common, wi, pi = np.intersect1d(wind.hours, price.hours, return_indices=True)
    wind_ar = mle_wind(wind_fit.residuals[wi], hours=common, dt=dt)
    price_ar = mle_price(price_fit.residuals[pi], wind_fit.residuals[wi],
                         wind_ar, hours=common, dt=dt)
    ou = OUParams(lambda_W=wind_ar.lambda_hat, lambda_S=price_ar.lambda_hat,
                  sigma_W=wind_ar.sigma_hat, sigma_S=price_ar.sigma_hat,
                  c_W=max(price_ar.c_w_hat, 0.0))
    return CalibrationResult(ou=ou, seasonality=merge_seasonality(wind_fit, price_fit),
                             wind_fit=wind_fit, price_fit=price_fit,
                             wind_ar=wind_ar, price_ar=price_ar,
                             warnings=wind.warnings + price.warnings)


def simulate_hourly(ou: OUParams, seas: SeasonalityParams, n_hours: int,
                    seed: int, dt: float = 1.0):
    """Synthetic hourly (wind, price) series from the exact AR recursion."""
    from .exogenous import conditional_moments, stationary_moments

    rng = np.random.default_rng(seed)
    tr = conditional_moments(dt, 0.0, 0.0, ou)
    st = stationary_moments(ou)
    y0 = st.chol @ rng.standard_normal(2)
    p_w = math.exp(-ou.lambda_W * dt)
    p_s = math.exp(-ou.lambda_S * dt)
    g = (ou.lambda_S * ou.c_W / (ou.lambda_S - ou.lambda_W)
         * (math.exp(-ou.lambda_W * dt) - math.exp(-ou.lambda_S * dt)))
    y = np.empty((n_hours, 2))
    y[0] = y0
    eps = rng.standard_normal((n_hours - 1, 2))
    innov = eps @ tr.chol.T
    for i in range(1, n_hours):
        y[i, 0] = p_w * y[i - 1, 0] + innov[i - 1, 0]
        y[i, 1] = p_s * y[i - 1, 1] - g * y[i - 1, 0] + innov[i - 1, 1]
    hours = np.arange(n_hours)
    t = hours * dt
    wind = np.exp(seasonal_mean(t, "wind", seas) + y[:, 0])
    price = seasonal_mean(t, "price", seas) + y[:, 1]
    return (HourlySeries(hours=hours, values=wind, kind="wind"),
            HourlySeries(hours=hours, values=price, kind="price"))
