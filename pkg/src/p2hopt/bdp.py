"""Backward dynamic programming on time-varying grids with quantized noise.

The state grid follows the seasonal trends: per period, wind and price axes
cover the trend plus/minus k_R one-step standard deviations (reference
window), enlarged by a k_E rule so that the quantized successors of
reference states rarely leave the next grid.  The expectation in the
Bellman operator is the quantizer cubature; values between nodes come from
trilinear interpolation with clamped (constant) extrapolation.

Within a period every grid state is independent given the next value
layer, so the sweep is vectorized over the whole grid; periods run
strictly backward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .costs import CostParams, cost_pairs, cost_table, terminal_cost
from .exogenous import (OUParams, SeasonalityParams, _variance_terms,
                        mean_coefficients, seasonal_mean)
from .model import P2HModel
from .physical import (Action, State, SystemParams, enumerate_actions,
                       solve_shaft_speed_many)
from .quantization import Quantizer


@dataclass(frozen=True)
class GridConfig:
    n_R: int = 51
    n_W: int = 51
    n_S: int = 51
    n_O: int = 31          # charging action levels (incl. idle endpoint)
    n_I: int = 31          # discharging action levels
    k_R: float = 3.0       # reference window half-width [sigmas]
    k_E: float = 3.0       # enlargement half-width [sigmas]

    def __post_init__(self):
        if min(self.n_R, self.n_W, self.n_S) < 2:
            raise ValueError("need at least 2 grid points per axis")
        if self.k_R <= 0 or self.k_E <= 0:
            raise ValueError("sigma-rule widths must be positive")


@dataclass(frozen=True)
class StateGrid:
    r: np.ndarray        # (n_R,) constant across periods
    w: np.ndarray        # (N+1, n_W) per-period wind axes
    s: np.ndarray        # (N+1, n_S) per-period price axes
    w_ref: np.ndarray    # (N+1, 2) reference wind bounds
    s_ref: np.ndarray    # (N+1, 2) reference price bounds


def step_sigmas(ou: OUParams, dt: float):
    var_w, var_s, _ = _variance_terms(dt, ou)
    return math.sqrt(var_w), math.sqrt(var_s)


def build_grids(params: SystemParams, ou: OUParams, seas: SeasonalityParams,
                gcfg: GridConfig) -> StateGrid:
    """Reference windows per period plus the enlarged axes actually gridded.

    Period 0 uses its reference window directly.  For later periods the
    window is pushed one step forward from the previous reference corners
    and widened by k_E step deviations; the price corners pair high wind
    with low price (and vice versa) because the channels are negatively
    correlated.
    """
    n_periods = params.N
    dt = params.dt
    sig_w, sig_s = step_sigmas(ou, dt)
    e_w, e_s, g = mean_coefficients(dt, ou)

    t = np.arange(n_periods + 1) * dt
    mu_w = seasonal_mean(t, "wind", seas)
    mu_s = seasonal_mean(t, "price", seas)

    w_ref = np.column_stack([np.exp(mu_w - gcfg.k_R * sig_w),
                             np.exp(mu_w + gcfg.k_R * sig_w)])
    s_ref = np.column_stack([mu_s - gcfg.k_R * sig_s, mu_s + gcfg.k_R * sig_s])

    w_lo = w_ref[:, 0].copy()
    w_hi = w_ref[:, 1].copy()
    s_lo = s_ref[:, 0].copy()
    s_hi = s_ref[:, 1].copy()
    y_w = gcfg.k_R * sig_w   # deseasonalized reference corner (symmetric)
    y_s = gcfg.k_R * sig_s
    for n in range(1, n_periods + 1):
        w_lo[n] = math.exp(mu_w[n] - e_w * y_w - gcfg.k_E * sig_w)
        w_hi[n] = math.exp(mu_w[n] + e_w * y_w + gcfg.k_E * sig_w)
        s_lo[n] = mu_s[n] - e_s * y_s - g * y_w - gcfg.k_E * sig_s
        s_hi[n] = mu_s[n] + e_s * y_s + g * y_w + gcfg.k_E * sig_s

    w_axes = np.linspace(w_lo, w_hi, gcfg.n_W, axis=1)
    s_axes = np.linspace(s_lo, s_hi, gcfg.n_S, axis=1)
    r_axis = np.linspace(params.r_min, params.r_max, gcfg.n_R)
    return StateGrid(r=r_axis, w=w_axes, s=s_axes, w_ref=w_ref, s_ref=s_ref)


# ---------------------------------------------------------------------------
# Interpolation
# ---------------------------------------------------------------------------


def _locate(axis, vals):
    """Bracketing index and clamped fractional position on a sorted axis."""
    idx = np.clip(np.searchsorted(axis, vals) - 1, 0, len(axis) - 2)
    frac = (vals - axis[idx]) / (axis[idx + 1] - axis[idx])
    return idx, np.clip(frac, 0.0, 1.0)


def interpolate_value(layer, r_axis, w_axis, s_axis, x):
    """Clamped trilinear interpolation of one value layer at state(s) x.

    ``x`` is a State or arrays (r, w, s) of equal shape; coordinates beyond
    the grid hull are clamped (constant extrapolation).
    """
    if isinstance(x, State):
        r, w, s = np.asarray([x.r]), np.asarray([x.w]), np.asarray([x.s])
        scalar = True
    else:
        r, w, s = (np.asarray(v, dtype=float) for v in x)
        scalar = False
    ir, tr = _locate(r_axis, r)
    iw, tw = _locate(w_axis, w)
    is_, ts = _locate(s_axis, s)
    out = np.zeros(np.broadcast(r, w, s).shape)
    for dr, fr in ((0, 1 - tr), (1, tr)):
        for dw, fw in ((0, 1 - tw), (1, tw)):
            for ds, fs in ((0, 1 - ts), (1, ts)):
                out += fr * fw * fs * layer[ir + dr, iw + dw, is_ + ds]
    return float(out[0]) if scalar else out


def _bilinear_expect(v_layers, w_axis, s_axis, w_img, s_img, probs):
    """Cubature of the bilinear (w, s) interpolation, per storage slice.

    v_layers: (n_R, n_w_next, n_s_next); w_img/s_img: (..., L) atom images;
    returns (n_R, ...) expected next values for every storage slice.
    """
    iw, tw = _locate(w_axis, w_img)
    is_, ts = _locate(s_axis, s_img)
    shape = np.broadcast(w_img, s_img).shape
    iw = np.broadcast_to(iw, shape)
    tw = np.broadcast_to(tw, shape)
    is_ = np.broadcast_to(is_, shape)
    ts = np.broadcast_to(ts, shape)
    n_s_next = len(s_axis)
    i00 = iw * n_s_next + is_
    i01 = i00 + 1
    i10 = i00 + n_s_next
    i11 = i10 + 1
    w00 = (1 - tw) * (1 - ts)
    w01 = (1 - tw) * ts
    w10 = tw * (1 - ts)
    w11 = tw * ts
    n_r = v_layers.shape[0]
    out = np.empty((n_r,) + shape[:-1])
    for k in range(n_r):
        flat = v_layers[k].ravel()
        acc = w00 * flat[i00]
        acc += w01 * flat[i01]
        acc += w10 * flat[i10]
        acc += w11 * flat[i11]
        out[k] = (acc * probs).sum(axis=-1)
    return out


def _atom_images(n, w_vals, s_vals, ou, seas, dt, quantizer, paired):
    """Quantizer atoms pushed through the exogenous transition.

    paired=False: w_vals (n_w,), s_vals (n_s,) -> images (n_w, 1, L) and
    (n_w, n_s, L).  paired=True: equal-shape state vectors -> (m, L)."""
    e_w, e_s, g = mean_coefficients(dt, ou)
    var_w, var_s, cov = _variance_terms(dt, ou)
    s_w = math.sqrt(var_w)
    s_sd = math.sqrt(var_s)
    rho = cov / (s_w * s_sd)
    c10 = rho * s_sd
    c11 = math.sqrt(max(1.0 - rho * rho, 0.0)) * s_sd
    t_n = n * dt
    y_w = np.log(w_vals) - seasonal_mean(t_n, "wind", seas)
    mean_logw = seasonal_mean(t_n + dt, "wind", seas) + e_w * y_w
    ms_const = (seasonal_mean(t_n + dt, "price", seas)
                - e_s * seasonal_mean(t_n, "price", seas) - g * y_w)
    eps = quantizer.points
    if paired:
        mean_s = ms_const + e_s * s_vals
        w_img = np.exp(mean_logw[:, None] + s_w * eps[None, :, 0])
        s_img = mean_s[:, None] + c10 * eps[None, :, 0] + c11 * eps[None, :, 1]
    else:
        mean_s = ms_const[:, None] + e_s * s_vals[None, :]
        w_img = np.exp(mean_logw[:, None, None] + s_w * eps[None, None, :, 0])
        s_img = mean_s[:, :, None] + c10 * eps[None, None, :, 0] + c11 * eps[None, None, :, 1]
    return w_img, s_img


# ---------------------------------------------------------------------------
# Action tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActionTable:
    """Per-storage-node discretized actions with cached physics.

    The feasible set depends on the state only through r and the bounds are
    period-independent, so one table serves the whole horizon.
    """

    r_axis: np.ndarray
    modes: list          # per node: (m_k,) int arrays
    levels: list         # per node: (m_k,) float arrays
    a_O: list
    a_I: list
    r_next: list         # per node: storage temperature after the period
    ph_index: list       # per node: indices into ph_unique
    ph_unique: np.ndarray

    def actions_at(self, k):
        return (self.modes[k], self.levels[k], self.a_O[k], self.a_I[k],
                self.r_next[k], self.ph_index[k])


def build_action_table(r_axis, params: SystemParams, n_O: int, n_I: int) -> ActionTable:
    modes, levels, a_o, a_i = [], [], [], []
    for r in r_axis:
        acts = enumerate_actions(float(r), params, n_O, n_I)
        modes.append(np.array([m for m, _, _ in acts], dtype=np.int8))
        levels.append(np.array([lv for _, lv, _ in acts]))
        a_o.append(np.array([a.a_O for _, _, a in acts]))
        a_i.append(np.array([a.a_I for _, _, a in acts]))
    all_o = np.concatenate(a_o)
    all_i = np.concatenate(a_i)
    d_star = solve_shaft_speed_many(all_o, all_i, params)
    from .physical import eval_F1
    ph_all = params.n_H * eval_F1(all_i, params.mdot, params.T_air_in, d_star)
    ph_unique, inverse = np.unique(ph_all, return_inverse=True)

    r_next, ph_index = [], []
    offset = 0
    for k, r in enumerate(r_axis):
        m = len(a_o[k])
        drift = params.tes_rate * (a_o[k] - a_i[k] - params.delta_T_SG) * params.dt
        nxt = np.clip(r + drift, params.r_min, params.r_max)
        if np.any(np.abs(r + drift - nxt) > 1e-6):
            raise RuntimeError("action drives storage far outside its bounds")
        r_next.append(nxt)
        ph_index.append(inverse[offset:offset + m].copy())
        offset += m
    return ActionTable(r_axis=np.asarray(r_axis, dtype=float), modes=modes,
                       levels=levels, a_O=a_o, a_I=a_i, r_next=r_next,
                       ph_index=ph_index, ph_unique=ph_unique)


# ---------------------------------------------------------------------------
# Bellman sweep
# ---------------------------------------------------------------------------


@dataclass
class SolveResult:
    grid: StateGrid
    values: np.ndarray        # (N+1, n_R, n_W, n_S)
    policy_mode: np.ndarray   # (N, n_R, n_W, n_S) int8
    policy_level: np.ndarray  # (N, n_R, n_W, n_S)

    def value_at(self, n, x):
        return interpolate_value(self.values[n], self.grid.r, self.grid.w[n],
                                 self.grid.s[n], x)


def bellman_step(n, v_next, grid: StateGrid, actions: ActionTable,
                 quantizer: Quantizer, model: P2HModel):
    """One backward step: value and policy layers at period n.

    v_next is the (n_R, n_W, n_S) layer at period n+1 on grid slice n+1.
    """
    params = model.params
    w_pts = grid.w[n]
    s_pts = grid.s[n]
    w_img, s_img = _atom_images(n, w_pts, s_pts, model.ou, model.seas,
                                params.dt, quantizer, paired=False)
    expect = _bilinear_expect(v_next, grid.w[n + 1], grid.s[n + 1],
                              w_img, s_img, quantizer.probs)   # (n_R, n_W, n_S)

    table = cost_table(n, w_pts, actions.ph_unique, params, model.curve,
                       model.ou, model.seas, model.cost)

    n_r = len(grid.r)
    values = np.empty((n_r, len(w_pts), len(s_pts)))
    mode = np.empty((n_r, len(w_pts), len(s_pts)), dtype=np.int8)
    level = np.empty_like(values)
    for k in range(n_r):
        modes_k, levels_k, _, _, r_next_k, ph_idx_k = actions.actions_at(k)
        ir, tr = _locate(grid.r, r_next_k)
        cont = ((1.0 - tr)[:, None, None] * expect[ir]
                + tr[:, None, None] * expect[ir + 1])
        cost_k = (table.base[ph_idx_k][:, :, None]
                  + table.slope[ph_idx_k][:, :, None] * s_pts[None, None, :])
        total = cost_k + cont
        best = np.argmin(total, axis=0)
        values[k] = np.take_along_axis(total, best[None], axis=0)[0]
        mode[k] = modes_k[best]
        level[k] = levels_k[best]
    return values, mode, level


def solve(model: P2HModel, gcfg: GridConfig, quantizer: Quantizer,
          progress=None) -> SolveResult:
    """Full backward recursion from the terminal layer down to period 0."""
    params = model.params
    grid = build_grids(params, model.ou, model.seas, gcfg)
    actions = build_action_table(grid.r, params, gcfg.n_O, gcfg.n_I)

    shape = (params.N + 1, gcfg.n_R, gcfg.n_W, gcfg.n_S)
    values = np.empty(shape)
    policy_mode = np.zeros((params.N,) + shape[1:], dtype=np.int8)
    policy_level = np.zeros((params.N,) + shape[1:])

    values[params.N] = terminal_cost(grid.r, model.cost, params)[:, None, None]
    for n in range(params.N - 1, -1, -1):
        v_n, mode, level = bellman_step(n, values[n + 1], grid, actions,
                                        quantizer, model)
        values[n] = v_n
        policy_mode[n] = mode
        policy_level[n] = level
        if progress is not None:
            progress(n)
    if not np.all(np.isfinite(values)):
        raise RuntimeError("non-finite values in the solved table")
    return SolveResult(grid=grid, values=values, policy_mode=policy_mode,
                       policy_level=policy_level)


# ---------------------------------------------------------------------------
# Greedy policy evaluation at arbitrary states
# ---------------------------------------------------------------------------


def greedy_actions_batch(n, r_vals, w_vals, s_vals, result: SolveResult,
                         quantizer: Quantizer, model: P2HModel,
                         gcfg: GridConfig):
    """Re-minimized one-step actions at exact states (vectorized).

    Returns (modes, levels, a_O, a_I) arrays over the batch.  This is the
    same minimization the grid sweep performs, evaluated at off-grid states,
    so feasibility at the exact state is guaranteed.
    """
    params = model.params
    r_vals = np.asarray(r_vals, dtype=float)
    w_vals = np.asarray(w_vals, dtype=float)
    s_vals = np.asarray(s_vals, dtype=float)
    m = len(r_vals)

    acts = [enumerate_actions(float(r), params, gcfg.n_O, gcfg.n_I) for r in r_vals]
    counts = np.array([len(a) for a in acts])
    a_o = np.concatenate([[a.a_O for _, _, a in al] for al in acts])
    a_i = np.concatenate([[a.a_I for _, _, a in al] for al in acts])
    owner = np.repeat(np.arange(m), counts)
    d_star = solve_shaft_speed_many(a_o, a_i, params)
    from .physical import eval_F1
    ph_all = params.n_H * eval_F1(a_i, params.mdot, params.T_air_in, d_star)

    base, slope = cost_pairs(n, w_vals[owner], ph_all, params, model.curve,
                             model.ou, model.seas, model.cost)
    grid = result.grid
    w_img, s_img = _atom_images(n, w_vals, s_vals, model.ou, model.seas,
                                params.dt, quantizer, paired=True)
    expect = _bilinear_expect(result.values[n + 1], grid.w[n + 1], grid.s[n + 1],
                              w_img, s_img, quantizer.probs)   # (n_R, m)

    drift = params.tes_rate * (a_o - a_i - params.delta_T_SG) * params.dt
    r_next = np.clip(r_vals[owner] + drift, params.r_min, params.r_max)
    ir, tr = _locate(grid.r, r_next)
    cont = (1.0 - tr) * expect[ir, owner] + tr * expect[ir + 1, owner]
    total = base + slope * s_vals[owner] + cont

    out_mode = np.empty(m, dtype=np.int8)
    out_level = np.empty(m)
    out_ao = np.empty(m)
    out_ai = np.empty(m)
    start = 0
    for t, al in enumerate(acts):
        stop = start + counts[t]
        best = int(np.argmin(total[start:stop]))
        mode_t, level_t, act_t = al[best]
        out_mode[t] = mode_t
        out_level[t] = level_t
        out_ao[t] = act_t.a_O
        out_ai[t] = act_t.a_I
        start = stop
    return out_mode, out_level, out_ao, out_ai


def greedy_action(n, x: State, result: SolveResult, quantizer: Quantizer,
                  model: P2HModel, gcfg: GridConfig) -> Action:
    """Optimal action at the exact state, re-solving the one-step problem."""
    _, _, a_o, a_i = greedy_actions_batch(n, [x.r], [x.w], [x.s], result,
                                          quantizer, model, gcfg)
    return Action(a_O=float(a_o[0]), a_I=float(a_i[0]))
