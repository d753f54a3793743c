"""Forward simulation and Monte-Carlo policy evaluation.

Trajectories sample the exogenous pair at every Newton-Cotes node of every
period (exact conditional transitions chained within the period), so the
realized cost uses the same time quadrature as the planning model and the
comparison of policies isolates decision quality.  Noise comes from
counter-based streams keyed by (seed, trajectory, period): common random
numbers across policies by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bdp import GridConfig, SolveResult, greedy_actions_batch
from .costs import (NEWTON_COTES_WEIGHTS, psi_realized, terminal_cost)
from .exogenous import (mean_coefficients, seasonal_mean, trajectory_rng,
                        _variance_terms)
from .model import P2HModel
from .physical import (State, control_upper_bounds, eval_F1, heat_flows,
                       solve_shaft_speed_many, wind_power)
from .quantization import Quantizer


class InfeasiblePolicyError(RuntimeError):
    """A policy returned an action outside its state's feasible set."""


@dataclass
class Trajectory:
    """Realized path of one rollout; node 0 of period n is its start."""

    states: np.ndarray        # (N+1, 3) r, w, s at period starts
    a_O: np.ndarray           # (N,)
    a_I: np.ndarray           # (N,)
    modes: np.ndarray         # (N,)
    p_hthp: np.ndarray        # (N,) heat-pump draw [kW]
    w_nodes: np.ndarray       # (N, nodes) sampled wind at quadrature nodes
    s_nodes: np.ndarray       # (N, nodes) sampled price
    p_wind: np.ndarray        # (N, nodes) turbine output [kW]
    p_grid: np.ndarray        # (N, nodes) grid draw [kW]
    heat_in: np.ndarray       # (N,) storage inflow [kW]
    heat_out: np.ndarray      # (N,) storage outflow [kW]
    cost_increments: np.ndarray  # (N,) realized cost [EUR]
    terminal: float           # terminal valuation [EUR]

    @property
    def total_cost(self):
        return float(self.cost_increments.sum() + self.terminal)


class AlwaysIdlePolicy:
    """Keeps the storage untouched; the no-flexibility baseline."""

    name = "always-idle"

    def __init__(self, model: P2HModel):
        self.model = model

    def actions(self, n, r, w, s):
        params = self.model.params
        m = len(r)
        return (np.zeros(m, dtype=np.int8), np.zeros(m),
                np.full(m, params.T_SG_in), np.full(m, params.T_SG_out))


class MyopicThresholdPolicy:
    """Charges fully below the seasonal price trend, discharges above it.

    A price-only heuristic: no lookahead, clipped to feasibility (degenerate
    segments fall back to idle).
    """

    name = "myopic-threshold"

    def __init__(self, model: P2HModel):
        self.model = model

    def actions(self, n, r, w, s):
        params = self.model.params
        mu_s = seasonal_mean(n * params.dt, "price", self.model.seas)
        a_o_up, a_i_up = control_upper_bounds(np.asarray(r), params)
        m = len(r)
        modes = np.zeros(m, dtype=np.int8)
        levels = np.zeros(m)
        a_o = np.full(m, params.T_SG_in)
        a_i = np.full(m, params.T_SG_out)
        cheap = np.asarray(s) < mu_s
        rich = np.asarray(s) > mu_s
        can_charge = (a_o_up - params.T_SG_in) > 1e-9
        can_discharge = (a_i_up - params.T_SG_out) > 1e-9
        charging = cheap & can_charge
        discharging = rich & can_discharge
        modes[charging] = 1
        levels[charging] = 1.0
        a_o[charging] = a_o_up[charging]
        modes[discharging] = -1
        levels[discharging] = 1.0
        a_i[discharging] = a_i_up[discharging]
        return modes, levels, a_o, a_i


class BDPPolicy:
    """Greedy one-step re-minimization against the solved value tables."""

    name = "bdp-greedy"

    def __init__(self, result: SolveResult, quantizer: Quantizer,
                 model: P2HModel, gcfg: GridConfig):
        self.result = result
        self.quantizer = quantizer
        self.model = model
        self.gcfg = gcfg

    def actions(self, n, r, w, s):
        return greedy_actions_batch(n, r, w, s, self.result, self.quantizer,
                                    self.model, self.gcfg)


class QPolicy:
    """Greedy action of the trained per-period Q networks."""

    name = "q-greedy"

    def __init__(self, train_result):
        self.nets = train_result.nets
        self.ctx = train_result.ctx

    def actions(self, n, r, w, s):
        from .physical import action_from_levels
        from .qlearn import min_q_over_actions

        _, best = min_q_over_actions(n, self.nets, r, w, s, self.ctx)
        modes = self.ctx.cand_modes[best]
        levels = self.ctx.cand_levels[best]
        m = len(r)
        a_o = np.empty(m)
        a_i = np.empty(m)
        for t in range(m):
            act = action_from_levels(int(modes[t]), float(levels[t]),
                                     float(r[t]), self.ctx.model.params)
            a_o[t] = act.a_O
            a_i[t] = act.a_I
        return modes.astype(np.int8), levels, a_o, a_i


def _node_noise(seed, trajectories, period, n_sub):
    """(m, n_sub, 2) standard normals from per-trajectory keyed streams."""
    out = np.empty((len(trajectories), n_sub, 2))
    for row, traj in enumerate(trajectories):
        out[row] = trajectory_rng(seed, int(traj), period).standard_normal((n_sub, 2))
    return out


def simulate(policy, model: P2HModel, x0: State, n_traj: int, seed: int,
             trajectory_ids=None):
    """Roll out ``n_traj`` trajectories from x0 under the policy.

    Returns a list of Trajectory records.  Feasibility of every emitted
    action is asserted; a violation indicates a solver bug, not bad luck.
    """
    params = model.params
    weights = NEWTON_COTES_WEIGHTS[model.cost.newton_cotes_degree]
    n_nodes = len(weights)
    n_sub = n_nodes - 1
    tau = params.dt / n_sub
    e_w, e_s, g = mean_coefficients(tau, model.ou)
    var_w, var_s, cov = _variance_terms(tau, model.ou)
    sig_w = math.sqrt(var_w)
    sig_s = math.sqrt(var_s)
    rho = cov / (sig_w * sig_s)
    c10 = rho * sig_s
    c11 = math.sqrt(max(1 - rho * rho, 0.0)) * sig_s

    ids = np.arange(n_traj) if trajectory_ids is None else np.asarray(trajectory_ids)
    m = len(ids)
    states = np.empty((params.N + 1, m, 3))
    states[0] = (x0.r, x0.w, x0.s)
    a_o_hist = np.empty((params.N, m))
    a_i_hist = np.empty((params.N, m))
    mode_hist = np.empty((params.N, m), dtype=np.int8)
    ph_hist = np.empty((params.N, m))
    w_nodes = np.empty((params.N, m, n_nodes))
    s_nodes = np.empty((params.N, m, n_nodes))
    cost_inc = np.empty((params.N, m))

    r = np.full(m, x0.r)
    w = np.full(m, x0.w)
    s = np.full(m, x0.s)
    for n in range(params.N):
        modes, levels, a_o, a_i = policy.actions(n, r, w, s)
        a_o_up, a_i_up = control_upper_bounds(r, params)
        if np.any(a_o > a_o_up + 1e-9) or np.any(a_i > a_i_up + 1e-9) or \
           np.any(a_o < params.T_SG_in - 1e-9) or np.any(a_i < params.T_SG_out - 1e-9):
            raise InfeasiblePolicyError(
                f"policy {policy.name!r} emitted an infeasible action at period {n}")
        d_star = solve_shaft_speed_many(a_o, a_i, params)
        p_h = params.n_H * eval_F1(a_i, params.mdot, params.T_air_in, d_star)

        w_nodes[n, :, 0] = w
        s_nodes[n, :, 0] = s
        eps = _node_noise(seed, ids, n, n_sub)
        t_base = n * params.dt
        w_q, s_q = w, s
        for q in range(1, n_nodes):
            t_prev = t_base + (q - 1) * tau
            t_next = t_base + q * tau
            y_w = np.log(w_q) - seasonal_mean(t_prev, "wind", model.seas)
            y_s = s_q - seasonal_mean(t_prev, "price", model.seas)
            mean_logw = seasonal_mean(t_next, "wind", model.seas) + e_w * y_w
            mean_s = seasonal_mean(t_next, "price", model.seas) + e_s * y_s - g * y_w
            w_q = np.exp(mean_logw + sig_w * eps[:, q - 1, 0])
            s_q = mean_s + c10 * eps[:, q - 1, 0] + c11 * eps[:, q - 1, 1]
            w_nodes[n, :, q] = w_q
            s_nodes[n, :, q] = s_q

        psi = psi_realized(p_h[:, None], w_nodes[n], s_nodes[n],
                           model.curve, model.cost)
        cost_inc[n] = params.dt * psi @ weights

        a_o_hist[n] = a_o
        a_i_hist[n] = a_i
        mode_hist[n] = modes
        ph_hist[n] = p_h
        r = np.clip(r + params.tes_rate * (a_o - a_i - params.delta_T_SG) * params.dt,
                    params.r_min, params.r_max)
        w, s = w_q, s_q
        states[n + 1] = np.column_stack([r, w, s])

    terminal = terminal_cost(r, model.cost, params)
    k_flow = params.n_H * params.mdot * params.c_F
    out = []
    for t in range(m):
        p_wind = wind_power(w_nodes[:, t, :], model.curve)
        out.append(Trajectory(
            states=states[:, t, :].copy(),
            a_O=a_o_hist[:, t].copy(), a_I=a_i_hist[:, t].copy(),
            modes=mode_hist[:, t].copy(), p_hthp=ph_hist[:, t].copy(),
            w_nodes=w_nodes[:, t, :].copy(), s_nodes=s_nodes[:, t, :].copy(),
            p_wind=p_wind,
            p_grid=ph_hist[:, t].copy()[:, None] - p_wind,
            heat_in=k_flow * (a_o_hist[:, t] - params.T_SG_in),
            heat_out=k_flow * (params.T_SG_out - a_i_hist[:, t]),
            cost_increments=cost_inc[:, t].copy(),
            terminal=float(np.atleast_1d(terminal)[t]),
        ))
    return out


@dataclass(frozen=True)
class EvalEntry:
    policy: str
    mean_cost: float
    std_error: float
    n_trajectories: int
    totals: np.ndarray   # per-trajectory realized costs, aligned across policies


@dataclass(frozen=True)
class EvalReport:
    entries: tuple
    seed: int

    def by_name(self, name):
        for e in self.entries:
            if e.policy == name:
                return e
        raise KeyError(name)

    def paired_difference(self, name_a, name_b):
        """(mean, std error) of cost_a - cost_b under common random numbers."""
        diff = self.by_name(name_a).totals - self.by_name(name_b).totals
        return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(len(diff)))


def evaluate_policies(policies, model: P2HModel, x0: State, n_traj: int,
                      seed: int) -> EvalReport:
    """Common-random-number comparison: the same noise streams drive every
    policy, so pairwise cost differences isolate the policies."""
    if len(policies) < 2:
        raise ValueError("need at least two policies to compare")
    entries = []
    for policy in policies:
        trajs = simulate(policy, model, x0, n_traj, seed)
        totals = np.array([t.total_cost for t in trajs])
        entries.append(EvalEntry(policy=policy.name,
                                 mean_cost=float(totals.mean()),
                                 std_error=float(totals.std(ddof=1) / math.sqrt(n_traj)),
                                 n_trajectories=n_traj, totals=totals))
    return EvalReport(entries=tuple(entries), seed=seed)


def baseline_policies(model: P2HModel):
    return {"always-idle": AlwaysIdlePolicy(model),
            "myopic-threshold": MyopicThresholdPolicy(model)}
