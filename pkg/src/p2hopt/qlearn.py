"""Double Q-learning with per-period neural state-action values.

One small feed-forward network per period maps the normalized state and
action encoding (storage temperature, log wind, price, charging level,
discharging level) to the expected cost-to-go.  Training rolls episodes
forward with an epsilon-greedy selection policy, stores transitions in
per-period replay buffers, and updates each period's parameters on batches
drawn from its buffer; bootstrap targets come from a delayed copy of the
next period's network (double Q-learning), with the terminal valuation
closing the recursion.

Targets and costs are scaled to keep the regression near unit magnitude;
reported values are rescaled back to EUR.  All gradients are analytic
(reverse mode) and checked against finite differences in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bdp import GridConfig, step_sigmas
from .costs import cost_pairs, terminal_cost
from .exogenous import seasonal_mean, stationary_moments
from .model import P2HModel
from .physical import (Action, State, action_from_levels,
                       control_upper_bounds, enumerate_actions, eval_F1,
                       solve_shaft_speed)


class DivergenceError(RuntimeError):
    """Non-finite temporal difference: training blew up."""


@dataclass(frozen=True)
class TrainConfig:
    k_max: int = 10_000          # episodes
    batch_size: int = 128
    learning_rate: float = 0.001
    eps0: float = 1.0            # exploration, linearly decayed to zero
    delayed_interval: int = 50   # episodes between delayed-copy refreshes
    buffer_capacity: int = 10_000
    hidden: int = 64
    cost_scale: float = 1000.0   # EUR per network output unit
    seed: int = 0

    def __post_init__(self):
        if min(self.k_max, self.batch_size, self.delayed_interval,
               self.buffer_capacity, self.hidden) < 0:
            raise ValueError("training sizes must be non-negative")
        if not 0.0 <= self.eps0 <= 1.0:
            raise ValueError("eps0 must lie in [0, 1]")
        if self.learning_rate <= 0 or self.cost_scale <= 0:
            raise ValueError("learning rate and cost scale must be positive")

    def epsilon(self, k: int) -> float:
        if self.k_max == 0:
            return 0.0
        return self.eps0 * max(0.0, 1.0 - k / self.k_max)


# ---------------------------------------------------------------------------
# Plain feed-forward network with analytic gradients
# ---------------------------------------------------------------------------


@dataclass
class MLP:
    """Rectifier network; weights[l] has shape (out, in)."""

    weights: list
    biases: list

    def copy(self):
        return MLP(weights=[w.copy() for w in self.weights],
                   biases=[b.copy() for b in self.biases])


def init_mlp(sizes, rng) -> MLP:
    """Uniform +-sqrt(6/(fan_in+fan_out)) initialization per layer."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLP(weights=weights, biases=biases)


def mlp_forward(net: MLP, x):
    """Outputs (B,) plus the activation cache for the backward pass."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    cache = [x]
    h = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ w.T + b
        h = np.maximum(z, 0.0)
        cache.append(z)
        cache.append(h)
    out = h @ net.weights[-1].T + net.biases[-1]
    return out[:, 0], cache


def mlp_backward(net: MLP, cache, dout):
    """Gradients of sum_j dout_j * out_j with respect to all parameters."""
    dout = np.asarray(dout, dtype=float)[:, None]
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    h_last = cache[-1]
    grads_w[-1] = dout.T @ h_last
    grads_b[-1] = dout.sum(axis=0)
    dh = dout @ net.weights[-1]
    for layer in range(len(net.weights) - 2, -1, -1):
        z = cache[1 + 2 * layer]
        h_prev = cache[2 * layer]
        dz = dh * (z > 0)
        grads_w[layer] = dz.T @ h_prev
        grads_b[layer] = dz.sum(axis=0)
        if layer > 0:
            dh = dz @ net.weights[layer]
    return grads_w, grads_b


# ---------------------------------------------------------------------------
# State/action encoding and candidate actions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QContext:
    """Everything the Q machinery needs besides the parameter vectors."""

    model: P2HModel
    n_O: int = 31
    n_I: int = 31
    k_R: float = 3.0
    cost_scale: float = 1000.0
    hidden: int = 64
    # candidate (mode, level) slots: idle, then charging, then discharging
    cand_modes: np.ndarray = field(init=False)
    cand_levels: np.ndarray = field(init=False)

    def __post_init__(self):
        modes = [0]
        levels = [0.0]
        for lev in np.linspace(0.0, 1.0, self.n_O)[1:]:
            modes.append(1)
            levels.append(float(lev))
        for lev in np.linspace(0.0, 1.0, self.n_I)[1:]:
            modes.append(-1)
            levels.append(float(lev))
        object.__setattr__(self, "cand_modes", np.array(modes, dtype=np.int8))
        object.__setattr__(self, "cand_levels", np.array(levels))

    @property
    def layer_sizes(self):
        return (5, self.hidden, self.hidden, 1)

    def encode(self, n, r, w, s, charge_level, discharge_level):
        """Normalized 5-channel network input; broadcasts over arrays."""
        params = self.model.params
        t_n = n * params.dt
        sig_w, sig_s = step_sigmas(self.model.ou, params.dt)
        r_n = (np.asarray(r, float) - params.r_min) / (params.r_max - params.r_min)
        w_n = (np.log(w) - seasonal_mean(t_n, "wind", self.model.seas)) / (self.k_R * sig_w)
        s_n = (np.asarray(s, float) - seasonal_mean(t_n, "price", self.model.seas)) / (self.k_R * sig_s)
        parts = np.broadcast_arrays(r_n, w_n, s_n,
                                    np.asarray(charge_level, float),
                                    np.asarray(discharge_level, float))
        return np.stack(parts, axis=-1)

    def candidate_inputs(self, n, r, w, s):
        """(B, n_cand, 5) inputs and (B, n_cand) feasibility mask.

        Candidate slots whose segment is collapsed at the given storage
        temperature duplicate the idle action and are masked out.
        """
        r = np.atleast_1d(np.asarray(r, float))
        w = np.atleast_1d(np.asarray(w, float))
        s = np.atleast_1d(np.asarray(s, float))
        a_o_up, a_i_up = control_upper_bounds(r, self.model.params)
        has_charge = (a_o_up - self.model.params.T_SG_in) > 1e-9
        has_discharge = (a_i_up - self.model.params.T_SG_out) > 1e-9
        mask = np.ones((len(r), len(self.cand_modes)), dtype=bool)
        mask[:, self.cand_modes == 1] = has_charge[:, None]
        mask[:, self.cand_modes == -1] = has_discharge[:, None]
        charge_lv = np.where(self.cand_modes == 1, self.cand_levels, 0.0)
        discharge_lv = np.where(self.cand_modes == -1, self.cand_levels, 0.0)
        x = self.encode(n, r[:, None], w[:, None], s[:, None],
                        charge_lv[None, :], discharge_lv[None, :])
        return x, mask

    def action_encoding(self, mode, level):
        return (level if mode > 0 else 0.0, level if mode < 0 else 0.0)


def q_forward(n, x: State, a_encoding, net: MLP, ctx: QContext) -> float:
    """Q value [EUR] of an encoded action at one state."""
    charge_lv, discharge_lv = a_encoding
    inp = ctx.encode(n, x.r, x.w, x.s, charge_lv, discharge_lv)
    out, _ = mlp_forward(net, inp[None, :])
    return float(out[0]) * ctx.cost_scale


def q_gradient(n, x: State, a_encoding, net: MLP, ctx: QContext):
    """Analytic parameter gradient of the (scaled) network output."""
    charge_lv, discharge_lv = a_encoding
    inp = ctx.encode(n, x.r, x.w, x.s, charge_lv, discharge_lv)
    _, cache = mlp_forward(net, inp[None, :])
    return mlp_backward(net, cache, np.ones(1))


def min_q_over_actions(n, nets, r, w, s, ctx: QContext):
    """min_a Q(x, a) over the candidate set, batched; returns (values, argmin).

    Values are in network units.  Ties resolve to the earliest slot, which
    is idle first, then increasing charge, then increasing discharge.
    """
    x, mask = ctx.candidate_inputs(n, r, w, s)
    b, n_cand, _ = x.shape
    out, _ = mlp_forward(nets[n], x.reshape(b * n_cand, -1))
    q = out.reshape(b, n_cand)
    q = np.where(mask, q, np.inf)
    best = np.argmin(q, axis=1)
    return q[np.arange(b), best], best


def epsilon_greedy(n, x: State, nets, eps: float, rng, ctx: QContext):
    """Explore uniformly over the discretized feasible set with probability
    eps, else take the greedy action.  Returns (Action, mode, level)."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    if rng.uniform() < eps:
        acts = enumerate_actions(x.r, ctx.model.params, ctx.n_O, ctx.n_I)
        mode, level, act = acts[rng.integers(0, len(acts))]
        return act, mode, level
    _, best = min_q_over_actions(n, nets, [x.r], [x.w], [x.s], ctx)
    mode = int(ctx.cand_modes[best[0]])
    level = float(ctx.cand_levels[best[0]])
    return action_from_levels(mode, level, x.r, ctx.model.params), mode, level


def q_value_and_policy(n, x: State, nets, ctx: QContext):
    """(min-cost value [EUR], greedy Action) at one state."""
    vals, best = min_q_over_actions(n, nets, [x.r], [x.w], [x.s], ctx)
    act = action_from_levels(int(ctx.cand_modes[best[0]]),
                             float(ctx.cand_levels[best[0]]), x.r, ctx.model.params)
    return float(vals[0]) * ctx.cost_scale, act


# ---------------------------------------------------------------------------
# Replay buffer
# ---------------------------------------------------------------------------


class ReplayBuffer:
    """Fixed-capacity FIFO ring of (x, action levels, x', scaled cost)."""

    FIELDS = 9  # r, w, s, charge_lv, discharge_lv, r', w', s', cost

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.data = np.empty((capacity, self.FIELDS))
        self.size = 0
        self.head = 0

    def push(self, row):
        self.data[self.head] = row
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, m: int, rng):
        idx = rng.integers(0, self.size, size=m)
        return self.data[idx]


# ---------------------------------------------------------------------------
# Updates and the training loop
# ---------------------------------------------------------------------------


def double_q_update(n, batch, nets, delayed, alpha, ctx: QContext):
    """One batch update of period n's parameters.

    Bootstrap targets evaluate the delayed copy of period n+1's network;
    the terminal period bootstraps on the terminal cost instead.  The step
    is gradient descent on the half-squared temporal difference with the
    target frozen: theta + alpha * mean(delta * grad Q).  Returns the new
    MLP and the batch mean |delta| (network units).
    """
    params = ctx.model.params
    r, w, s = batch[:, 0], batch[:, 1], batch[:, 2]
    charge_lv, discharge_lv = batch[:, 3], batch[:, 4]
    r2, w2, s2 = batch[:, 5], batch[:, 6], batch[:, 7]
    cost_scaled = batch[:, 8]
    m = len(batch)

    if n < params.N - 1:
        next_v, _ = min_q_over_actions(n + 1, delayed, r2, w2, s2, ctx)
    else:
        next_v = terminal_cost(r2, ctx.model.cost, params) / ctx.cost_scale

    x_in = ctx.encode(n, r, w, s, charge_lv, discharge_lv)
    q_cur, cache = mlp_forward(nets[n], x_in)
    delta = cost_scaled + next_v - q_cur
    if not np.all(np.isfinite(delta)):
        raise DivergenceError(
            f"non-finite temporal difference at period {n}: "
            f"|q|max={np.abs(q_cur).max():.3e}, |target|max="
            f"{np.abs(cost_scaled + next_v).max():.3e}")
    grads_w, grads_b = mlp_backward(nets[n], cache, delta)
    new = nets[n].copy()
    for layer in range(len(new.weights)):
        new.weights[layer] += (alpha / m) * grads_w[layer]
        new.biases[layer] += (alpha / m) * grads_b[layer]
    return new, float(np.mean(np.abs(delta)))


def _initial_state(rng, ctx: QContext) -> State:
    params = ctx.model.params
    r0 = rng.uniform(params.r_min, params.r_max)
    st = stationary_moments(ctx.model.ou)
    y = st.chol @ rng.standard_normal(2)
    w0 = math.exp(seasonal_mean(0.0, "wind", ctx.model.seas) + y[0])
    s0 = seasonal_mean(0.0, "price", ctx.model.seas) + y[1]
    return State(r=float(r0), w=float(w0), s=float(s0))


def initial_networks(cfg: TrainConfig, ctx: QContext, rng):
    """Seeded per-period networks with a horizon-proportional warm start.

    The final bias of period n's network is set to a crude cost-to-go
    estimate (idle running cost at the initial trend state times the
    remaining periods, plus the average terminal valuation), so gradient
    updates refine the shape of the surface instead of first lifting its
    mean through many small steps.
    """
    from .physical import idle_action

    params = ctx.model.params
    nets = [init_mlp(ctx.layer_sizes, rng) for _ in range(params.N)]
    trend = State(r=0.5 * (params.r_min + params.r_max),
                  w=math.exp(seasonal_mean(0.0, "wind", ctx.model.seas)),
                  s=seasonal_mean(0.0, "price", ctx.model.seas))
    c_idle = _transition_cost(0, trend, idle_action(params), ctx)
    g_mean = float(np.mean(terminal_cost(
        np.linspace(params.r_min, params.r_max, 65), ctx.model.cost, params)))
    for n, net in enumerate(nets):
        net.biases[-1][0] = ((params.N - n) * c_idle + g_mean) / ctx.cost_scale
    return nets


def _transition_cost(n, x: State, act: Action, ctx: QContext) -> float:
    params = ctx.model.params
    d_star = solve_shaft_speed(act.a_O, act.a_I, params)
    p_h = params.n_H * eval_F1(act.a_I, params.mdot, params.T_air_in, d_star)
    base, slope = cost_pairs(n, np.array([x.w]), np.array([p_h]), params,
                             ctx.model.curve, ctx.model.ou, ctx.model.seas,
                             ctx.model.cost)
    return float(base[0] + slope[0] * x.s)


@dataclass
class TrainResult:
    nets: list
    delayed: list
    ctx: QContext
    metrics: list   # per episode: (episode, epsilon, mean |delta| EUR, cost EUR)


def train(cfg: TrainConfig, model: P2HModel, n_O: int = 31, n_I: int = 31,
          k_R: float = 3.0, metrics_path=None) -> TrainResult:
    """Algorithmic loop: one trajectory per episode, per-period batch updates."""
    from .exogenous import step_ws

    ctx = QContext(model=model, n_O=n_O, n_I=n_I, k_R=k_R,
                   cost_scale=cfg.cost_scale, hidden=cfg.hidden)
    params = model.params
    rng = np.random.default_rng(cfg.seed)
    nets = initial_networks(cfg, ctx, rng)
    delayed = [net.copy() for net in nets]
    buffers = [ReplayBuffer(cfg.buffer_capacity) for _ in range(params.N)]
    metrics = []

    for k in range(cfg.k_max):
        eps = cfg.epsilon(k)
        x = _initial_state(rng, ctx)
        abs_deltas = []
        realized = 0.0
        for n in range(params.N):
            act, mode, level = epsilon_greedy(n, x, nets, eps, rng, ctx)
            cost = _transition_cost(n, x, act, ctx)
            realized += cost
            drift = params.tes_rate * (act.a_O - act.a_I - params.delta_T_SG) * params.dt
            r_next = min(max(x.r + drift, params.r_min), params.r_max)
            w_next, s_next = step_ws(n, x.w, x.s, rng.standard_normal(2),
                                     model.ou, model.seas, params.dt)
            charge_lv, discharge_lv = ctx.action_encoding(mode, level)
            buffers[n].push((x.r, x.w, x.s, charge_lv, discharge_lv,
                             r_next, w_next, s_next, cost / cfg.cost_scale))
            batch = buffers[n].sample(cfg.batch_size, rng)
            nets[n], abs_delta = double_q_update(n, batch, nets, delayed,
                                                 cfg.learning_rate, ctx)
            abs_deltas.append(abs_delta)
            x = State(r=r_next, w=w_next, s=s_next)
        realized += terminal_cost(x.r, model.cost, params)
        metrics.append((k, eps, float(np.mean(abs_deltas)) * cfg.cost_scale,
                        float(realized)))
        if (k + 1) % cfg.delayed_interval == 0:
            delayed = [net.copy() for net in nets]
    if metrics_path is not None:
        import csv
        with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "epsilon", "mean_abs_delta_eur", "episode_cost_eur"])
            for row in metrics:
                writer.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.6f}", f"{row[3]:.6f}"])
    return TrainResult(nets=nets, delayed=delayed, ctx=ctx, metrics=metrics)


# ---------------------------------------------------------------------------
# Temporal-difference value learning (used by the test suite to validate the
# shared update machinery on small instances; not a user-facing solver)
# ---------------------------------------------------------------------------


def td_value_update(n, batch_states, batch_costs, batch_next, v_nets, alpha,
                    ctx: QContext, terminal=False):
    """One TD(0) update of a per-period state-value network."""
    x_in = ctx.encode(n, batch_states[:, 0], batch_states[:, 1], batch_states[:, 2],
                      0.0, 0.0)[..., :3]
    v_cur, cache = mlp_forward(v_nets[n], x_in)
    if terminal:
        next_v = terminal_cost(batch_next[:, 0], ctx.model.cost,
                               ctx.model.params) / ctx.cost_scale
    else:
        x_next = ctx.encode(n + 1, batch_next[:, 0], batch_next[:, 1],
                            batch_next[:, 2], 0.0, 0.0)[..., :3]
        next_v, _ = mlp_forward(v_nets[n + 1], x_next)
    delta = batch_costs + next_v - v_cur
    if not np.all(np.isfinite(delta)):
        raise DivergenceError("non-finite TD residual")
    grads_w, grads_b = mlp_backward(v_nets[n], cache, delta)
    new = v_nets[n].copy()
    for layer in range(len(new.weights)):
        new.weights[layer] += (alpha / len(batch_costs)) * grads_w[layer]
        new.biases[layer] += (alpha / len(batch_costs)) * grads_b[layer]
    return new
