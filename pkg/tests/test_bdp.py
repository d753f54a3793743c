"""Solver tests: grids, interpolation, and the Bellman sweep against an
independent brute-force evaluation of the same quantized, interpolated
decision process."""

import math

import numpy as np
import pytest

from p2hopt.bdp import (GridConfig, SolveResult, build_action_table,
                        build_grids, greedy_action, greedy_actions_batch,
                        interpolate_value, solve, step_sigmas)
from p2hopt.costs import CostParams, running_cost, terminal_cost
from p2hopt.exogenous import OUParams, SeasonalityParams, seasonal_mean, step_ws
from p2hopt.model import P2HModel
from p2hopt.physical import (Action, State, SystemParams, action_from_levels,
                             enumerate_actions, feasible_bounds)
from p2hopt.quantization import bundled_quantizer, lloyd_generate

MICRO_PARAMS = SystemParams(N=3, dt=1.0)
MICRO_MODEL = P2HModel(params=MICRO_PARAMS)
MICRO_GRID = GridConfig(n_R=3, n_W=3, n_S=3, n_O=2, n_I=2)


@pytest.fixture(scope="module")
def micro_quantizer():
    return lloyd_generate(10, 2_000, seed=21, max_iter=60)


# ---------------------------------------------------------------------------
# Independent oracle: plain scalar evaluation of the discretized MDP
# ---------------------------------------------------------------------------


def oracle_interp(layer, axes, point):
    """Straightforward clamped trilinear interpolation (scalar, no sharing
    with the production code path)."""
    weights = []
    idxs = []
    for axis, val in zip(axes, point):
        val = min(max(val, axis[0]), axis[-1])
        j = int(np.searchsorted(axis, val))
        j = min(max(j, 1), len(axis) - 1)
        lo, hi = axis[j - 1], axis[j]
        t = (val - lo) / (hi - lo)
        idxs.append((j - 1, j))
        weights.append((1.0 - t, t))
    total = 0.0
    for a in range(2):
        for b in range(2):
            for c in range(2):
                total += (weights[0][a] * weights[1][b] * weights[2][c]
                          * layer[idxs[0][a], idxs[1][b], idxs[2][c]])
    return total


class OracleDP:
    """Memoized tree recursion over (period, grid node) of the finite MDP
    induced by quantized noise plus grid interpolation."""

    def __init__(self, model, gcfg, quantizer, use_memo=True):
        self.model = model
        self.gcfg = gcfg
        self.q = quantizer
        self.grid = build_grids(model.params, model.ou, model.seas, gcfg)
        self.memo = {} if use_memo else None

    def axes(self, n):
        return (self.grid.r, self.grid.w[n], self.grid.s[n])

    def node_state(self, n, idx):
        r_ax, w_ax, s_ax = self.axes(n)
        return State(r=float(r_ax[idx[0]]), w=float(w_ax[idx[1]]),
                     s=float(s_ax[idx[2]]))

    def value(self, n, idx):
        key = (n, idx)
        if self.memo is not None and key in self.memo:
            return self.memo[key]
        params = self.model.params
        x = self.node_state(n, idx)
        if n == params.N:
            val = terminal_cost(x, self.model.cost, params)
        else:
            best = math.inf
            for _, _, act in enumerate_actions(x.r, params, self.gcfg.n_O, self.gcfg.n_I):
                c = running_cost(n, x, act, params, self.model.curve,
                                 self.model.ou, self.model.seas, self.model.cost)
                drift = params.tes_rate * (act.a_O - act.a_I - params.delta_T_SG) * params.dt
                r_next = min(max(x.r + drift, params.r_min), params.r_max)
                cont = 0.0
                for eps, p in zip(self.q.points, self.q.probs):
                    w_next, s_next = step_ws(n, x.w, x.s, eps, self.model.ou,
                                             self.model.seas, params.dt)
                    cont += p * self.next_value_interp(n + 1, (r_next, w_next, s_next))
                best = min(best, c + cont)
            val = best
        if self.memo is not None:
            self.memo[key] = val
        return val

    def next_value_interp(self, n, point):
        r_ax, w_ax, s_ax = self.axes(n)
        layer = np.empty((len(r_ax), len(w_ax), len(s_ax)))
        # interpolation touches at most 8 nodes; evaluate only those
        point_cl = [min(max(v, ax[0]), ax[-1]) for v, ax in zip(point, (r_ax, w_ax, s_ax))]
        brackets = []
        for ax, v in zip((r_ax, w_ax, s_ax), point_cl):
            j = int(np.searchsorted(ax, v))
            j = min(max(j, 1), len(ax) - 1)
            brackets.append((j - 1, j))
        layer.fill(np.nan)
        for a in brackets[0]:
            for b in brackets[1]:
                for c in brackets[2]:
                    layer[a, b, c] = self.value(n, (a, b, c))
        return oracle_interp(layer, (r_ax, w_ax, s_ax), point)


class TestGrids:
    def test_flat_seasonality_gives_identical_axes(self, flat_seas, ou):
        params = SystemParams(N=8)
        grid = build_grids(params, ou, flat_seas, GridConfig(n_R=5, n_W=7, n_S=7))
        for n in range(1, 8):
            np.testing.assert_allclose(grid.w[n], grid.w[1], rtol=1e-14)
            np.testing.assert_allclose(grid.s[n], grid.s[1], rtol=1e-14)

    def test_default_grid_size(self, ou, seas):
        params = SystemParams(N=4)
        grid = build_grids(params, ou, seas, GridConfig())
        assert grid.r.shape == (51,)
        assert grid.w.shape == (5, 51)
        assert grid.s.shape == (5, 51)
        assert grid.r.shape[0] * grid.w.shape[1] * grid.s.shape[1] == 51**3

    def test_reference_window_uses_sigma_rule(self, ou, seas):
        params = SystemParams(N=4)
        gcfg = GridConfig(n_R=5, n_W=5, n_S=5)
        grid = build_grids(params, ou, seas, gcfg)
        sig_w, sig_s = step_sigmas(ou, params.dt)
        for n in range(5):
            mu_w = seasonal_mean(n * params.dt, "wind", seas)
            mu_s = seasonal_mean(n * params.dt, "price", seas)
            assert grid.w_ref[n, 0] == pytest.approx(math.exp(mu_w - 3 * sig_w))
            assert grid.w_ref[n, 1] == pytest.approx(math.exp(mu_w + 3 * sig_w))
            assert grid.s_ref[n, 1] == pytest.approx(mu_s + 3 * sig_s)

    def test_enlarged_contains_reference(self, ou, seas):
        params = SystemParams(N=12)
        grid = build_grids(params, ou, seas, GridConfig(n_R=5, n_W=5, n_S=5))
        for n in range(1, 13):
            assert grid.w[n][0] < grid.w_ref[n, 0]
            assert grid.w[n][-1] > grid.w_ref[n, 1]
            assert grid.s[n][0] < grid.s_ref[n, 0]
            assert grid.s[n][-1] > grid.s_ref[n, 1]

    def test_period_zero_is_reference(self, ou, seas):
        params = SystemParams(N=4)
        grid = build_grids(params, ou, seas, GridConfig(n_R=5, n_W=5, n_S=5))
        assert grid.w[0][0] == pytest.approx(grid.w_ref[0, 0])
        assert grid.w[0][-1] == pytest.approx(grid.w_ref[0, 1])


class TestInterpolation:
    def test_node_values_exact(self, rng):
        layer = rng.standard_normal((4, 5, 6))
        axes = (np.linspace(0, 1, 4), np.linspace(2, 3, 5), np.linspace(-1, 1, 6))
        for _ in range(20):
            i, j, k = rng.integers(0, 4), rng.integers(0, 5), rng.integers(0, 6)
            x = State(r=axes[0][i], w=axes[1][j], s=axes[2][k])
            assert interpolate_value(layer, *axes, x) == pytest.approx(layer[i, j, k], rel=1e-14)

    def test_trilinear_exact_on_affine(self, rng):
        axes = (np.linspace(0, 1, 4), np.linspace(2, 3, 5), np.linspace(-1, 1, 6))
        rr, ww, ss = np.meshgrid(*axes, indexing="ij")
        layer = 2.0 * rr - 3.0 * ww + 0.5 * ss + 7.0
        for _ in range(30):
            r = rng.uniform(0, 1)
            w = rng.uniform(2, 3)
            s = rng.uniform(-1, 1)
            val = interpolate_value(layer, *axes, State(r=r, w=w, s=s))
            assert val == pytest.approx(2 * r - 3 * w + 0.5 * s + 7, rel=1e-12)

    def test_clamped_extrapolation(self):
        axes = (np.linspace(0, 1, 3), np.linspace(0, 1, 3), np.linspace(0, 1, 3))
        layer = np.arange(27, dtype=float).reshape(3, 3, 3)
        inside = interpolate_value(layer, *axes, State(r=0.5, w=1.0, s=0.5))
        beyond = interpolate_value(layer, *axes, State(r=0.5, w=4.0, s=0.5))
        assert beyond == pytest.approx(inside, rel=1e-14)


class TestBellman:
    def test_constant_propagation(self, monkeypatch, micro_quantizer):
        """Zero running cost and constant terminal cost: V_n is constant."""
        import p2hopt.bdp as bdp_mod
        from p2hopt.costs import CostTable

        def zero_cost(n, w_pts, ph, *args, **kwargs):
            ph = np.atleast_1d(ph)
            return CostTable(base=np.zeros((len(ph), len(w_pts))),
                             slope=np.zeros((len(ph), len(w_pts))))

        monkeypatch.setattr(bdp_mod, "cost_table", zero_cost)
        monkeypatch.setattr(bdp_mod, "terminal_cost",
                            lambda r, cost, params: np.full_like(np.asarray(r, float), 123.0))
        res = solve(MICRO_MODEL, MICRO_GRID, micro_quantizer)
        np.testing.assert_allclose(res.values, 123.0, atol=1e-9)

    def test_one_period_unrolls(self, micro_quantizer):
        params = SystemParams(N=1)
        model = P2HModel(params=params)
        res = solve(model, MICRO_GRID, micro_quantizer)
        x = State(r=float(res.grid.r[1]), w=float(res.grid.w[0][1]),
                  s=float(res.grid.s[0][1]))
        best = math.inf
        for _, _, act in enumerate_actions(x.r, params, 2, 2):
            c = running_cost(0, x, act, params, model.curve, model.ou,
                             model.seas, model.cost)
            drift = params.tes_rate * (act.a_O - act.a_I - params.delta_T_SG) * params.dt
            r_next = min(max(x.r + drift, params.r_min), params.r_max)
            cont = 0.0
            for eps, p in zip(micro_quantizer.points, micro_quantizer.probs):
                w_next, s_next = step_ws(0, x.w, x.s, eps, model.ou, model.seas)
                cont += p * oracle_interp(
                    res.values[1], (res.grid.r, res.grid.w[1], res.grid.s[1]),
                    (r_next, w_next, s_next))
            best = min(best, c + cont)
        assert res.values[0][1, 1, 1] == pytest.approx(best, abs=1e-9)

    def test_micro_mdp_vs_brute_force(self, micro_quantizer):
        res = solve(MICRO_MODEL, MICRO_GRID, micro_quantizer)
        oracle = OracleDP(MICRO_MODEL, MICRO_GRID, micro_quantizer)
        for idx in np.ndindex(3, 3, 3):
            assert res.values[0][idx] == pytest.approx(oracle.value(0, idx), abs=1e-9)

    def test_memoized_oracle_equals_pure_tree(self):
        """The memoized oracle and a no-memo full tree expansion agree, so
        memoization is a pure dedup, not a semantic change."""
        params = SystemParams(N=2)
        model = P2HModel(params=params)
        gcfg = GridConfig(n_R=2, n_W=2, n_S=2, n_O=2, n_I=2)
        q = lloyd_generate(4, 500, seed=3, max_iter=40)
        memo = OracleDP(model, gcfg, q, use_memo=True)
        tree = OracleDP(model, gcfg, q, use_memo=False)
        for idx in np.ndindex(2, 2, 2):
            assert memo.value(0, idx) == pytest.approx(tree.value(0, idx), abs=1e-12)

    def test_policy_enumeration_optimality(self):
        """solve() attains the minimum over every deterministic grid policy
        of the finite quantized-interpolated MDP."""
        import itertools

        params = SystemParams(N=2)
        model = P2HModel(params=params)
        gcfg = GridConfig(n_R=2, n_W=2, n_S=2, n_O=2, n_I=2)
        q = lloyd_generate(4, 500, seed=3, max_iter=40)
        res = solve(model, gcfg, q)
        grid = res.grid
        oracle = OracleDP(model, gcfg, q)

        node_actions = []
        nodes = list(np.ndindex(2, 2, 2))
        for idx in nodes:
            x = oracle.node_state(1, idx)
            node_actions.append(enumerate_actions(x.r, params, 2, 2))

        x0_idx = (0, 1, 1)
        x0 = oracle.node_state(0, x0_idx)
        acts0 = enumerate_actions(x0.r, params, 2, 2)

        def policy_value(a0, assignment):
            j1 = np.empty((2, 2, 2))
            for node_i, idx in enumerate(nodes):
                x1 = oracle.node_state(1, idx)
                act = node_actions[node_i][assignment[node_i]][2]
                c1 = running_cost(1, x1, act, params, model.curve, model.ou,
                                  model.seas, model.cost)
                drift = params.tes_rate * (act.a_O - act.a_I - params.delta_T_SG) * params.dt
                r2 = min(max(x1.r + drift, params.r_min), params.r_max)
                cont = 0.0
                for eps, p in zip(q.points, q.probs):
                    w2, s2 = step_ws(1, x1.w, x1.s, eps, model.ou, model.seas)
                    term = np.array([[[terminal_cost(
                        State(r=float(grid.r[a]), w=1.0, s=0.0), model.cost, params)
                        for _ in range(2)] for _ in range(2)] for a in range(2)])
                    cont += p * oracle_interp(term, (grid.r, grid.w[2], grid.s[2]),
                                              (r2, w2, s2))
                j1[idx] = c1 + cont
            act0 = acts0[a0][2]
            c0 = running_cost(0, x0, act0, params, model.curve, model.ou,
                              model.seas, model.cost)
            drift = params.tes_rate * (act0.a_O - act0.a_I - params.delta_T_SG) * params.dt
            r1 = min(max(x0.r + drift, params.r_min), params.r_max)
            cont = 0.0
            for eps, p in zip(q.points, q.probs):
                w1, s1 = step_ws(0, x0.w, x0.s, eps, model.ou, model.seas)
                cont += p * oracle_interp(j1, (grid.r, grid.w[1], grid.s[1]),
                                          (r1, w1, s1))
            return c0 + cont

        choices = [range(len(a)) for a in node_actions]
        best = min(policy_value(a0, assign)
                   for a0 in range(len(acts0))
                   for assign in itertools.product(*choices))
        assert res.values[0][x0_idx] == pytest.approx(best, abs=1e-9)


class TestSolve:
    def test_terminal_layer(self, micro_quantizer):
        res = solve(MICRO_MODEL, MICRO_GRID, micro_quantizer)
        expect = terminal_cost(res.grid.r, MICRO_MODEL.cost, MICRO_PARAMS)
        for k in range(3):
            np.testing.assert_allclose(res.values[-1][k], expect[k])

    def test_value_monotone_in_r_and_s(self):
        model = P2HModel(params=SystemParams(N=8))
        res = solve(model, GridConfig(n_R=9, n_W=9, n_S=9, n_O=5, n_I=5),
                    bundled_quantizer(50))
        v0 = res.values[0]
        tol = 1e-6 * np.abs(v0)
        assert np.all(np.diff(v0, axis=0) <= tol[:-1] + 1e-9)
        assert np.all(np.diff(v0, axis=2) >= -(tol[:, :, :-1] + 1e-9))

    def test_value_bounded_by_idle_policy(self):
        model = P2HModel(params=SystemParams(N=6))
        q = bundled_quantizer(50)
        gcfg = GridConfig(n_R=7, n_W=7, n_S=7, n_O=5, n_I=5)
        res = solve(model, gcfg, q)
        idle_only = solve(model, GridConfig(n_R=7, n_W=7, n_S=7, n_O=1, n_I=1), q)
        assert np.all(res.values[0] <= idle_only.values[0] + 1e-9)

    def test_grid_refinement_stability(self, rng):
        model = P2HModel(params=SystemParams(N=6))
        q = bundled_quantizer(50)
        solves = [solve(model, GridConfig(n_R=n, n_W=n, n_S=n, n_O=5, n_I=5), q)
                  for n in (9, 17, 33)]
        probes = [State(r=float(rng.uniform(model.params.r_min, model.params.r_max)),
                        w=float(rng.uniform(*solves[0].grid.w_ref[0])),
                        s=float(rng.uniform(*solves[0].grid.s_ref[0])))
                  for _ in range(20)]
        diffs = []
        for a, b in ((0, 1), (1, 2)):
            diffs.append(np.mean([abs(solves[a].value_at(0, x) - solves[b].value_at(0, x))
                                  for x in probes]))
        assert diffs[1] < diffs[0]

    def test_deterministic(self, micro_quantizer):
        a = solve(MICRO_MODEL, MICRO_GRID, micro_quantizer)
        b = solve(MICRO_MODEL, MICRO_GRID, micro_quantizer)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.policy_mode, b.policy_mode)


@pytest.fixture(scope="module")
def solved():
    model = P2HModel(params=SystemParams(N=6))
    gcfg = GridConfig(n_R=9, n_W=9, n_S=9, n_O=5, n_I=5)
    q = bundled_quantizer(50)
    return model, gcfg, q, solve(model, gcfg, q)


class TestGreedy:

    def test_never_charges_at_full_storage(self, solved):
        model, gcfg, q, res = solved
        for n in range(4):
            for w in (2.0, 4.0, 8.0):
                for s in (25.0, 40.0, 55.0):
                    a = greedy_action(n, State(r=model.params.r_max, w=w, s=s),
                                      res, q, model, gcfg)
                    assert a.a_O == model.params.T_SG_in

    def test_deterministic(self, solved):
        model, gcfg, q, res = solved
        x = State(r=250.0, w=4.5, s=41.0)
        a1 = greedy_action(2, x, res, q, model, gcfg)
        a2 = greedy_action(2, x, res, q, model, gcfg)
        assert (a1.a_O, a1.a_I) == (a2.a_O, a2.a_I)

    def test_matches_stored_policy_on_nodes(self, solved, rng):
        model, gcfg, q, res = solved
        grid = res.grid
        for _ in range(100):
            n = int(rng.integers(0, model.params.N))
            k = int(rng.integers(0, gcfg.n_R))
            i = int(rng.integers(0, gcfg.n_W))
            j = int(rng.integers(0, gcfg.n_S))
            x = State(r=float(grid.r[k]), w=float(grid.w[n][i]), s=float(grid.s[n][j]))
            a = greedy_action(n, x, res, q, model, gcfg)
            stored = action_from_levels(int(res.policy_mode[n, k, i, j]),
                                        float(res.policy_level[n, k, i, j]),
                                        x.r, model.params)
            assert a.a_O == stored.a_O and a.a_I == stored.a_I

    def test_feasibility_everywhere(self, solved, rng):
        model, gcfg, q, res = solved
        for _ in range(50):
            n = int(rng.integers(0, model.params.N))
            r = float(rng.uniform(model.params.r_min, model.params.r_max))
            w = float(rng.uniform(1.0, 12.0))
            s = float(rng.uniform(20.0, 60.0))
            a = greedy_action(n, State(r=r, w=w, s=s), res, q, model, gcfg)
            fb = feasible_bounds(State(r=r, w=w, s=s), model.params)
            assert model.params.T_SG_in - 1e-12 <= a.a_O <= fb.a_O_upper + 1e-9
            assert model.params.T_SG_out - 1e-12 <= a.a_I <= fb.a_I_upper + 1e-9

    def test_policy_feasibility_table(self, solved):
        model, gcfg, q, res = solved
        for n in (0, 3, 5):
            for k, r in enumerate(res.grid.r):
                fb = feasible_bounds(State(r=float(r), w=4.0, s=40.0), model.params)
                modes = res.policy_mode[n, k]
                levels = res.policy_level[n, k]
                assert np.all((modes != 1) | (levels <= 1.0 + 1e-12))
                if fb.a_O_upper <= model.params.T_SG_in + 1e-9:
                    assert not np.any(modes == 1)
                if fb.a_I_upper <= model.params.T_SG_out + 1e-9:
                    assert not np.any(modes == -1)
