"""CSV exports of solver artifacts for external plotting.

All floats are rendered with a fixed %.10g format, so re-exporting the same
artifact is byte-identical.
"""

from __future__ import annotations

import csv

import numpy as np

from .bdp import GridConfig, SolveResult, greedy_actions_batch
from .exogenous import seasonal_mean
from .model import P2HModel

_AXES = ("r", "w", "s")


def _fmt(x):
    return f"{float(x):.10g}"


def export_value_slice(result: SolveResult, n: int, fixed_axis: str,
                       fixed_index: int, path):
    """(axis1, axis2, value) triples of one value layer at a fixed third
    coordinate; row count is n_axis1 * n_axis2."""
    if fixed_axis not in _AXES:
        raise ValueError(f"fixed_axis must be one of {_AXES}")
    axes = {"r": result.grid.r, "w": result.grid.w[n], "s": result.grid.s[n]}
    free = [a for a in _AXES if a != fixed_axis]
    layer = result.values[n]
    take = {"r": 0, "w": 1, "s": 2}[fixed_axis]
    sliced = np.take(layer, fixed_index, axis=take)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([free[0], free[1], "value",
                         f"fixed_{fixed_axis}", "period"])
        fixed_val = axes[fixed_axis][fixed_index]
        for i, v1 in enumerate(axes[free[0]]):
            for j, v2 in enumerate(axes[free[1]]):
                writer.writerow([_fmt(v1), _fmt(v2), _fmt(sliced[i, j]),
                                 _fmt(fixed_val), n])


def export_policy_heatmap(result: SolveResult, quantizer, model: P2HModel,
                          gcfg: GridConfig, path):
    """Greedy control over (period, storage temperature) with the exogenous
    coordinates pinned to their seasonal trends, trend values as companion
    columns."""
    params = model.params
    r_axis = result.grid.r
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "t_hours", "r", "mode", "level",
                         "trend_wind_ms", "trend_price"])
        for n in range(params.N):
            t_n = n * params.dt
            w_trend = float(np.exp(seasonal_mean(t_n, "wind", model.seas)))
            s_trend = float(seasonal_mean(t_n, "price", model.seas))
            modes, levels, _, _ = greedy_actions_batch(
                n, r_axis, np.full_like(r_axis, w_trend),
                np.full_like(r_axis, s_trend), result, quantizer, model, gcfg)
            for k, r in enumerate(r_axis):
                name = {1: "charge", -1: "discharge", 0: "idle"}[int(modes[k])]
                writer.writerow([n, _fmt(t_n), _fmt(r), name,
                                 _fmt(levels[k]), _fmt(w_trend), _fmt(s_trend)])


def export_trajectory(traj, path):
    """One row per period with states, action, node samples and costs."""
    n_periods = len(traj.a_O)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        node_cols = []
        for q in range(traj.w_nodes.shape[1]):
            node_cols += [f"w_node{q}", f"s_node{q}", f"p_wind_node{q}",
                          f"p_grid_node{q}"]
        writer.writerow(["n", "r", "w", "s", "a_O", "a_I", "mode", "p_hthp",
                         "heat_in", "heat_out", "cost"] + node_cols
                        + ["terminal"])
        for n in range(n_periods):
            row = [n, _fmt(traj.states[n, 0]), _fmt(traj.states[n, 1]),
                   _fmt(traj.states[n, 2]), _fmt(traj.a_O[n]), _fmt(traj.a_I[n]),
                   int(traj.modes[n]), _fmt(traj.p_hthp[n]),
                   _fmt(traj.heat_in[n]), _fmt(traj.heat_out[n]),
                   _fmt(traj.cost_increments[n])]
            for q in range(traj.w_nodes.shape[1]):
                row += [_fmt(traj.w_nodes[n, q]), _fmt(traj.s_nodes[n, q]),
                        _fmt(traj.p_wind[n, q]), _fmt(traj.p_grid[n, q])]
            row.append(_fmt(traj.terminal) if n == n_periods - 1 else "")
            writer.writerow(row)


def export_eval_report(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "mean_cost", "std_error", "n_trajectories",
                         "seed"])
        for e in report.entries:
            writer.writerow([e.policy, _fmt(e.mean_cost), _fmt(e.std_error),
                             e.n_trajectories, report.seed])
