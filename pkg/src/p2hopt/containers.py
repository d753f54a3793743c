"""Versioned binary containers for solver and training artifacts.

A container is an NPZ archive carrying a magic tag, a kind string, a schema
version and a JSON metadata blob next to the payload arrays; loading
validates all three before touching the payload.  Formats are documented in
docs/formats.md.
"""

from __future__ import annotations

import io
import json

import numpy as np

MAGIC = "P2H-CONTAINER"
SCHEMA_VERSION = 1


class ContainerError(ValueError):
    """Wrong magic, kind or schema version."""


def save_container(path, kind: str, arrays: dict, meta: dict):
    tagged = {
        "__magic__": np.array(MAGIC),
        "__kind__": np.array(kind),
        "__version__": np.array(SCHEMA_VERSION),
        "__meta__": np.array(json.dumps(meta, sort_keys=True)),
    }
    overlap = set(tagged) & set(arrays)
    if overlap:
        raise ValueError(f"reserved keys in payload: {overlap}")
    np.savez(path, **tagged, **arrays)


def load_container(path, kind: str):
    with np.load(path, allow_pickle=False) as data:
        if "__magic__" not in data or str(data["__magic__"]) != MAGIC:
            raise ContainerError(f"{path}: not a {MAGIC} file")
        if str(data["__kind__"]) != kind:
            raise ContainerError(
                f"{path}: container holds {data['__kind__']!s}, expected {kind}")
        version = int(data["__version__"])
        if version != SCHEMA_VERSION:
            raise ContainerError(
                f"{path}: schema version {version}, supported {SCHEMA_VERSION}")
        meta = json.loads(str(data["__meta__"]))
        arrays = {k: data[k] for k in data.files if not k.startswith("__")}
    return arrays, meta


def save_solve_result(path, result, gcfg):
    from .bdp import SolveResult

    assert isinstance(result, SolveResult)
    arrays = {
        "values": result.values,
        "policy_mode": result.policy_mode,
        "policy_level": result.policy_level,
        "grid_r": result.grid.r,
        "grid_w": result.grid.w,
        "grid_s": result.grid.s,
        "grid_w_ref": result.grid.w_ref,
        "grid_s_ref": result.grid.s_ref,
    }
    meta = {"n_periods": result.values.shape[0] - 1,
            "grid_config": {"n_R": gcfg.n_R, "n_W": gcfg.n_W, "n_S": gcfg.n_S,
                            "n_O": gcfg.n_O, "n_I": gcfg.n_I,
                            "k_R": gcfg.k_R, "k_E": gcfg.k_E}}
    save_container(path, "value-policy-tables", arrays, meta)


def load_solve_result(path):
    from .bdp import GridConfig, SolveResult, StateGrid

    arrays, meta = load_container(path, "value-policy-tables")
    grid = StateGrid(r=arrays["grid_r"], w=arrays["grid_w"], s=arrays["grid_s"],
                     w_ref=arrays["grid_w_ref"], s_ref=arrays["grid_s_ref"])
    result = SolveResult(grid=grid, values=arrays["values"],
                         policy_mode=arrays["policy_mode"],
                         policy_level=arrays["policy_level"])
    gcfg = GridConfig(**meta["grid_config"])
    return result, gcfg


def save_qnet(path, result):
    """Persist per-period network parameters of a TrainResult."""
    arrays = {}
    for n, net in enumerate(result.nets):
        for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"net{n}_w{layer}"] = w
            arrays[f"net{n}_b{layer}"] = b
    ctx = result.ctx
    meta = {"n_periods": len(result.nets),
            "n_layers": len(result.nets[0].weights),
            "n_O": ctx.n_O, "n_I": ctx.n_I, "k_R": ctx.k_R,
            "cost_scale": ctx.cost_scale, "hidden": ctx.hidden}
    save_container(path, "q-networks", arrays, meta)


def load_qnet(path, model):
    from .qlearn import MLP, QContext, TrainResult

    arrays, meta = load_container(path, "q-networks")
    nets = []
    for n in range(meta["n_periods"]):
        weights = [arrays[f"net{n}_w{layer}"] for layer in range(meta["n_layers"])]
        biases = [arrays[f"net{n}_b{layer}"] for layer in range(meta["n_layers"])]
        nets.append(MLP(weights=weights, biases=biases))
    ctx = QContext(model=model, n_O=meta["n_O"], n_I=meta["n_I"],
                   k_R=meta["k_R"], cost_scale=meta["cost_scale"],
                   hidden=meta["hidden"])
    return TrainResult(nets=nets, delayed=[n.copy() for n in nets], ctx=ctx,
                       metrics=[])
