"""Posterior sample storage and on-disk persistence.

A trace holds, per recorded node, an array of shape (n_chains, n_retained)
for scalars, with trailing component axes for vector/matrix nodes.  On disk
a trace is a directory with ``samples.csv`` (columns: chain, iter, then one
column per scalar component, floats rendered with shortest round-trip
precision) plus ``meta.json`` (config, seed, model hash, acceptance rates).
Reruns with the same seed produce byte-identical files.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ContractError

__all__ = ["Trace", "save_trace", "load_trace", "component_columns"]


def component_columns(name: str, shape: tuple[int, ...]) -> list[str]:
    """Column names for one node; indexes are 1-based."""
    if shape == ():
        return [name]
    if len(shape) == 1:
        return [f"{name}[{i + 1}]" for i in range(shape[0])]
    if len(shape) == 2:
        return [f"{name}[{i + 1},{j + 1}]" for i in range(shape[0]) for j in range(shape[1])]
    raise ContractError(f"unsupported node shape {shape}")


@dataclass
class Trace:
    names: tuple[str, ...]
    shapes: dict[str, tuple[int, ...]]
    data: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.data[self.names[0]].shape[0]

    @property
    def n_retained(self) -> int:
        return self.data[self.names[0]].shape[1]

    def array(self, name: str) -> np.ndarray:
        if name not in self.data:
            raise ContractError(f"node {name!r} was not recorded in this trace")
        return self.data[name]

    def components(self) -> Iterator[tuple[str, np.ndarray]]:
        """Yield (column name, (chains, draws) array) for every scalar
        component in recording order."""
        for name in self.names:
            shape = self.shapes[name]
            arr = self.data[name]
            if shape == ():
                yield name, arr
            else:
                flat = arr.reshape(arr.shape[0], arr.shape[1], -1)
                for idx, col in enumerate(component_columns(name, shape)):
                    yield col, flat[:, :, idx]

    def component(self, column: str) -> np.ndarray:
        for col, arr in self.components():
            if col == column:
                return arr
        raise ContractError(f"no component named {column!r}")

    def column_names(self) -> list[str]:
        out = []
        for name in self.names:
            out.extend(component_columns(name, self.shapes[name]))
        return out


def save_trace(trace: Trace, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    columns = list(trace.components())
    names = [c for c, _ in columns]
    arrays = [a for _, a in columns]
    n_chains = trace.n_chains
    n_ret = trace.n_retained

    path = os.path.join(directory, "samples.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "iter"] + names)
        for c in range(n_chains):
            for i in range(n_ret):
                w.writerow([c, i] + [repr(float(a[c, i])) for a in arrays])

    meta = dict(trace.meta)
    meta["nodes"] = [{"name": n, "shape": list(trace.shapes[n])} for n in trace.names]
    meta["n_chains"] = n_chains
    meta["n_retained"] = n_ret
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_trace(directory) -> Trace:
    meta_path = os.path.join(directory, "meta.json")
    csv_path = os.path.join(directory, "samples.csv")
    if not os.path.exists(meta_path) or not os.path.exists(csv_path):
        raise ContractError(f"{directory} does not contain a saved trace")
    with open(meta_path) as fh:
        meta = json.load(fh)
    node_info = meta.pop("nodes")
    n_chains = meta.pop("n_chains")
    n_ret = meta.pop("n_retained")
    names = tuple(d["name"] for d in node_info)
    shapes = {d["name"]: tuple(d["shape"]) for d in node_info}

    expected_cols = ["chain", "iter"]
    widths: list[tuple[str, int]] = []
    for name in names:
        cols = component_columns(name, shapes[name])
        expected_cols.extend(cols)
        widths.append((name, len(cols)))

    raw = np.empty((n_chains * n_ret, len(expected_cols) - 2), dtype=float)
    with open(csv_path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != expected_cols:
            raise ContractError("samples.csv columns do not match meta.json")
        for k, row in enumerate(r):
            raw[k] = [float(v) for v in row[2:]]
    data: dict[str, np.ndarray] = {}
    j = 0
    for name, width in widths:
        block = raw[:, j : j + width].reshape(n_chains, n_ret, width)
        j += width
        shape = shapes[name]
        if shape == ():
            data[name] = np.ascontiguousarray(block[:, :, 0])
        else:
            data[name] = np.ascontiguousarray(block.reshape((n_chains, n_ret) + shape))
    return Trace(names=names, shapes=shapes, data=data, meta=meta)
