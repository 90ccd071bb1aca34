"""Flat binary container and CSV export for grids, transitions and solutions.

Container layout (all integers little-endian unsigned 32/64 bit, all floats
little-endian IEEE-754 float64):

    magic   4 bytes  b"PDQ1"
    count   u32      number of sections
    section := kind u32, time_index u32, meta f64,
               n_int_arrays u32, n_float_arrays u32,
               int arrays   := length u64, int64 data
               float arrays := rows u64, cols u64, f64 data (row major)

Section kinds: 1 state grid (ints: mode table; floats: coords),
2 transition matrix (floats: probs), 3 belief grid (meta: observation scale;
floats: belief weights, observations, transition probs or empty),
4 solution step (ints: stop flags, actions; floats: values),
5 chain step (floats: belief weights matrix, observations).
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dp import BeliefGrid, PolicySolution
from .quantize import QuantGrid, TransitionMatrix

__all__ = [
    "save_grids",
    "load_grids",
    "save_transitions",
    "load_transitions",
    "save_belief_grids",
    "load_belief_grids",
    "save_solution",
    "load_solution",
    "grids_to_csv",
    "solution_to_csv",
]

_MAGIC = b"PDQ1"
KIND_GRID, KIND_TRANS, KIND_BGRID, KIND_SOLUTION, KIND_CHAIN = 1, 2, 3, 4, 5


def _write_section(f, kind: int, n: int, meta: float, int_arrays, float_arrays):
    f.write(struct.pack("<II", kind, n))
    f.write(struct.pack("<d", meta))
    f.write(struct.pack("<II", len(int_arrays), len(float_arrays)))
    for arr in int_arrays:
        arr = np.ascontiguousarray(arr, dtype="<i8")
        f.write(struct.pack("<Q", arr.size))
        f.write(arr.tobytes())
    for arr in float_arrays:
        arr = np.ascontiguousarray(np.atleast_2d(arr), dtype="<f8")
        f.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
        f.write(arr.tobytes())


def _read_section(f):
    head = f.read(8)
    if len(head) < 8:
        raise EOFError("truncated container")
    kind, n = struct.unpack("<II", head)
    (meta,) = struct.unpack("<d", f.read(8))
    n_int, n_float = struct.unpack("<II", f.read(8))
    ints = []
    for _ in range(n_int):
        (size,) = struct.unpack("<Q", f.read(8))
        ints.append(np.frombuffer(f.read(8 * size), dtype="<i8").copy())
    floats = []
    for _ in range(n_float):
        rows, cols = struct.unpack("<QQ", f.read(16))
        data = np.frombuffer(f.read(8 * rows * cols), dtype="<f8").copy()
        floats.append(data.reshape(rows, cols))
    return kind, n, meta, ints, floats


def _write_container(path, sections):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(sections)))
        for args in sections:
            _write_section(f, *args)


def _read_container(path):
    with open(Path(path), "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a PDQ1 container")
        (count,) = struct.unpack("<I", f.read(4))
        return [_read_section(f) for _ in range(count)]


def save_grids(path, grids: Sequence[QuantGrid]):
    _write_container(path, [(KIND_GRID, g.n, 0.0, [g.modes], [g.coords]) for g in grids])


def load_grids(path) -> List[QuantGrid]:
    out = []
    for kind, n, _, ints, floats in _read_container(path):
        if kind != KIND_GRID:
            raise ValueError("container does not hold state grids")
        out.append(QuantGrid(n, ints[0], floats[0]))
    return sorted(out, key=lambda g: g.n)


def save_transitions(path, mats: Sequence[TransitionMatrix]):
    _write_container(path, [(KIND_TRANS, m.n, 0.0, [], [m.probs]) for m in mats])


def load_transitions(path) -> List[TransitionMatrix]:
    out = []
    for kind, n, _, _, floats in _read_container(path):
        if kind != KIND_TRANS:
            raise ValueError("container does not hold transition matrices")
        out.append(TransitionMatrix(n, floats[0]))
    return sorted(out, key=lambda m: m.n)


def save_belief_grids(path, bgrids: Sequence[BeliefGrid]):
    sections = []
    for bg in bgrids:
        probs = bg.probs if bg.probs is not None else np.zeros((bg.size, 0))
        sections.append((KIND_BGRID, bg.n, bg.y_scale, [], [bg.thetas, bg.ys[None, :], probs]))
    _write_container(path, sections)


def load_belief_grids(path) -> List[BeliefGrid]:
    out = []
    for kind, n, meta, _, floats in _read_container(path):
        if kind != KIND_BGRID:
            raise ValueError("container does not hold belief grids")
        thetas, ys, probs = floats
        out.append(BeliefGrid(n, thetas, ys.ravel(), meta, probs if probs.shape[1] else None))
    return sorted(out, key=lambda b: b.n)


def save_solution(path, solution: PolicySolution, bgrids: Sequence[BeliefGrid]):
    """Solution plus the joint grids needed to execute it online."""
    sections = []
    for n, bg in enumerate(bgrids):
        sections.append(
            (
                KIND_SOLUTION,
                n,
                bg.y_scale,
                [solution.stop[n].astype(np.int64), solution.action[n]],
                [bg.thetas, bg.ys[None, :], solution.values[n][None, :]],
            )
        )
    _write_container(path, sections)


def load_solution(path, costs) -> Tuple[List[BeliefGrid], PolicySolution]:
    bgrids, values, stop, action = [], [], [], []
    for kind, n, meta, ints, floats in _read_container(path):
        if kind != KIND_SOLUTION:
            raise ValueError("container does not hold a solution")
        thetas, ys, vals = floats
        bgrids.append(BeliefGrid(n, thetas, ys.ravel(), meta))
        stop.append(ints[0].astype(bool))
        action.append(ints[1])
        values.append(vals.ravel())
    order = np.argsort([b.n for b in bgrids])
    bgrids = [bgrids[i] for i in order]
    return bgrids, PolicySolution(
        [values[i] for i in order], [stop[i] for i in order], [action[i] for i in order], costs
    )


def write_observations_csv(path, times, y, modes=None, xs=None):
    """Observation stream as RFC-4180 CSV; truth columns are optional."""
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f)
        header = ["t", "y"] + (["mode", "x"] if modes is not None else [])
        w.writerow(header)
        for i in range(len(y)):
            row = [repr(float(times[i])), repr(float(y[i]))]
            if modes is not None:
                row += [int(modes[i]), repr(float(xs[i]))]
            w.writerow(row)


def read_observations_csv(path):
    """Returns (times, y, modes or None, xs or None)."""
    with open(Path(path), newline="") as f:
        rows = list(csv.reader(f))
    header = rows[0]
    data = rows[1:]
    times = np.array([float(r[0]) for r in data])
    y = np.array([float(r[1]) for r in data])
    modes = xs = None
    if "mode" in header:
        mi, xi = header.index("mode"), header.index("x")
        modes = np.array([int(r[mi]) for r in data])
        xs = np.array([float(r[xi]) for r in data])
    return times, y, modes, xs


def grids_to_csv(path, grids: Sequence[QuantGrid]):
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f)
        dim = grids[0].coords.shape[1]
        w.writerow(["n", "index", "mode"] + [f"coord{dd}" for dd in range(dim)])
        for g in grids:
            for i in range(g.ell):
                w.writerow([g.n, i, int(g.modes[i])] + [repr(float(v)) for v in g.coords[i]])


def solution_to_csv(path, solution: PolicySolution, bgrids: Sequence[BeliefGrid]):
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["n", "index", "y", "value", "stop", "action"])
        for n, bg in enumerate(bgrids):
            for i in range(bg.size):
                w.writerow(
                    [
                        n,
                        i,
                        repr(float(bg.ys[i])),
                        repr(float(solution.values[n][i])),
                        int(solution.stop[n][i]),
                        int(solution.action[n][i]),
                    ]
                )
