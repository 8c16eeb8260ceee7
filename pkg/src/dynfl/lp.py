"""The dynamic facility location LP relaxation, its solution container and JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .instance import Instance
from .simplex import SimplexError, solve_lp

FEAS_TOL = 1e-9


class LPSolveError(RuntimeError):
    """The relaxation is always feasible and bounded, so any solver failure is a bug."""


@dataclass
class LinearProgram:
    """Row-wise LP over nonnegative variables.

    ``index`` maps ``("y", i, t)``, ``("x", i, j, t)`` and ``("z", i, j, t)``
    to columns; ``A @ v (senses) b`` lists every constraint row.
    """

    index: dict[tuple, int]
    c: np.ndarray
    A: np.ndarray
    senses: list[str]
    b: np.ndarray
    shape: tuple[int, int, int] = (0, 0, 0)   # (n_f, n_c, T)

    @property
    def n_vars(self) -> int:
        return len(self.c)

    @property
    def n_rows(self) -> int:
        return len(self.b)


@dataclass
class FractionalSolution:
    """LP variables as dense arrays.

    x: (T, n_f, n_c), y: (T, n_f), z: (T-1, n_f, n_c).
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    opening: float = 0.0
    connection: float = 0.0
    switching: float = 0.0
    info: dict[str, Any] = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.opening + self.connection + self.switching

    @property
    def T(self) -> int:
        return self.x.shape[0]

    def with_costs(self, instance: Instance) -> "FractionalSolution":
        self.opening, self.connection, self.switching = lp_cost_breakdown(self, instance)
        return self

    def residuals(self) -> dict[str, float]:
        """Largest violation of each constraint family (0 when satisfied)."""
        x, y, z = self.x, self.y, self.z
        res = {
            "assignment": float(np.abs(x.sum(axis=1) - 1.0).max()),
            "x<=y": float(np.maximum(x - y[:, :, None], 0).max()),
            "nonneg": float(max(np.maximum(-x, 0).max(), np.maximum(-y, 0).max(),
                                np.maximum(-z, 0).max() if z.size else 0.0)),
            "switch": float(np.maximum(x[:-1] - x[1:] - z, 0).max()) if z.size else 0.0,
        }
        return res

    def is_feasible(self, tol: float = FEAS_TOL) -> bool:
        return max(self.residuals().values()) <= tol

    def to_dict(self) -> dict[str, Any]:
        return {
            "x": self.x.tolist(), "y": self.y.tolist(), "z": self.z.tolist(),
            "objective": self.objective, "opening": self.opening,
            "connection": self.connection, "switching": self.switching,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FractionalSolution":
        try:
            x = np.array(data["x"], dtype=float)
            y = np.array(data["y"], dtype=float)
            z = np.array(data["z"], dtype=float)
        except KeyError as exc:
            raise ValueError(f"solution is missing field {exc}") from None
        if x.ndim != 3 or y.shape != x.shape[:2]:
            raise ValueError(f"inconsistent shapes x{x.shape} y{y.shape}")
        T, n_f, n_c = x.shape
        if z.size == 0:
            z = np.zeros((T - 1, n_f, n_c))
        if z.shape != (T - 1, n_f, n_c):
            raise ValueError(f"z has shape {z.shape}, expected {(T - 1, n_f, n_c)}")
        return cls(x, y, z, float(data.get("opening", 0.0)), float(data.get("connection", 0.0)),
                   float(data.get("switching", 0.0)))


def build_relaxation(instance: Instance) -> LinearProgram:
    n_f, n_c, T = instance.n_facilities, instance.n_clients, instance.T
    index: dict[tuple, int] = {}
    for t in range(T):
        for i in range(n_f):
            index[("y", i, t)] = len(index)
    for t in range(T):
        for i in range(n_f):
            for j in range(n_c):
                index[("x", i, j, t)] = len(index)
    for t in range(T - 1):
        for i in range(n_f):
            for j in range(n_c):
                index[("z", i, j, t)] = len(index)

    c = np.zeros(len(index))
    for (kind, *key), col in index.items():
        if kind == "y":
            i, t = key
            c[col] = instance.open_cost[i, t]
        elif kind == "x":
            i, j, t = key
            c[col] = instance.dist[t, i, j]
        else:
            c[col] = instance.g

    rows, senses, rhs = [], [], []

    def add(coefs, sense, b):
        r = np.zeros(len(index))
        for col, v in coefs:
            r[col] += v
        rows.append(r)
        senses.append(sense)
        rhs.append(b)

    for t in range(T):
        for j in range(n_c):
            add([(index[("x", i, j, t)], 1.0) for i in range(n_f)], "=", 1.0)
    for t in range(T):
        for i in range(n_f):
            for j in range(n_c):
                add([(index[("x", i, j, t)], 1.0), (index[("y", i, t)], -1.0)], "<=", 0.0)
    for t in range(T - 1):
        for i in range(n_f):
            for j in range(n_c):
                add([(index[("z", i, j, t)], 1.0), (index[("x", i, j, t)], -1.0),
                     (index[("x", i, j, t + 1)], 1.0)], ">=", 0.0)
    A = np.array(rows) if rows else np.zeros((0, len(index)))
    return LinearProgram(index, c, A, senses, np.array(rhs), (n_f, n_c, T))


def solution_from_vector(lp: LinearProgram, v: np.ndarray) -> FractionalSolution:
    n_f, n_c, T = lp.shape
    x = np.zeros((T, n_f, n_c))
    y = np.zeros((T, n_f))
    z = np.zeros((max(T - 1, 0), n_f, n_c))
    for (kind, *key), col in lp.index.items():
        if kind == "y":
            i, t = key
            y[t, i] = v[col]
        elif kind == "x":
            i, j, t = key
            x[t, i, j] = v[col]
        else:
            i, j, t = key
            z[t, i, j] = v[col]
    return FractionalSolution(x, y, z)


def solve(lp: LinearProgram, tol: float = FEAS_TOL, instance: Instance | None = None) -> FractionalSolution:
    """Optimal basic solution of ``lp`` from the embedded simplex.

    Values within ``tol`` of zero are snapped to zero. Raises
    :class:`LPSolveError` if the solver fails or the returned point violates
    a row by more than ``tol``.
    """
    try:
        res = solve_lp(lp.c, lp.A, lp.senses, lp.b, tol=tol)
    except SimplexError as exc:
        raise LPSolveError(f"simplex failed on the relaxation: {exc}") from exc
    sol = solution_from_vector(lp, res.x)
    row_err = _row_violation(lp, res.x)
    if row_err > tol * 10:
        raise LPSolveError(f"returned point violates a row by {row_err:.3g}")
    sol.info = {"iterations": res.iterations, "min_reduced_cost": res.min_reduced_cost,
                "max_row_violation": row_err, "lp_objective": res.objective}
    if instance is not None:
        sol.with_costs(instance)
    else:
        sol.opening, sol.connection, sol.switching = _split_objective(lp, res.x)
    return sol


def solve_instance(instance: Instance, tol: float = FEAS_TOL) -> FractionalSolution:
    return solve(build_relaxation(instance), tol=tol, instance=instance)


def _row_violation(lp: LinearProgram, v: np.ndarray) -> float:
    if not lp.n_rows:
        return 0.0
    ax = lp.A @ v
    worst = 0.0
    for r, s in enumerate(lp.senses):
        d = ax[r] - lp.b[r]
        viol = abs(d) if s == "=" else (max(d, 0.0) if s == "<=" else max(-d, 0.0))
        worst = max(worst, viol)
    return worst


def _split_objective(lp: LinearProgram, v: np.ndarray) -> tuple[float, float, float]:
    parts = {"y": 0.0, "x": 0.0, "z": 0.0}
    for key, col in lp.index.items():
        parts[key[0]] += lp.c[col] * v[col]
    return parts["y"], parts["x"], parts["z"]


def lp_cost_breakdown(sol: FractionalSolution, instance: Instance) -> tuple[float, float, float]:
    """(opening, connection, switching) = (sum f*y, sum d*x, g * sum z)."""
    T, n_f, n_c = instance.T, instance.n_facilities, instance.n_clients
    if sol.x.shape != (T, n_f, n_c) or sol.y.shape != (T, n_f):
        raise ValueError(f"solution shape x{sol.x.shape} y{sol.y.shape} does not match "
                         f"instance (T={T}, F={n_f}, C={n_c})")
    if sol.z.shape != (T - 1, n_f, n_c):
        raise ValueError(f"z shape {sol.z.shape} does not match (T-1, F, C)")
    opening = float(np.sum(sol.y * instance.open_cost.T))
    connection = float(np.sum(sol.x * instance.dist))
    switching = float(instance.g * np.sum(sol.z))
    return opening, connection, switching


def write_solution(sol: FractionalSolution, path, instance: Instance | None = None) -> None:
    data = sol.to_dict()
    if instance is not None:
        data["instance"] = instance.to_dict()
    Path(path).write_text(json.dumps(data), encoding="utf-8")


def read_solution(path) -> tuple[FractionalSolution, Instance | None]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    inst = Instance.from_dict(data["instance"]) if "instance" in data else None
    return FractionalSolution.from_dict(data), inst
