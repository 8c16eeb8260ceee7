"""Preprocessing of an LP optimum before rounding.

Two passes:

* :func:`stabilize` makes every client's fractional connection piecewise
  constant over time (intervals chosen greedily per client), at most
  doubling each cost component.
* :func:`duplicate_facilities` splits each facility into copies so that a
  copy is either fully used by a client or not at all, and is open by the
  same fraction ``o`` whenever it is open.

Time steps are 0-based throughout: ``t`` in ``range(T)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .instance import Instance
from .lp import FEAS_TOL, FractionalSolution

SNAP_TOL = 1e-9
HALF = 0.5


class PreprocessError(ValueError):
    pass


# --------------------------------------------------------------------------
# interval stabilisation


def compute_boundaries(xbar: np.ndarray, tol: float = FEAS_TOL) -> list[int]:
    """Boundary steps of one client's connection row.

    ``xbar`` has shape ``(T, n_f)``. Returns ``[0 = b_0 < b_1 < ... = T]``;
    the client's intervals are ``[b_k, b_{k+1})``. Each next boundary is the
    largest ``t`` whose window ``[b_prev, t)`` still has
    ``sum_i min_u xbar[u, i] >= 1/2``.
    """
    xbar = np.asarray(xbar, dtype=float)
    T = xbar.shape[0]
    bounds = [0]
    start = 0
    while start < T:
        running = xbar[start].copy()
        end = start + 1
        # the window sum is nonincreasing in its right end
        while end < T:
            nxt = np.minimum(running, xbar[end])
            if nxt.sum() < HALF - tol:
                break
            running = nxt
            end += 1
        bounds.append(end)
        start = end
    return bounds


def stabilize(frac: FractionalSolution, instance: Instance | None = None,
              tol: float = FEAS_TOL) -> FractionalSolution:
    """Piecewise-constant connections, doubled openings, rebalanced switching.

    Within each client interval the new row is the window's entrywise
    minimum, renormalised to sum to one. ``y`` becomes ``2 * ybar``. ``z``
    starts at ``max(0, x^t - x^{t+1})`` and the remaining mass needed to reach
    ``2 * sum(zbar)`` is added to ``z[0, 0, 0]``.
    """
    res = frac.residuals()
    if max(res.values()) > 10 * tol:
        raise PreprocessError(f"infeasible input solution: {res}")
    T, n_f, n_c = frac.x.shape
    x = np.empty_like(frac.x)
    boundaries = []
    for j in range(n_c):
        b = compute_boundaries(frac.x[:, :, j], tol)
        boundaries.append(b)
        for lo, hi in zip(b[:-1], b[1:]):
            m = frac.x[lo:hi, :, j].min(axis=0)
            x[lo:hi, :, j] = m / m.sum()
    y = 2.0 * frac.y
    if T > 1:
        z = np.maximum(x[:-1] - x[1:], 0.0)
        deficit = 2.0 * float(frac.z.sum()) - float(z.sum())
        if deficit > 0:
            z[0, 0, 0] += deficit
    else:
        z = np.zeros((0, n_f, n_c))
    out = FractionalSolution(x, y, z, info={"boundaries": boundaries})
    if instance is not None:
        out.with_costs(instance)
    else:
        out.opening, out.connection, out.switching = (2 * frac.opening, float("nan"),
                                                      2 * frac.switching)
    return out


def change_set(sol, t: int, tol: float = FEAS_TOL) -> set[int]:
    """Clients whose connection row differs between steps ``t`` and ``t+1``.

    Works on a :class:`FractionalSolution` (entrywise, within ``tol``) or a
    :class:`PreprocessedSolution` (exact comparison of copy sets).
    """
    T = sol.T
    if not 0 <= t < T - 1:
        raise IndexError(f"t={t} outside [0, {T - 1})")
    if isinstance(sol, PreprocessedSolution):
        diff = np.any(sol.conn[t] != sol.conn[t + 1], axis=0)
    else:
        diff = np.any(np.abs(sol.x[t] - sol.x[t + 1]) > tol, axis=0)
    return {int(j) for j in np.flatnonzero(diff)}


def total_changes(sol) -> int:
    return sum(len(change_set(sol, t)) for t in range(sol.T - 1))


# --------------------------------------------------------------------------
# facility duplication


@dataclass
class PreprocessedSolution:
    """Copy-level solution in which every x and y is 0 or the copy's ``o``.

    ``origin[c]`` is the original facility of copy ``c``; ``active[t, c]``
    says whether ``y[t, c] = o[c]``; ``conn[t, c, j]`` says whether client
    ``j`` is served by copy ``c`` at step ``t`` (so ``x[t, c, j] = o[c]``).
    ``z`` and the three cost components are carried over unchanged from the
    solution that was duplicated.
    """

    facility_ids: tuple[str, ...]
    client_ids: tuple[str, ...]
    origin: np.ndarray
    o: np.ndarray
    active: np.ndarray
    conn: np.ndarray
    z: np.ndarray
    opening: float = 0.0
    connection: float = 0.0
    switching: float = 0.0
    thresholds: list[np.ndarray] = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.conn.shape[0]

    @property
    def n_copies(self) -> int:
        return len(self.o)

    @property
    def n_clients(self) -> int:
        return self.conn.shape[2]

    @property
    def copy_ids(self) -> list[str]:
        seen: dict[int, int] = {}
        ids = []
        for f in self.origin:
            k = seen.get(int(f), 0)
            seen[int(f)] = k + 1
            ids.append(f"{self.facility_ids[f]}#{k}")
        return ids

    @property
    def y(self) -> np.ndarray:
        return self.active * self.o[None, :]

    @property
    def x(self) -> np.ndarray:
        return self.conn * self.o[None, :, None]

    def in_support(self, t: int) -> np.ndarray:
        """Mask of the copies that serve some client at step ``t``."""
        return self.conn[t].any(axis=1)

    def aggregate(self) -> tuple[np.ndarray, np.ndarray]:
        """(x, y) summed back onto the original facilities."""
        n_f = len(self.facility_ids)
        T, _, n_c = self.conn.shape
        x = np.zeros((T, n_f, n_c))
        y = np.zeros((T, n_f))
        np.add.at(x, (slice(None), self.origin), self.x)
        np.add.at(y, (slice(None), self.origin), self.y)
        return x, y

    def copy_open_cost(self, instance: Instance) -> np.ndarray:
        """(n_copies, T) opening costs inherited from the originals."""
        return instance.open_cost[self.origin]

    def lp_costs(self, instance: Instance) -> tuple[float, float]:
        """(opening, connection) of the copy-level solution."""
        opening = float(np.sum(self.y * self.copy_open_cost(instance).T))
        d = instance.dist[:, self.origin, :]
        connection = float(np.sum(self.x * d))
        return opening, connection

    def restrict(self, times: Sequence[int]) -> "PreprocessedSolution":
        """Keep only the given time steps (``z`` is dropped)."""
        times = list(times)
        n_f, n_c = len(self.facility_ids), self.n_clients
        return replace(self, active=self.active[times].copy(), conn=self.conn[times].copy(),
                       z=np.zeros((max(len(times) - 1, 0), n_f, n_c)), thresholds=list(self.thresholds))

    def to_dict(self) -> dict[str, Any]:
        return {
            "facility_ids": list(self.facility_ids),
            "client_ids": list(self.client_ids),
            "copies": [{"id": cid, "origin": int(f), "o": float(o)}
                       for cid, f, o in zip(self.copy_ids, self.origin, self.o)],
            "active": [np.flatnonzero(self.active[t]).tolist() for t in range(self.T)],
            "conn": [[np.flatnonzero(self.conn[t, :, j]).tolist() for j in range(self.n_clients)]
                     for t in range(self.T)],
            "z": self.z.tolist(),
            "opening": self.opening, "connection": self.connection, "switching": self.switching,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PreprocessedSolution":
        try:
            fids = tuple(data["facility_ids"])
            cids = tuple(data["client_ids"])
            copies = data["copies"]
            origin = np.array([c["origin"] for c in copies], dtype=int)
            o = np.array([c["o"] for c in copies], dtype=float)
            T = len(data["conn"])
            active = np.zeros((T, len(copies)), dtype=bool)
            conn = np.zeros((T, len(copies), len(cids)), dtype=bool)
            for t, idx in enumerate(data["active"]):
                active[t, idx] = True
            for t, rows in enumerate(data["conn"]):
                if len(rows) != len(cids):
                    raise ValueError(f"conn[{t}] has {len(rows)} clients, expected {len(cids)}")
                for j, idx in enumerate(rows):
                    conn[t, idx, j] = True
            z = np.array(data.get("z", []), dtype=float)
        except (KeyError, IndexError, TypeError) as exc:
            raise ValueError(f"malformed preprocessed solution: {exc!r}") from None
        if z.size == 0:
            z = np.zeros((max(T - 1, 0), len(fids), len(cids)))
        return cls(fids, cids, origin, o, active, conn, z,
                   float(data.get("opening", 0.0)), float(data.get("connection", 0.0)),
                   float(data.get("switching", 0.0)))


def _snap(values: np.ndarray, snap: float) -> np.ndarray:
    """Sorted representatives of ``values``, merging runs closer than ``snap``."""
    vals = np.sort(values)
    reps = []
    for v in vals:
        if not reps or v - reps[-1] > snap:
            reps.append(float(v))
    return np.array(reps)


def duplicate_facilities(frac: FractionalSolution, facility_ids: Sequence[str] | None = None,
                         client_ids: Sequence[str] | None = None,
                         snap: float = SNAP_TOL) -> PreprocessedSolution:
    """Split every facility along the thresholds formed by all its x and y values.

    For facility ``i`` the thresholds are the distinct positive values among
    ``x[t, i, j]`` and ``y[t, i]`` over all ``t, j``; copy ``k`` gets
    ``o = theta_k - theta_{k-1}``. A value equal to ``theta_k`` is realised by
    the first ``k + 1`` copies, so equal values at different steps map to
    identical copy sets.
    """
    T, n_f, n_c = frac.x.shape
    facility_ids = tuple(facility_ids) if facility_ids is not None else tuple(f"f{i}" for i in range(n_f))
    client_ids = tuple(client_ids) if client_ids is not None else tuple(f"c{j}" for j in range(n_c))

    origin, o_list, thresholds = [], [], []
    first_copy = np.zeros(n_f, dtype=int)
    levels_x = np.zeros((T, n_f, n_c), dtype=int)     # number of copies used
    levels_y = np.zeros((T, n_f), dtype=int)
    for i in range(n_f):
        xi, yi = frac.x[:, i, :], frac.y[:, i]
        vals = np.concatenate([xi[xi > snap], yi[yi > snap]])
        theta = _snap(vals, snap) if vals.size else np.zeros(0)
        thresholds.append(theta)
        first_copy[i] = len(origin)
        prev = 0.0
        for th in theta:
            origin.append(i)
            o_list.append(th - prev)
            prev = th
        # level of v = 1 + index of its threshold, 0 for v <= snap
        levels_x[:, i, :] = _levels(xi, theta, snap)
        levels_y[:, i] = _levels(yi, theta, snap)

    if np.any(levels_x > levels_y[:, :, None]):
        t, i, j = np.argwhere(levels_x > levels_y[:, :, None])[0]
        raise PreprocessError(f"x exceeds y at t={t}, facility {facility_ids[i]}, "
                              f"client {client_ids[j]}")
    origin = np.array(origin, dtype=int)
    o = np.array(o_list, dtype=float)
    n_copies = len(o)
    rank = np.arange(n_copies) - first_copy[origin]       # position within its facility
    active = rank[None, :] < levels_y[:, origin]
    conn = rank[None, :, None] < levels_x[:, origin, :]
    return PreprocessedSolution(facility_ids, client_ids, origin, o, active, conn,
                                frac.z.copy(), frac.opening, frac.connection, frac.switching,
                                thresholds)


def _levels(v: np.ndarray, theta: np.ndarray, snap: float) -> np.ndarray:
    if theta.size == 0:
        return np.zeros(v.shape, dtype=int)
    # runs are disjoint and start at their representative
    return np.where(v > snap, np.searchsorted(theta, v, side="right"), 0)


def preprocess(frac: FractionalSolution, instance: Instance) -> PreprocessedSolution:
    """stabilize then duplicate_facilities, with costs from ``instance``."""
    stable = stabilize(frac, instance)
    return duplicate_facilities(stable, instance.facility_ids, instance.client_ids)


def check_preprocessed(prep: PreprocessedSolution, tol: float = FEAS_TOL) -> list[str]:
    """Problems with the structural invariants of ``prep`` (empty when sound)."""
    problems = []
    if np.any(prep.o <= 0):
        problems.append("copy with nonpositive o")
    if np.any(prep.conn & ~prep.active[:, :, None]):
        problems.append("client served by an inactive copy")
    sums = np.einsum("tcj,c->tj", prep.conn.astype(float), prep.o)
    if np.any(np.abs(sums - 1.0) > tol * max(1, prep.n_copies)):
        t, j = np.unravel_index(np.argmax(np.abs(sums - 1.0)), sums.shape)
        problems.append(f"client {j} at t={t} has total connection {sums[t, j]!r}")
    return problems


def write_preprocessed(prep: PreprocessedSolution, path, instance: Instance | None = None) -> None:
    data = prep.to_dict()
    if instance is not None:
        data["instance"] = instance.to_dict()
    Path(path).write_text(json.dumps(data), encoding="utf-8")


def read_preprocessed(path) -> tuple[PreprocessedSolution, Instance | None]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    inst = Instance.from_dict(data["instance"]) if "instance" in data else None
    return PreprocessedSolution.from_dict(data), inst
