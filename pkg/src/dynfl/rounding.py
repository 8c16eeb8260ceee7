"""Rounding a preprocessed solution with competing exponential clocks.

One clock per facility copy (rate ``o``) and per client (rate 1) is shared
by all time steps. At step ``t`` every vertex of the support graph points to
its smallest-clock neighbour; facilities on 2-cycles open and each client
follows its arcs until the walk would revisit a vertex, taking the last
facility seen.

Two equivalent procedures are provided (:func:`round_timestep_graph` and
:func:`round_timestep_sequential`), plus :func:`round_batch`, a vectorised
form of the graph procedure used for Monte Carlo over many seeds at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, NamedTuple, Sequence

import numpy as np

from . import rng
from .preprocess import PreprocessedSolution, check_preprocessed


class GraphStructureError(AssertionError):
    """A connection graph broke out-degree one or contains a cycle longer than two."""


class CorruptSolutionError(ValueError):
    pass


class Node(NamedTuple):
    kind: str       # "client" or "copy"
    index: int

    def __repr__(self):
        return f"{'j' if self.kind == 'client' else 'i'}{self.index}"


def client_node(j: int) -> Node:
    return Node("client", j)


def copy_node(c: int) -> Node:
    return Node("copy", c)


@dataclass
class Clocks:
    Q: np.ndarray      # per copy, Exp(o)
    R: np.ndarray      # per client, Exp(1)
    seed: int | None = None

    def key(self, v: Node) -> tuple:
        # ties fall back to (kind, index); distinct with probability one anyway
        val = self.Q[v.index] if v.kind == "copy" else self.R[v.index]
        return (float(val), v.kind, v.index)


def _check_rates(o: np.ndarray):
    if np.any(~(np.asarray(o) > 0)):
        raise ValueError("every copy needs a positive opening fraction o")


def batch_clocks(o: np.ndarray, n_clients: int, seeds) -> tuple[np.ndarray, np.ndarray]:
    """Clock arrays Q (B, n_copies) and R (B, n_clients) for a vector of seeds."""
    _check_rates(o)
    seeds = np.asarray(seeds).reshape(-1, 1)
    Q = rng.exponential(seeds, rng.KIND_FACILITY, np.arange(len(o))[None, :], np.asarray(o)[None, :])
    R = rng.exponential(seeds, rng.KIND_CLIENT, np.arange(n_clients)[None, :], 1.0)
    return Q, R


def sample_clocks(prep: PreprocessedSolution, seed: int) -> Clocks:
    """Q_c = -ln(u_c)/o_c and R_j = -ln(v_j), u and v keyed by (seed, kind, index)."""
    Q, R = batch_clocks(prep.o, prep.n_clients, [seed])
    return Clocks(Q[0], R[0], seed)


# --------------------------------------------------------------------------
# graph presentation


@dataclass
class ConnectionGraph:
    t: int
    vertices: list[Node]
    succ: dict[Node, Node]
    edges: set[frozenset]

    def check_structure(self) -> None:
        """Raise :class:`GraphStructureError` unless out-degree is one, arcs lie
        on support edges and every cycle has exactly two arcs."""
        vs = set(self.vertices)
        if set(self.succ) != vs:
            raise GraphStructureError("some vertex lacks an outgoing arc")
        for u, v in self.succ.items():
            if v not in vs or frozenset((u, v)) not in self.edges:
                raise GraphStructureError(f"arc {u}->{v} is not a support edge")
        # functional graph: each vertex reaches exactly one cycle
        state: dict[Node, int] = {}
        for start in self.vertices:
            if start in state:
                continue
            walk, pos = [], {}
            v = start
            while v not in state and v not in pos:
                pos[v] = len(walk)
                walk.append(v)
                v = self.succ[v]
            if v in pos and len(walk) - pos[v] != 2:
                cyc = walk[pos[v]:]
                raise GraphStructureError(f"cycle of length {len(cyc)}: {cyc}")
            for w in walk:
                state[w] = 1


def support_neighbors(prep: PreprocessedSolution, t: int):
    conn = prep.conn[t]
    fac_of = {j: [copy_node(int(c)) for c in np.flatnonzero(conn[:, j])] for j in range(prep.n_clients)}
    cli_of = {int(c): [client_node(int(j)) for j in np.flatnonzero(conn[c])]
              for c in np.flatnonzero(conn.any(axis=1))}
    return fac_of, cli_of


def build_connection_graph(prep: PreprocessedSolution, t: int, clocks: Clocks,
                           check: bool = True) -> ConnectionGraph:
    fac_of, cli_of = support_neighbors(prep, t)
    succ: dict[Node, Node] = {}
    edges: set[frozenset] = set()
    for j, nbrs in fac_of.items():
        if not nbrs:
            raise CorruptSolutionError(f"client {prep.client_ids[j]} has no support at t={t}")
        succ[client_node(j)] = min(nbrs, key=clocks.key)
        edges.update(frozenset((client_node(j), v)) for v in nbrs)
    for c, nbrs in cli_of.items():
        succ[copy_node(c)] = min(nbrs, key=clocks.key)
    vertices = [copy_node(c) for c in cli_of] + [client_node(j) for j in fac_of]
    g = ConnectionGraph(t, vertices, succ, edges)
    if check:
        g.check_structure()
    return g


def connection_path(j, graph: ConnectionGraph) -> list[Node]:
    """Follow arcs from client ``j``, stopping before the first revisit."""
    v = j if isinstance(j, Node) else client_node(j)
    path, seen = [v], {v}
    while True:
        v = graph.succ[v]
        if v in seen:
            return path
        path.append(v)
        seen.add(v)


def round_timestep_graph(prep: PreprocessedSolution, t: int, clocks: Clocks,
                         graph: ConnectionGraph | None = None) -> tuple[frozenset, np.ndarray]:
    """Open copies on 2-cycles; assign each client to the last copy on its path."""
    if graph is None:
        graph = build_connection_graph(prep, t, clocks)
    opened = frozenset(v.index for v, w in graph.succ.items()
                       if v.kind == "copy" and graph.succ[w] == v)
    assign = np.empty(prep.n_clients, dtype=int)
    for j in range(prep.n_clients):
        path = connection_path(j, graph)
        last = path[-1] if path[-1].kind == "copy" else path[-2]
        assign[j] = last.index
    if not set(assign.tolist()) <= opened:
        raise GraphStructureError("a client was assigned to an unopened copy")
    return opened, assign


def round_timestep_sequential(prep: PreprocessedSolution, t: int,
                              clocks: Clocks) -> tuple[frozenset, np.ndarray]:
    """Clients in increasing clock order: take the smallest-clock copy ``i``
    around ``j``; if ``j`` is the smallest-clock client around ``i`` open
    ``i``, otherwise copy the decision of that smaller client."""
    fac_of, cli_of = support_neighbors(prep, t)
    order = sorted(range(prep.n_clients), key=lambda j: clocks.key(client_node(j)))
    assign = np.full(prep.n_clients, -1, dtype=int)
    opened = set()
    for j in order:
        if not fac_of[j]:
            raise CorruptSolutionError(f"client {prep.client_ids[j]} has no support at t={t}")
        i = min(fac_of[j], key=clocks.key)
        jp = min(cli_of[i.index], key=clocks.key).index
        if jp == j:
            opened.add(i.index)
            assign[j] = i.index
        else:
            if assign[jp] < 0:
                raise AssertionError("smaller-clock client was not connected yet")
            assign[j] = assign[jp]
    return frozenset(opened), assign


@dataclass
class RoundedSolution:
    """Per-step open facilities and assignments, in original and copy indices."""

    facility_ids: tuple[str, ...]
    client_ids: tuple[str, ...]
    open_sets: list[frozenset]          # original facility indices, per t
    assign: np.ndarray                  # (T, n_c) original facility index
    open_copies: list[frozenset] | None = None
    copy_assign: np.ndarray | None = None
    seed: int | None = None

    @property
    def T(self) -> int:
        return len(self.open_sets)

    def to_dict(self) -> dict[str, Any]:
        data = {
            "seed": self.seed,
            "steps": [{"open": [self.facility_ids[i] for i in sorted(self.open_sets[t])],
                       "assign": {self.client_ids[j]: self.facility_ids[self.assign[t, j]]
                                  for j in range(len(self.client_ids))}}
                      for t in range(self.T)],
        }
        if self.open_copies is not None:
            data["debug"] = {"open_copies": [sorted(s) for s in self.open_copies],
                             "copy_assign": self.copy_assign.tolist()}
        return data

    @classmethod
    def from_dict(cls, data: dict, facility_ids: Sequence[str], client_ids: Sequence[str]):
        fpos = {f: i for i, f in enumerate(facility_ids)}
        cpos = {c: j for j, c in enumerate(client_ids)}
        steps = data["steps"]
        open_sets, assign = [], np.zeros((len(steps), len(client_ids)), dtype=int)
        for t, st in enumerate(steps):
            try:
                open_sets.append(frozenset(fpos[f] for f in st["open"]))
                for c, f in st["assign"].items():
                    assign[t, cpos[c]] = fpos[f]
            except KeyError as exc:
                raise ValueError(f"step {t} references unknown id {exc}") from None
        return cls(tuple(facility_ids), tuple(client_ids), open_sets, assign, seed=data.get("seed"))


def round_all(prep: PreprocessedSolution, clocks: Clocks) -> RoundedSolution:
    """Round every step with the same clocks and map copies back to facilities."""
    problems = check_preprocessed(prep)
    if problems:
        raise CorruptSolutionError("; ".join(problems))
    open_copies, copy_assign = [], np.zeros((prep.T, prep.n_clients), dtype=int)
    for t in range(prep.T):
        opened, a = round_timestep_graph(prep, t, clocks)
        open_copies.append(opened)
        copy_assign[t] = a
    open_sets = [frozenset(int(prep.origin[c]) for c in s) for s in open_copies]
    return RoundedSolution(prep.facility_ids, prep.client_ids, open_sets,
                           prep.origin[copy_assign], open_copies, copy_assign, clocks.seed)


def write_rounded(sol: RoundedSolution, path) -> None:
    Path(path).write_text(json.dumps(sol.to_dict(), indent=1), encoding="utf-8")


# --------------------------------------------------------------------------
# vectorised graph procedure
#
# Vertex numbering: clients 0..n_c-1, then copy c at n_c + c. Copies outside
# the support at step t point to themselves and are masked out of checks.


def batch_successors(conn_t: np.ndarray, Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    """(B, N) successor array of the connection graph for each clock row."""
    n_q, n_c = conn_t.shape
    B = Q.shape[0]
    if np.any(~conn_t.any(axis=0)):
        j = int(np.flatnonzero(~conn_t.any(axis=0))[0])
        raise CorruptSolutionError(f"client {j} has no support")
    succ = np.empty((B, n_c + n_q), dtype=np.int64)
    Qm = np.where(conn_t.T[None, :, :], Q[:, None, :], np.inf)
    succ[:, :n_c] = n_c + np.argmin(Qm, axis=2)
    Rm = np.where(conn_t[None, :, :], R[:, None, :], np.inf)
    succ[:, n_c:] = np.argmin(Rm, axis=2)
    outside = ~conn_t.any(axis=1)
    succ[:, n_c + np.flatnonzero(outside)] = n_c + np.flatnonzero(outside)
    return succ


def _power(succ: np.ndarray, n_steps: int) -> np.ndarray:
    """succ applied at least ``n_steps`` times (by repeated squaring)."""
    P = succ
    reach = 1
    while reach < n_steps:
        P = np.take_along_axis(P, P, axis=1)
        reach *= 2
    return P


def check_batch_structure(succ: np.ndarray, conn_t: np.ndarray) -> None:
    """Vectorised form of :meth:`ConnectionGraph.check_structure`."""
    n_q, n_c = conn_t.shape
    B, N = succ.shape
    valid = np.concatenate([np.ones(n_c, dtype=bool), conn_t.any(axis=1)])
    # arcs on support edges
    cl = succ[:, :n_c] - n_c
    if np.any(cl < 0) or not np.all(conn_t[cl, np.arange(n_c)[None, :]]):
        raise GraphStructureError("client arc leaves the support graph")
    vq = np.flatnonzero(valid[n_c:])
    if vq.size and not np.all(conn_t[vq[None, :], succ[:, n_c + vq]]):
        raise GraphStructureError("copy arc leaves the support graph")
    terminal = _power(succ, N)
    back = np.take_along_axis(succ, np.take_along_axis(succ, terminal, axis=1), axis=1)
    bad = (back != terminal) & valid[None, :]
    if bad.any():
        b, v = np.argwhere(bad)[0]
        raise GraphStructureError(f"trial row {b}: vertex {v} reaches a cycle longer than two")


@dataclass
class BatchRound:
    succ: np.ndarray          # (B, N)
    opened: np.ndarray        # (B, n_copies) bool
    assign: np.ndarray        # (B, n_c) copy index


def round_batch(conn_t: np.ndarray, Q: np.ndarray, R: np.ndarray, check: bool = True) -> BatchRound:
    """Graph procedure for one step over a batch of clock draws."""
    n_q, n_c = conn_t.shape
    succ = batch_successors(conn_t, Q, R)
    if check:
        check_batch_structure(succ, conn_t)
    N = succ.shape[1]
    s2 = np.take_along_axis(succ, succ, axis=1)
    opened = (s2[:, n_c:] == np.arange(n_c, N)[None, :]) & conn_t.any(axis=1)[None, :]
    terminal = _power(succ, N)[:, :n_c]
    t_next = np.take_along_axis(succ, terminal, axis=1)
    fac = np.where(terminal >= n_c, terminal, t_next) - n_c
    return BatchRound(succ, opened, fac)


def _walk_step(succ, cur, prev, alive):
    nxt = np.take_along_axis(succ, cur, axis=1)
    appended = alive & (nxt != prev)
    return nxt, appended


def arc_traffic(succ: np.ndarray, n_c: int) -> np.ndarray:
    """(B, N): number of connection paths using the out-arc of each vertex."""
    B, N = succ.shape
    cur = np.broadcast_to(np.arange(n_c), (B, n_c)).copy()
    prev = np.full((B, n_c), -1)
    alive = np.ones((B, n_c), dtype=bool)
    rows = np.repeat(np.arange(B)[:, None], n_c, axis=1)
    counts = np.zeros(B * N, dtype=np.int64)
    while alive.any():
        nxt, appended = _walk_step(succ, cur, prev, alive)
        counts += np.bincount((rows * N + cur)[appended], minlength=B * N)
        prev = np.where(appended, cur, prev)
        cur = np.where(appended, nxt, cur)
        alive = appended
    return counts.reshape(B, N)


def edge_traffic(succ: np.ndarray, conn_t: np.ndarray) -> np.ndarray:
    """(B, n_copies, n_c): paths traversing each support edge in either direction."""
    n_q, n_c = conn_t.shape
    B, N = succ.shape
    counts = arc_traffic(succ, n_c)
    out = np.zeros((B, n_q, n_c), dtype=np.int64)
    b = np.arange(B)[:, None]
    # client -> copy arcs
    out[b, succ[:, :n_c] - n_c, np.arange(n_c)[None, :]] += counts[:, :n_c]
    vq = np.flatnonzero(conn_t.any(axis=1))
    if vq.size:
        out[b, vq[None, :], succ[:, n_c + vq]] += counts[:, n_c + vq]
    return out


def paths_differ(succ_a: np.ndarray, succ_b: np.ndarray, n_c: int) -> np.ndarray:
    """(B, n_c) bool: whether each client's connection path differs between graphs."""
    B = succ_a.shape[0]
    start = np.broadcast_to(np.arange(n_c), (B, n_c))
    cur_a, cur_b = start.copy(), start.copy()
    prev_a, prev_b = np.full((B, n_c), -1), np.full((B, n_c), -1)
    alive_a = np.ones((B, n_c), dtype=bool)
    alive_b = alive_a.copy()
    diff = np.zeros((B, n_c), dtype=bool)
    while (alive_a | alive_b).any():
        nxt_a, app_a = _walk_step(succ_a, cur_a, prev_a, alive_a)
        nxt_b, app_b = _walk_step(succ_b, cur_b, prev_b, alive_b)
        diff |= (app_a != app_b) | (app_a & app_b & (nxt_a != nxt_b))
        prev_a, cur_a = np.where(app_a, cur_a, prev_a), np.where(app_a, nxt_a, cur_a)
        prev_b, cur_b = np.where(app_b, cur_b, prev_b), np.where(app_b, nxt_b, cur_b)
        alive_a, alive_b = app_a & ~diff, app_b & ~diff
    return diff


def batch_paths(succ: np.ndarray, n_c: int, row: int) -> list[list[int]]:
    """Connection paths (as vertex numbers) of every client in one batch row."""
    paths = []
    for j in range(n_c):
        path, prev, cur = [j], -1, j
        while True:
            nxt = int(succ[row, cur])
            if nxt == prev:
                break
            path.append(nxt)
            prev, cur = cur, nxt
        paths.append(path)
    return paths
