"""Exact solvers for tiny instances, used as ground truth for the LP and the rounding."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .instance import Instance

DEFAULT_LIMIT = 10**6


class EnumerationLimitError(RuntimeError):
    pass


@dataclass
class ExactSolution:
    open_sets: list[tuple[int, ...]]     # per t, sorted facility indices
    assign: np.ndarray                   # (T, n_c) facility index
    cost: float
    examined: int

    def to_dict(self, instance: Instance) -> dict:
        fid, cid = instance.facility_ids, instance.client_ids
        return {
            "cost": self.cost,
            "examined": self.examined,
            "steps": [{"open": [fid[i] for i in self.open_sets[t]],
                       "assign": {cid[j]: fid[self.assign[t, j]] for j in range(len(cid))}}
                      for t in range(len(self.open_sets))],
        }


def per_client_dp(open_sets: Sequence[Sequence[int]], j: int,
                  instance: Instance) -> tuple[list[int], float]:
    """Cheapest facility sequence for client ``j`` given the open sets.

    Shortest path over states (t, open facility) with step cost
    ``d_t(i, j)`` and ``g`` for every change of facility.
    """
    g = instance.g
    if any(len(A) == 0 for A in open_sets):
        raise ValueError("every open set must be nonempty")
    sets = [np.asarray(sorted(A), dtype=int) for A in open_sets]
    cost = instance.dist[0, sets[0], j].copy()
    back = []
    for t in range(1, len(sets)):
        prev, cur = sets[t - 1], sets[t]
        # trans[a, b]: from prev[a] to cur[b]
        trans = cost[:, None] + g * (prev[:, None] != cur[None, :])
        arg = np.argmin(trans, axis=0)          # first index wins ties
        back.append(arg)
        cost = trans[arg, np.arange(len(cur))] + instance.dist[t, cur, j]
    k = int(np.argmin(cost))
    best = float(cost[k])
    seq = [int(sets[-1][k])]
    for t in range(len(sets) - 1, 0, -1):
        k = int(back[t - 1][k])
        seq.append(int(sets[t - 1][k]))
    return seq[::-1], best


def enumerate_client(open_sets: Sequence[Sequence[int]], j: int,
                     instance: Instance) -> tuple[list[int], float]:
    """Exhaustive counterpart of :func:`per_client_dp` (|A|^T sequences)."""
    best, best_seq = np.inf, None
    for seq in itertools.product(*[sorted(A) for A in open_sets]):
        c = sum(instance.dist[t, i, j] for t, i in enumerate(seq))
        c += instance.g * sum(a != b for a, b in zip(seq, seq[1:]))
        if c < best:
            best, best_seq = c, list(seq)
    return best_seq, float(best)


def _nonempty_subsets(n: int) -> list[tuple[int, ...]]:
    subsets = []
    for mask in range(1, 2**n):
        subsets.append(tuple(i for i in range(n) if mask >> i & 1))
    subsets.sort()
    return subsets


def brute_force(instance: Instance, limit: int = DEFAULT_LIMIT) -> ExactSolution:
    """Integral optimum by enumerating every tuple of nonempty open sets."""
    n_f, n_c, T = instance.n_facilities, instance.n_clients, instance.T
    if (2**n_f) ** T > limit:
        raise EnumerationLimitError(f"(2^{n_f})^{T} open-set tuples exceed the limit {limit}")
    subsets = _nonempty_subsets(n_f)
    best_cost, best = np.inf, None
    examined = 0
    for combo in itertools.product(subsets, repeat=T):
        examined += 1
        c = sum(float(instance.open_cost[list(A), t].sum()) for t, A in enumerate(combo))
        if c >= best_cost:
            continue
        seqs = []
        for j in range(n_c):
            seq, cj = per_client_dp(combo, j, instance)
            c += cj
            seqs.append(seq)
            if c >= best_cost:
                break
        else:
            best_cost, best = c, (combo, seqs)
    combo, seqs = best
    assign = np.array(seqs, dtype=int).T.reshape(T, n_c)
    return ExactSolution([tuple(A) for A in combo], assign, float(best_cost), examined)


def classic_brute_force(dist: np.ndarray, open_cost: np.ndarray) -> float:
    """Single-step facility location optimum: cheapest subset plus nearest assignment."""
    n_f = dist.shape[0]
    best = np.inf
    for mask in range(1, 2**n_f):
        S = [i for i in range(n_f) if mask >> i & 1]
        best = min(best, open_cost[S].sum() + dist[S].min(axis=0).sum())
    return float(best)


def write_exact(sol: ExactSolution, instance: Instance, path) -> None:
    Path(path).write_text(json.dumps(sol.to_dict(instance), indent=1), encoding="utf-8")
