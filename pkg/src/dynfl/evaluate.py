"""Objective evaluation and Monte Carlo checks of the rounding's expectation bounds."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .instance import Instance
from .lp import FractionalSolution, solve_instance
from .oracle import DEFAULT_LIMIT, brute_force
from .preprocess import (PreprocessedSolution, change_set, check_preprocessed,
                         duplicate_facilities, stabilize)
from .rounding import (CorruptSolutionError, RoundedSolution, batch_clocks, edge_traffic,
                       paths_differ, round_batch)

SIGMAS = 4.0
EXACT_TOL = 1e-9

# approximation factors per cost component against the unprocessed LP optimum
FACTOR_OPENING = 2.0
FACTOR_CONNECTION = 12.0
FACTOR_SWITCHING = 14.0
FACTOR_TOTAL = 14.0


@dataclass
class CostBreakdown:
    opening: float
    connection: float
    switching: float

    @property
    def total(self) -> float:
        return self.opening + self.connection + self.switching


def cost(instance: Instance, sol: RoundedSolution) -> CostBreakdown:
    """Opening + connection + switching cost of an integral solution."""
    T, n_f, n_c = instance.T, instance.n_facilities, instance.n_clients
    if sol.T != T or sol.assign.shape != (T, n_c):
        raise ValueError(f"solution covers {sol.T} steps / {sol.assign.shape}, "
                         f"instance has T={T}, {n_c} clients")
    opening = 0.0
    for t, A in enumerate(sol.open_sets):
        bad = [i for i in A if not 0 <= i < n_f]
        if bad:
            raise ValueError(f"step {t} opens unknown facility index {bad[0]}")
        opening += float(sum(instance.open_cost[i, t] for i in sorted(A)))
    connection = 0.0
    for t in range(T):
        for j in range(n_c):
            i = int(sol.assign[t, j])
            if i not in sol.open_sets[t]:
                raise ValueError(f"client {instance.client_ids[j]} assigned to closed or unknown "
                                 f"facility index {i} at step {t}")
            connection += float(instance.dist[t, i, j])
    switches = int(np.sum(sol.assign[:-1] != sol.assign[1:]))
    return CostBreakdown(opening, connection, instance.g * switches)


# --------------------------------------------------------------------------
# random fractional solutions


def random_grid_solution(n_f: int, n_c: int, T: int, grid: int, seed: int,
                         stay: float = 0.5) -> FractionalSolution:
    """Feasible fractional solution with every x a multiple of ``1/grid``.

    Each client's row is a random composition of ``grid`` units over the
    facilities; with probability ``stay`` it is copied from the previous
    step. ``y`` is the column maximum and ``z`` the positive part of the
    step-to-step decrease, so the result lies in the relaxation.
    """
    rng = np.random.default_rng(seed)
    units = np.zeros((T, n_f, n_c), dtype=int)
    for t in range(T):
        for j in range(n_c):
            if t > 0 and rng.random() < stay:
                units[t, :, j] = units[t - 1, :, j]
            else:
                units[t, :, j] = rng.multinomial(grid, np.ones(n_f) / n_f)
    x = units / grid
    y = x.max(axis=2)
    z = np.maximum(x[:-1] - x[1:], 0.0)
    return FractionalSolution(x, y, z)


def random_grid_prep(n_f: int, n_c: int, T: int, grid: int, seed: int,
                     stay: float = 0.5, g: float = 1.0, drift: float = 0.2):
    """(instance, preprocessed solution) pair built on :func:`random_grid_solution`."""
    from .instance import generate_drifting

    inst = generate_drifting(n_f, n_c, T, drift, g, seed)
    frac = random_grid_solution(n_f, n_c, T, grid, seed + 1, stay).with_costs(inst)
    return inst, duplicate_facilities(frac, inst.facility_ids, inst.client_ids)


def perturbation_pair(n_f: int, n_c: int, k: int, grid: int, seed: int,
                      max_tries: int = 1000) -> tuple[PreprocessedSolution, PreprocessedSolution]:
    """Two single-step solutions on shared copies differing in exactly ``k`` clients.

    A two-step grid solution is drawn where only ``k`` clients change their
    row; after joint duplication its steps are split into the A and B sides.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        base = random_grid_solution(n_f, n_c, 1, grid, int(rng.integers(2**62)))
        x = np.concatenate([base.x, base.x], axis=0)
        K = rng.choice(n_c, size=k, replace=False)
        for j in K:
            x[1, :, j] = rng.multinomial(grid, np.ones(n_f) / n_f) / grid
        if not all(np.any(x[0, :, j] != x[1, :, j]) for j in K):
            continue
        frac = FractionalSolution(x, x.max(axis=2), np.maximum(x[:-1] - x[1:], 0.0))
        prep = duplicate_facilities(frac)
        return prep.restrict([0]), prep.restrict([1])
    raise RuntimeError("could not draw a perturbation pair")


# --------------------------------------------------------------------------
# Monte Carlo


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    n = len(values)
    mean = math.fsum(values.tolist()) / n
    if n < 2:
        return mean, float("nan")
    return mean, float(np.std(values, ddof=1) / math.sqrt(n))


@dataclass
class TrialStats:
    """Empirical estimates over ``trials`` independent roundings.

    Per-trial cost arrays are kept so that means and standard errors can be
    recomputed for any aggregate. ``se`` values are NaN for a single trial.
    """

    trials: int
    base_seed: int
    open_count: np.ndarray          # (T, n_copies) trials with the copy open
    edge_sum: np.ndarray            # (T, n_copies, n_c) total path traversals
    edge_sumsq: np.ndarray
    opening: np.ndarray             # (trials, T), original-level
    connection: np.ndarray          # (trials, T)
    switches: np.ndarray            # (trials, T-1) clients changing original facility
    copy_switches: np.ndarray       # (trials, T-1) clients changing copy
    g: float = 0.0

    @property
    def open_freq(self) -> np.ndarray:
        return self.open_count / self.trials

    @property
    def edge_mean(self) -> np.ndarray:
        return self.edge_sum / self.trials

    @property
    def edge_se(self) -> np.ndarray:
        n = self.trials
        if n < 2:
            return np.full(self.edge_sum.shape, np.nan)
        mean = self.edge_sum / n
        var = np.maximum(self.edge_sumsq - n * mean**2, 0.0) / (n - 1)
        return np.sqrt(var / n)

    @property
    def se_defined(self) -> bool:
        return self.trials >= 2

    def component(self, name: str) -> tuple[float, float]:
        """(mean, se) of the total opening/connection/switching/total cost per trial."""
        per_trial = {
            "opening": lambda: self.opening.sum(axis=1),
            "connection": lambda: self.connection.sum(axis=1),
            "switching": lambda: self.g * self.switches.sum(axis=1),
            "total": lambda: (self.opening.sum(axis=1) + self.connection.sum(axis=1)
                              + self.g * self.switches.sum(axis=1)),
        }[name]()
        return _mean_se(per_trial)


def _trial_chunk(args) -> dict[str, np.ndarray]:
    instance, prep, seeds, with_edges = args
    T, n_c = prep.T, prep.n_clients
    Q, R = batch_clocks(prep.o, n_c, seeds)
    B = len(seeds)
    n_f = instance.n_facilities
    onehot = np.zeros((prep.n_copies, n_f))
    onehot[np.arange(prep.n_copies), prep.origin] = 1.0
    out = {
        "open_count": np.zeros((T, prep.n_copies), dtype=np.int64),
        "edge_sum": np.zeros((T, prep.n_copies, n_c), dtype=np.int64),
        "edge_sumsq": np.zeros((T, prep.n_copies, n_c), dtype=np.int64),
        "opening": np.zeros((B, T)),
        "connection": np.zeros((B, T)),
    }
    copy_assign = np.zeros((T, B, n_c), dtype=np.int64)
    cols = np.arange(n_c)[None, :]
    for t in range(T):
        conn_t = prep.conn[t]
        br = round_batch(conn_t, Q, R, check=True)
        out["open_count"][t] = br.opened.sum(axis=0)
        if with_edges:
            e = edge_traffic(br.succ, conn_t)
            out["edge_sum"][t] = e.sum(axis=0)
            out["edge_sumsq"][t] = (e * e).sum(axis=0)
        orig_open = (br.opened.astype(float) @ onehot) > 0
        out["opening"][:, t] = orig_open.astype(float) @ instance.open_cost[:, t]
        out["connection"][:, t] = instance.dist[t][prep.origin[br.assign], cols].sum(axis=1)
        copy_assign[t] = br.assign
    orig = prep.origin[copy_assign]
    out["switches"] = (orig[:-1] != orig[1:]).sum(axis=2).T
    out["copy_switches"] = (copy_assign[:-1] != copy_assign[1:]).sum(axis=2).T
    return out


def run_trials(instance: Instance, prep: PreprocessedSolution, trials: int, base_seed: int = 0,
               batch_size: int = 4096, with_edges: bool = True, workers: int = 1) -> TrialStats:
    """Round with seeds ``base_seed .. base_seed + trials - 1`` and aggregate.

    Results do not depend on ``batch_size`` or ``workers``: every trial is a
    pure function of its seed, counts are integers and per-trial costs are
    concatenated in seed order.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if prep.n_clients != instance.n_clients or len(prep.facility_ids) != instance.n_facilities \
            or prep.T != instance.T:
        raise ValueError("preprocessed solution does not match the instance")
    problems = check_preprocessed(prep)
    if problems:
        raise CorruptSolutionError("; ".join(problems))
    seeds = np.arange(base_seed, base_seed + trials, dtype=np.int64)
    chunks = [(instance, prep, seeds[k:k + batch_size], with_edges)
              for k in range(0, trials, batch_size)]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_trial_chunk, chunks))
    else:
        parts = [_trial_chunk(c) for c in chunks]
    total = {k: sum(p[k] for p in parts) for k in ("open_count", "edge_sum", "edge_sumsq")}
    cat = {k: np.concatenate([p[k] for p in parts], axis=0)
           for k in ("opening", "connection", "switches", "copy_switches")}
    return TrialStats(trials, base_seed, g=instance.g, **total, **cat)


# --------------------------------------------------------------------------
# bound checks


@dataclass
class BoundCheck:
    name: str
    t: int
    empirical: float
    bound: float
    se: float
    ok: bool
    where: Any = None

    @property
    def slack_sigma(self) -> float:
        """(bound - empirical) in standard errors; inf when the SE is zero."""
        if not self.se or math.isnan(self.se):
            return math.inf if self.empirical <= self.bound else -math.inf
        return (self.bound - self.empirical) / self.se

    def to_dict(self) -> dict:
        return {"name": self.name, "t": self.t, "where": self.where, "empirical": self.empirical,
                "bound": self.bound, "se": None if math.isnan(self.se) else self.se,
                "slack_sigma": _finite_or_none(self.slack_sigma), "ok": self.ok}


def _finite_or_none(v: float):
    return v if math.isfinite(v) else None


def upper_ok(mean: float, bound: float, se: float, sigmas: float = SIGMAS) -> bool:
    """``mean`` exceeds ``bound`` by no more than ``sigmas`` standard errors."""
    slack = EXACT_TOL * max(1.0, abs(bound))
    if math.isnan(se):
        se = 0.0
    return mean <= bound + sigmas * se + slack


def binomial_ok(freq: float, p: float, n: int, sigmas: float = SIGMAS) -> bool:
    """|freq - p| within ``sigmas`` binomial standard errors of the predicted p."""
    sd = math.sqrt(max(p * (1 - p), 0.0) / n)
    return abs(freq - p) <= sigmas * sd + EXACT_TOL


@dataclass
class BoundReport:
    checks: list[BoundCheck] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def failures(self) -> list[BoundCheck]:
        return [c for c in self.checks if not c.ok]

    def by_name(self, name: str) -> list[BoundCheck]:
        return [c for c in self.checks if c.name == name]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "checks": [c.to_dict() for c in self.checks]}


def check_bounds(stats: TrialStats, prep: PreprocessedSolution, instance: Instance,
                 sigmas: float = SIGMAS) -> BoundReport:
    """Per-step opening, connection and switching bounds, plus per-copy and per-edge checks.

    * opening: E[sum f Y] <= sum f y (copy-level LP)
    * connection: E[sum d X] <= 6 sum d x
    * switching: g E[#clients changing copy] <= 7 g |Z^t|
    * open_prob: each support copy opens with probability exactly o
    * edge: expected paths through each support edge <= 6 x
    """
    if stats.open_count.shape != (prep.T, prep.n_copies) or prep.T != instance.T:
        raise ValueError("statistics, preprocessed solution and instance do not match")
    n = stats.trials
    rep = BoundReport()
    f_copy = prep.copy_open_cost(instance)
    d_copy = instance.dist[:, prep.origin, :]
    y, x = prep.y, prep.x
    for t in range(prep.T):
        m, se = _mean_se(stats.opening[:, t])
        bound = float(np.sum(f_copy[:, t] * y[t]))
        rep.checks.append(BoundCheck("opening", t, m, bound, se, upper_ok(m, bound, se, sigmas)))
        m, se = _mean_se(stats.connection[:, t])
        bound = 6.0 * float(np.sum(d_copy[t] * x[t]))
        rep.checks.append(BoundCheck("connection", t, m, bound, se, upper_ok(m, bound, se, sigmas)))
        if t < prep.T - 1:
            m, se = _mean_se(stats.copy_switches[:, t].astype(float))
            Z = len(change_set(prep, t))
            rep.checks.append(BoundCheck("switching", t, instance.g * m, 7.0 * instance.g * Z,
                                         instance.g * se,
                                         upper_ok(m, 7.0 * Z, se, sigmas)))
        support = prep.in_support(t)
        for c in np.flatnonzero(support):
            freq = float(stats.open_freq[t, c])
            p = float(prep.o[c])
            sd = math.sqrt(max(p * (1 - p), 0.0) / n)
            rep.checks.append(BoundCheck("open_prob", t, freq, p, sd, binomial_ok(freq, p, n, sigmas),
                                         where=int(c)))
        em, ese = stats.edge_mean[t], stats.edge_se[t]
        for c, j in np.argwhere(prep.conn[t]):
            bound = 6.0 * float(prep.o[c])
            rep.checks.append(BoundCheck("edge", t, float(em[c, j]), bound, float(ese[c, j]),
                                         upper_ok(float(em[c, j]), bound, float(ese[c, j]), sigmas),
                                         where=(int(c), int(j))))
    return rep


# --------------------------------------------------------------------------
# perturbation experiment


@dataclass
class PerturbationResult:
    trials: int
    K: list[list[int]]                 # per t
    mean_paths: list[float]
    se_paths: list[float]
    mean_assign: list[float]
    checks: list[BoundCheck]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def to_dict(self) -> dict:
        return {"trials": self.trials, "K": self.K, "mean_differing_paths": self.mean_paths,
                "se": self.se_paths, "mean_differing_assignments": self.mean_assign,
                "ok": self.ok, "checks": [c.to_dict() for c in self.checks]}


def perturbation_experiment(prep_a: PreprocessedSolution, prep_b: PreprocessedSolution,
                            trials: int, seed: int = 0, batch_size: int = 4096,
                            sigmas: float = SIGMAS) -> PerturbationResult:
    """Count clients whose connection paths differ when both sides share clocks.

    Both solutions must use the same copies (same ``o`` and origins) and
    clients; ``K`` at step ``t`` is the set of clients whose copy sets differ.
    """
    if (prep_a.n_copies != prep_b.n_copies or not np.array_equal(prep_a.o, prep_b.o)
            or not np.array_equal(prep_a.origin, prep_b.origin)
            or prep_a.n_clients != prep_b.n_clients or prep_a.T != prep_b.T):
        raise ValueError("the two solutions must share copies, clients and horizon")
    for p in (prep_a, prep_b):
        problems = check_preprocessed(p)
        if problems:
            raise CorruptSolutionError("; ".join(problems))
    n_c, T = prep_a.n_clients, prep_a.T
    K = [np.flatnonzero(np.any(prep_a.conn[t] != prep_b.conn[t], axis=0)).tolist() for t in range(T)]
    seeds = np.arange(seed, seed + trials, dtype=np.int64)
    path_counts = np.zeros((trials, T), dtype=np.int64)
    assign_counts = np.zeros((trials, T), dtype=np.int64)
    for k in range(0, trials, batch_size):
        s = seeds[k:k + batch_size]
        Q, R = batch_clocks(prep_a.o, n_c, s)
        for t in range(T):
            ra = round_batch(prep_a.conn[t], Q, R)
            rb = round_batch(prep_b.conn[t], Q, R)
            diff = paths_differ(ra.succ, rb.succ, n_c)
            path_counts[k:k + len(s), t] = diff.sum(axis=1)
            assign_counts[k:k + len(s), t] = (ra.assign != rb.assign).sum(axis=1)
    means, ses, am, checks = [], [], [], []
    for t in range(T):
        m, se = _mean_se(path_counts[:, t].astype(float))
        means.append(m)
        ses.append(se)
        am.append(_mean_se(assign_counts[:, t].astype(float))[0])
        bound = 7.0 * len(K[t])
        checks.append(BoundCheck("differing_paths", t, m, bound, se, upper_ok(m, bound, se, sigmas)))
    return PerturbationResult(trials, K, means, ses, am, checks)


# --------------------------------------------------------------------------
# end to end


def run_pipeline(instance: Instance, tol: float = 1e-9):
    """solve -> stabilize -> duplicate; returns (frac, stable, prep)."""
    frac = solve_instance(instance, tol=tol)
    stable = stabilize(frac, instance)
    prep = duplicate_facilities(stable, instance.facility_ids, instance.client_ids)
    return frac, stable, prep


def approximation_report(instance: Instance, trials: int, seed: int = 0,
                         limit: int = DEFAULT_LIMIT, tol: float = 1e-9,
                         sigmas: float = SIGMAS, with_edges: bool = True,
                         workers: int = 1) -> dict[str, Any]:
    """Full pipeline plus Monte Carlo; compares expected cost against the LP and,
    when enumeration fits within ``limit``, the integral optimum."""
    frac, stable, prep = run_pipeline(instance, tol)
    stats = run_trials(instance, prep, trials, seed, with_edges=with_edges, workers=workers)
    bounds = check_bounds(stats, prep, instance, sigmas)

    lp = {"opening": frac.opening, "connection": frac.connection, "switching": frac.switching,
          "total": frac.objective}
    factors = {"opening": FACTOR_OPENING, "connection": FACTOR_CONNECTION,
               "switching": FACTOR_SWITCHING, "total": FACTOR_TOTAL}
    alg, ratio_checks = {}, []
    for name in ("opening", "connection", "switching", "total"):
        m, se = stats.component(name)
        alg[name] = {"mean": m, "se": se,
                     "ratio_to_lp": m / lp[name] if lp[name] > 0 else None}
        bound = factors[name] * lp[name]
        # require the upper confidence limit to sit under the factor
        ok = m + sigmas * (0.0 if math.isnan(se) else se) <= bound + EXACT_TOL * max(1.0, bound)
        ratio_checks.append(BoundCheck(f"ratio_{name}", -1, m, bound, se, ok))

    report: dict[str, Any] = {
        "lp": lp,
        "lp_info": {k: v for k, v in frac.info.items() if k != "boundaries"},
        "stabilized": {"opening": stable.opening, "connection": stable.connection,
                       "switching": stable.switching,
                       "changes": sum(len(change_set(stable, t)) for t in range(instance.T - 1)),
                       "z_total": float(stable.z.sum())},
        "copies": prep.n_copies,
        "trials": trials,
        "seed": seed,
        "alg": alg,
        "ratio_checks": [c.to_dict() for c in ratio_checks],
        "bounds": bounds.to_dict(),
    }
    if (2**instance.n_facilities) ** instance.T <= limit:
        exact = brute_force(instance, limit)
        m = alg["total"]["mean"]
        report["oracle"] = {"opt": exact.cost, "examined": exact.examined,
                            "ratio_alg_to_opt": m / exact.cost if exact.cost > 0 else None,
                            "lp_le_opt": frac.objective <= exact.cost + 1e-9 * max(1, exact.cost)}
        se = alg["total"]["se"]
        ok = m + sigmas * (0.0 if math.isnan(se) else se) <= FACTOR_TOTAL * exact.cost + EXACT_TOL
        ratio_checks.append(BoundCheck("ratio_opt", -1, m, FACTOR_TOTAL * exact.cost, se, ok))
        report["ratio_checks"].append(ratio_checks[-1].to_dict())
    report["ok"] = bounds.ok and all(c.ok for c in ratio_checks)
    report["_objects"] = {"frac": frac, "stable": stable, "prep": prep, "stats": stats,
                          "bounds": bounds, "ratio_checks": ratio_checks}
    return report
