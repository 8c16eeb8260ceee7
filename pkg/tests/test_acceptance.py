"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line in the terminal summary.

Tolerances are pinned here; the Monte Carlo ones use a 4 standard-error margin.
"""

import math
from functools import lru_cache

import networkx as nx
import numpy as np
import pytest

import dynfl.rounding as rounding
from dynfl.evaluate import (approximation_report, check_bounds, perturbation_experiment,
                            perturbation_pair, random_grid_prep, run_pipeline, run_trials)
from dynfl.instance import generate_drifting, generate_two_level, make_instance
from dynfl.lp import solve_instance
from dynfl.oracle import brute_force, enumerate_client, per_client_dp
from dynfl.preprocess import (change_set, check_preprocessed, duplicate_facilities, stabilize,
                              total_changes)
from dynfl.rounding import (build_connection_graph, round_timestep_graph,
                            round_timestep_sequential, sample_clocks)

SIGMAS = 4.0                 # Monte Carlo acceptance margin
TRIALS = 100_000             # trials per instance for criteria 1, 2, 3, 7
COST_REL = 1e-12             # duplication cost preservation
LP_RESIDUAL = 1e-9           # LP/oracle sandwich and z <= tol
FACTOR_TOL = 1e-9            # slack on exact "at most 2x" comparisons
MAX_COPIES = 10
MAX_CLIENTS = 10
MAX_T = 4

pytestmark = pytest.mark.slow


# --------------------------------------------------------------------------
# shared instance families


@lru_cache(maxsize=None)
def bound_suite():
    """20 preprocessed solutions (<= 10 copies, <= 10 clients, T <= 4) and their trials.

    14 come from random grid fractional solutions, 6 from the full pipeline
    on two-level instances with a fractional LP optimum.
    """
    shapes = [(2, 4), (2, 5), (3, 3)]
    suite = []
    seed = 0
    while len(suite) < 14:
        n_f, grid = shapes[seed % 3]
        n_c = 4 + seed % 7
        T = 2 + seed % 3
        inst, prep = random_grid_prep(n_f, n_c, T, grid, 1000 + seed, stay=0.5)
        seed += 1
        if prep.n_copies <= MAX_COPIES:
            suite.append((f"grid{seed - 1}", inst, prep))
    seed = 0
    while len(suite) < 20:
        inst = generate_two_level(3, 4 + seed % 5, 2 + seed % 3, 1.0, 2000 + seed)
        seed += 1
        frac, _, prep = run_pipeline(inst)
        fractional = np.any((frac.x > 1e-9) & (frac.x < 1 - 1e-9))
        if fractional and prep.n_copies <= MAX_COPIES:
            suite.append((f"lp{seed - 1}", inst, prep))
    out = []
    for k, (name, inst, prep) in enumerate(suite):
        assert prep.n_copies <= MAX_COPIES and prep.n_clients <= MAX_CLIENTS and prep.T <= MAX_T
        stats = run_trials(inst, prep, TRIALS, base_seed=10**6 * (k + 1))
        out.append((name, inst, prep, stats, check_bounds(stats, prep, inst, SIGMAS)))
    return out


def worst_z(checks, equality=False):
    z = 0.0
    for c in checks:
        if c.se and not math.isnan(c.se):
            gap = abs(c.empirical - c.bound) if equality else c.empirical - c.bound
            z = max(z, gap / c.se)
    return z


# --------------------------------------------------------------------------


def test_criterion_1_open_frequency_equals_y(detail):
    checks, failed = 0, []
    z = 0.0
    for name, inst, prep, stats, rep in bound_suite():
        cs = rep.by_name("open_prob")
        checks += len(cs)
        z = max(z, worst_z(cs, equality=True))
        failed += [(name, c.t, c.where, c.empirical, c.bound) for c in cs if not c.ok]
    detail(f"20 instances x {TRIALS} trials, {checks} (copy, t) checks, "
           f"max |freq - y| = {z:.2f} sigma (limit {SIGMAS}), {len(failed)} failed")
    assert checks > 0 and not failed, failed[:5]


def test_criterion_2_edge_traversals(detail):
    checks, failed, worst_ratio = 0, [], 0.0
    z = 0.0
    for name, inst, prep, stats, rep in bound_suite():
        cs = rep.by_name("edge")
        checks += len(cs)
        z = max(z, worst_z(cs))
        worst_ratio = max(worst_ratio, max(c.empirical / c.bound * 6 for c in cs))
        failed += [(name, c.t, c.where, c.empirical, c.bound) for c in cs if not c.ok]
    detail(f"{checks} (edge, t) checks, max E[traversals]/x = {worst_ratio:.3f} (bound 6), "
           f"{len(failed)} failed")
    assert checks > 0 and not failed, failed[:5]


def test_criterion_3_differing_paths(detail):
    rows = []
    for k, count in ((1, 20), (2, 10)):
        for s in range(count):
            a, b = perturbation_pair(3, 8, k, 3 + s % 2, 3000 + 100 * k + s)
            res = perturbation_experiment(a, b, TRIALS, seed=10**7 * k + 1000 * s, sigmas=SIGMAS)
            assert len(res.K[0]) == k
            rows.append((k, res.mean_paths[0], res.se_paths[0], res.ok))
    failed = [r for r in rows if not r[3]]
    worst = {k: max(m for kk, m, _, _ in rows if kk == k) for k in (1, 2)}
    detail(f"20 pairs |K|=1, 10 pairs |K|=2, {TRIALS} shared-clock trials; "
           f"max mean differing paths {worst[1]:.3f} (<= 7), {worst[2]:.3f} (<= 14); "
           f"{len(failed)} failed")
    assert not failed, failed


def lp_family(k):
    if k % 2 == 0:
        return generate_two_level(3 + k % 4 // 2, 4 + k % 3, 2 + k % 4, 0.5 + 0.25 * (k % 3), 4000 + k)
    return generate_drifting(3, 4 + k % 3, 2 + k % 4, 0.35, 0.2, 4000 + k, open_cost_range=(0.2, 1.0))


def test_criterion_4_preprocessing_contracts(detail):
    problems = []
    worst = {"opening": 0.0, "connection": 0.0, "switching": 0.0}
    changes_total, fractional = 0, 0
    for k in range(50):
        inst = lp_family(k)
        frac = solve_instance(inst)
        fractional += bool(np.any((frac.x > 1e-9) & (frac.x < 1 - 1e-9)))
        stable = stabilize(frac, inst)
        for part in worst:
            a, b = getattr(stable, part), getattr(frac, part)
            if a > 2 * b + FACTOR_TOL * max(1.0, b):
                problems.append((k, part, a, b))
            if b > 0:
                worst[part] = max(worst[part], a / b)
        changes = total_changes(stable)
        changes_total += changes
        if changes > stable.z.sum() + FACTOR_TOL:
            problems.append((k, "sum|Z| > sum z", changes, stable.z.sum()))

        prep = duplicate_facilities(stable, inst.facility_ids, inst.client_ids)
        if check_preprocessed(prep):
            problems.append((k, "invariants", check_preprocessed(prep)))
        # copy structure, exactly: x in {0, o}, y in {0, o}, x <= y
        if not (np.all((prep.x == 0) | (prep.x == prep.o[None, :, None]))
                and np.all((prep.y == 0) | (prep.y == prep.o[None, :]))
                and not np.any(prep.conn & ~prep.active[:, :, None])):
            problems.append((k, "copy structure"))
        opening, connection = prep.lp_costs(inst)
        for a, b, what in ((opening, stable.opening, "opening"),
                           (connection, stable.connection, "connection")):
            if abs(a - b) > COST_REL * max(abs(b), 1e-300):
                problems.append((k, f"{what} cost drift", a, b))
        for t in range(inst.T - 1):
            if change_set(prep, t) != change_set(stable, t, tol=0.0):
                problems.append((k, "row equality not preserved", t))
    detail(f"50 LP optima ({fractional} fractional); worst stabilized/LP ratios "
           f"opening {worst['opening']:.3f}, connection {worst['connection']:.3f}, "
           f"switching {worst['switching']:.3f} (<= 2); total |Z| {changes_total}; "
           f"{len(problems)} violations")
    assert not problems, problems[:5]


def test_criterion_5_presentations_agree(detail):
    pairs, steps, mismatches = 0, 0, []
    shapes = [(2, 4), (2, 5), (3, 3), (4, 2), (3, 4)]
    for k in range(100):
        n_f, grid = shapes[k % 5]
        _, prep = random_grid_prep(n_f, 2 + k % 9, 1 + k % 4, grid, 5000 + k)
        for s in range(10):
            seed = 7919 * k + s
            clocks = sample_clocks(prep, seed)
            pairs += 1
            for t in range(prep.T):
                steps += 1
                og, ag = round_timestep_graph(prep, t, clocks)
                os_, as_ = round_timestep_sequential(prep, t, clocks)
                if og != os_ or not np.array_equal(ag, as_):
                    mismatches.append((k, seed, t))
    detail(f"{pairs} (instance, seed) pairs, {steps} rounded steps, {len(mismatches)} mismatches")
    assert pairs == 1000 and not mismatches, mismatches[:5]


def test_criterion_6_graph_structure(detail, monkeypatch):
    # every batch rounding in run_trials / perturbation_experiment is checked
    checked = {"rows": 0}
    original = rounding.check_batch_structure

    def counting(succ, conn_t):
        original(succ, conn_t)
        checked["rows"] += succ.shape[0]

    monkeypatch.setattr(rounding, "check_batch_structure", counting)
    expected = 0
    for k in range(10):
        inst, prep = random_grid_prep(3, 3 + k % 7, 1 + k % 4, 3, 6000 + k)
        run_trials(inst, prep, 5000, base_seed=k)
        expected += 5000 * prep.T
    a, b = perturbation_pair(3, 6, 1, 3, 6100)
    perturbation_experiment(a, b, 5000, 0)
    expected += 2 * 5000
    monkeypatch.setattr(rounding, "check_batch_structure", original)

    # independent check of out-degree and cycle lengths with networkx
    graphs, bad = 0, []
    for k in range(100):
        _, prep = random_grid_prep(2 + k % 3, 2 + k % 9, 1 + k % 3, 3 + k % 2, 6200 + k)
        for s in range(10):
            clocks = sample_clocks(prep, 31 * k + s)
            for t in range(prep.T):
                g = build_connection_graph(prep, t, clocks)
                G = nx.DiGraph(list(g.succ.items()))
                graphs += 1
                if any(d != 1 for _, d in G.out_degree()) or G.number_of_nodes() != len(g.vertices):
                    bad.append((k, s, t, "out-degree"))
                if any(len(c) != 2 for c in nx.simple_cycles(G)):
                    bad.append((k, s, t, "long cycle"))
    detail(f"{checked['rows']} batch graphs checked in-line (expected {expected}), "
           f"{graphs} graphs cross-checked with networkx, {len(bad)} violations")
    assert checked["rows"] == expected and not bad, bad[:5]


def test_criterion_7_end_to_end_ratio(detail):
    rows, failed = [], []
    for k in range(20):
        inst = generate_two_level(3, 5, 3, 1.0, k)
        rep = approximation_report(inst, TRIALS, seed=10**8 + k * TRIALS, sigmas=SIGMAS)
        alg = rep["alg"]
        rows.append((alg["total"]["ratio_to_lp"], rep["oracle"]["ratio_alg_to_opt"],
                     {p: alg[p]["ratio_to_lp"] for p in ("opening", "connection", "switching")}))
        bad = [c for c in rep["_objects"]["ratio_checks"] if not c.ok]
        if bad or not rep["oracle"]["lp_le_opt"]:
            failed.append((k, [(c.name, c.empirical, c.bound) for c in bad]))
    worst_lp = max(r[0] for r in rows)
    worst_opt = max(r[1] for r in rows)
    worst_part = {p: max((r[2][p] or 0.0) for r in rows) for p in ("opening", "connection", "switching")}
    n_frac = sum(r[0] > 1 + 1e-9 for r in rows)
    detail(f"20 instances (3 fac, 5 cli, T=3; {n_frac} with E[ALG] > LP); max E[ALG]/LP "
           f"{worst_lp:.3f}, max E[ALG]/OPT {worst_opt:.3f} (<= 14); component maxima "
           f"{worst_part['opening']:.3f}/{worst_part['connection']:.3f}/"
           f"{worst_part['switching']:.3f} (<= 2/12/14); {len(failed)} failed")
    assert not failed, failed


def test_criterion_8_oracle_sandwich(detail):
    gaps, violations = [], []
    for k in range(40):
        gen = k % 2
        inst = (generate_two_level(3, 4, 3, 0.5 + 0.5 * (k % 3), 7000 + k) if gen
                else generate_drifting(3, 4, 3, 0.3, 0.3 * (k % 4), 7000 + k))
        lp = solve_instance(inst).objective
        opt = brute_force(inst).cost
        gaps.append(opt / lp if lp > 0 else 1.0)
        if lp > opt + LP_RESIDUAL * max(1.0, opt):
            violations.append((k, lp, opt))
    dp_cases, dp_bad = 0, []
    rng = np.random.default_rng(8)
    for k in range(300):
        T = int(rng.integers(1, 5))
        n_f = int(rng.integers(1, 5))
        inst = generate_drifting(n_f, 2, T, 0.5, float(rng.choice([0.0, 0.05, 0.5, 5.0])), 8000 + k)
        A = [tuple(sorted(rng.choice(n_f, size=int(rng.integers(1, n_f + 1)), replace=False).tolist()))
             for _ in range(T)]
        if math.prod(len(a) for a in A) > 10**4:
            continue
        dp_cases += 1
        s1, c1 = per_client_dp(A, 0, inst)
        _, c2 = enumerate_client(A, 0, inst)
        if abs(c1 - c2) > LP_RESIDUAL:
            dp_bad.append((k, c1, c2))
    detail(f"40 instances LP <= OPT (max OPT/LP {max(gaps):.3f}), {len(violations)} violations; "
           f"{dp_cases} micro DP cases, {len(dp_bad)} mismatches")
    assert not violations and not dp_bad, (violations, dp_bad)


def test_criterion_9_time_constant_metrics(detail):
    problems, fractional = [], 0
    trials = 20_000
    for k in range(10):
        base = generate_two_level(3, 5, 1, 1.0, 9000 + k)
        T = 3 + k % 2
        inst = make_instance(np.repeat(base.dist, T, axis=0), base.open_cost[:, 0], g=0.5 + k % 3)
        frac, stable, prep = run_pipeline(inst)
        fractional += bool(np.any((frac.x > 1e-9) & (frac.x < 1 - 1e-9)))
        if frac.z.max() > LP_RESIDUAL:
            problems.append((k, "z", frac.z.max()))
        if any(change_set(prep, t) for t in range(T - 1)):
            problems.append((k, "rows change"))
        stats = run_trials(inst, prep, trials, base_seed=k * trials)
        if stats.switches.any() or stats.copy_switches.any():
            problems.append((k, "switch", int(stats.switches.sum())))
    detail(f"10 time-constant instances ({fractional} with fractional LP), {trials} trials each; "
           f"{len(problems)} problems")
    assert not problems, problems
