"""Command line front end: ``dynfl <subcommand> ...``.

Exit status: 0 success, 1 usage error, 2 data error, 3 a statistical bound failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .evaluate import (approximation_report, check_bounds, cost, perturbation_experiment,
                       run_pipeline, run_trials)
from .instance import (Instance, InstanceFormatError, generate_drifting, generate_two_level,
                       read_instance, validate, write_instance)
from .lp import LPSolveError, read_solution, solve_instance, write_solution
from .oracle import DEFAULT_LIMIT, EnumerationLimitError, brute_force, write_exact
from .preprocess import (PreprocessError, duplicate_facilities, read_preprocessed, stabilize,
                         write_preprocessed)
from .rounding import CorruptSolutionError, GraphStructureError, round_all, sample_clocks


EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BOUND = 0, 1, 2, 3


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return v


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dynfl", description="Dynamic facility location by exponential-clock rounding.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, inp=True, out=True, seed=False, trials=False, tol=False, limit=False):
        if inp:
            sp.add_argument("--in", dest="inp", required=True, type=Path)
        if out:
            sp.add_argument("--out", type=Path)
        if seed:
            sp.add_argument("--seed", type=_nonneg_int, default=0)
        if trials:
            sp.add_argument("--trials", type=_pos_int, default=100_000)
            sp.add_argument("--workers", type=_pos_int, default=1)
        if tol:
            sp.add_argument("--tol", type=float, default=1e-9)
        if limit:
            sp.add_argument("--limit", type=_nonneg_int, default=DEFAULT_LIMIT)
        sp.add_argument("--no-timestamp", action="store_true")

    sp = sub.add_parser("gen", help="generate a random instance")
    common(sp, inp=False, seed=True)
    sp.add_argument("--nf", type=_pos_int, required=True)
    sp.add_argument("--nc", type=_pos_int, required=True)
    sp.add_argument("--T", type=_pos_int, required=True)
    sp.add_argument("--drift", type=float, default=0.1)
    sp.add_argument("--g", type=float, default=1.0)
    sp.add_argument("--kind", choices=("drifting", "two-level"), default="drifting")

    common(sub.add_parser("validate", help="check the bipartite metric and cost signs"), out=False)
    common(sub.add_parser("solve", help="solve the LP relaxation"), tol=True)
    sp = sub.add_parser("preprocess", help="stabilize and duplicate a fractional solution")
    common(sp, tol=True)
    sp.add_argument("--instance", type=Path, help="instance file, if not embedded in --in")
    sp = sub.add_parser("round", help="round a preprocessed solution with one seed")
    common(sp, seed=True)
    sp.add_argument("--instance", type=Path)
    common(sub.add_parser("experiment", help="Monte Carlo check of the per-step bounds"),
           seed=True, trials=True, tol=True)
    sp = sub.add_parser("perturb", help="shared-clock path-difference experiment")
    common(sp, inp=False, seed=True, trials=True)
    sp.add_argument("--inA", required=True, type=Path)
    sp.add_argument("--inB", required=True, type=Path)
    common(sub.add_parser("oracle", help="exact optimum by enumeration"), limit=True)
    common(sub.add_parser("pipeline", help="solve, preprocess, experiment and oracle"),
           seed=True, trials=True, tol=True, limit=True)
    return p


# --------------------------------------------------------------------------


def _load_json(path: Path, stage: str) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StageError(stage, f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise StageError(stage, f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def _instance_from(path: Path, stage: str) -> Instance:
    try:
        return read_instance(path)
    except InstanceFormatError as exc:
        raise StageError(stage, str(exc)) from None
    except OSError as exc:
        raise StageError(stage, f"cannot read {path}: {exc.strerror}") from None


def _embedded_instance(data: dict, extra: Path | None, stage: str) -> Instance:
    if extra is not None:
        return _instance_from(extra, stage)
    if "instance" not in data:
        raise StageError(stage, "input has no embedded instance; pass --instance")
    try:
        return Instance.from_dict(data["instance"])
    except InstanceFormatError as exc:
        raise StageError(stage, f"embedded instance: {exc}") from None


def _emit(report: dict, args) -> None:
    if not args.no_timestamp:
        report = {**report, "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    text = json.dumps(_plain(report), indent=1, sort_keys=True)
    if getattr(args, "out", None):
        args.out.write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def _summary(lines) -> None:
    for line in lines:
        print(line, file=sys.stderr)


# --------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    if args.kind == "drifting":
        inst = generate_drifting(args.nf, args.nc, args.T, args.drift, args.g, args.seed)
    else:
        inst = generate_two_level(args.nf, args.nc, args.T, args.g, args.seed)
    if args.out is None:
        print(json.dumps(inst.to_dict()))
    else:
        write_instance(inst, args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    inst = _instance_from(args.inp, "validate")
    rep = validate(inst)
    if rep.ok:
        print(f"{args.inp}: valid ({inst.n_facilities} facilities, {inst.n_clients} clients, "
              f"T={inst.T})")
        return EXIT_OK
    for v in rep.violations:
        print(f"error: validate: {v}", file=sys.stderr)
    return EXIT_DATA


def _checked(inst: Instance, stage: str) -> Instance:
    rep = validate(inst)
    if not rep.ok:
        v = rep.violations[0]
        raise StageError(stage, f"instance invalid: {v.kind} at {v.witness} (by {v.magnitude:.3g})")
    return inst


def cmd_solve(args) -> int:
    inst = _checked(_instance_from(args.inp, "solve"), "solve")
    frac = solve_instance(inst, tol=args.tol)
    _summary([f"LP objective {frac.objective:.10g} (opening {frac.opening:.6g}, "
              f"connection {frac.connection:.6g}, switching {frac.switching:.6g}), "
              f"{frac.info['iterations']} pivots"])
    if args.out:
        write_solution(frac, args.out, inst)
    else:
        print(json.dumps(frac.to_dict()))
    return EXIT_OK


def cmd_preprocess(args) -> int:
    data = _load_json(args.inp, "preprocess")
    inst = _embedded_instance(data, args.instance, "preprocess")
    try:
        frac, _ = read_solution(args.inp)
        stable = stabilize(frac.with_costs(inst), inst, tol=args.tol)
    except ValueError as exc:
        raise StageError("preprocess", str(exc)) from None
    prep = duplicate_facilities(stable, inst.facility_ids, inst.client_ids)
    _summary([f"{prep.n_copies} copies of {inst.n_facilities} facilities; stabilized cost "
              f"{stable.objective:.6g} vs input {frac.objective:.6g}"])
    if args.out:
        write_preprocessed(prep, args.out, inst)
    else:
        print(json.dumps(prep.to_dict()))
    return EXIT_OK


def cmd_round(args) -> int:
    data = _load_json(args.inp, "round")
    inst = _embedded_instance(data, args.instance, "round")
    prep, _ = read_preprocessed(args.inp)
    sol = round_all(prep, sample_clocks(prep, args.seed))
    c = cost(inst, sol)
    report = sol.to_dict()
    report["cost"] = {"opening": c.opening, "connection": c.connection,
                      "switching": c.switching, "total": c.total}
    _summary([f"seed {args.seed}: cost {c.total:.6g}"])
    _emit(report, args)
    return EXIT_OK


def _load_prep_or_instance(path: Path, tol: float, stage: str):
    """Accept either an instance file or a preprocessed file with embedded instance."""
    data = _load_json(path, stage)
    if "copies" in data:
        prep, inst = read_preprocessed(path)
        if inst is None:
            raise StageError(stage, "preprocessed input has no embedded instance")
        return inst, prep
    inst = _checked(_instance_from(path, stage), stage)
    _, _, prep = run_pipeline(inst, tol)
    return inst, prep


def cmd_experiment(args) -> int:
    inst, prep = _load_prep_or_instance(args.inp, args.tol, "experiment")
    stats = run_trials(inst, prep, args.trials, args.seed, workers=args.workers)
    bounds = check_bounds(stats, prep, inst)
    report = {"config": _config(args), "copies": prep.n_copies, "bounds": bounds.to_dict(),
              "mean_cost": {k: stats.component(k)[0] for k in
                            ("opening", "connection", "switching", "total")}}
    _summary([f"{len(bounds.checks)} checks, {len(bounds.failures())} failed"]
             + [f"  FAIL {c.name} t={c.t} {c.where}: {c.empirical:.6g} vs {c.bound:.6g}"
                for c in bounds.failures()])
    _emit(report, args)
    return EXIT_OK if bounds.ok else EXIT_BOUND


def cmd_perturb(args) -> int:
    a, _ = read_preprocessed(args.inA)
    b, _ = read_preprocessed(args.inB)
    res = perturbation_experiment(a, b, args.trials, args.seed)
    report = {"config": _config(args), **res.to_dict()}
    _summary([f"t={t}: |K|={len(k)} mean differing paths {m:.4g} (se {s:.2g})"
              for t, (k, m, s) in enumerate(zip(res.K, res.mean_paths, res.se_paths))])
    _emit(report, args)
    return EXIT_OK if res.ok else EXIT_BOUND


def cmd_oracle(args) -> int:
    inst = _checked(_instance_from(args.inp, "oracle"), "oracle")
    exact = brute_force(inst, args.limit)
    _summary([f"optimum {exact.cost:.10g} over {exact.examined} open-set tuples"])
    if args.out:
        write_exact(exact, inst, args.out)
    else:
        print(json.dumps(exact.to_dict(inst)))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    inst = _checked(_instance_from(args.inp, "pipeline"), "pipeline")
    report = approximation_report(inst, args.trials, args.seed, args.limit, args.tol,
                                  workers=args.workers)
    report = {"config": _config(args), **report}
    alg = report["alg"]["total"]
    lines = [f"LP {report['lp']['total']:.6g}  E[ALG] {alg['mean']:.6g} (se {alg['se']:.2g})"]
    if "oracle" in report:
        lines.append(f"OPT {report['oracle']['opt']:.6g}")
    lines.append("all bounds pass" if report["ok"] else "BOUND FAILURE")
    _summary(lines)
    _emit(report, args)
    return EXIT_OK if report["ok"] else EXIT_BOUND


def _config(args) -> dict:
    skip = {"func", "out", "no_timestamp", "verbose", "workers"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
            if k not in skip}


COMMANDS = {
    "gen": cmd_gen, "validate": cmd_validate, "solve": cmd_solve, "preprocess": cmd_preprocess,
    "round": cmd_round, "experiment": cmd_experiment, "perturb": cmd_perturb,
    "oracle": cmd_oracle, "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    stage = args.command
    try:
        return COMMANDS[stage](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (InstanceFormatError, PreprocessError, CorruptSolutionError, EnumerationLimitError,
            ValueError, KeyError, OSError) as exc:
        print(f"error: {stage}: {exc}", file=sys.stderr)
    except (LPSolveError, GraphStructureError) as exc:
        print(f"error: {stage}: internal failure: {exc}", file=sys.stderr)
    return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
