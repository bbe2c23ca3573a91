"""Command line: gen / solve / train / eval / oracle / bench.

Exit codes: 0 success, 1 usage error, 2 infeasible input, 3 I/O error.
``PIPROUTE_SEED`` overrides every seed given on the command line or in a config.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluate as ev
from . import masking, training
from .instances import NonUnitDemandError, ParseError, generate_set, parse_dumas_raw, read_instances, \
    write_instances
from .policy import MASK_MODES, load_checkpoint, save_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_IO = 0, 1, 2, 3

# published optima of the n20w20 benchmark files, raw distance units
DUMAS_OPTIMA = {
    "n20w20.001": 378,
    "n20w20.002": 286,
    "n20w20.003": 394,
    "n20w20.004": 396,
    "n20w20.005": 352,
}


class UsageError(Exception):
    pass


class InfeasibleInput(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def seed_override(seed: int) -> int:
    env = os.environ.get("PIPROUTE_SEED")
    if env is None or env == "":
        return seed
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"PIPROUTE_SEED must be an integer, got {env!r}") from None


def _load(path):
    insts = read_instances(path)
    if not insts:
        raise InfeasibleInput(f"{path}: no instances")
    return insts


# ---------------------------------------------------------------- commands

def cmd_gen(args):
    seed = seed_override(args.seed)
    try:
        insts = generate_set(args.variant, args.n, args.hardness, args.count, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_instances(args.out, insts)
    print(f"wrote {len(insts)} {args.variant} instances to {args.out}")
    return EXIT_OK


def cmd_solve(args):
    insts = _load(args.inp)
    params = predictor = None
    method = args.method
    label = method
    if method == "policy":
        if not args.checkpoint:
            raise UsageError("--method policy needs --checkpoint")
        variant, params, pw, thr, _ = load_checkpoint(args.checkpoint)
        if variant != insts[0].variant:
            raise UsageError(f"checkpoint is for {variant}, instances are {insts[0].variant}")
        if args.mask == "predicted":
            if pw is None:
                raise UsageError("checkpoint has no predictor weights")
            predictor = training.PredictorParams(pw, thr)
        label = f"policy-{args.mask}" + ("-greedy" if args.greedy else "")
    rng = np.random.default_rng(seed_override(args.seed))
    try:
        sols = ev.solve(method, insts, args.ns, rng, params=params, mask_mode=args.mask,
                        predictor=predictor, greedy=args.greedy)
    except masking.TooLarge as exc:
        raise InfeasibleInput(str(exc)) from None
    sols.method = label
    ev.write_solutions(args.out, sols)
    rep = ev.report_for(sols, insts)
    print(json.dumps(ev.json_safe({k: getattr(rep, k) for k in ("method", "N_s", "sol_infsb", "inst_infsb",
                                                                  "mean_obj")})))
    return EXIT_OK


def cmd_train(args):
    cfg = training.TrainConfig.load(args.config)
    cfg.seed = seed_override(cfg.seed)
    log = open(args.log, "w") if args.log else None
    try:
        predictor = None
        if args.mode == "lagrangian":
            params, _ = training.train_lagrangian(cfg, log)
        elif args.mode == "pip":
            params, _ = training.train_pip(cfg, log)
        elif args.mode == "pipd":
            params, predictor, _ = training.train_pipd(cfg, log)
        else:
            if not args.init_checkpoint:
                raise UsageError("--mode finetune needs --init-checkpoint")
            _, pre, _, _, _ = load_checkpoint(args.init_checkpoint)
            params, _ = training.fine_tune(pre, cfg, log)
    finally:
        if log is not None:
            log.close()
    save_checkpoint(args.out_checkpoint, cfg.variant, params, predictor,
                    {"mode": args.mode, "config": cfg.to_dict()})
    print(f"wrote checkpoint {args.out_checkpoint}")
    return EXIT_OK


def cmd_eval(args):
    insts = _load(args.inp)
    sets = [ev.rescore(insts, ev.read_solutions(p)) for p in args.solutions]
    refs = None
    try:
        if args.ref == "exact":
            refs = ev.gap_reference(insts, "exact")
        elif args.ref == "best":
            refs = ev.gap_reference(insts, "best", sets)
        elif args.ref:
            refs = ev.gap_reference(insts, "file", path=args.ref)
        keep = ev.overlap_set(sets) if args.overlap else None
        reports = [ev.report_for(s, insts, refs, keep, timing=not args.no_timing) for s in sets]
    except (masking.TooLarge, ev.MissingReference) as exc:
        raise InfeasibleInput(str(exc)) from None
    paths = ev.write_report(args.report, reports)
    if args.plotdata:
        ev.write_plotdata(args.plotdata, insts, sets)
    for r in reports:
        print(",".join(str(v) for v in r.row()))
    print(f"wrote {paths[0]} and {paths[1]}")
    return EXIT_OK


def cmd_oracle(args):
    if not args.check_masks:
        raise UsageError("nothing to do: pass --check-masks")
    try:
        steps = sorted({int(s) for s in args.steps.split(",")})
    except ValueError:
        raise UsageError(f"bad --steps {args.steps!r}") from None
    if not steps or min(steps) < 0 or max(steps) > 2:
        raise UsageError("--steps takes depths from {0,1,2}")
    insts = _load(args.inp)
    n_states = sum(i.n for i in insts)
    walks = max(1, -(-args.samples // n_states))
    try:
        counts = masking.audit(insts, walks, seed_override(args.seed))
    except (masking.TooLarge, NonUnitDemandError) as exc:
        raise InfeasibleInput(str(exc)) from None
    unsound = {1: counts["unsound_pi1"], 2: counts["unsound_pi2"]}
    counts["steps"] = steps
    counts["sound"] = all(unsound.get(k, 0) == 0 for k in steps)
    counts["nested"] = counts["nest_violations"] == 0
    print(json.dumps(counts))
    return EXIT_OK


def dumas_files(path):
    p = Path(path)
    if p.is_dir():
        files = sorted(f for f in p.iterdir() if f.is_file() and not f.name.startswith("."))
    else:
        files = [p]
    if not files:
        raise FileNotFoundError(f"no benchmark files under {path}")
    return files


def bench_rows(path, rounding="none", checkpoint=None, ns=16, seed=0):
    rows = []
    policy = None
    if checkpoint:
        variant, params, _, _, _ = load_checkpoint(checkpoint)
        if variant != "tsptw":
            raise UsageError("benchmark files are TSPTW; checkpoint is for " + variant)
        policy = params
    for f in dumas_files(path):
        raw = parse_dumas_raw(f.read_text())
        tour, length = masking.solve_benchmark(raw, rounding)
        row = {"file": f.name, "n": raw.n, "opt": length, "tour": tour,
               "known": DUMAS_OPTIMA.get(f.name)}
        if tour is not None:
            row["validated_len"], row["violations"] = masking.validate_benchmark_tour(raw, tour, rounding)
        if policy is not None:
            from .instances import normalize_tsptw
            inst = normalize_tsptw(raw)
            sols = ev.solve("policy", [inst], ns, np.random.default_rng(seed), params=policy, mask_mode="pi1")
            best = sols.best()[0]
            row["policy_feasible"] = bool(np.isfinite(best))
            if np.isfinite(best):
                i = int(np.argmin(np.where(sols.feasible[0], sols.lengths[0], np.inf)))
                row["policy_len"] = masking.validate_benchmark_tour(raw, sols.tours[0][i], rounding)[0]
        rows.append(row)
    return rows


def cmd_bench(args):
    rows = bench_rows(args.dumas, args.rounding, args.checkpoint, args.ns, seed_override(args.seed))
    infeasible = False
    for row in rows:
        print(json.dumps(ev.json_safe(row)))
        infeasible |= row["tour"] is None
    if infeasible:
        raise InfeasibleInput("a benchmark file has no feasible tour")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    ap = _Parser(prog="piproute", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate instances (JSON lines)")
    p.add_argument("--variant", choices=("tsptw", "tspdl"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--hardness", choices=("easy", "medium", "hard"), required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="construct tours")
    p.add_argument("--method", choices=("greedy-l", "greedy-c", "random", "policy"), required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--mask", choices=tuple(MASK_MODES), default="pi0")
    p.add_argument("--ns", type=int, default=1)
    p.add_argument("--greedy", action="store_true", help="argmax decoding (one solution)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train", help="train a policy")
    p.add_argument("--mode", choices=("lagrangian", "pip", "pipd", "finetune"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--init-checkpoint", help="pretrained checkpoint for finetune")
    p.add_argument("--log", help="JSON-lines epoch log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics report from solution files")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--solutions", nargs="+", required=True)
    p.add_argument("--ref", help="exact | best | path to reference file")
    p.add_argument("--report", required=True)
    p.add_argument("--overlap", action="store_true")
    p.add_argument("--plotdata")
    p.add_argument("--no-timing", action="store_true", help="write wall_s as 0 for byte-stable reports")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", help="mask soundness and nesting audit")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--check-masks", action="store_true")
    p.add_argument("--steps", default="0,1,2")
    p.add_argument("--samples", type=int, default=100_000, help="number of states to sample")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bench", help="solve and validate benchmark files")
    p.add_argument("--dumas", required=True, help="file or directory of benchmark files")
    p.add_argument("--checkpoint")
    p.add_argument("--rounding", choices=("none", "floor"), default="none",
                   help="none keeps full-precision distances; floor truncates each arc")
    p.add_argument("--ns", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasibleInput, NonUnitDemandError, masking.TooLarge) as exc:
        print(f"infeasible input: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (OSError, ParseError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
