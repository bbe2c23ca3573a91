"""Solution-level / instance-level infeasibility, objective and gap metrics."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .env import fast_metrics, validate_tour
from .instances import Instance
from .masking import exact_solve_small
from .policy import PolicyParams, greedy_c, greedy_l, random_tours, rollout_batch

COLUMNS = ("method", "dataset", "n", "hardness", "N_s", "sol_infsb", "inst_infsb",
           "mean_obj", "mean_gap", "wall_s")
DETERMINISTIC = {"greedy-l", "greedy-c"}


class MissingReference(ValueError):
    pass


@dataclass
class EvalReport:
    method: str
    dataset: str
    n: int
    hardness: str
    N_s: int
    sol_infsb: float
    inst_infsb: float
    mean_obj: float
    mean_gap: float
    wall_s: float

    def row(self) -> list:
        return [getattr(self, c) for c in COLUMNS]


@dataclass
class Solutions:
    """Per-instance lists of tours with their lengths and feasibility."""
    method: str
    tours: list
    lengths: list
    feasible: list
    times: list | None = None

    @property
    def wall_s(self) -> float:
        return float(sum(self.times)) if self.times else 0.0

    def best(self) -> np.ndarray:
        """Shortest feasible length per instance, inf when none."""
        out = np.full(len(self.lengths), np.inf)
        for i, (L, ok) in enumerate(zip(self.lengths, self.feasible)):
            L = np.asarray(L, dtype=float)[np.asarray(ok, dtype=bool)]
            if L.size:
                out[i] = L.min()
        return out


def solve(method: str, instances, n_s: int, rng: np.random.Generator, params: PolicyParams | None = None,
          mask_mode: str = "pi0", predictor=None, greedy: bool = False) -> Solutions:
    """Run a method on every instance. Deterministic methods produce one solution each."""
    if n_s < 1:
        raise ValueError("N_s must be >= 1")
    if method in DETERMINISTIC or (method == "policy" and greedy):
        n_s = 1
    tours, lengths, feas, times = [], [], [], []
    for inst in instances:
        t0 = time.perf_counter()
        if method == "greedy-l":
            ts = np.array([greedy_l(inst)])
        elif method == "greedy-c":
            ts = np.array([greedy_c(inst)])
        elif method == "random":
            ts = random_tours(inst, n_s, rng)
        elif method == "policy":
            if params is None:
                raise ValueError("method 'policy' needs parameters")
            ts = rollout_batch(params, inst, mask_mode, rng.random((n_s, inst.n)),
                               greedy=greedy, predictor=predictor)["tours"]
        else:
            raise ValueError(f"unknown method {method!r}")
        m = [fast_metrics(inst, t) for t in ts]
        tours.append([[int(x) for x in t] for t in ts])
        lengths.append([float(x[0]) for x in m])
        feas.append([bool(x[3]) for x in m])
        times.append(time.perf_counter() - t0)
    return Solutions(method, tours, lengths, feas, times)


def rescore(instances, sols: Solutions) -> Solutions:
    """Recompute lengths and feasibility from the tours themselves."""
    if len(instances) != len(sols.tours):
        raise ValueError(f"{len(sols.tours)} solution rows for {len(instances)} instances")
    lengths, feas = [], []
    for inst, ts in zip(instances, sols.tours):
        m = [fast_metrics(inst, validate_tour(inst, t)) for t in ts]
        lengths.append([float(x[0]) for x in m])
        feas.append([bool(x[3]) for x in m])
    return Solutions(sols.method, sols.tours, lengths, feas, sols.times)


def gap_reference(instances, mode: str, solution_sets=None, path=None) -> np.ndarray:
    """Reference length per instance (inf when the instance has no feasible tour)."""
    if mode == "exact":
        return np.array([exact_solve_small(inst)[1] for inst in instances])
    if mode == "best":
        if not solution_sets:
            raise MissingReference("best-across-methods needs at least one solution set")
        return np.min([s.best() for s in solution_sets], axis=0)
    if mode == "file":
        refs = read_references(path)
        if len(refs) != len(instances):
            raise MissingReference(f"{path}: {len(refs)} references for {len(instances)} instances")
        return refs
    raise ValueError(f"unknown reference mode {mode!r}")


def read_references(path) -> np.ndarray:
    """One number per line, or JSON lines with a ``ref`` field."""
    out = []
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            try:
                out.append(float(json.loads(s)["ref"]) if s.startswith("{") else float(s))
            except (ValueError, KeyError) as exc:
                raise MissingReference(f"{path}:{i}: bad reference line") from exc
    return np.array(out)


def aggregate(sols: Solutions, refs=None, keep=None) -> dict:
    """Metric values for one solution set.

    ``keep`` restricts objective and gap averaging to a subset of instances
    (overlap comparisons); the infeasibility rates always use every instance.
    """
    flat = [ok for row in sols.feasible for ok in row]
    sol_inf = 1.0 - float(np.mean(flat)) if flat else float("nan")
    inst_inf = float(np.mean([not any(row) for row in sols.feasible])) if sols.feasible else float("nan")
    best = sols.best()
    use = np.isfinite(best)
    if keep is not None:
        use &= np.asarray(keep, dtype=bool)
    mean_obj = float(best[use].mean()) if use.any() else float("nan")
    mean_gap = float("nan")
    if refs is not None:
        refs = np.asarray(refs, dtype=float)
        bad = use & ~(np.isfinite(refs) & (refs > 0))
        if bad.any():
            raise MissingReference(f"no reference for instance(s) {np.flatnonzero(bad)[:10].tolist()}")
        if use.any():
            mean_gap = float(np.mean((best[use] - refs[use]) / refs[use]))
    return {"sol_infsb": sol_inf, "inst_infsb": inst_inf, "mean_obj": mean_obj, "mean_gap": mean_gap}


def overlap_set(solution_sets) -> np.ndarray:
    return np.all([np.isfinite(s.best()) for s in solution_sets], axis=0)


def describe(instances) -> tuple:
    first = instances[0]
    return f"{first.variant}-{first.n}-{first.hardness}", first.n, first.hardness


def report_for(sols: Solutions, instances, refs=None, keep=None, dataset: str | None = None,
               timing: bool = True) -> EvalReport:
    name, n, hardness = describe(instances)
    m = aggregate(sols, refs, keep)
    n_s = max((len(r) for r in sols.tours), default=0)
    return EvalReport(sols.method, dataset or name, n, hardness, n_s, m["sol_infsb"], m["inst_infsb"],
                      m["mean_obj"], m["mean_gap"], sols.wall_s if timing else 0.0)


def evaluate(method: str, instances, n_s: int, rng: np.random.Generator, refs=None, **kw) -> EvalReport:
    sols = solve(method, instances, n_s, rng, **kw)
    return report_for(sols, instances, refs)


# ---------------------------------------------------------------- files

def write_solutions(path, sols: Solutions) -> None:
    with open(path, "w") as fh:
        times = sols.times or [0.0] * len(sols.tours)
        for i, (t, L, ok, s) in enumerate(zip(sols.tours, sols.lengths, sols.feasible, times)):
            rec = {"instance": i, "method": sols.method, "tours": t, "lengths": L, "feasible": ok, "wall_s": s}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_solutions(path) -> Solutions:
    tours, lengths, feas, times, method = [], [], [], [], None
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                method = method or rec.get("method", "unknown")
                tours.append(rec["tours"])
                lengths.append(rec.get("lengths", []))
                feas.append(rec.get("feasible", []))
                times.append(float(rec.get("wall_s", 0.0)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{i}: bad solution record ({exc})") from exc
    return Solutions(method or "unknown", tours, lengths, feas, times)


def json_safe(doc: dict) -> dict:
    """NaN and inf become null so the output stays strict JSON."""
    return {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in doc.items()}


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report(path, reports) -> tuple:
    """``<path>`` as CSV plus a sibling ``.json``; returns both paths."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to report")
    path = str(path)
    base = path[:-4] if path.endswith(".csv") else path
    csv_path, json_path = base + ".csv", base + ".json"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in reports:
            w.writerow([_fmt(v) for v in r.row()])
    with open(json_path, "w") as fh:
        json.dump([json_safe(asdict(r)) for r in reports], fh, indent=1)
    return csv_path, json_path


def write_plotdata(path, instances, solution_sets) -> None:
    """Per-instance best lengths and feasible counts, one row per (method, instance)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("method", "instance", "best_len", "n_feasible", "n_solutions"))
        for s in solution_sets:
            for i, (b, ok) in enumerate(zip(s.best(), s.feasible)):
                w.writerow((s.method, i, repr(float(b)), int(sum(ok)), len(ok)))
