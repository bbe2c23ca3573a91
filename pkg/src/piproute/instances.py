"""TSPTW / TSPDL instances: generation, normalization, serialization, parsing."""
from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Union

import numpy as np

RHO = 100.0  # coordinate scale of raw instances
HARD_ETA = 50.0
TSPTW_WIDTH = {"easy": (0.5, 0.75), "medium": (0.1, 0.2)}
TSPDL_SIGMA = {"medium": 75, "hard": 90}
TN_SAMPLES = 100_000
TN_SEED = 20_240_520


class ParseError(ValueError):
    """Malformed instance text; ``line`` is 1-based."""

    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class NonUnitDemandError(ValueError):
    pass


def distance_matrix(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff * diff).sum(-1))


@dataclass(frozen=True, eq=False)
class TsptwInstance:
    """Normalized TSPTW instance; node 0 is the depot.

    Travel time between two nodes is ``time_scale`` times their coordinate
    distance, so time windows and travel times share one unit while tour
    length stays in coordinate units.
    """

    n: int
    coords: np.ndarray
    tw_lo: np.ndarray
    tw_hi: np.ndarray
    hardness: str = "easy"
    seed: int = 0
    time_scale: float = 1.0
    variant: str = field(default="tsptw", init=False)

    @cached_property
    def dist(self) -> np.ndarray:
        return distance_matrix(self.coords)

    @cached_property
    def travel(self) -> np.ndarray:
        return self.dist * self.time_scale

    @cached_property
    def _karrays(self):
        return self.dist, self.travel, np.ascontiguousarray(self.tw_lo, dtype=np.float64), \
            np.ascontiguousarray(self.tw_hi, dtype=np.float64)

    def kernel_arrays(self):
        """(dist, travel, lo, hi) in the generic resource form used by the kernels."""
        return self._karrays


@dataclass(frozen=True, eq=False)
class TspdlInstance:
    n: int
    coords: np.ndarray
    demand: np.ndarray
    draft: np.ndarray
    hardness: str = "medium"
    seed: int = 0
    variant: str = field(default="tspdl", init=False)

    @cached_property
    def dist(self) -> np.ndarray:
        return distance_matrix(self.coords)

    @cached_property
    def travel(self) -> np.ndarray:
        # moving onto port j adds its demand to the load
        return np.broadcast_to(self.demand.astype(np.float64), (self.n + 1, self.n + 1)).copy()

    @property
    def total_demand(self) -> int:
        return int(self.demand.sum())

    @cached_property
    def _karrays(self):
        return self.dist, self.travel, np.zeros(self.n + 1), self.draft.astype(np.float64)

    def kernel_arrays(self):
        return self._karrays


Instance = Union[TsptwInstance, TspdlInstance]


@dataclass(frozen=True, eq=False)
class RawTsptw:
    """Unnormalized TSPTW data: coordinates in [0, 100]^2, windows in raw distance units.

    ``tw_hi[0]`` may be ``inf`` (no depot deadline yet).
    """

    coords: np.ndarray
    tw_lo: np.ndarray
    tw_hi: np.ndarray
    hardness: str = "easy"
    seed: int = 0

    @property
    def n(self) -> int:
        return len(self.coords) - 1


# ---------------------------------------------------------------- T_N

def _mc_tour_length(n: int, samples: int, rng: np.random.Generator, chunk: int = 4096) -> float:
    total = 0.0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        pts = rng.random((m, n + 1, 2))
        nxt = np.roll(pts, -1, axis=1)
        total += np.sqrt(((pts - nxt) ** 2).sum(-1)).sum()
        done += m
    return total / samples


def estimate_tn(n: int, samples: int = TN_SAMPLES, seed: int | None = None) -> float:
    """Mean length of a closed random tour through n+1 uniform points of the unit square."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if n <= 0:
        return 0.0
    if seed is None and samples == TN_SAMPLES:
        return _cached_tn(n)
    rng = np.random.default_rng(TN_SEED if seed is None else seed)
    return _mc_tour_length(n, samples, rng)


@functools.lru_cache(maxsize=None)
def _cached_tn(n: int) -> float:
    return _mc_tour_length(n, TN_SAMPLES, np.random.default_rng(TN_SEED))


# ---------------------------------------------------------------- TSPTW

def _check_hardness(hardness: str, allowed) -> str:
    h = hardness.lower()
    if h not in allowed:
        raise ValueError(f"hardness must be one of {sorted(allowed)}, got {hardness!r}")
    return h


def gen_tsptw_raw(n: int, hardness: str, seed: int) -> RawTsptw:
    if n < 1:
        raise ValueError("n must be >= 1")
    h = _check_hardness(hardness, ("easy", "medium", "hard"))
    rng = np.random.default_rng(seed)
    coords = rng.random((n + 1, 2)) * RHO
    lo = np.zeros(n + 1)
    hi = np.full(n + 1, np.inf)
    if h in TSPTW_WIDTH:
        a, b = TSPTW_WIDTH[h]
        tn = RHO * estimate_tn(n)
        lo[1:] = rng.uniform(0.0, tn, n)
        hi[1:] = lo[1:] + tn * rng.uniform(a, b, n)
    else:
        perm = rng.permutation(np.arange(1, n + 1))
        route = np.concatenate(([0], perm))
        legs = np.sqrt(((coords[route[1:]] - coords[route[:-1]]) ** 2).sum(-1))
        psi = np.cumsum(legs)
        lo[perm] = np.maximum(rng.uniform(psi - HARD_ETA, psi), 0.0)
        hi[perm] = rng.uniform(psi, psi + HARD_ETA)
    return RawTsptw(coords, lo, hi, h, int(seed))


def normalize_tsptw(raw: RawTsptw, rho: float = RHO) -> TsptwInstance:
    """Scale coordinates by ``rho`` and time by the depot deadline ``u_0``.

    ``u_0`` is the latest customer deadline plus the drive home; a finite
    raw depot deadline (benchmark files) takes over when it is larger, and
    stays binding when it is smaller.
    """
    n = raw.n
    if n < 1:
        raise ValueError("instance has no customers")
    if np.any(raw.tw_lo < 0) or np.any(raw.tw_hi[1:] < raw.tw_lo[1:]):
        raise ValueError("invalid raw time windows")
    d = distance_matrix(raw.coords)
    factor = float(np.max(raw.tw_hi[1:] + d[1:, 0]))
    depot_hi = float(raw.tw_hi[0])
    if math.isfinite(depot_hi):
        factor = max(factor, depot_hi)
    if not factor > 0:
        raise ValueError("degenerate instance: all windows and distances are zero")
    lo = raw.tw_lo / factor
    hi = raw.tw_hi / factor
    hi[0] = min(depot_hi, factor) / factor
    return TsptwInstance(n, raw.coords / rho, lo, hi, raw.hardness, raw.seed, rho / factor)


def gen_tsptw(n: int, hardness: str, seed: int) -> TsptwInstance:
    return normalize_tsptw(gen_tsptw_raw(n, hardness, seed))


# ---------------------------------------------------------------- TSPDL

def tspdl_draft_feasible(draft, demand) -> bool:
    """Pigeonhole check: for every k >= 1 at most k ports have draft <= k.

    Exact only for unit customer demands; anything else is refused.
    """
    draft = np.asarray(draft)
    demand = np.asarray(demand)
    if demand[0] != 0 or not np.all(demand[1:] == 1):
        raise NonUnitDemandError("draft feasibility is only defined for unit customer demands")
    d = draft[1:].astype(np.int64)
    if d.size == 0:
        return True
    if np.any(d < 1):
        return False
    counts = np.bincount(d)
    return bool(np.all(np.cumsum(counts) <= np.arange(len(counts))))


def gen_tspdl(n: int, hardness: str, seed: int) -> TspdlInstance:
    if n < 1:
        raise ValueError("n must be >= 1")
    h = _check_hardness(hardness, TSPDL_SIGMA)
    rng = np.random.default_rng(seed)
    coords = rng.random((n + 1, 2))
    demand = np.ones(n + 1, dtype=np.int64)
    demand[0] = 0
    total = int(demand.sum())
    k = n * TSPDL_SIGMA[h] // 100
    while True:
        draft = np.full(n + 1, total, dtype=np.int64)
        if k > 0:
            idx = rng.choice(np.arange(1, n + 1), size=k, replace=False)
            draft[idx] = rng.integers(1, total, size=k)
        if tspdl_draft_feasible(draft, demand):
            break
    return TspdlInstance(n, coords, demand, draft, h, int(seed))


def generate(variant: str, n: int, hardness: str, seed: int) -> Instance:
    if variant == "tsptw":
        return gen_tsptw(n, hardness, seed)
    if variant == "tspdl":
        return gen_tspdl(n, hardness, seed)
    raise ValueError(f"unknown variant {variant!r}")


def generate_set(variant: str, n: int, hardness: str, count: int, seed: int) -> list[Instance]:
    """``count`` instances whose seeds are spawned from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(count, dtype=np.uint64)
    return [generate(variant, n, hardness, int(s)) for s in seeds]


# ---------------------------------------------------------------- native format

def _floats(a) -> list:
    return [float(x) for x in a]


def instance_to_dict(inst: Instance) -> dict:
    doc = {
        "variant": inst.variant,
        "n": inst.n,
        "coords": [_floats(c) for c in inst.coords],
        "tw": None,
        "demand": None,
        "draft": None,
        "hardness": inst.hardness,
        "seed": int(inst.seed),
    }
    if isinstance(inst, TsptwInstance):
        doc["tw"] = [[float(a), float(b)] for a, b in zip(inst.tw_lo, inst.tw_hi)]
        doc["time_scale"] = float(inst.time_scale)
    else:
        doc["demand"] = [int(x) for x in inst.demand]
        doc["draft"] = [int(x) for x in inst.draft]
    return doc


def serialize_instance(inst: Instance) -> str:
    # repr-based float output round-trips every double exactly
    return json.dumps(instance_to_dict(inst), separators=(",", ":"))


def instance_from_dict(doc: dict, line: int | None = None) -> Instance:
    try:
        variant = doc["variant"]
        n = int(doc["n"])
        coords = np.asarray(doc["coords"], dtype=np.float64)
        if coords.shape != (n + 1, 2):
            raise ParseError(f"coords must have shape ({n + 1}, 2)", line)
        if variant == "tsptw":
            tw = np.asarray(doc["tw"], dtype=np.float64)
            if tw.shape != (n + 1, 2):
                raise ParseError(f"tw must have shape ({n + 1}, 2)", line)
            if np.any(tw[:, 0] < 0) or np.any(tw[:, 1] < tw[:, 0]):
                raise ParseError("invalid time window", line)
            return TsptwInstance(n, coords, tw[:, 0].copy(), tw[:, 1].copy(), doc.get("hardness", ""),
                                 int(doc.get("seed", 0)), float(doc.get("time_scale", 1.0)))
        if variant == "tspdl":
            demand = np.asarray(doc["demand"], dtype=np.int64)
            draft = np.asarray(doc["draft"], dtype=np.int64)
            if demand.shape != (n + 1,) or draft.shape != (n + 1,):
                raise ParseError(f"demand/draft must have length {n + 1}", line)
            return TspdlInstance(n, coords, demand, draft, doc.get("hardness", ""), int(doc.get("seed", 0)))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"missing or malformed field: {exc}", line) from None
    raise ParseError(f"unknown variant {doc.get('variant')!r}", line)


def parse_instance(text: str, line: int | None = None) -> Instance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line) from None
    if not isinstance(doc, dict):
        raise ParseError("expected a JSON object", line)
    return instance_from_dict(doc, line)


def write_instances(path, instances: Iterable[Instance]) -> None:
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(serialize_instance(inst) + "\n")


def read_instances(path) -> list[Instance]:
    out = []
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            if line.strip():
                out.append(parse_instance(line, i))
    return out


# ---------------------------------------------------------------- Dumas benchmark

def parse_dumas_raw(text: str) -> RawTsptw:
    """Rows ``id x y demand ready due service``; id 1 is the depot, 999 ends the data."""
    rows: dict[int, tuple] = {}
    started = False
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            vals = None
        if vals is None or len(vals) != 7:
            if started:
                raise ParseError(f"malformed row: {line.strip()!r}", lineno)
            continue  # header
        started = True
        cid = int(vals[0])
        if cid != vals[0]:
            raise ParseError("customer id must be an integer", lineno)
        if cid == 999:
            break
        if cid in rows:
            raise ParseError(f"duplicate id {cid}", lineno)
        ready, due = vals[4], vals[5]
        if ready < 0 or due < 0 or due < ready:
            raise ParseError(f"invalid time window [{ready}, {due}]", lineno)
        rows[cid] = (vals[1], vals[2], ready, due, lineno)
    if not rows:
        raise ParseError("no node rows found")
    ids = sorted(rows)
    if ids != list(range(1, len(ids) + 1)):
        raise ParseError(f"node ids must run 1..{len(ids)}")
    coords = np.array([[rows[i][0], rows[i][1]] for i in ids])
    lo = np.array([rows[i][2] for i in ids])
    hi = np.array([rows[i][3] for i in ids])
    return RawTsptw(coords, lo, hi, "dumas", 0)


def parse_dumas(text: str) -> TsptwInstance:
    raw = parse_dumas_raw(text)
    if raw.n < 1:
        raise ParseError("benchmark file has no customers")
    return normalize_tsptw(raw)
