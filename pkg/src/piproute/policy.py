"""Constructive policies: greedy baselines, uniform random, and a feature softmax."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .env import ConstructionState
from .instances import Instance, TspdlInstance
from .masking import EXACT_MASK_MAX_REMAINING, Level, Mask, TooLarge

F = kernels.NUM_FEATURES

MASK_MODES = {
    "pi0": kernels.MODE_LOCAL,
    "pi1": kernels.MODE_PI1,
    "pi2": kernels.MODE_PI2,
    "exact": kernels.MODE_EXACT,
    "predicted": kernels.MODE_PREDICTED,
}
MODE_LEVEL = {
    "pi0": Level.LOCAL,
    "pi1": Level.PI1,
    "pi2": Level.PI2,
    "exact": Level.EXACT,
    "predicted": Level.PREDICTED,
}


@dataclass
class PolicyParams:
    w: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64).copy()
        if self.w.shape != (F,):
            raise ValueError(f"policy weights must have shape ({F},), got {self.w.shape}")
        if not np.all(np.isfinite(self.w)):
            raise ValueError("policy weights must be finite")
        if not (self.temperature > 0 and np.isfinite(self.temperature)):
            raise ValueError("temperature must be positive")

    @classmethod
    def zeros(cls, temperature: float = 1.0) -> "PolicyParams":
        return cls(np.zeros(F), temperature)


@dataclass
class RolloutTrace:
    tour: tuple
    logp: np.ndarray
    score: np.ndarray
    level: Level
    length: float = 0.0
    violation: float = 0.0
    n_violated: int = 0
    label_features: np.ndarray | None = None
    labels: np.ndarray | None = None
    label_steps: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.n_violated == 0


def variant_args(inst: Instance):
    """(variant code, feature scale) for the kernels."""
    if isinstance(inst, TspdlInstance):
        return 1, float(max(inst.total_demand, 1))
    return 0, 1.0


# ---------------------------------------------------------------- baselines

def _greedy(inst: Instance, rule: int) -> tuple:
    dist, travel, lo, hi = inst.kernel_arrays()
    tour = np.zeros(inst.n + 1, dtype=np.int64)
    kernels.greedy_kernel(dist, hi, rule, tour)
    return tuple(int(x) for x in tour)


def greedy_l(inst: Instance) -> tuple:
    """Nearest unvisited node each step, blind to windows and drafts."""
    return _greedy(inst, kernels.RULE_NEAREST)


def greedy_c(inst: Instance) -> tuple:
    """Soonest-closing window (TSPTW) or smallest draft (TSPDL) first."""
    return _greedy(inst, kernels.RULE_CONSTRAINT)


# ---------------------------------------------------------------- softmax policy

def features(state: ConstructionState, c: int) -> np.ndarray:
    if state.is_visited(c):
        raise ValueError(f"node {c} already visited")
    inst = state.instance
    dist, travel, lo, hi = inst.kernel_arrays()
    variant, fscale = variant_args(inst)
    frac = (inst.n - (state.n_visited - 1)) / inst.n
    out = np.zeros(F)
    kernels.features(dist, travel, lo, hi, variant, fscale, state.current, float(state.resource), c, frac, out)
    return out


def policy_distribution(params: PolicyParams, state: ConstructionState, mask: Mask):
    """(selectable nodes, probabilities, feature rows) of the masked softmax."""
    nodes = np.flatnonzero(mask.selectable)
    if nodes.size == 0:
        raise ValueError("empty mask: the caller must apply the fallback rule")
    phi = np.array([features(state, int(j)) for j in nodes])
    z = phi @ params.w / params.temperature
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    return nodes, p, phi


def policy_step(params: PolicyParams, state: ConstructionState, mask: Mask, rng: np.random.Generator):
    """Sample one node; returns (node, log-probability, score vector).

    Inverse-CDF sampling on one uniform, the same rule the compiled rollout uses.
    """
    nodes, p, phi = policy_distribution(params, state, mask)
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    idx = min(idx, len(nodes) - 1)
    score = (phi[idx] - p @ phi) / params.temperature
    return int(nodes[idx]), float(np.log(p[idx])), score


def _predictor_args(predictor):
    if predictor is None:
        return np.zeros(F), 0.5
    return np.asarray(predictor.v, dtype=np.float64), float(predictor.threshold)


def rollout_batch(params: PolicyParams, inst: Instance, mask_mode: str, uniforms: np.ndarray,
                  collect_labels: bool = False, early_stop_steps: int | None = None,
                  greedy: bool = False, predictor=None):
    """Run ``len(uniforms)`` rollouts on one instance in a single kernel call.

    Returns a dict of arrays (tours, logps, scores, lengths, viols, nviols and,
    with ``collect_labels``, the label buffers).
    """
    if mask_mode not in MASK_MODES:
        raise ValueError(f"unknown mask mode {mask_mode!r}")
    if mask_mode == "predicted" and predictor is None:
        raise ValueError("mask mode 'predicted' needs a predictor")
    if mask_mode == "exact" and not isinstance(inst, TspdlInstance) and inst.n > EXACT_MASK_MAX_REMAINING:
        raise TooLarge(f"exact masks need n <= {EXACT_MASK_MAX_REMAINING}")
    dist, travel, lo, hi = inst.kernel_arrays()
    variant, fscale = variant_args(inst)
    uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
    K, n = uniforms.shape
    if n != inst.n:
        raise ValueError("need one uniform per construction step")
    N = n + 1
    pred_v, thr = _predictor_args(predictor)
    cap = K * n * N if collect_labels else 1
    out = dict(
        tours=np.zeros((K, N), dtype=np.int64),
        logps=np.zeros((K, n)),
        scores=np.zeros((K, n, F)),
        lengths=np.zeros(K),
        viols=np.zeros(K),
        nviols=np.zeros(K, dtype=np.int64),
    )
    feat_buf = np.zeros((cap, F))
    label_buf = np.zeros(cap, dtype=np.bool_)
    step_buf = np.zeros(cap, dtype=np.int64)
    es = -1 if early_stop_steps is None else int(early_stop_steps)
    nl = kernels.rollout_batch_kernel(
        dist, travel, lo, hi, variant, fscale, params.w, float(params.temperature),
        MASK_MODES[mask_mode], es, bool(greedy), uniforms, pred_v, thr, bool(collect_labels),
        out["tours"], out["logps"], out["scores"], out["lengths"], out["viols"], out["nviols"],
        feat_buf, label_buf, step_buf)
    if collect_labels:
        out["label_features"] = feat_buf[:nl]
        out["labels"] = label_buf[:nl]
        out["label_steps"] = step_buf[:nl]
    return out


def rollout(params: PolicyParams, inst: Instance, mask_mode: str, rng: np.random.Generator,
            collect_labels: bool = False, early_stop_steps: int | None = None,
            greedy: bool = False, predictor=None) -> RolloutTrace:
    u = rng.random((1, inst.n))
    b = rollout_batch(params, inst, mask_mode, u, collect_labels, early_stop_steps, greedy, predictor)
    tr = RolloutTrace(
        tour=tuple(int(x) for x in b["tours"][0]),
        logp=b["logps"][0],
        score=b["scores"][0],
        level=MODE_LEVEL[mask_mode],
        length=float(b["lengths"][0]),
        violation=float(b["viols"][0]),
        n_violated=int(b["nviols"][0]),
    )
    if collect_labels:
        tr.label_features = b["label_features"]
        tr.labels = b["labels"]
        tr.label_steps = b["label_steps"]
    return tr


def random_tours(inst: Instance, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform choice among locally feasible nodes (any unvisited node when none is)."""
    b = rollout_batch(PolicyParams.zeros(), inst, "pi0", rng.random((count, inst.n)))
    return b["tours"]


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, variant: str, params: PolicyParams, predictor=None, meta: dict | None = None):
    doc = {
        "variant": variant,
        "w": [float(x) for x in params.w],
        "temperature": float(params.temperature),
        "predictor_w": None if predictor is None else [float(x) for x in predictor.v],
        "meta": dict(meta or {}),
    }
    if predictor is not None:
        doc["meta"].setdefault("predictor_threshold", float(predictor.threshold))
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_checkpoint(path):
    """(variant, PolicyParams, predictor weights or None, threshold, meta)."""
    with open(path) as fh:
        doc = json.load(fh)
    try:
        params = PolicyParams(np.array(doc["w"], dtype=np.float64), float(doc["temperature"]))
        pw = doc.get("predictor_w")
        pw = None if pw is None else np.array(pw, dtype=np.float64)
        meta = doc.get("meta") or {}
        return doc["variant"], params, pw, float(meta.get("predictor_threshold", 0.5)), meta
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed checkpoint ({exc})") from exc
