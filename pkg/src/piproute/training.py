"""REINFORCE with a Lagrangian reward, PI labels and the logistic mask predictor."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, fields, replace
from fractions import Fraction

import numpy as np

from .env import ConstructionState, reward_from_metrics
from .instances import Instance, generate_set
from .masking import Level, Mask, local_mask
from .policy import F, PolicyParams, features, rollout_batch


@dataclass
class PredictorParams:
    v: np.ndarray
    threshold: float = 0.5

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64).copy()
        if self.v.shape != (F,) or not np.all(np.isfinite(self.v)):
            raise ValueError(f"predictor weights must be {F} finite numbers")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")

    @classmethod
    def zeros(cls, threshold: float = 0.5) -> "PredictorParams":
        return cls(np.zeros(F), threshold)


@dataclass
class TrainConfig:
    variant: str = "tsptw"
    n: int = 20
    hardness: str = "medium"
    lam: float = 1.0
    K: int = 8
    lr_policy: float = 0.05
    lr_predictor: float = 1.0
    batch: int = 16
    batches_per_epoch: int = 8
    epochs: int = 20
    E_init: int = 0
    E_p: int = 1
    E_u: int = 1
    E_l: int = 0
    alpha_mix: float = 1.0
    beta_mix: float = 1.0
    mask_mode: str = "pi0"
    early_stop_steps: int | None = None
    seed: int = 0
    temperature: float = 1.0
    predictor_threshold: float = 0.5
    predictor_steps: int = 5
    pool_instances: int = 64

    def validate(self) -> "TrainConfig":
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.K < 2:
            raise ValueError("K must be >= 2 (the shared baseline needs two samples)")
        for name in ("lr_policy", "lr_predictor", "temperature", "alpha_mix", "beta_mix"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.batch < 1 or self.batches_per_epoch < 1 or self.epochs < 0:
            raise ValueError("batch, batches_per_epoch must be >= 1 and epochs >= 0")
        check_schedule(self.epochs, self.E_init, self.E_p, self.E_u, self.E_l)
        return self

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc).validate()

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- schedule

def check_schedule(E, E_init, E_p, E_u, E_l):
    if min(E, E_init, E_u, E_l) < 0 or E_p < 1:
        raise ValueError("schedule entries must be non-negative and E_p >= 1")
    if E_u > E_p:
        raise ValueError("E_u cannot exceed E_p")
    if E_init + E_l > E:
        raise ValueError("E_init + E_l must not exceed the number of epochs")


def is_update_epoch(e, E, E_init, E_p, E_u, E_l) -> bool:
    if e < E_init or e >= E - E_l:
        return True
    return (e - E_init) % E_p < E_u


def predictor_update_epochs(E, E_init, E_p, E_u, E_l) -> set:
    check_schedule(E, E_init, E_p, E_u, E_l)
    return {e for e in range(E) if is_update_epoch(e, E, E_init, E_p, E_u, E_l)}


# ---------------------------------------------------------------- policy gradient

def instance_rewards(out: dict, lam: float) -> np.ndarray:
    return np.array([reward_from_metrics(L, v, nv, lam)
                     for L, v, nv in zip(out["lengths"], out["viols"], out["nviols"])])


def policy_gradient(scores: np.ndarray, rewards: np.ndarray) -> np.ndarray:
    """(1/K) sum_k (R_k - mean R) sum_t score_kt for one instance."""
    adv = rewards - rewards.mean()
    return (adv[:, None] * scores.sum(axis=1)).sum(axis=0) / len(rewards)


def reinforce_update(params: PolicyParams, batch, config: TrainConfig, rng: np.random.Generator,
                     mask_mode: str | None = None, predictor=None, collect_labels: bool = False):
    """One ascent step on the batch; returns (new params, stats, label arrays or None)."""
    if config.K < 2:
        raise ValueError("K must be >= 2 (the shared baseline needs two samples)")
    mode = mask_mode or config.mask_mode
    grad = np.zeros(F)
    rewards_all, feas, inst_inf, lengths = [], [], [], []
    labs = ([], [], [])
    step_base = 0
    for inst in batch:
        u = rng.random((config.K, inst.n))
        out = rollout_batch(params, inst, mode, u, collect_labels, config.early_stop_steps,
                            predictor=predictor)
        R = instance_rewards(out, config.lam)
        grad += policy_gradient(out["scores"], R)
        ok = out["nviols"] == 0
        rewards_all.append(R.mean())
        feas.append(ok.mean())
        inst_inf.append(not ok.any())
        lengths.extend(out["lengths"][ok])
        if collect_labels:
            labs[0].append(out["label_features"])
            labs[1].append(out["labels"])
            labs[2].append(out["label_steps"] + step_base)
            step_base += config.K * inst.n
    grad /= max(len(batch), 1)
    new = PolicyParams(params.w + config.lr_policy * config.alpha_mix * grad, params.temperature)
    stats = {
        "mean_reward": float(np.mean(rewards_all)),
        "sol_infsb": float(1.0 - np.mean(feas)),
        "inst_infsb": float(np.mean(inst_inf)),
        "mean_len_fsb": float(np.mean(lengths)) if lengths else float("nan"),
        "grad_norm": float(np.linalg.norm(grad)),
    }
    labels = None
    if collect_labels:
        labels = tuple(np.concatenate(x) if x else np.zeros((0, F)) for x in labs)
    return new, stats, labels


# ---------------------------------------------------------------- predictor

def class_weights(n_infsb: int, n_fsb: int):
    """(w_infsb, w_fsb) balancing the two label classes, as exact fractions.

    Rationals keep ``w_infsb * n_infsb == w_fsb * n_fsb`` exact; callers
    convert to float for the loss.
    """
    if n_infsb < 0 or n_fsb < 0:
        raise ValueError("counts must be non-negative")
    total = n_infsb + n_fsb
    if total == 0:
        raise ValueError("at least one sample is needed")
    if n_infsb == 0:
        return Fraction(0), Fraction(1)
    if n_fsb == 0:
        return Fraction(1), Fraction(0)
    return Fraction(total, 2 * n_infsb), Fraction(total, 2 * n_fsb)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _sample_weights(labels, steps, weights):
    """Per-sample factor omega / (candidates in step * number of steps)."""
    labels = np.asarray(labels, dtype=bool)
    steps = np.asarray(steps)
    uniq, inv, cnt = np.unique(steps, return_inverse=True, return_counts=True)
    if weights is None:
        n_inf = np.bincount(inv, weights=labels.astype(float), minlength=len(uniq))
        n_fsb = cnt - n_inf
        # vectorized class_weights; float division rounds like float(Fraction)
        with np.errstate(divide="ignore", invalid="ignore"):
            w_inf = np.where(n_inf > 0, np.where(n_fsb > 0, cnt / (2.0 * n_inf), 1.0), 0.0)
            w_fsb = np.where(n_fsb > 0, np.where(n_inf > 0, cnt / (2.0 * n_fsb), 1.0), 0.0)
        w = np.where(labels, w_inf[inv], w_fsb[inv])
    else:
        w = np.where(labels, float(weights[0]), float(weights[1]))
    return w / (cnt[inv] * len(uniq))


def wbce_loss(v, phi, labels, steps, weights=None) -> float:
    """Class-weighted BCE, averaged over candidates within a step, then over steps."""
    if len(labels) == 0:
        return 0.0
    z = np.asarray(phi) @ np.asarray(v)
    g = np.asarray(labels, dtype=float)
    s = _sample_weights(labels, steps, weights)
    # log sigmoid via logaddexp for stability
    lp = -np.logaddexp(0.0, -z)
    lq = -np.logaddexp(0.0, z)
    return float(-(s * (g * lp + (1 - g) * lq)).sum())


def _wbce_grad(v, phi, g, s):
    p = _sigmoid(phi @ v)
    return -((s * (g * (1 - p) - (1 - g) * p)) @ phi)


def wbce_grad(v, phi, labels, steps, weights=None) -> np.ndarray:
    if len(labels) == 0:
        return np.zeros(len(v))
    g = np.asarray(labels, dtype=float)
    return _wbce_grad(np.asarray(v, dtype=float), np.asarray(phi), g, _sample_weights(labels, steps, weights))


def predict_proba(predictor: PredictorParams, phi) -> np.ndarray:
    return _sigmoid(np.asarray(phi) @ predictor.v)


def predictor_mask(predictor: PredictorParams, state: ConstructionState) -> Mask:
    """Locally feasible candidates whose predicted PI probability stays at or below the threshold."""
    m = local_mask(state).selectable.copy()
    for j in np.flatnonzero(m):
        if predict_proba(predictor, features(state, int(j))) > predictor.threshold:
            m[j] = False
    return Mask(m, Level.PREDICTED)


def recalls(predictor: PredictorParams, phi, labels):
    """(feasible-class recall, infeasible-class recall); nan for an absent class."""
    labels = np.asarray(labels, dtype=bool)
    pred = predict_proba(predictor, phi) > predictor.threshold
    fs = ~labels
    r_f = float((~pred[fs]).mean()) if fs.any() else float("nan")
    r_i = float(pred[labels].mean()) if labels.any() else float("nan")
    return r_f, r_i


def fit_predictor(predictor: PredictorParams, phi, labels, steps, lr: float, iters: int):
    v = predictor.v.copy()
    g = np.asarray(labels, dtype=float)
    s = _sample_weights(labels, steps, None)
    for _ in range(iters):
        v -= lr * _wbce_grad(v, phi, g, s)
    return PredictorParams(v, predictor.threshold)


# ---------------------------------------------------------------- loops

def _stream_seed(*key) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1, np.uint64)[0] >> 1)


def batch_instances(config: TrainConfig, epoch: int, b: int):
    return generate_set(config.variant, config.n, config.hardness, config.batch,
                        _stream_seed(config.seed, epoch, b))


def label_pool(params: PolicyParams, config: TrainConfig, key: int):
    """Held-out (state, candidate) samples from PI1 rollouts of the current policy."""
    insts = generate_set(config.variant, config.n, config.hardness, config.pool_instances,
                         _stream_seed(config.seed, 7_777_777, key))
    rng = np.random.default_rng(_stream_seed(config.seed, 8_888_888, key))
    phis, labels = [], []
    for inst in insts:
        out = rollout_batch(params, inst, "pi1", rng.random((2, inst.n)), collect_labels=True)
        phis.append(out["label_features"])
        labels.append(out["labels"])
    return np.concatenate(phis), np.concatenate(labels)


def _log(fh, rec):
    if fh is not None:
        fh.write(json.dumps(rec) + "\n")
        fh.flush()


def _run(config: TrainConfig, params: PolicyParams, mode: str, log=None, predictor_on: bool = False):
    """Shared training loop. ``mode`` is the rollout mask for policy updates;
    with ``predictor_on`` the PIP-D schedule decides between ground-truth PI1
    masks (and predictor fitting) and the frozen best predictor."""
    config.validate()
    history = []
    predictor = PredictorParams.zeros(config.predictor_threshold) if predictor_on else None
    best = predictor
    best_key = None
    pool = None
    E = config.epochs
    for e in range(E):
        t0 = time.perf_counter()
        update = predictor_on and is_update_epoch(e, E, config.E_init, config.E_p, config.E_u, config.E_l)
        if predictor_on and update and (pool is None or not is_update_epoch(e - 1, E, config.E_init, config.E_p,
                                                                            config.E_u, config.E_l)):
            # new update window: fresh held-out pool, re-score the incumbent on it
            pool = label_pool(params, config, e)
            best_key = None
        use_mode = mode
        if predictor_on:
            use_mode = "pi1" if update else "predicted"
        rng = np.random.default_rng(_stream_seed(config.seed, e, 99))
        stats = []
        for b in range(config.batches_per_epoch):
            batch = batch_instances(config, e, b)
            params, st, labs = reinforce_update(params, batch, config, rng, use_mode,
                                                predictor=best if use_mode == "predicted" else None,
                                                collect_labels=update)
            if update and len(labs[1]):
                predictor = fit_predictor(predictor, *labs, config.lr_predictor * config.beta_mix,
                                          config.predictor_steps)
            stats.append(st)
        rec = {
            "epoch": e,
            "mean_reward": float(np.mean([s["mean_reward"] for s in stats])),
            "sol_infsb": float(np.mean([s["sol_infsb"] for s in stats])),
            "inst_infsb": float(np.mean([s["inst_infsb"] for s in stats])),
            "predictor_acc_fsb": None,
            "predictor_acc_infsb": None,
            "mask": use_mode,
        }
        if predictor_on:
            if update:
                rf, ri = recalls(predictor, *pool)
                # feasible recall decides; a predictor that flags nothing is not a candidate
                key = (ri >= 0.5, rf)
                if best_key is None:
                    bf, bi = recalls(best, *pool)
                    best_key = (bi >= 0.5, bf)
                if key >= best_key:
                    best, best_key = predictor, key
            rf, ri = recalls(best, *pool)
            rec["predictor_acc_fsb"] = rf
            rec["predictor_acc_infsb"] = ri
            rec["phase"] = "update" if update else "frozen"
        rec["wall_s"] = time.perf_counter() - t0
        history.append(rec)
        _log(log, rec)
    return params, best, history


def _init(config: TrainConfig) -> PolicyParams:
    return PolicyParams.zeros(config.temperature)


def train_lagrangian(config: TrainConfig, log=None, params: PolicyParams | None = None):
    """Reward-only training under ``config.mask_mode`` (pi0 by default)."""
    params, _, hist = _run(config, params or _init(config), config.mask_mode, log)
    return params, hist


def train_pip(config: TrainConfig, log=None, params: PolicyParams | None = None):
    """Lagrangian reward with ground-truth one-step PI masks on every rollout."""
    params, _, hist = _run(config, params or _init(config), "pi1", log)
    return params, hist


def train_pipd(config: TrainConfig, log=None, params: PolicyParams | None = None):
    """PI masks from a learned predictor refreshed on the periodic schedule."""
    return _run(config, params or _init(config), "pi1", log, predictor_on=True)


def fine_tune(pretrained: PolicyParams, config: TrainConfig, log=None):
    """Continue a pretrained policy for ``config.epochs`` epochs with PI1 masks."""
    if config.epochs == 0:
        return PolicyParams(pretrained.w, pretrained.temperature), []
    return train_pip(replace(config), log, PolicyParams(pretrained.w, pretrained.temperature))
