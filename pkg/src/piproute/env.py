"""Construction environment: state transitions, violation accounting, Lagrangian reward."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .instances import Instance, TspdlInstance


class InvalidMove(ValueError):
    pass


class InfeasibleMove(ValueError):
    """Raised by ``step(..., strict=True)`` on a constraint violation."""


@dataclass(frozen=True, eq=False)
class ConstructionState:
    """Partial tour. ``resource`` is the clock (TSPTW) or the load (TSPDL)."""

    instance: Instance
    current: int
    resource: float
    visited: int  # bitmask, depot bit set from the start
    tour: tuple
    length: float
    j_violation: float
    j_in: int

    @property
    def clock(self) -> float:
        return self.resource

    @property
    def load(self) -> float:
        return self.resource

    @property
    def n_visited(self) -> int:
        return len(self.tour)

    @property
    def done(self) -> bool:
        return len(self.tour) == self.instance.n + 1

    def is_visited(self, node: int) -> bool:
        return bool((self.visited >> node) & 1)

    def visited_array(self) -> np.ndarray:
        N = self.instance.n + 1
        return np.array([(self.visited >> j) & 1 for j in range(N)], dtype=np.bool_)

    def unvisited(self) -> list[int]:
        return [j for j in range(self.instance.n + 1) if not self.is_visited(j)]


def init_state(instance: Instance) -> ConstructionState:
    return ConstructionState(instance, 0, 0.0, 1, (0,), 0.0, 0.0, 0)


def _arrays(instance: Instance):
    return instance.kernel_arrays()


def step(state: ConstructionState, node: int, strict: bool = False) -> ConstructionState:
    inst = state.instance
    if not 0 < node <= inst.n:
        raise InvalidMove(f"node {node} is not a customer of this instance")
    if state.is_visited(node):
        raise InvalidMove(f"node {node} already visited")
    dist, travel, lo, hi = _arrays(inst)
    arrival = state.resource + travel[state.current, node]
    over = arrival - hi[node]
    if strict and over > 0:
        raise InfeasibleMove(f"node {node} violated by {over:g}")
    return replace(
        state,
        current=node,
        resource=max(arrival, lo[node]),
        visited=state.visited | (1 << node),
        tour=state.tour + (node,),
        length=state.length + dist[state.current, node],
        j_violation=state.j_violation + max(over, 0.0),
        j_in=state.j_in + (1 if over > 0 else 0),
    )


def finalize(state: ConstructionState):
    """Close the tour at the depot: (tour, length, j_violation, j_in)."""
    if not state.done:
        missing = state.unvisited()
        raise InvalidMove(f"unvisited nodes remain: {missing}")
    dist, travel, lo, hi = _arrays(state.instance)
    arrival = state.resource + travel[state.current, 0]
    over = arrival - hi[0]
    length = state.length + dist[state.current, 0]
    jv = state.j_violation + max(over, 0.0)
    jin = state.j_in + (1 if over > 0 else 0)
    return state.tour, length, jv, jin


def validate_tour(instance: Instance, tour) -> tuple:
    tour = tuple(int(x) for x in tour)
    if len(tour) != instance.n + 1 or tour[0] != 0 or sorted(tour) != list(range(instance.n + 1)):
        raise InvalidMove(f"not a permutation of 0..{instance.n} starting at the depot: {tour}")
    return tour


def tour_metrics(instance: Instance, tour):
    """(length, J_C, J_IN, feasible) of a complete tour."""
    tour = validate_tour(instance, tour)
    state = init_state(instance)
    for node in tour[1:]:
        state = step(state, node)
    _, length, jc, jin = finalize(state)
    return float(length), float(jc), int(jin), jin == 0


def fast_metrics(instance: Instance, tour):
    """Same numbers as :func:`tour_metrics` through the compiled replay (no validation)."""
    dist, travel, lo, hi = _arrays(instance)
    length, jc, jin = kernels.replay_kernel(np.asarray(tour, dtype=np.int64), dist, travel, lo, hi)
    return float(length), float(jc), int(jin), jin == 0


def reward_from_metrics(length: float, j_c: float, j_in: float, lam: float) -> float:
    return -(length + lam * j_c + j_in)


def lagrangian_reward(instance: Instance, tour, lam: float) -> float:
    if lam < 0:
        raise ValueError("Lagrangian multiplier must be non-negative")
    length, jc, jin, _ = tour_metrics(instance, tour)
    return reward_from_metrics(length, jc, jin, lam)


def raw_length_scale(instance: Instance) -> float:
    """Factor from normalized coordinates back to raw benchmark units."""
    return 1.0 if isinstance(instance, TspdlInstance) else 100.0


def write_tours(path, records) -> None:
    """JSON lines, one ``{"tour", "length", "feasible", ...}`` record per line."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_tours(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out
