"""Seeded benchmark MDPs: reflecting chain, slippery gridworld, Dirichlet MDP."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidSpec
from .exact import occupancy_exact
from .mdp import PolicyParams, TabularMdp, make_rng

KINDS = ("chain", "gridworld", "random_mdp")
LEFT, RIGHT = 0, 1
# gridworld moves as (dx, dy); cell (x, y) has index y * width + x
GRID_MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))  # up, right, down, left


@dataclass(frozen=True)
class EnvSpec:
    kind: str
    gamma: float = 0.9
    length: int = 5
    width: int = 5
    height: int = 5
    n_states: int = 5
    n_actions: int = 3
    seed: int = 0
    slip_prob: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "EnvSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise InvalidSpec(f"unknown EnvSpec field(s): {sorted(unknown)}")
        return cls(**doc)


def chain(length: int, gamma: float = 0.9) -> TabularMdp:
    P = np.zeros((length, 2, length))
    for s in range(length):
        P[s, LEFT, max(s - 1, 0)] = 1.0
        P[s, RIGHT, min(s + 1, length - 1)] = 1.0
    q = np.zeros(length)
    q[0] = 1.0
    return TabularMdp(length, 2, gamma, P, q)


def gridworld(width: int, height: int, gamma: float = 0.9, slip_prob: float = 0.0) -> TabularMdp:
    S = width * height

    def target(x, y, move):
        nx, ny = x + move[0], y + move[1]
        if 0 <= nx < width and 0 <= ny < height:
            return ny * width + nx
        return y * width + x

    P = np.zeros((S, 4, S))
    for y in range(height):
        for x in range(width):
            s = y * width + x
            for a, move in enumerate(GRID_MOVES):
                P[s, a, target(x, y, move)] += 1.0 - slip_prob
                for other in GRID_MOVES:
                    P[s, a, target(x, y, other)] += slip_prob / 4.0
    q = np.zeros(S)
    q[0] = 1.0
    return TabularMdp(S, 4, gamma, P, q)


def random_mdp(n_states: int, n_actions: int, gamma: float = 0.9, seed: int = 0) -> TabularMdp:
    """Flat-Dirichlet transitions and initial distribution, uniform [0, 1) reward."""
    rng = make_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    q = rng.dirichlet(np.ones(n_states))
    R = rng.random((n_states, n_actions))
    # renormalize so rows pass the 1e-12 sum check bit-for-bit
    P /= P.sum(axis=2, keepdims=True)
    q /= q.sum()
    return TabularMdp(n_states, n_actions, gamma, P, q, R)


def build(spec: EnvSpec) -> TabularMdp:
    if not (0 <= spec.gamma < 1):
        raise InvalidSpec("gamma must lie in [0, 1)")
    if spec.kind == "chain":
        if spec.length < 1:
            raise InvalidSpec("chain length must be >= 1")
        return chain(spec.length, spec.gamma)
    if spec.kind == "gridworld":
        if spec.width < 1 or spec.height < 1:
            raise InvalidSpec("grid width and height must be >= 1")
        if not (0 <= spec.slip_prob < 1):
            raise InvalidSpec("slip_prob must lie in [0, 1)")
        return gridworld(spec.width, spec.height, spec.gamma, spec.slip_prob)
    if spec.kind == "random_mdp":
        if spec.n_states < 1 or spec.n_actions < 1:
            raise InvalidSpec("random_mdp sizes must be >= 1")
        if spec.seed < 0:
            raise InvalidSpec("seed must be non-negative")
        return random_mdp(spec.n_states, spec.n_actions, spec.gamma, spec.seed)
    raise InvalidSpec(f"unknown environment kind {spec.kind!r}")


def expert_occupancy(mdp: TabularMdp, expert_params: PolicyParams) -> np.ndarray:
    return np.array(occupancy_exact(mdp, expert_params).state_action)
