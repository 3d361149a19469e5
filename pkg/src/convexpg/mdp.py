"""Finite MDPs, tabular softmax policies and trajectory sampling.

Random streams: every sampler takes an integer seed and builds a
``numpy.random.Generator(PCG64(seed))``.  Independent child streams (one per
learner instance, per seed in a sweep) come from ``SeedSequence(seed).spawn``.
Uniforms are consumed strictly in the order ``s0``, then ``(a_t, s_{t+1})``
for every step, and each draw is mapped to an index by inverse CDF.
"""

from __future__ import annotations

import json
import re
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MdpFormatError

PRNG_NAME = "numpy.random.PCG64"
PROB_TOL = 1e-12


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def spawn_seeds(seed: int, n: int) -> list[int]:
    """Derive ``n`` independent 64-bit child seeds from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def _frozen(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    n_states: int
    n_actions: int
    gamma: float
    transition: np.ndarray  # [S, A, S'], P(s'|s,a)
    initial_dist: np.ndarray  # [S]
    reward: np.ndarray | None = None  # [S, A]

    def __post_init__(self):
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "initial_dist", _frozen(self.initial_dist))
        if self.reward is not None:
            object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    def with_reward(self, reward) -> "TabularMdp":
        return TabularMdp(self.n_states, self.n_actions, self.gamma,
                          self.transition, self.initial_dist, reward)


@dataclass(frozen=True)
class Violation:
    field: str
    location: tuple
    message: str

    def __str__(self):
        return self.message


def validate(mdp: TabularMdp) -> list[Violation]:
    """Return every invariant violation of ``mdp``; an empty list means valid."""
    out: list[Violation] = []
    S, A = mdp.n_states, mdp.n_actions
    if not (isinstance(S, (int, np.integer)) and S >= 1):
        out.append(Violation("n_states", (), f"n_states must be a positive integer, got {S}"))
    if not (isinstance(A, (int, np.integer)) and A >= 1):
        out.append(Violation("n_actions", (), f"n_actions must be a positive integer, got {A}"))
    if out:
        return out

    g = mdp.gamma
    if not np.isfinite(g) or g < 0:
        out.append(Violation("gamma", (), f"gamma must be >= 0, got {g}"))
    elif g >= 1:
        out.append(Violation("gamma", (), "gamma must be < 1"))

    P = mdp.transition
    if P.shape != (S, A, S):
        out.append(Violation("transition", (), f"transition shape {P.shape} != {(S, A, S)}"))
    else:
        for s in range(S):
            for a in range(A):
                row = P[s, a]
                if not np.all(np.isfinite(row)):
                    out.append(Violation("transition", (s, a),
                                         f"non-finite entry at (s={s},a={a})"))
                    continue
                neg = np.flatnonzero(row < 0)
                for sp in neg:
                    out.append(Violation("transition", (s, a, int(sp)),
                                         f"negative probability {row[sp]:g} at (s={s},a={a},s'={sp})"))
                total = float(row.sum())
                if abs(total - 1.0) > PROB_TOL:
                    out.append(Violation("transition", (s, a),
                                         f"row sum {total:.12g} ≠ 1 at (s={s},a={a})"))

    q = mdp.initial_dist
    if q.shape != (S,):
        out.append(Violation("initial_dist", (), f"initial_dist shape {q.shape} != {(S,)}"))
    elif not np.all(np.isfinite(q)):
        out.append(Violation("initial_dist", (), "initial_dist has non-finite entries"))
    else:
        for s in np.flatnonzero(q < 0):
            out.append(Violation("initial_dist", (int(s),),
                                 f"negative initial probability {q[s]:g} at s={s}"))
        total = float(q.sum())
        if abs(total - 1.0) > PROB_TOL:
            out.append(Violation("initial_dist", (), f"initial_dist sum {total:.12g} ≠ 1"))

    if mdp.reward is not None:
        R = mdp.reward
        if R.shape != (S, A):
            out.append(Violation("reward", (), f"reward shape {R.shape} != {(S, A)}"))
        elif not np.all(np.isfinite(R)):
            out.append(Violation("reward", (), "reward has non-finite entries"))
    return out


# --- JSON interchange -------------------------------------------------------

def mdp_to_dict(mdp: TabularMdp) -> dict:
    d = {
        "n_states": int(mdp.n_states),
        "n_actions": int(mdp.n_actions),
        "gamma": mdp.gamma,
        "transition": mdp.transition.tolist(),
        "initial_dist": mdp.initial_dist.tolist(),
    }
    if mdp.reward is not None:
        d["reward"] = mdp.reward.tolist()
    return d


def mdp_to_json(mdp: TabularMdp) -> str:
    return json.dumps(mdp_to_dict(mdp), indent=1)


def _key_line(text: str, key: str) -> int:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    if m is None:
        return 1
    return text.count("\n", 0, m.start()) + 1


def mdp_from_dict(doc: dict) -> TabularMdp:
    missing = [k for k in ("n_states", "n_actions", "gamma", "transition", "initial_dist")
               if k not in doc]
    if missing:
        raise MdpFormatError(f"missing field(s): {', '.join(missing)}")
    try:
        return TabularMdp(
            n_states=doc["n_states"],
            n_actions=doc["n_actions"],
            gamma=doc["gamma"],
            transition=np.asarray(doc["transition"], dtype=float),
            initial_dist=np.asarray(doc["initial_dist"], dtype=float),
            reward=None if doc.get("reward") is None else np.asarray(doc["reward"], dtype=float),
        )
    except (TypeError, ValueError) as exc:
        raise MdpFormatError(f"malformed MDP arrays: {exc}") from exc


def parse_mdp(text: str, source: str = "<mdp>") -> TabularMdp:
    """Parse an MDP JSON document; any invariant violation is an error.

    Messages are anchored as ``source:line: message`` where the line is that
    of the offending field's key.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MdpFormatError(f"{source}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise MdpFormatError(f"{source}:1: top-level value must be an object")
    try:
        mdp = mdp_from_dict(doc)
    except MdpFormatError as exc:
        raise MdpFormatError(f"{source}:1: {exc}") from exc
    problems = validate(mdp)
    if problems:
        lines = [f"{source}:{_key_line(text, v.field)}: {v.message}" for v in problems]
        raise MdpFormatError("\n".join(lines))
    return mdp


def load_mdp(path) -> TabularMdp:
    path = Path(path)
    return parse_mdp(path.read_text(), str(path))


# --- policies ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PolicyParams:
    theta: np.ndarray = field()

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen(self.theta))
        if self.theta.ndim != 2:
            raise ValueError("theta must be a [n_states, n_actions] matrix")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta has non-finite entries")

    @classmethod
    def uniform(cls, mdp: TabularMdp) -> "PolicyParams":
        return cls(np.zeros((mdp.n_states, mdp.n_actions)))

    @classmethod
    def random(cls, mdp: TabularMdp, seed: int, scale: float = 1.0) -> "PolicyParams":
        return cls(scale * make_rng(seed).standard_normal((mdp.n_states, mdp.n_actions)))

    def to_dict(self) -> dict:
        return {"theta": self.theta.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "PolicyParams":
        return cls(np.asarray(doc["theta"], dtype=float))


def softmax_rows(theta: np.ndarray) -> np.ndarray:
    z = theta - theta.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def policy_probs(params: PolicyParams) -> np.ndarray:
    """Row-wise softmax of ``theta``: ``pi[s, a]``."""
    return softmax_rows(params.theta)


def policy_kernel(mdp: TabularMdp, params: PolicyParams) -> np.ndarray:
    """State-to-state kernel ``P_pi[s, s'] = sum_a pi(a|s) P(s'|s,a)``."""
    pi = policy_probs(params)
    return np.einsum("sa,sat->st", pi, mdp.transition)


# --- sampling ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Trajectory:
    steps: np.ndarray  # int [horizon, 3]: (state, action, next_state)
    seed: int
    horizon: int

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.int64).reshape(-1, 3)
        steps.setflags(write=False)
        object.__setattr__(self, "steps", steps)

    @property
    def states(self) -> np.ndarray:
        return self.steps[:, 0]

    @property
    def actions(self) -> np.ndarray:
        return self.steps[:, 1]

    def __len__(self):
        return len(self.steps)


class InverseCdfSampler:
    """Inverse-CDF lookups against precomputed cumulative tables."""

    def __init__(self, mdp: TabularMdp, pi: np.ndarray):
        self.q_cdf = np.cumsum(mdp.initial_dist).tolist()
        self.pi_cdf = np.cumsum(pi, axis=1).tolist()
        self.p_cdf = np.cumsum(mdp.transition, axis=2).tolist()
        self.n_states = mdp.n_states
        self.n_actions = mdp.n_actions

    @staticmethod
    def _pick(cdf, u, n):
        i = bisect_right(cdf, u)
        return i if i < n else n - 1

    def initial(self, u: float) -> int:
        return self._pick(self.q_cdf, u, self.n_states)

    def action(self, s: int, u: float) -> int:
        return self._pick(self.pi_cdf[s], u, self.n_actions)

    def next_state(self, s: int, a: int, u: float) -> int:
        return self._pick(self.p_cdf[s][a], u, self.n_states)


def sample_trajectory(mdp: TabularMdp, params: PolicyParams, horizon: int, seed: int) -> Trajectory:
    """Roll out ``horizon`` steps from ``s0 ~ q`` under ``pi_theta``."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    sampler = InverseCdfSampler(mdp, policy_probs(params))
    u = make_rng(seed).random(1 + 2 * horizon).tolist()
    steps = np.empty((horizon, 3), dtype=np.int64)
    s = sampler.initial(u[0])
    for t in range(horizon):
        a = sampler.action(s, u[1 + 2 * t])
        s_next = sampler.next_state(s, a, u[2 + 2 * t])
        steps[t] = (s, a, s_next)
        s = s_next
    return Trajectory(steps, seed, horizon)
