"""Utilities ``f(mu)`` of the occupancy measure and their gradients.

All objectives are minimized.  The linear utility is ``-<mu, R>`` so that
minimizing it maximizes expected discounted reward.  Every utility here is
separable over state-action pairs, which lets the online learner query a
single gradient entry without rebuilding the full vector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidSpec, MissingField

KINDS = ("linear", "neg_entropy", "apprenticeship_l2")


def _as_matrix(mu) -> np.ndarray:
    # accepts an OccupancyMeasure or a raw [S, A] array
    return np.asarray(getattr(mu, "state_action", mu), dtype=float)


@dataclass(frozen=True, eq=False)
class UtilitySpec:
    kind: str
    reward: np.ndarray | None = None
    expert_occupancy: np.ndarray | None = None
    clamp_floor: float = 1e-12

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown utility kind {self.kind!r}; expected one of {KINDS}")
        if not self.clamp_floor > 0:
            raise InvalidSpec("clamp_floor must be > 0")
        for name in ("reward", "expert_occupancy"):
            val = getattr(self, name)
            if val is not None:
                arr = np.array(val, dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @classmethod
    def linear(cls, reward) -> "UtilitySpec":
        return cls("linear", reward=reward)

    @classmethod
    def constant(cls, n_states: int, n_actions: int) -> "UtilitySpec":
        """Zero-reward linear utility, i.e. ``f = 0`` everywhere."""
        return cls("linear", reward=np.zeros((n_states, n_actions)))

    @classmethod
    def neg_entropy(cls, clamp_floor: float = 1e-12) -> "UtilitySpec":
        return cls("neg_entropy", clamp_floor=clamp_floor)

    @classmethod
    def apprenticeship(cls, expert_occupancy) -> "UtilitySpec":
        return cls("apprenticeship_l2", expert_occupancy=expert_occupancy)

    def check(self, gamma: float | None = None) -> None:
        """Raise if the field required by ``kind`` is absent or inconsistent."""
        if self.kind == "linear" and self.reward is None:
            raise MissingField("linear utility requires 'reward'")
        if self.kind == "apprenticeship_l2":
            if self.expert_occupancy is None:
                raise MissingField("apprenticeship_l2 utility requires 'expert_occupancy'")
            if gamma is not None:
                mass = float(self.expert_occupancy.sum())
                if abs(mass - 1.0 / (1.0 - gamma)) > 1e-6:
                    raise InvalidSpec(f"expert_occupancy mass {mass:.9g} != 1/(1-gamma)")

    # --- evaluation -----------------------------------------------------------

    def value(self, mu) -> float:
        self.check()
        m = _as_matrix(mu)
        if self.kind == "linear":
            return -float(np.sum(m * self.reward.reshape(m.shape)))
        if self.kind == "neg_entropy":
            mt = np.maximum(m, self.clamp_floor)
            return float(np.sum(mt * np.log(mt)))
        diff = m - self.expert_occupancy.reshape(m.shape)
        return float(np.sum(diff * diff))

    def gradient(self, mu) -> np.ndarray:
        """``R_pi = df/dmu`` at ``mu``, shaped like ``mu``."""
        self.check()
        m = _as_matrix(mu)
        if self.kind == "linear":
            return -np.array(self.reward.reshape(m.shape), dtype=float)
        if self.kind == "neg_entropy":
            return np.log(np.maximum(m, self.clamp_floor)) + 1.0
        return 2.0 * (m - self.expert_occupancy.reshape(m.shape))

    def gradient_entry(self, s: int, a: int, mu_sa: float) -> float:
        """Single coordinate of :meth:`gradient`, given ``mu(s, a)``."""
        if self.kind == "linear":
            return -float(self.reward[s, a])
        if self.kind == "neg_entropy":
            return math.log(max(mu_sa, self.clamp_floor)) + 1.0
        return 2.0 * (mu_sa - float(self.expert_occupancy[s, a]))

    # --- JSON -----------------------------------------------------------------

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "clamp_floor": self.clamp_floor}
        if self.reward is not None:
            d["reward"] = self.reward.tolist()
        if self.expert_occupancy is not None:
            d["expert_occupancy"] = self.expert_occupancy.tolist()
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "UtilitySpec":
        if "kind" not in doc:
            raise MissingField("utility document requires 'kind'")
        spec = cls(
            kind=doc["kind"],
            reward=doc.get("reward"),
            expert_occupancy=doc.get("expert_occupancy"),
            clamp_floor=float(doc.get("clamp_floor", 1e-12)),
        )
        spec.check()
        return spec


def load_utility(path) -> UtilitySpec:
    return UtilitySpec.from_dict(json.loads(Path(path).read_text()))


def value(spec: UtilitySpec, mu) -> float:
    return spec.value(mu)


def gradient(spec: UtilitySpec, mu) -> np.ndarray:
    return spec.gradient(mu)
