"""Occupancy estimation: fixed-point iteration, TD bootstrapping, counting.

The deterministic iteration is ``d <- q + gamma * P_pi^T d``; its unique
fixed point is the exact state marginal.  The stochastic update moves one
coordinate per sampled transition ``(s_t, s_{t+1})``::

    d[s_t] += eta_t * (q[s_t] + gamma * d[s_{t+1}] - d[s_t])

Its fixed point is ``(I - gamma P_pi)^{-1} q``, which coincides with the
state marginal whenever ``P_pi`` is symmetric (e.g. symmetric chains and
reflecting grids under the uniform policy).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

from .exact import OccupancyMeasure, state_marginal
from .mdp import InverseCdfSampler, PolicyParams, TabularMdp, Trajectory, make_rng, policy_kernel, policy_probs


@dataclass(frozen=True)
class StepSchedule:
    """``eta_t = c`` (constant) or ``c / (1 + t) ** p`` (polynomial)."""

    kind: str = "polynomial"
    c: float = 0.5
    p: float = 0.6

    def __post_init__(self):
        if self.kind not in ("constant", "polynomial"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.c < 0 or self.p < 0:
            raise ValueError("schedule constants must be >= 0")

    def __call__(self, t: int) -> float:
        if self.kind == "constant":
            return self.c
        return self.c / (1.0 + t) ** self.p

    def to_dict(self) -> dict:
        return {"kind": self.kind, "c": self.c, "p": self.p}

    @classmethod
    def from_dict(cls, doc) -> "StepSchedule":
        if isinstance(doc, (int, float)):
            return cls("constant", float(doc), 0.0)
        return cls(doc.get("kind", "polynomial"), float(doc["c"]), float(doc.get("p", 0.0)))


DEFAULT_TD_SCHEDULE = StepSchedule("polynomial", 0.5, 0.6)


@dataclass(frozen=True, eq=False)
class BootstrapState:
    estimate: np.ndarray
    iteration: int = 0
    step_schedule: StepSchedule = DEFAULT_TD_SCHEDULE

    def __post_init__(self):
        est = np.array(self.estimate, dtype=float)
        est.setflags(write=False)
        object.__setattr__(self, "estimate", est)


def fixed_point_iterate(mdp: TabularMdp, params: PolicyParams, d0, n_iters: int) -> np.ndarray:
    """Iterates ``d_1 .. d_n`` as rows of an ``[n_iters, S]`` array."""
    if n_iters < 0:
        raise ValueError("n_iters must be >= 0")
    d = np.asarray(d0, dtype=float).copy()
    if not np.all(np.isfinite(d)):
        raise ValueError("d0 must be finite")
    PT = policy_kernel(mdp, params).T
    q, g = mdp.initial_dist, mdp.gamma
    out = np.empty((n_iters, mdp.n_states))
    for k in range(n_iters):
        d = q + g * (PT @ d)
        out[k] = d
    return out


def td_step(d, s: int, s_next: int, base_s: float, gamma: float, eta: float) -> None:
    """In-place scalar TD move on list/array ``d``; used by the online learner."""
    d[s] += eta * (base_s + gamma * d[s_next] - d[s])


def td_update(state: BootstrapState, mdp: TabularMdp, s_t: int, s_next: int,
              base=None) -> BootstrapState:
    """One stochastic bootstrap step; ``base`` defaults to the initial distribution."""
    if not (0 <= s_t < mdp.n_states and 0 <= s_next < mdp.n_states):
        raise IndexError("state index out of bounds")
    base = mdp.initial_dist if base is None else np.asarray(base, dtype=float)
    est = np.array(state.estimate)
    td_step(est, s_t, s_next, float(base[s_t]), mdp.gamma, state.step_schedule(state.iteration))
    return replace(state, estimate=est, iteration=state.iteration + 1)


def count_estimate(trajectories: list[Trajectory], gamma: float, n_states: int, n_actions: int) -> OccupancyMeasure:
    """Discounted visit counts averaged over trajectories (no truncation correction)."""
    if not trajectories:
        raise ValueError("need at least one trajectory")
    mu = np.zeros((n_states, n_actions))
    for traj in trajectories:
        disc = gamma ** np.arange(len(traj))
        np.add.at(mu, (traj.states, traj.actions), disc)
    mu /= len(trajectories)
    return OccupancyMeasure(mu, mu.sum(axis=1), gamma)


# --- traces -----------------------------------------------------------------

TRACE_HEADER = ("iter", "l1_error", "linf_error", "eta")


@dataclass
class ConvergenceTrace:
    rows: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for it, l1, linf, eta in self.rows:
            w.writerow([it, repr(float(l1)), repr(float(linf)), repr(float(eta))])
        return buf.getvalue()

    @property
    def l1(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])


def deterministic_trace(mdp: TabularMdp, params: PolicyParams, n_iters: int, d0=None) -> ConvergenceTrace:
    target = state_marginal(mdp, params)
    d0 = np.zeros(mdp.n_states) if d0 is None else np.asarray(d0, dtype=float)
    iters = fixed_point_iterate(mdp, params, d0, n_iters)
    rows = []
    for k, d in enumerate(iters, start=1):
        err = np.abs(target - d)
        rows.append((k, err.sum(), err.max(), 1.0))
    return ConvergenceTrace(rows)


def contraction_violations(trace: ConvergenceTrace, initial_l1: float, gamma: float,
                           rtol: float = 1e-9) -> list[int]:
    """Iterations ``n`` where ``l1_n > gamma^n * l1_0`` beyond round-off."""
    bad = []
    for n, l1, _, _ in trace.rows:
        bound = gamma ** n * initial_l1
        if l1 > bound * (1 + rtol) + 1e-12:
            bad.append(n)
    return bad


def td_trace(mdp: TabularMdp, params: PolicyParams, n_steps: int, seed: int,
             schedule: StepSchedule = DEFAULT_TD_SCHEDULE, d0=None,
             restart_every: int | None = None, log_every: int = 1) -> tuple[np.ndarray, ConvergenceTrace]:
    """Run the stochastic update along one sampled path; returns final estimate and trace.

    Uniforms are consumed as in :func:`convexpg.mdp.sample_trajectory`, with a
    fresh ``s0 ~ q`` draw every ``restart_every`` steps when set.
    """
    target = state_marginal(mdp, params)
    d = (np.full(mdp.n_states, 1.0 / mdp.n_pairs) if d0 is None
         else np.asarray(d0, dtype=float)).tolist()
    sampler = InverseCdfSampler(mdp, policy_probs(params))
    rng = make_rng(seed)
    q, g = mdp.initial_dist.tolist(), mdp.gamma
    rows = []
    s = sampler.initial(rng.random())
    for t in range(n_steps):
        if restart_every and t > 0 and t % restart_every == 0:
            s = sampler.initial(rng.random())
        a = sampler.action(s, rng.random())
        s_next = sampler.next_state(s, a, rng.random())
        eta = schedule(t)
        td_step(d, s, s_next, q[s], g, eta)
        s = s_next
        if (t + 1) % log_every == 0 or t + 1 == n_steps:
            err = np.abs(target - np.asarray(d))
            rows.append((t + 1, err.sum(), err.max(), eta))
    return np.asarray(d), ConvergenceTrace(rows)
