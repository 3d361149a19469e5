"""Sample-based policy gradient for general utilities, plus exact descent.

The online learner keeps an occupancy estimate, a Q-table and the policy
parameters.  Each environment step

1. draws ``a_t ~ pi(.|s_t)`` and ``s_{t+1} ~ P(.|s_t, a_t)``,
2. bootstraps the occupancy estimate on ``(s_t, s_{t+1})``,
3. reads the reward ``R(s_t, a_t) = f'(mu_hat)(s_t, a_t)`` with
   ``mu_hat(s, a) = d_hat(s) * pi(a|s)``,
4. moves ``Q(s_t, a_t)`` toward ``R + gamma * T(s_{t+1})``,
5. descends ``theta`` along ``grad log pi(a_t|s_t) * Q(s_t, a_t)``.

Two occupancy estimators are available.  ``state_td`` bootstraps a state
table, ``d[s_t] += eta * (q(s_t) + gamma * d[s_{t+1}] - d[s_t])``, whose
limit is ``(I - gamma P_pi)^{-1} q``; that equals the occupancy only for
symmetric ``P_pi``.  ``successor`` (default) bootstraps the successor matrix
row ``M[s_t] += eta * (e_{s_t} + gamma * M[s_{t+1}] - M[s_t])`` and reads
``d_hat = q^T M``, which converges to the occupancy for any kernel.

The state is resampled from ``q`` every ``horizon`` steps.  Evaluation rows
use exact occupancy solves, so traces report the true objective.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .bootstrap import StepSchedule, td_step
from .errors import InvalidSpec, NonFiniteUpdate
from .exact import occupancy_exact, policy_gradient
from .mdp import InverseCdfSampler, PRNG_NAME, PolicyParams, TabularMdp, make_rng, policy_probs
from .utilities import UtilitySpec

Q_UPDATES = ("paper_min", "on_policy_expected")
ESTIMATORS = ("successor", "state_td")
TRACE_HEADER = ("step", "f_value", "l1_occ_err", "grad_norm_proxy", "policy_entropy")


@dataclass(frozen=True)
class TrainConfig:
    utility: UtilitySpec
    n_steps: int = 200_000
    horizon: int = 100
    epsilon_schedule: StepSchedule = StepSchedule("polynomial", 1.0, 0.3)
    eta_schedule: StepSchedule = StepSchedule("polynomial", 1.0, 0.3)
    # None couples the policy step to eta_schedule
    policy_schedule: StepSchedule | None = StepSchedule("polynomial", 0.2, 0.5)
    alpha: float = 0.1
    q_update: str = "on_policy_expected"
    seed: int = 0
    eval_every: int = 10_000
    alg1_literal: bool = False
    init_scale: float = 0.0
    occupancy_estimator: str = "successor"

    def __post_init__(self):
        if self.occupancy_estimator not in ESTIMATORS:
            raise InvalidSpec(f"occupancy_estimator must be one of {ESTIMATORS}")
        if self.q_update not in Q_UPDATES:
            raise InvalidSpec(f"q_update must be one of {Q_UPDATES}")
        if self.horizon < 1:
            raise InvalidSpec("horizon must be >= 1")
        if self.n_steps < 0:
            raise InvalidSpec("n_steps must be >= 0")
        if self.eval_every < 1:
            raise InvalidSpec("eval_every must be >= 1")
        if not self.alpha > 0:
            raise InvalidSpec("alpha must be > 0")
        for sched in (self.epsilon_schedule, self.eta_schedule, self.policy_schedule):
            if sched is not None and not sched.c > 0:
                raise InvalidSpec("schedule constants must be > 0")

    @property
    def theta_schedule(self) -> StepSchedule:
        return self.policy_schedule or self.eta_schedule

    def to_dict(self) -> dict:
        return {
            "utility": self.utility.to_dict(),
            "n_steps": self.n_steps,
            "horizon": self.horizon,
            "epsilon_schedule": self.epsilon_schedule.to_dict(),
            "eta_schedule": self.eta_schedule.to_dict(),
            "policy_schedule": None if self.policy_schedule is None else self.policy_schedule.to_dict(),
            "alpha": self.alpha,
            "q_update": self.q_update,
            "seed": self.seed,
            "eval_every": self.eval_every,
            "alg1_literal": self.alg1_literal,
            "init_scale": self.init_scale,
            "occupancy_estimator": self.occupancy_estimator,
        }

    @classmethod
    def from_dict(cls, doc: dict, utility: UtilitySpec | None = None) -> "TrainConfig":
        doc = dict(doc)
        util_doc = doc.pop("utility", None)
        util = utility or UtilitySpec.from_dict(util_doc)
        kw = {}
        for name in ("epsilon_schedule", "eta_schedule"):
            if doc.get(name) is not None:
                kw[name] = StepSchedule.from_dict(doc.pop(name))
        if "policy_schedule" in doc:
            ps = doc.pop("policy_schedule")
            kw["policy_schedule"] = None if ps is None else StepSchedule.from_dict(ps)
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidSpec(f"unknown TrainConfig field(s): {sorted(unknown)}")
        return cls(utility=util, **kw, **doc)


@dataclass
class TrainTrace:
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for step, *vals in self.rows:
            w.writerow([step] + [repr(float(v)) for v in vals])
        return buf.getvalue()

    @property
    def f_values(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])


def policy_entropy(pi: np.ndarray) -> float:
    """Mean over states of the action entropy (nats)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(pi > 0, pi * np.log(pi), 0.0).sum(axis=1)
    return float(h.mean())


def _eval_row(mdp, theta, utility, step, d_hat, grad_norm):
    params = PolicyParams(theta)
    occ = occupancy_exact(mdp, params)
    pi = policy_probs(params)
    if d_hat is None:
        l1 = 0.0
    else:
        l1 = float(np.abs(np.asarray(d_hat)[:, None] * pi - occ.state_action).sum())
    return (step, utility.value(occ), l1, grad_norm, policy_entropy(pi))


def _initial_theta(mdp: TabularMdp, config: TrainConfig, params: PolicyParams | None) -> np.ndarray:
    if params is not None:
        return np.array(params.theta)
    if config.init_scale > 0:
        return PolicyParams.random(mdp, config.seed ^ 0x5EED, config.init_scale).theta.copy()
    return np.zeros((mdp.n_states, mdp.n_actions))


def run_algorithm1(mdp: TabularMdp, config: TrainConfig,
                   params: PolicyParams | None = None) -> tuple[PolicyParams, TrainTrace]:
    utility = config.utility
    utility.check(mdp.gamma)
    S, A, gamma = mdp.n_states, mdp.n_actions, mdp.gamma
    theta = _initial_theta(mdp, config, params)
    trace = TrainTrace()

    # uniform mu_0(s, a) = 1/(S*A) gives a state marginal of 1/S
    d = [1.0 / S] * S
    base = [1.0 / (S * A)] * S if config.alg1_literal else mdp.initial_dist.tolist()
    Q = [[0.0] * A for _ in range(S)]
    successor = config.occupancy_estimator == "successor"
    # successor rows start at 1/S too, so d = base^T M starts at 1/S
    M = [[1.0 / S] * S for _ in range(S)] if successor else None
    if successor:
        d = (np.asarray(base) @ np.asarray(M)).tolist()
    th = theta.tolist()
    trace.rows.append(_eval_row(mdp, theta, utility, 0, d, 0.0))
    if config.n_steps == 0:
        return PolicyParams(theta), trace

    # the sampler's transition and initial tables do not depend on the policy
    sampler = InverseCdfSampler(mdp, np.full((S, A), 1.0 / A))
    rng = make_rng(config.seed)
    eps_s, eta_s, th_s = config.epsilon_schedule, config.eta_schedule, config.theta_schedule
    use_min = config.q_update == "paper_min"
    grad_energy, n_acc = 0.0, 0

    def probs(row):
        m = max(row)
        e = [math.exp(x - m) for x in row]
        z = sum(e)
        return [x / z for x in e]

    s = sampler.initial(rng.random())
    for t in range(config.n_steps):
        if t > 0 and t % config.horizon == 0:
            s = sampler.initial(rng.random())
        pi_s = probs(th[s])
        u = rng.random()
        acc, a = 0.0, A - 1
        for b in range(A):
            acc += pi_s[b]
            if u < acc:
                a = b
                break
        s_next = sampler.next_state(s, a, rng.random())

        eta = eta_s(t)
        if successor:
            row, nxt = M[s], M[s_next]
            w = base[s]
            for j in range(S):
                delta = eta * ((1.0 if j == s else 0.0) + gamma * nxt[j] - row[j])
                row[j] += delta
                d[j] += w * delta
        else:
            td_step(d, s, s_next, base[s], gamma, eta)
        r = utility.gradient_entry(s, a, d[s] * pi_s[a])

        q_next = Q[s_next]
        if use_min:
            tail = min(q_next)
        else:
            pi_n = probs(th[s_next])
            tail = sum(p * v for p, v in zip(pi_n, q_next))
        q_sa = Q[s][a] + eps_s(t) * (r + gamma * tail - Q[s][a])
        Q[s][a] = q_sa

        step = th_s(t) * q_sa
        row = th[s]
        for b in range(A):
            row[b] -= step * ((1.0 if b == a else 0.0) - pi_s[b])
        if not (math.isfinite(q_sa) and all(math.isfinite(x) for x in row)):
            raise NonFiniteUpdate(t + 1)
        # norm of the sampled score-function step, |Q| * ||e_a - pi||
        grad_energy += abs(q_sa) * math.sqrt(max(1.0 - 2.0 * pi_s[a] + sum(p * p for p in pi_s), 0.0))
        n_acc += 1
        s = s_next

        if (t + 1) % config.eval_every == 0 or t + 1 == config.n_steps:
            gnorm = grad_energy / n_acc if n_acc else 0.0
            trace.rows.append(_eval_row(mdp, np.array(th), utility, t + 1, d, gnorm))
            grad_energy, n_acc = 0.0, 0
    return PolicyParams(np.array(th)), trace


def run_exact_descent(mdp: TabularMdp, config: TrainConfig,
                      params: PolicyParams | None = None) -> tuple[PolicyParams, TrainTrace]:
    """Deterministic ``theta <- theta - alpha * grad f`` for ``n_steps`` iterations."""
    utility = config.utility
    utility.check(mdp.gamma)
    theta = _initial_theta(mdp, config, params)
    trace = TrainTrace()
    grad = policy_gradient(mdp, PolicyParams(theta), utility)
    trace.rows.append(_eval_row(mdp, theta, utility, 0, None, float(np.linalg.norm(grad))))
    for t in range(config.n_steps):
        theta = theta - config.alpha * grad
        if not np.all(np.isfinite(theta)):
            raise NonFiniteUpdate(t + 1)
        grad = policy_gradient(mdp, PolicyParams(theta), utility)
        if (t + 1) % config.eval_every == 0 or t + 1 == config.n_steps:
            trace.rows.append(_eval_row(mdp, theta, utility, t + 1, None, float(np.linalg.norm(grad))))
    return PolicyParams(theta), trace


def run_metadata(config: TrainConfig, method: str) -> dict:
    from . import __version__

    return {
        "method": method,
        "seed": config.seed,
        "prng": PRNG_NAME,
        "schedules": {
            "epsilon": config.epsilon_schedule.to_dict(),
            "eta": config.eta_schedule.to_dict(),
            "policy": config.theta_schedule.to_dict(),
        },
        "version": __version__,
    }
