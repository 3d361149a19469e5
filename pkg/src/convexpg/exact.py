"""Dense-linear-algebra evaluation of occupancy measures and their gradients.

State-action pairs are flattened row-major, ``(s, a) -> s * n_actions + a``.
The discounted operator is indexed ``beta[from_pair, to_pair]``: entry
``beta[(s', a'), (s, a)]`` is the discounted expected number of visits to
``(s, a)`` starting from ``(s', a')``.  Both Q-values (``beta @ R``) and the
occupancy gradient use this single orientation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import SizeExceeded, SolverFailure
from .mdp import PolicyParams, TabularMdp, policy_kernel, policy_probs
from .utilities import UtilitySpec

MAX_DENSE_PAIRS = 4096
DEFAULT_FD_STEP = 1e-5


@dataclass(frozen=True, eq=False)
class OccupancyMeasure:
    state_action: np.ndarray  # [S, A]
    state_marginal: np.ndarray  # [S]
    gamma: float

    def __post_init__(self):
        sa = np.where(self.state_action < 0, 0.0, self.state_action)
        sa.setflags(write=False)
        d = np.where(self.state_marginal < 0, 0.0, self.state_marginal)
        d.setflags(write=False)
        object.__setattr__(self, "state_action", sa)
        object.__setattr__(self, "state_marginal", d)

    @property
    def total_mass(self) -> float:
        return float(self.state_action.sum())

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "total_mass": self.total_mass,
            "state_action": self.state_action.tolist(),
            "state_marginal": self.state_marginal.tolist(),
        }


@dataclass(frozen=True, eq=False)
class DiscountedOperator:
    beta: np.ndarray  # [S*A, S*A], (from, to)
    n_states: int
    n_actions: int

    def block(self) -> np.ndarray:
        """``beta`` reshaped to ``[s', a', s, a]``."""
        S, A = self.n_states, self.n_actions
        return self.beta.reshape(S, A, S, A)


@dataclass(frozen=True, eq=False)
class GradReport:
    analytic: np.ndarray
    numeric: np.ndarray
    max_abs_err: float
    max_rel_err: float
    fd_step: float
    method: str = "exact"

    def passed(self, tol: float) -> bool:
        return self.max_abs_err <= tol

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "max_abs_err": self.max_abs_err,
            "max_rel_err": self.max_rel_err,
            "fd_step": self.fd_step,
            "shape": list(self.analytic.shape),
            "analytic": self.analytic.ravel().tolist(),
            "numeric": self.numeric.ravel().tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    # numpy.linalg.solve is LAPACK gesv: LU with partial pivoting
    try:
        return np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError as exc:
        raise SolverFailure(f"singular resolvent system: {exc}") from exc


def state_marginal(mdp: TabularMdp, params: PolicyParams) -> np.ndarray:
    """``d`` solving ``(I - gamma P_pi^T) d = q``."""
    P_pi = policy_kernel(mdp, params)
    lhs = np.eye(mdp.n_states) - mdp.gamma * P_pi.T
    return _solve(lhs, mdp.initial_dist)


def occupancy_exact(mdp: TabularMdp, params: PolicyParams) -> OccupancyMeasure:
    d = state_marginal(mdp, params)
    pi = policy_probs(params)
    return OccupancyMeasure(d[:, None] * pi, d, mdp.gamma)


def pair_transition(mdp: TabularMdp, params: PolicyParams) -> np.ndarray:
    """``M[(s,a),(s',a')] = P(s'|s,a) pi(a'|s')``."""
    pi = policy_probs(params)
    S, A = mdp.n_states, mdp.n_actions
    return np.einsum("sat,tb->satb", mdp.transition, pi).reshape(S * A, S * A)


def discounted_operator(mdp: TabularMdp, params: PolicyParams) -> DiscountedOperator:
    n = mdp.n_pairs
    if n > MAX_DENSE_PAIRS:
        raise SizeExceeded(f"{n} state-action pairs exceeds dense limit {MAX_DENSE_PAIRS}")
    M = pair_transition(mdp, params)
    beta = _solve(np.eye(n) - mdp.gamma * M, np.eye(n))
    return DiscountedOperator(beta, mdp.n_states, mdp.n_actions)


def q_value(op: DiscountedOperator, reward) -> np.ndarray:
    """Flat Q-values ``beta @ R`` for a flat (or [S, A]) reward."""
    r = np.asarray(reward, dtype=float).ravel()
    return op.beta @ r


def softmax_jacobian(pi: np.ndarray) -> np.ndarray:
    """``J[s, a, b] = d pi(a|s) / d theta[s, b]`` (zero across states)."""
    A = pi.shape[1]
    return pi[:, :, None] * (np.eye(A)[None, :, :] - pi[:, None, :])


def occupancy_jacobian(mdp: TabularMdp, params: PolicyParams) -> np.ndarray:
    """All occupancy gradients at once: ``J[s, a, s', b] = d mu(s,a) / d theta[s', b]``."""
    op = discounted_operator(mdp, params)
    pi = policy_probs(params)
    d = state_marginal(mdp, params)
    W = d[:, None, None] * softmax_jacobian(pi)  # [s', a', b]
    return np.einsum("pxsa,pxb->sapb", op.block(), W)


def occupancy_gradient(mdp: TabularMdp, params: PolicyParams, target: tuple[int, int]) -> np.ndarray:
    s, a = target
    if not (0 <= s < mdp.n_states and 0 <= a < mdp.n_actions):
        raise IndexError(f"target {target} out of bounds")
    op = discounted_operator(mdp, params)
    pi = policy_probs(params)
    d = state_marginal(mdp, params)
    col = op.block()[:, :, s, a]  # beta[(s', a'), (s, a)]
    W = d[:, None, None] * softmax_jacobian(pi)
    return np.einsum("px,pxb->pb", col, W)


def score_weighted_sum(d: np.ndarray, pi: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``sum_a d(s) * dpi(a|s)/dtheta * values(s, a)`` as a parameter table."""
    v = values.reshape(pi.shape)
    baseline = np.sum(pi * v, axis=1, keepdims=True)
    return d[:, None] * pi * (v - baseline)


def policy_gradient(mdp: TabularMdp, params: PolicyParams, utility: UtilitySpec) -> np.ndarray:
    """Gradient of ``f(mu_pi)`` in ``theta`` as a Q-weighted score sum."""
    utility.check()
    mu = occupancy_exact(mdp, params)
    reward = utility.gradient(mu)
    q = q_value(discounted_operator(mdp, params), reward)
    return score_weighted_sum(mu.state_marginal, policy_probs(params), q)


def objective(mdp: TabularMdp, params: PolicyParams, utility: UtilitySpec) -> float:
    return utility.value(occupancy_exact(mdp, params))


def finite_diff_gradient(mdp: TabularMdp, params: PolicyParams, utility: UtilitySpec,
                         step: float = DEFAULT_FD_STEP) -> np.ndarray:
    if not step > 0:
        raise ValueError("step must be > 0")
    theta = np.array(params.theta)
    grad = np.zeros_like(theta)
    for idx in np.ndindex(theta.shape):
        plus = theta.copy()
        plus[idx] += step
        minus = theta.copy()
        minus[idx] -= step
        fp = objective(mdp, PolicyParams(plus), utility)
        fm = objective(mdp, PolicyParams(minus), utility)
        grad[idx] = (fp - fm) / (2 * step)
    return grad


def make_report(analytic: np.ndarray, numeric: np.ndarray, step: float, method: str = "exact") -> GradReport:
    err = np.abs(analytic - numeric)
    # relative error floors the denominator so exact-zero coordinates stay finite
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return GradReport(analytic, numeric, float(err.max(initial=0.0)),
                      float((err / denom).max(initial=0.0)), step, method)


def grad_check(mdp: TabularMdp, params: PolicyParams, utility: UtilitySpec,
               step: float = DEFAULT_FD_STEP) -> GradReport:
    analytic = policy_gradient(mdp, params, utility)
    numeric = finite_diff_gradient(mdp, params, utility, step)
    return make_report(analytic, numeric, step)
