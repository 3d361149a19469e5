"""Compatible linear approximation of Q-values and the gradient built from it.

Features are the softmax scores ``phi(s, a) = grad_theta log pi(a|s)``,
flattened to the parameter dimension ``n_states * n_actions``.  The fit is a
weighted least-squares problem with weights ``d(s) * pi(a|s)``; because each
state's scores are mean-zero under ``pi`` the design matrix has one null
direction per state, so the minimum-norm solution is returned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exact import occupancy_exact, score_weighted_sum
from .mdp import PolicyParams, TabularMdp, policy_probs

RCOND = 1e-10


@dataclass(frozen=True, eq=False)
class CompatibleApprox:
    weights: np.ndarray  # [S*A]
    features: np.ndarray  # [S, A, S*A]
    residual_norm: float

    def predict(self) -> np.ndarray:
        """``g_w(s, a)`` for every pair, shaped ``[S, A]``."""
        return self.features @ self.weights


def compatible_features(pi: np.ndarray) -> np.ndarray:
    S, A = pi.shape
    phi = np.zeros((S, A, S, A))
    for s in range(S):
        phi[s, :, s, :] = np.eye(A) - pi[s][None, :]
    return phi.reshape(S, A, S * A)


def fit_weights(mdp: TabularMdp, params: PolicyParams) -> np.ndarray:
    """LS weights ``d(s) * pi(a|s)`` exactly as the stationarity condition factors them."""
    d = occupancy_exact(mdp, params).state_marginal
    return d[:, None] * policy_probs(params)


def fit(mdp: TabularMdp, params: PolicyParams, q_values) -> CompatibleApprox:
    pi = policy_probs(params)
    S, A = pi.shape
    q = np.asarray(q_values, dtype=float).reshape(S * A)
    phi = compatible_features(pi)
    X = phi.reshape(S * A, S * A)
    sw = np.sqrt(fit_weights(mdp, params).ravel())
    w, *_ = np.linalg.lstsq(sw[:, None] * X, sw * q, rcond=RCOND)
    resid = float(np.linalg.norm(sw * (q - X @ w)))
    return CompatibleApprox(w, phi, resid)


def orthogonality_residual(mdp: TabularMdp, params: PolicyParams, q_values,
                           approx: CompatibleApprox) -> np.ndarray:
    """``sum_{s,a} d(s) pi(a|s) (Q - g_w) phi(s, a)``; zero at a fitted solution."""
    pi = policy_probs(params)
    wts = fit_weights(mdp, params)
    err = np.asarray(q_values, dtype=float).reshape(pi.shape) - approx.predict()
    return np.einsum("sa,sak->k", wts * err, approx.features)


def fa_policy_gradient(mdp: TabularMdp, params: PolicyParams, approx: CompatibleApprox) -> np.ndarray:
    """Score-weighted sum with ``g_w`` standing in for the Q-values."""
    d = occupancy_exact(mdp, params).state_marginal
    return score_weighted_sum(d, policy_probs(params), approx.predict())
