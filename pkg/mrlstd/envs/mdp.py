"""
MDP description shared by both benchmarks, seeded random streams, and the
tabular model used by the exact oracles.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

# Independent random streams drawn from one run seed
STREAM_DATA = 0
STREAM_POLICY = 1
STREAM_EVAL = 2


def make_rng(seed, stream=STREAM_DATA):
    """
    Counter-based generator keyed by (seed, stream). Each (seed, stream)
    pair gives an independent, reproducible sequence regardless of which
    process or thread draws from it.
    """
    seq = np.random.SeedSequence([int(seed), int(stream)])
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class MdpSpec:
    state_dim: int
    num_actions: int
    gamma: float
    max_episode_steps: Optional[int] = None

    def __post_init__(self):
        if not (0 < self.gamma < 1):
            raise ValueError("gamma must lie in (0, 1), got {}".format(self.gamma))
        if self.num_actions < 2:
            raise ValueError("Need at least 2 actions, got {}".format(self.num_actions))
        if self.state_dim < 1:
            raise ValueError("state_dim must be positive")


class TabularModel(object):
    """
    Finite MDP in matrix form.

    Args:
        P: (S, A, S) transition probabilities, rows summing to 1
        R: (S, A) expected immediate rewards
        gamma: discount factor in [0, 1)
    """

    def __init__(self, P, R, gamma):
        P = np.asarray(P, dtype=float)
        R = np.asarray(R, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[:2] != R.shape:
            raise ValueError("Inconsistent shapes P {} and R {}"
                             .format(P.shape, R.shape))
        if not np.allclose(P.sum(axis=2), 1.0, atol=1e-12):
            raise ValueError("Transition rows must sum to 1")
        if not (0 <= gamma < 1):
            raise ValueError("gamma must lie in [0, 1), got {}".format(gamma))
        self.P = P
        self.R = R
        self.gamma = float(gamma)

    @property
    def n_states(self):
        return self.P.shape[0]

    @property
    def n_actions(self):
        return self.P.shape[1]

    def with_gamma(self, gamma):
        return TabularModel(self.P, self.R, gamma)

    def with_rewards(self, R):
        return TabularModel(self.P, R, self.gamma)

    def policy_matrix(self, policy):
        """
        (S*A, S*A) matrix P_pi with P_pi[(s,a), (s',a')] = P[s,a,s'] [a' = pi(s')]

        Args:
            policy: length S array of action indices
        """

        policy = self._check_policy(policy)
        S, A = self.n_states, self.n_actions
        P_pi = np.zeros((S, A, S, A))
        P_pi[:, :, np.arange(S), policy] = self.P
        return P_pi.reshape(S * A, S * A)

    def bellman(self, Q, policy):
        """T^pi Q for a (S, A) array Q"""
        policy = self._check_policy(policy)
        v_next = Q[np.arange(self.n_states), policy]
        return self.R + self.gamma * (self.P @ v_next)

    def q_pi(self, policy):
        """
        Exact Q^pi by a direct solve of (I - gamma P_pi) Q = R.

        Returns:
            (S, A) array
        """

        S, A = self.n_states, self.n_actions
        lhs = np.eye(S * A) - self.gamma * self.policy_matrix(policy)
        Q = scipy.linalg.solve(lhs, self.R.reshape(-1))
        return Q.reshape(S, A)

    def value_iteration(self, tol=1e-10, max_iter=100000):
        """
        Optimal Q by value iteration, stopping once the sup-norm change
        falls to tol.

        Returns:
            (S, A) array
        """

        Q = np.zeros_like(self.R)
        for _ in range(max_iter):
            Q_new = self.R + self.gamma * (self.P @ Q.max(axis=1))
            delta = np.abs(Q_new - Q).max()
            Q = Q_new
            if delta <= tol:
                return Q
        raise RuntimeError("Value iteration did not converge in {} sweeps"
                           .format(max_iter))

    def _check_policy(self, policy):
        policy = np.asarray(policy).reshape(-1).astype(int)
        if policy.size != self.n_states:
            raise ValueError("Policy covers {} states, model has {}"
                             .format(policy.size, self.n_states))
        if policy.min() < 0 or policy.max() >= self.n_actions:
            raise ValueError("Policy contains invalid actions")
        return policy
