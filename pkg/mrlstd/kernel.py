"""
Tensor-product state-action kernel: Gaussian in the state, Kronecker delta
in the action. Gram matrices built here are shared by every kernelised
solver and by the graph construction (which reuses StateActions and the
state scaling).
"""

from textwrap import dedent

import numpy as np
from scipy.spatial.distance import cdist


class StateActions(object):
    """
    Stack of state-action points.

    Args:
        states: (m, d) array of states (a 1D array is read as m points of
            dimension 1)
        actions: length m array of integer action indices

    Attributes:
        states: (m, d) float array
        actions: (m,) int array
    """

    def __init__(self, states, actions):

        states = np.asarray(states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        actions = np.asarray(actions).reshape(-1)

        if states.ndim != 2:
            raise ValueError("states must be a 2D array, got shape {}"
                             .format(states.shape))
        if states.shape[0] != actions.size:
            raise ValueError("Got {} states but {} actions"
                             .format(states.shape[0], actions.size))
        if actions.size and not np.all(np.equal(np.mod(actions, 1), 0)):
            raise ValueError("actions must be integer indices")
        if actions.size and actions.min() < 0:
            raise ValueError("actions must be non-negative indices")

        self.states = states
        self.actions = actions.astype(int)

    @classmethod
    def from_pairs(cls, pairs):
        """Build from a sequence of (state, action) pairs"""

        pairs = list(pairs)
        if not pairs:
            return cls(np.zeros((0, 1)), np.zeros(0, dtype=int))
        states = [np.atleast_1d(np.asarray(s, dtype=float)) for s, _ in pairs]
        dims = set(s.size for s in states)
        if len(dims) > 1:
            raise ValueError("All states must share one dimension, got {}"
                             .format(sorted(dims)))
        return cls(np.stack(states, axis=0), [a for _, a in pairs])

    @property
    def dim(self):
        """State dimension"""
        return self.states.shape[1]

    def __len__(self):
        return self.states.shape[0]

    def __getitem__(self, idx):
        idx = np.atleast_1d(np.arange(len(self))[idx])
        return StateActions(self.states[idx], self.actions[idx])

    def stack(self, other):
        """Vertically stack with another set of points (self on top)"""

        if self.dim != other.dim:
            raise ValueError("Cannot stack states of dimension {} and {}"
                             .format(self.dim, other.dim))
        return StateActions(np.vstack((self.states, other.states)),
                            np.concatenate((self.actions, other.actions)))

    def __repr__(self):
        return "StateActions({} points, state dim {})".format(len(self), self.dim)


class StateScaler(object):
    """
    Per-dimension z-score applied to states before any distance is taken.
    Dimensions with no spread keep unit scale.

    Args:
        mean: length d array
        std: length d array, strictly positive
    """

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=float).reshape(-1)
        self.std = np.asarray(std, dtype=float).reshape(-1)
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std must have the same length")
        if (self.std <= 0).any():
            raise ValueError("std must be strictly positive")

    @classmethod
    def fit(cls, *state_arrays):
        """Fit to the union of one or more (m, d) state arrays"""

        states = np.vstack([np.asarray(s, dtype=float) for s in state_arrays])
        std = states.std(axis=0)
        std[std < 1e-12] = 1.0
        return cls(states.mean(axis=0), std)

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    def apply(self, states):
        states = np.asarray(states, dtype=float)
        if states.shape[-1] != self.mean.size:
            raise ValueError("Scaler fitted on dimension {}, got states of shape {}"
                             .format(self.mean.size, states.shape))
        return (states - self.mean) / self.std

    def __eq__(self, other):
        return (isinstance(other, StateScaler)
                and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.std, other.std))


class KernelSpec(object):
    """
    k((s,a), (s',a')) = exp(-|s - s'|^2 / (2 sigma^2)) * delta(a, a')

    Args:
        sigma: state bandwidth, > 0, in (scaled) state units
        scaler: optional StateScaler applied to both states first
    """

    def __init__(self, sigma, scaler=None):
        sigma = float(sigma)
        if not (sigma > 0) or not np.isfinite(sigma):
            raise ValueError("sigma must be a positive finite number, got {}"
                             .format(sigma))
        self.sigma = sigma
        self.scaler = scaler

    def scale(self, states):
        if self.scaler is None:
            return np.asarray(states, dtype=float)
        return self.scaler.apply(states)

    def __repr__(self):
        text = f"""\
            KernelSpec with properties:
            sigma:         {self.sigma}
            action kernel: Kronecker delta
            scaled states: {self.scaler is not None}"""
        return dedent(text)

    def __eq__(self, other):
        return (isinstance(other, KernelSpec)
                and self.sigma == other.sigma
                and self.scaler == other.scaler)


def eval_kernel(x, x_prime, spec):
    """
    Evaluate the kernel between two (state, action) pairs.

    Args:
        x: (state, action) pair
        x_prime: (state, action) pair
        spec: KernelSpec

    Returns:
        float in [0, 1]
    """

    s, a = x
    s_p, a_p = x_prime
    s = np.atleast_1d(np.asarray(s, dtype=float))
    s_p = np.atleast_1d(np.asarray(s_p, dtype=float))
    if s.shape != s_p.shape:
        raise ValueError("State dimensions differ: {} and {}"
                         .format(s.shape, s_p.shape))

    if int(a) != int(a_p):
        return 0.0
    s, s_p = spec.scale(s), spec.scale(s_p)
    d2 = np.sum((s - s_p) ** 2)
    return float(np.exp(-d2 / (2 * spec.sigma ** 2)))


def gram(points_a, points_b, spec):
    """
    Cross-Gram matrix between two stacks of state-action points.

    Squared distances are taken pairwise (cdist sqeuclidean), so that
    gram(P, P) is exactly symmetric with a unit diagonal.

    Args:
        points_a: StateActions (or sequence of pairs), m points
        points_b: StateActions (or sequence of pairs), p points
        spec: KernelSpec

    Returns:
        (m, p) array
    """

    if not isinstance(points_a, StateActions):
        points_a = StateActions.from_pairs(points_a)
    if not isinstance(points_b, StateActions):
        points_b = StateActions.from_pairs(points_b)

    if not len(points_a) or not len(points_b):
        raise ValueError("Cannot build a Gram matrix from an empty point set")
    if points_a.dim != points_b.dim:
        raise ValueError("State dimensions differ: {} and {}"
                         .format(points_a.dim, points_b.dim))

    d2 = cdist(spec.scale(points_a.states), spec.scale(points_b.states),
               'sqeuclidean')
    same = (points_a.actions[:, None] == points_b.actions[None, :])
    return np.exp(-d2 / (2 * spec.sigma ** 2)) * same
