from textwrap import dedent

import numpy as np
from scipy.spatial.distance import cdist

from mrlstd.kernel import StateActions, KernelSpec, gram
from mrlstd.qfunctions.qfunction import QFunction


class KernelQFunction(QFunction):
    """
    Kernel expansion Q(x) = alpha^T k(X~, x) over a fixed support.

    Args:
        alpha: weight vector, one entry per support point
        support: StateActions, the support points X~
        spec: KernelSpec
        num_actions: size of the action set (default: inferred from support)
    """

    def __init__(self, alpha, support, spec, num_actions=None):

        if not isinstance(support, StateActions):
            support = StateActions.from_pairs(support)
        if not isinstance(spec, KernelSpec):
            raise ValueError("spec must be a KernelSpec")
        alpha = np.asarray(alpha, dtype=float).reshape(-1)
        if alpha.size != len(support):
            raise ValueError("alpha has {} entries but the support has {} points"
                             .format(alpha.size, len(support)))
        if num_actions is None:
            num_actions = int(support.actions.max()) + 1
        QFunction.__init__(self, num_actions)

        self.alpha = alpha
        self.support = support
        self.spec = spec

    def __len__(self):
        return self.alpha.size

    def evaluate(self, points):
        """Q at a stack of StateActions (or (state, action) pairs)"""
        return gram(points, self.support, self.spec) @ self.alpha

    def values(self, states):
        states = self._as_states(states, self.support.dim)
        d2 = cdist(self.spec.scale(states), self.spec.scale(self.support.states),
                   'sqeuclidean')
        k_state = np.exp(-d2 / (2 * self.spec.sigma ** 2))
        out = np.empty((states.shape[0], self.num_actions))
        for a in range(self.num_actions):
            out[:, a] = k_state @ (self.alpha * (self.support.actions == a))
        return out

    def scaled(self, c):
        return KernelQFunction(c * self.alpha, self.support, self.spec,
                               self.num_actions)

    def __repr__(self):
        text = f"""\
            KernelQFunction with properties:
            support:   {len(self.support)} points, state dim {self.support.dim}
            actions:   {self.num_actions}
            sigma:     {self.spec.sigma}
            |alpha|:   {np.linalg.norm(self.alpha):.4g}"""
        return dedent(text)
