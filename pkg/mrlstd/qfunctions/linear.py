from textwrap import dedent

import numpy as np

from mrlstd.basis import Basis
from mrlstd.qfunctions.qfunction import QFunction


class LinearQFunction(QFunction):
    """
    Linear architecture Q(s, a) = phi(s)^T w_a with one weight block per
    action.

    Args:
        w: weight vector of length num_features * num_actions, action a
            occupying entries [a*f, (a+1)*f)
        basis: Basis
        num_actions: size of the action set
    """

    def __init__(self, w, basis, num_actions):

        QFunction.__init__(self, num_actions)
        if not isinstance(basis, Basis):
            raise ValueError("basis must be a Basis")
        w = np.asarray(w, dtype=float).reshape(-1)
        if w.size != basis.num_features * self.num_actions:
            raise ValueError("w has {} entries, expected {} features x {} actions"
                             .format(w.size, basis.num_features, self.num_actions))
        self.w = w
        self.basis = basis

    @property
    def weights(self):
        """(num_actions, num_features) view of w"""
        return self.w.reshape(self.num_actions, self.basis.num_features)

    def values(self, states):
        states = self._as_states(states, self.basis.dim)
        return self.basis.features(states) @ self.weights.T

    def scaled(self, c):
        return LinearQFunction(c * self.w, self.basis, self.num_actions)

    def __repr__(self):
        text = f"""\
            LinearQFunction with properties:
            basis:     {self.basis.kind}
            features:  {self.basis.num_features} per action
            actions:   {self.num_actions}"""
        return dedent(text)
