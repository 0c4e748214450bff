import numpy as np

from mrlstd import qfunction_io as qio


class QFunction(object):
    """
    Base object for all action-value functions. This should never actually
    be instantiated but is instead used to provide common functions.

    Attributes:
        num_actions: size of the finite action set
        diagnostics: dict filled in by the solver that produced the function
        is_kernel: KernelQFunctions
        is_linear: LinearQFunctions
    """

    def __init__(self, num_actions):
        num_actions = int(num_actions)
        if num_actions < 1:
            raise ValueError("num_actions must be at least 1")
        self.num_actions = num_actions
        self.diagnostics = {}

    @property
    def is_kernel(self):
        from mrlstd.qfunctions.kernelized import KernelQFunction
        return isinstance(self, KernelQFunction)

    @property
    def is_linear(self):
        from mrlstd.qfunctions.linear import LinearQFunction
        return isinstance(self, LinearQFunction)

    def save(self, path):
        """Save Q-function at path in HDF5 format"""

        qio.save_qfunction(self, path)

    def __repr__(self):
        raise NotImplementedError()

    def values(self, states):
        """
        Q(s, a) for every action.

        Args:
            states: (m, d) array (a single state of shape (d,) is accepted)

        Returns:
            (m, num_actions) array
        """
        raise NotImplementedError()

    def scaled(self, c):
        """Q-function multiplied by the scalar c"""
        raise NotImplementedError()

    # Explicitly not implemented so that ndarray * QFunction defers to
    # __rmul__, see: https://github.com/numpy/numpy/issues/9028
    __array_ufunc__ = None

    def __mul__(self, other):
        if not np.isscalar(other):
            raise NotImplementedError("QFunctions can only be scaled by scalars")
        return self.scaled(float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __call__(self, states, actions):
        """Q at the given (state, action) pairs, one value per row"""

        v = self.values(states)
        actions = np.asarray(actions).reshape(-1).astype(int)
        if actions.size != v.shape[0]:
            raise ValueError("Got {} states but {} actions"
                             .format(v.shape[0], actions.size))
        if actions.size and (actions.min() < 0 or actions.max() >= self.num_actions):
            raise ValueError("actions must lie in [0, {})".format(self.num_actions))
        return v[np.arange(actions.size), actions]

    def greedy(self, states):
        """argmax_a Q(s, a) per state, ties going to the lowest action index"""
        return np.argmax(self.values(states), axis=1)

    @staticmethod
    def _as_states(states, dim):
        states = np.asarray(states, dtype=float)
        if states.ndim == 1:
            states = states.reshape(1, -1) if states.size == dim else states[:, None]
        if states.shape[1] != dim:
            raise ValueError("Expected states of dimension {}, got shape {}"
                             .format(dim, states.shape))
        return states
