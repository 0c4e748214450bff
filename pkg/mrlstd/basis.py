"""
Feature maps for the parametric LSTD-Q baselines. Each basis maps states to
f features; the state-action feature vector places them in the block of the
chosen action (f * num_actions entries, zeros elsewhere).
"""

import itertools

import numpy as np
from scipy.spatial import cKDTree
from sklearn.preprocessing import PolynomialFeatures

from mrlstd.kernel import StateActions
from mrlstd.graph import build_laplacian, eigenmap_features

POLYNOMIAL_DEGREES = range(0, 9)
RBF_CENTERS = range(2, 8)


class Basis(object):
    """
    Base class for state feature maps. This should not be instantiated
    directly.
    """

    kind = None

    @property
    def num_features(self):
        raise NotImplementedError()

    def features(self, states):
        """(m, f) state features"""
        raise NotImplementedError()

    def describe(self):
        """Plain dict of arrays/scalars sufficient to rebuild the basis"""
        raise NotImplementedError()

    def block_features(self, states, actions, num_actions):
        """
        (m, f * num_actions) state-action features, action a occupying
        columns [a*f, (a+1)*f)
        """

        phi = self.features(states)
        actions = np.asarray(actions).reshape(-1).astype(int)
        m, f = phi.shape
        out = np.zeros((m, f * num_actions))
        cols = actions[:, None] * f + np.arange(f)[None, :]
        out[np.arange(m)[:, None], cols] = phi
        return out

    def __repr__(self):
        return "{}({} features)".format(type(self).__name__, self.num_features)


class _BoxScaled(Basis):
    """Shared [0,1] box scaling from the dataset's state bounds"""

    def __init__(self, low, high):
        self.low = np.asarray(low, dtype=float).reshape(-1)
        self.high = np.asarray(high, dtype=float).reshape(-1)
        span = self.high - self.low
        span[span <= 0] = 1.0
        self._span = span

    @property
    def dim(self):
        return self.low.size

    def unit(self, states):
        states = np.asarray(states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.shape[1] != self.low.size:
            raise ValueError("Basis built for dimension {}, got states of shape {}"
                             .format(self.low.size, states.shape))
        return (states - self.low) / self._span


class PolynomialBasis(_BoxScaled):
    """All monomials of total degree <= degree over box-scaled coordinates"""

    kind = 'polynomial'

    def __init__(self, degree, low, high):
        _BoxScaled.__init__(self, low, high)
        self.degree = int(degree)
        self._poly = None
        if self.degree > 0:
            self._poly = PolynomialFeatures(self.degree, include_bias=True)
            self._poly.fit(np.zeros((1, self.low.size)))

    @property
    def num_features(self):
        if self._poly is None:
            return 1
        return self._poly.n_output_features_

    def features(self, states):
        u = self.unit(states)
        if self._poly is None:
            return np.ones((u.shape[0], 1))
        return self._poly.transform(u)

    def describe(self):
        return {'degree': self.degree, 'low': self.low, 'high': self.high}


class RbfGridBasis(_BoxScaled):
    """
    Gaussian bumps on a uniform grid of `centers` points per dimension of
    the unit box; width equals the grid spacing.
    """

    kind = 'rbf_grid'

    def __init__(self, centers, low, high):
        _BoxScaled.__init__(self, low, high)
        self.centers = int(centers)
        if self.centers < 2:
            raise ValueError("Need at least 2 centres per dimension")
        axis = np.linspace(0, 1, self.centers)
        grid = itertools.product(axis, repeat=self.low.size)
        self.grid = np.array(list(grid))
        self.width = 1.0 / (self.centers - 1)

    @property
    def num_features(self):
        return self.grid.shape[0]

    def features(self, states):
        u = self.unit(states)
        d2 = ((u[:, None, :] - self.grid[None, :, :]) ** 2).sum(axis=-1)
        return np.exp(-d2 / (2 * self.width ** 2))

    def describe(self):
        return {'centers': self.centers, 'low': self.low, 'high': self.high}


class _NodeLookup(Basis):
    """Bases defined on sampled nodes; queries map to the nearest node"""

    def __init__(self, nodes):
        self.nodes = np.asarray(nodes, dtype=float)
        self._tree = cKDTree(self.nodes)

    @property
    def dim(self):
        return self.nodes.shape[1]

    def nearest(self, states):
        states = np.asarray(states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        _, idx = self._tree.query(states)
        return idx


class EigenmapBasis(_NodeLookup):
    """
    Laplacian eigenmap: the k smoothest eigenvectors of an epsilon-graph over
    the distinct sampled states.
    """

    kind = 'eigenmap'

    def __init__(self, nodes, vectors, values=None):
        _NodeLookup.__init__(self, nodes)
        self.vectors = np.asarray(vectors, dtype=float)
        self.values = values
        if self.vectors.shape[0] != self.nodes.shape[0]:
            raise ValueError("Need one eigenvector entry per node")

    @property
    def num_features(self):
        return self.vectors.shape[1]

    def features(self, states):
        return self.vectors[self.nearest(states)]

    def describe(self):
        return {'nodes': self.nodes, 'vectors': self.vectors}


class TabularBasis(_NodeLookup):
    """One indicator feature per distinct sampled state"""

    kind = 'tabular'

    @property
    def num_features(self):
        return self.nodes.shape[0]

    def features(self, states):
        idx = self.nearest(states)
        return np.eye(self.num_features)[idx]

    def describe(self):
        return {'nodes': self.nodes}


def basis_from_description(kind, desc):
    """Inverse of Basis.describe()"""

    if kind == PolynomialBasis.kind:
        return PolynomialBasis(desc['degree'], desc['low'], desc['high'])
    elif kind == RbfGridBasis.kind:
        return RbfGridBasis(desc['centers'], desc['low'], desc['high'])
    elif kind == EigenmapBasis.kind:
        return EigenmapBasis(desc['nodes'], desc['vectors'])
    elif kind == TabularBasis.kind:
        return TabularBasis(desc['nodes'])
    else:
        raise ValueError("Unknown basis kind '{}'".format(kind))


def _dataset_states(dataset):
    return np.vstack((dataset.states, dataset.next_states))


def make_basis(kind, params, dataset):
    """
    Build a feature map from a dataset.

    Args:
        kind: 'polynomial', 'rbf_grid', 'eigenmap' or 'tabular'
        params: dict; polynomial: degree (0-8); rbf_grid: centers (2-7) per
            dimension; eigenmap: k (>= 1) and optional epsilon (default 1.0)
        dataset: Dataset whose states fix the scaling box / graph nodes

    Returns:
        Basis
    """

    params = dict(params or {})
    states = _dataset_states(dataset)
    low, high = states.min(axis=0), states.max(axis=0)

    if kind == 'polynomial':
        degree = params.get('degree')
        if degree not in POLYNOMIAL_DEGREES:
            raise ValueError("Polynomial degree must lie in [0, 8], got {}"
                             .format(degree))
        return PolynomialBasis(degree, low, high)

    elif kind in ('rbf_grid', 'rbf'):
        centers = params.get('centers')
        if centers not in RBF_CENTERS:
            raise ValueError("RBF centres per dimension must lie in [2, 7], got {}"
                             .format(centers))
        return RbfGridBasis(centers, low, high)

    elif kind == 'eigenmap':
        nodes = np.unique(states, axis=0)
        k = params.get('k')
        if not isinstance(k, (int, np.integer)) or not (1 <= k <= nodes.shape[0]):
            raise ValueError("Eigenmap k must lie in [1, {}], got {}"
                             .format(nodes.shape[0], k))
        epsilon = params.get('epsilon', 1.0)
        L = build_laplacian(StateActions(nodes, np.zeros(nodes.shape[0], int)),
                            epsilon, same_action_only=False)
        eig = eigenmap_features(L, k)
        return EigenmapBasis(nodes, eig.vectors, eig.values)

    elif kind == 'tabular':
        return TabularBasis(np.unique(states, axis=0))

    else:
        raise ValueError("Unknown basis kind '{}'".format(kind))
