"""
GraphLaplacian: combinatorial Laplacian L = D - W of an epsilon-neighbourhood
graph with {0,1} weights over state-action points, plus the smooth
eigenvectors used as Laplacian-eigenmap features.
"""

import warnings
from textwrap import dedent

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from mrlstd.kernel import StateActions


class GraphLaplacian(object):
    """
    Combinatorial graph Laplacian over m sample points.

    Args:
        weights: (m, m) symmetric {0,1} adjacency with zero diagonal
        epsilon: neighbourhood radius the graph was built with
        same_action_only: whether edges were restricted to matching actions

    Attributes:
        W: adjacency matrix
        D: diagonal degree matrix
        L: D - W
    """

    def __init__(self, weights, epsilon, same_action_only=True):

        W = np.asarray(weights, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("weights must be a square matrix, got shape {}"
                             .format(W.shape))
        if not np.array_equal(W, W.T):
            raise ValueError("weights must be symmetric")
        if np.diag(W).any():
            raise ValueError("weights must have a zero diagonal")
        if not np.isin(W, (0.0, 1.0)).all():
            raise ValueError("weights must be {0,1} valued")

        self.W = W
        self.epsilon = float(epsilon)
        self.same_action_only = bool(same_action_only)
        self._eig = None

    @property
    def degree(self):
        """Vector of node degrees"""
        return self.W.sum(axis=1)

    @property
    def D(self):
        return np.diag(self.degree)

    @property
    def L(self):
        return self.D - self.W

    @property
    def size(self):
        """Number of nodes"""
        return self.W.shape[0]

    @property
    def n_edges(self):
        return int(self.W.sum() // 2)

    @property
    def n_components(self):
        """Number of connected components of the graph"""
        n, _ = connected_components(csr_matrix(self.W), directed=False)
        return n

    def eigh(self):
        """Full ascending eigen-decomposition of L (cached)"""
        if self._eig is None:
            self._eig = scipy.linalg.eigh(self.L)
        return self._eig

    def __repr__(self):
        text = f"""\
            GraphLaplacian with properties:
            nodes:            {self.size}
            edges:            {self.n_edges}
            epsilon:          {self.epsilon}
            same action only: {self.same_action_only}"""
        return dedent(text)


class EigenmapFeatures(object):
    """
    The k smoothest eigenvectors of a graph Laplacian.

    Attributes:
        values: (k,) ascending eigenvalues
        vectors: (m, k) unit-norm eigenvectors, one per column
    """

    def __init__(self, values, vectors):
        self.values = values
        self.vectors = vectors

    @property
    def k(self):
        return self.values.size

    def __call__(self, node_idx):
        """Feature rows for the given node indices"""
        return self.vectors[np.asarray(node_idx, dtype=int)]


def build_laplacian(points, epsilon, same_action_only=True, scaler=None):
    """
    Epsilon-neighbourhood graph with {0,1} weights and its combinatorial
    Laplacian. Nodes i != j are joined iff |s_i - s_j| <= epsilon (and, when
    same_action_only, a_i == a_j).

    Args:
        points: StateActions (or sequence of (state, action) pairs)
        epsilon: neighbourhood radius, > 0
        same_action_only: restrict edges to matching actions (default True)
        scaler: optional StateScaler applied to states before distances

    Returns:
        GraphLaplacian
    """

    if not isinstance(points, StateActions):
        points = StateActions.from_pairs(points)
    if len(points) < 2:
        raise ValueError("Need at least 2 points to build a graph, got {}"
                         .format(len(points)))
    if not (epsilon > 0):
        raise ValueError("epsilon must be positive, got {}".format(epsilon))

    states = points.states if scaler is None else scaler.apply(points.states)
    adjacent = cdist(states, states, 'euclidean') <= epsilon
    if same_action_only:
        adjacent &= (points.actions[:, None] == points.actions[None, :])
    np.fill_diagonal(adjacent, False)

    return GraphLaplacian(adjacent.astype(float), epsilon, same_action_only)


def laplacian_quadratic(L, v):
    """
    Graph smoothness penalty v^T L v = 1/2 sum_ij W_ij (v_i - v_j)^2.

    Args:
        L: GraphLaplacian
        v: length m vector

    Returns:
        float >= 0
    """

    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != L.size:
        raise ValueError("Vector of length {} does not match Laplacian of size {}"
                         .format(v.size, L.size))

    q = float(v @ (L.L @ v))
    if q < 0:
        # Round-off only: L is PSD
        if q < -1e-8 * max(1.0, float(v @ v)):
            warnings.warn("laplacian_quadratic: negative value {:.3e}".format(q))
        q = 0.0
    return q


def eigenmap_features(L, k):
    """
    Laplacian eigenmap: the k eigenvectors of L with smallest eigenvalues.
    Signs are fixed so that the largest-magnitude entry of each vector is
    positive.

    Args:
        L: GraphLaplacian
        k: number of eigenvectors, 1 <= k <= number of nodes

    Returns:
        EigenmapFeatures
    """

    k = int(k)
    if k < 1 or k > L.size:
        raise ValueError("k must lie in [1, {}], got {}".format(L.size, k))

    values, vectors = L.eigh()
    values, vectors = values[:k].copy(), vectors[:, :k].copy()
    pivot = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivot, np.arange(k)])
    signs[signs == 0] = 1
    vectors *= signs[None, :]
    return EigenmapFeatures(values, vectors)
