"""
Closed-form policy evaluation: manifold-regularised kernel regression
(LapRLS), nested-regularisation kernel LSTD (REG-LSTD), its manifold
regularised extension (MR-LSTD), and parametric LSTD-Q.

Scaling convention of the manifold term. With the data-fit term weighted by
1/n, the MR-LSTD closed form

    alpha = (F^T F K_Q + lambda_Q n I + lambda_M / (4n) L K_Q)^-1 F^T E R

is the exact minimiser over alpha of

    1/n |F K_Q alpha - E R|^2 + lambda_Q alpha^T K_Q alpha
        + lambda_M / (2n)^2 alpha^T K_Q L K_Q alpha

(the 1/(4n) coefficient absorbs one factor of n from the data term). LapRLS
likewise minimises 1/n |Y - K alpha|^2 + lambda_f alpha^T K alpha
+ lambda_M / n^2 alpha^T K L K alpha.
"""

import time
import logging
import warnings
from dataclasses import dataclass, asdict

import numpy as np

from mrlstd.kernel import StateActions, StateScaler, KernelSpec, gram
from mrlstd.graph import GraphLaplacian, build_laplacian
from mrlstd.linalg import solve_lu, solve_cholesky
from mrlstd.basis import make_basis
from mrlstd.qfunctions import KernelQFunction, LinearQFunction

logger = logging.getLogger(__name__)

KERNEL_METHODS = ('reg_lstd', 'mr_lstd')
BASIS_METHODS = {'polynomial': 'polynomial', 'rbf': 'rbf_grid',
                 'eigenmap': 'eigenmap', 'tabular': 'tabular'}


@dataclass
class Hyperparams:
    """
    Regularisation weights and kernel/graph parameters for one solver call.
    All weights must be non-negative; the individual solvers require
    strictly positive lambda_h / lambda_Q / lambda_f where they invert with
    them.
    """

    lambda_h: float = 1e-3
    lambda_Q: float = 1e-3
    lambda_M: float = 0.0
    lambda_f: float = 1e-3
    gamma: float = 0.9
    sigma: float = 1.0
    epsilon: float = 1.0
    ridge: float = 1e-6

    def __post_init__(self):
        for name in ('lambda_h', 'lambda_Q', 'lambda_M', 'lambda_f', 'ridge'):
            if not getattr(self, name) >= 0:
                raise ValueError("{} must be non-negative, got {}"
                                 .format(name, getattr(self, name)))
        if not (0 <= self.gamma < 1):
            raise ValueError("gamma must lie in [0, 1), got {}".format(self.gamma))
        if not self.sigma > 0:
            raise ValueError("sigma must be positive, got {}".format(self.sigma))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive, got {}".format(self.epsilon))

    def as_dict(self):
        return asdict(self)


def _laplacian_matrix(L, size):
    if isinstance(L, GraphLaplacian):
        L = L.L
    L = np.asarray(L, dtype=float)
    if L.shape != (size, size):
        raise ValueError("Laplacian of shape {} does not match {} points"
                         .format(L.shape, size))
    return L


class KernelRegressor(object):
    """f(x) = alpha^T k(X, x), as returned by laprls_fit()"""

    def __init__(self, alpha, support, spec):
        self.alpha = alpha
        self.support = support
        self.spec = spec
        self.diagnostics = {}

    def __call__(self, points):
        return gram(points, self.support, self.spec) @ self.alpha


def laprls_fit(X, Y, spec, L, lambda_f, lambda_M):
    """
    Laplacian regularised least squares:
    alpha = (K + lambda_f n I + lambda_M / n L K)^-1 Y

    Args:
        X: StateActions (or (state, action) pairs), the n inputs
        Y: length n targets
        spec: KernelSpec
        L: GraphLaplacian (or (n, n) array) over X
        lambda_f: RKHS norm weight, > 0
        lambda_M: manifold weight, >= 0

    Returns:
        KernelRegressor
    """

    if not isinstance(X, StateActions):
        X = StateActions.from_pairs(X)
    Y = np.asarray(Y, dtype=float).reshape(-1)
    n = len(X)
    if Y.size != n:
        raise ValueError("Got {} inputs but {} targets".format(n, Y.size))
    if not lambda_f > 0:
        raise ValueError("lambda_f must be positive, got {}".format(lambda_f))
    if not lambda_M >= 0:
        raise ValueError("lambda_M must be non-negative, got {}".format(lambda_M))

    K = gram(X, X, spec)
    L = _laplacian_matrix(L, n)
    A = K + lambda_f * n * np.eye(n) + (lambda_M / n) * (L @ K)
    alpha, info = solve_lu(A, Y, 'laprls')
    f = KernelRegressor(alpha, X, spec)
    f.diagnostics = {'solve': info.as_dict()}
    return f


class SolverWorkspace(object):
    """
    Shared matrices of the kernelised LSTD solvers for one (dataset, policy).

    Attributes:
        support: StateActions X~ = [X; X'], 2n points
        K_Q: (2n, 2n) Gram over X~
        K_h: (n, n) Gram over X (top-left block of K_Q)
        E: (n, n) K_h (K_h + lambda_h n I)^-1
        F: (n, 2n) C_1 - gamma E diag(1 - done) C_2
        R: (n,) rewards
        done: (n,) absorbing-transition mask
    """

    def __init__(self, support, K_Q, E, F, R, done, spec, gamma, lambda_h,
                 num_actions):
        self.support = support
        self.K_Q = K_Q
        self.E = E
        self.F = F
        self.R = R
        self.done = done
        self.spec = spec
        self.gamma = gamma
        self.lambda_h = lambda_h
        self.num_actions = num_actions

    @property
    def n(self):
        return self.E.shape[0]

    @property
    def K_h(self):
        return self.K_Q[:self.n, :self.n]

    @property
    def X(self):
        return self.support[:self.n]

    @property
    def X_next(self):
        return self.support[self.n:]

    def beta(self, alpha):
        """
        Weights of the projection h_Q(x) = beta^T k(X, x) implied by alpha:
        beta = (K_h + lambda_h n I)^-1 (R + gamma (1 - done) Q(X'))
        """

        q_next = (self.K_Q @ alpha)[self.n:]
        target = self.R + self.gamma * (1 - self.done) * q_next
        reg = self.K_h + self.lambda_h * self.n * np.eye(self.n)
        beta, _ = solve_cholesky(reg, target, 'projection')
        return beta


def assemble_workspace(dataset, policy, spec, lambda_h, gamma):
    """
    Build X' from the evaluated policy, stack X~ = [X; X'] and form the
    matrices shared by reg_lstd_fit() and mr_lstd_fit().

    Args:
        dataset: Dataset
        policy: callable mapping (m, d) states to m actions, or a length n
            array of actions for the next states
        spec: KernelSpec
        lambda_h: projection-step regulariser, > 0
        gamma: discount factor

    Returns:
        SolverWorkspace
    """

    if not lambda_h > 0:
        raise ValueError("lambda_h must be positive, got {}".format(lambda_h))

    n = dataset.n
    if callable(policy):
        X_next = dataset.next_points(policy)
    else:
        X_next = StateActions(dataset.next_states, policy)
    support = dataset.X.stack(X_next)

    K_Q = gram(support, support, spec)
    K_h = K_Q[:n, :n]
    # (K_h + cI)^-1 K_h = K_h (K_h + cI)^-1 as both are functions of K_h
    E, _ = solve_cholesky(K_h + lambda_h * n * np.eye(n), K_h, 'projection')
    bootstrap = 1.0 - dataset.done.astype(float)
    F = np.hstack((np.eye(n), -gamma * E * bootstrap[None, :]))

    return SolverWorkspace(support, K_Q, E, F, dataset.rewards.copy(),
                           dataset.done.copy(), spec, gamma, lambda_h,
                           dataset.num_actions)


def _kernel_solve(ws, R, lambda_Q, extra, label):
    if not lambda_Q > 0:
        raise ValueError("lambda_Q must be positive, got {}".format(lambda_Q))
    R = np.asarray(R, dtype=float).reshape(-1)
    if R.size != ws.n:
        raise ValueError("Got {} rewards for a workspace of {} samples"
                         .format(R.size, ws.n))

    m = 2 * ws.n
    A = ws.F.T @ (ws.F @ ws.K_Q) + lambda_Q * ws.n * np.eye(m)
    if extra is not None:
        A += extra
    b = ws.F.T @ (ws.E @ R)
    alpha, info = solve_lu(A, b, label)
    q = KernelQFunction(alpha, ws.support, ws.spec, ws.num_actions)
    q.diagnostics = {'solve': info.as_dict()}
    return q


def reg_lstd_fit(ws, R, lambda_Q):
    """
    REG-LSTD: alpha = (F^T F K_Q + lambda_Q n I)^-1 F^T E R

    Args:
        ws: SolverWorkspace
        R: length n rewards
        lambda_Q: fitting-step regulariser, > 0

    Returns:
        KernelQFunction over ws.support
    """

    return _kernel_solve(ws, R, lambda_Q, None, 'reg_lstd')


def mr_lstd_fit(ws, R, L, lambda_Q, lambda_M):
    """
    MR-LSTD: alpha = (F^T F K_Q + lambda_Q n I + lambda_M/(4n) L K_Q)^-1 F^T E R

    Args:
        ws: SolverWorkspace
        R: length n rewards
        L: GraphLaplacian (or array) over the 2n support points
        lambda_Q: fitting-step regulariser, > 0
        lambda_M: manifold weight, >= 0

    Returns:
        KernelQFunction over ws.support
    """

    if not lambda_M >= 0:
        raise ValueError("lambda_M must be non-negative, got {}".format(lambda_M))
    L = _laplacian_matrix(L, 2 * ws.n)
    extra = None
    if lambda_M > 0 and L.any():
        extra = (lambda_M / (4 * ws.n)) * (L @ ws.K_Q)
    q = _kernel_solve(ws, R, lambda_Q, extra, 'mr_lstd')
    q.diagnostics['laplacian_edges'] = int((L < 0).sum() // 2)
    return q


def lstdq_fit(dataset, policy, basis, gamma, ridge=1e-6):
    """
    LSTD-Q with per-action block features:
    w = (Phi^T (Phi - gamma Phi') + ridge I)^-1 Phi^T R,
    Phi' rows zeroed on absorbing transitions.

    Args:
        dataset: Dataset
        policy: callable on (m, d) states, or length n array of next actions
        basis: Basis
        gamma: discount factor
        ridge: diagonal jitter, >= 0

    Returns:
        LinearQFunction
    """

    if not ridge >= 0:
        raise ValueError("ridge must be non-negative, got {}".format(ridge))

    A_ = dataset.num_actions
    next_actions = policy(dataset.next_states) if callable(policy) else policy
    phi = basis.block_features(dataset.states, dataset.actions, A_)
    phi_next = basis.block_features(dataset.next_states, next_actions, A_)
    phi_next[dataset.done] = 0.0

    k = phi.shape[1]
    if k > dataset.n:
        warnings.warn("LSTD-Q with {} features from only {} samples"
                      .format(k, dataset.n))

    A = phi.T @ (phi - gamma * phi_next) + ridge * np.eye(k)
    b = phi.T @ dataset.rewards
    w, info = solve_lu(A, b, 'lstdq')
    q = LinearQFunction(w, basis, A_)
    q.diagnostics = {'solve': info.as_dict()}
    return q


class Solver(object):
    """
    Policy evaluation method with fixed hyperparameters. fit(dataset, policy)
    returns a QFunction whose diagnostics record the solve.
    This should not be instantiated directly.
    """

    method = None

    def __init__(self, hyperparams):
        if not isinstance(hyperparams, Hyperparams):
            hyperparams = Hyperparams(**hyperparams)
        self.hp = hyperparams

    def fit(self, dataset, policy):
        t0 = time.perf_counter()
        q = self._fit(dataset, policy)
        q.diagnostics['method'] = self.method
        q.diagnostics['seconds'] = time.perf_counter() - t0
        return q

    def _fit(self, dataset, policy):
        raise NotImplementedError()

    def __repr__(self):
        return "{}({})".format(type(self).__name__, self.hp)


class RegLstd(Solver):
    """
    Args:
        hyperparams: Hyperparams (sigma, lambda_h, lambda_Q, gamma used)
        standardize: z-score states on each dataset before the kernel
    """

    method = 'reg_lstd'

    def __init__(self, hyperparams, standardize=False):
        Solver.__init__(self, hyperparams)
        self.standardize = standardize
        self._scaled = (None, None)

    def kernel_spec(self, dataset):
        if not self.standardize:
            return KernelSpec(self.hp.sigma)
        data, scaler = self._scaled
        if data is not dataset:
            scaler = StateScaler.fit(dataset.states, dataset.next_states)
            self._scaled = (dataset, scaler)
        return KernelSpec(self.hp.sigma, scaler)

    def workspace(self, dataset, policy):
        return assemble_workspace(dataset, policy, self.kernel_spec(dataset),
                                  self.hp.lambda_h, self.hp.gamma)

    def _fit(self, dataset, policy):
        ws = self.workspace(dataset, policy)
        return reg_lstd_fit(ws, ws.R, self.hp.lambda_Q)


class MrLstd(RegLstd):
    """
    REG-LSTD plus the graph Laplacian penalty. The epsilon-graph is rebuilt
    over X~ on every call, since X' follows the evaluated policy.

    Args:
        hyperparams: Hyperparams (adds epsilon and lambda_M)
        standardize: z-score states before the kernel and the graph
        same_action_only: restrict graph edges to matching actions
    """

    method = 'mr_lstd'

    def __init__(self, hyperparams, standardize=False, same_action_only=True):
        RegLstd.__init__(self, hyperparams, standardize)
        self.same_action_only = same_action_only

    def _fit(self, dataset, policy):
        ws = self.workspace(dataset, policy)
        L = build_laplacian(ws.support, self.hp.epsilon, self.same_action_only,
                            ws.spec.scaler)
        logger.debug("MR-LSTD graph: %d nodes, %d edges", L.size, L.n_edges)
        return mr_lstd_fit(ws, ws.R, L, self.hp.lambda_Q, self.hp.lambda_M)


class Lstdq(Solver):
    """
    Parametric LSTD-Q on a basis built once per dataset.

    Args:
        kind: basis kind for make_basis()
        params: basis parameters
        hyperparams: Hyperparams (gamma and ridge used)
    """

    def __init__(self, kind, params, hyperparams):
        Solver.__init__(self, hyperparams)
        self.kind = kind
        self.params = dict(params)
        self.method = kind
        self._basis = (None, None)

    def basis(self, dataset):
        data, basis = self._basis
        if data is not dataset:
            basis = make_basis(self.kind, self.params, dataset)
            self._basis = (dataset, basis)
        return basis

    def _fit(self, dataset, policy):
        return lstdq_fit(dataset, policy, self.basis(dataset), self.hp.gamma,
                         self.hp.ridge)

    def __repr__(self):
        return "Lstdq({}, {}, {})".format(self.kind, self.params, self.hp)


BASIS_PARAMS = {'polynomial': ('degree',), 'rbf': ('centers',),
                'eigenmap': ('k', 'epsilon'), 'tabular': ()}


def make_solver(method, setting, gamma, standardize=False,
                same_action_only=True):
    """
    Construct a solver from a method name and one hyperparameter setting.

    Args:
        method: 'reg_lstd', 'mr_lstd', 'polynomial', 'rbf', 'eigenmap' or
            'tabular'
        setting: dict of hyperparameters (Hyperparams fields plus basis
            parameters for the parametric methods)
        gamma: discount factor
        standardize: kernel methods only, see RegLstd
        same_action_only: MR-LSTD only

    Returns:
        Solver
    """

    setting = dict(setting)
    if method in BASIS_METHODS:
        params = {k: setting.pop(k) for k in BASIS_PARAMS[method] if k in setting}
        hp = Hyperparams(gamma=gamma, **setting)
        return Lstdq(BASIS_METHODS[method], params, hp)

    hp = Hyperparams(gamma=gamma, **setting)
    if method == 'reg_lstd':
        return RegLstd(hp, standardize)
    elif method == 'mr_lstd':
        return MrLstd(hp, standardize, same_action_only)
    else:
        raise ValueError("Unknown method '{}'".format(method))
