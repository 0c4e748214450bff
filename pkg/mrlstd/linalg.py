"""
Dense linear solves with condition estimates. Every closed-form solver goes
through solve_lu (general systems) or solve_cholesky (SPD systems) so the
conditioning of each system is logged and singular systems fail loudly.
"""

import logging
import warnings

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

logger = logging.getLogger(__name__)

# Below this reciprocal condition number a system is treated as singular
RCOND_SINGULAR = np.finfo(float).eps
# Below this a warning is raised but the solution is still returned
RCOND_WARN = 1e-12


class SingularSystemError(np.linalg.LinAlgError):
    """
    Raised when a linear system is singular to working precision.

    Attributes:
        label: name of the system
        rcond: reciprocal 1-norm condition estimate (0 if factorisation failed)
    """

    def __init__(self, label, rcond):
        self.label = label
        self.rcond = rcond
        super().__init__("{} system is singular (rcond = {:.3e})"
                         .format(label, rcond))


class SolveInfo(object):
    """Diagnostics for one solve: label, size, method and rcond"""

    def __init__(self, label, size, method, rcond):
        self.label = label
        self.size = size
        self.method = method
        self.rcond = rcond

    @property
    def condition(self):
        return np.inf if self.rcond == 0 else 1 / self.rcond

    def as_dict(self):
        return {'label': self.label, 'size': self.size,
                'method': self.method, 'rcond': float(self.rcond)}

    def __repr__(self):
        return "SolveInfo({}, n={}, {}, rcond={:.3e})".format(
            self.label, self.size, self.method, self.rcond)


def _check_square(A, b, label):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("{}: system matrix must be square, got {}"
                         .format(label, A.shape))
    if b.shape[0] != A.shape[0]:
        raise ValueError("{}: right-hand side of length {} for system of size {}"
                         .format(label, b.shape[0], A.shape[0]))
    if not (np.isfinite(A).all() and np.isfinite(b).all()):
        raise SingularSystemError(label, 0.0)
    return A, b


def _report(label, n, method, rcond):
    info = SolveInfo(label, n, method, rcond)
    logger.debug("%s", info)
    if rcond < RCOND_SINGULAR:
        raise SingularSystemError(label, rcond)
    if rcond < RCOND_WARN:
        warnings.warn("{} system is ill-conditioned (rcond = {:.3e})"
                      .format(label, rcond))
    return info


def solve_lu(A, b, label="linear"):
    """
    Solve A x = b by LU with partial pivoting.

    Args:
        A: (n, n) array
        b: (n,) or (n, k) array
        label: name used in diagnostics

    Returns:
        (x, SolveInfo)
    """

    A, b = _check_square(A, b, label)
    anorm = np.linalg.norm(A, 1)
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)

    if (np.diag(lu) == 0).any() or anorm == 0:
        rcond = 0.0
    else:
        rcond, _ = lapack.dgecon(lu, anorm, norm='1')
    info = _report(label, A.shape[0], 'lu', float(rcond))
    x = scipy.linalg.lu_solve((lu, piv), b, check_finite=False)
    return x, info


def solve_cholesky(A, b, label="spd"):
    """
    Solve A x = b for symmetric positive definite A by Cholesky.

    Args:
        A: (n, n) SPD array
        b: (n,) or (n, k) array
        label: name used in diagnostics

    Returns:
        (x, SolveInfo)
    """

    A, b = _check_square(A, b, label)
    anorm = np.linalg.norm(A, 1)
    try:
        c, lower = scipy.linalg.cho_factor(A, check_finite=False)
    except np.linalg.LinAlgError:
        raise SingularSystemError(label, 0.0)

    rcond, _ = lapack.dpocon(c, anorm, uplo='L' if lower else 'U')
    info = _report(label, A.shape[0], 'cholesky', float(rcond))
    x = scipy.linalg.cho_solve((c, lower), b, check_finite=False)
    return x, info
