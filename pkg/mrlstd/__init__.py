from mrlstd._version import __version__

from mrlstd.kernel import StateActions, StateScaler, KernelSpec, eval_kernel, gram
from mrlstd.graph import (GraphLaplacian, build_laplacian, laplacian_quadratic,
                          eigenmap_features)
from mrlstd.linalg import SingularSystemError
from mrlstd.basis import make_basis
from mrlstd.qfunctions import QFunction, KernelQFunction, LinearQFunction
from mrlstd.qfunction_io import load_qfunction as load
from mrlstd.solvers import (Hyperparams, laprls_fit, assemble_workspace,
                            reg_lstd_fit, mr_lstd_fit, lstdq_fit, make_solver)
from mrlstd.lspi import (GreedyPolicy, RandomPolicy, greedy_action, lspi_run,
                         policy_mismatch_count, evaluate_rollout)
from mrlstd.harness import ExperimentConfig, run_experiment, sweep, report
