"""
Least-squares policy iteration on a fixed batch of transitions, plus the
policy metrics used by the benchmarks: mismatches against the optimal
two-room table and average cart-pole balancing time.
"""

import json
import logging
import zlib
from textwrap import dedent

import numpy as np

from mrlstd.envs.mdp import STREAM_POLICY
from mrlstd.envs.cartpole import (cartpole_dynamics, failed, INIT_RANGE)

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 50
SOLVER_ERRORS = (np.linalg.LinAlgError, ValueError, FloatingPointError)


def _as_batch(states):
    states = np.asarray(states, dtype=float)
    single = states.ndim == 1
    return (states[None, :] if single else states), single


class GreedyPolicy(object):
    """
    pi(s) = argmax_a Q(s, a) over action_set, ties to the lowest index.

    Args:
        q: QFunction
        action_set: allowed actions (default: all of q's actions)
    """

    tie_break = 'lowest_index'

    def __init__(self, q, action_set=None):
        self.q = q
        if action_set is None:
            action_set = range(q.num_actions)
        self.action_set = np.array(sorted(action_set), dtype=int)
        if not self.action_set.size:
            raise ValueError("Empty action set")

    def __call__(self, states):
        states, single = _as_batch(states)
        v = self.q.values(states)[:, self.action_set]
        actions = self.action_set[np.argmax(v, axis=1)]
        return int(actions[0]) if single else actions


def greedy_action(q, s):
    """Greedy action at a single state s"""
    return GreedyPolicy(q)(np.asarray(s, dtype=float).reshape(-1))


class RandomPolicy(object):
    """
    Uniform-random action per state, fixed for a given seed: the action is
    drawn from a seed sequence keyed by (seed, crc32 of the state bytes), so
    repeated queries of one state agree.
    """

    def __init__(self, num_actions, seed):
        self.num_actions = int(num_actions)
        self.seed = int(seed)

    def _action(self, state):
        # +0.0 folds -0.0 into 0.0
        key = zlib.crc32(np.ascontiguousarray(state + 0.0).tobytes())
        ss = np.random.SeedSequence([self.seed, STREAM_POLICY, key])
        return int(ss.generate_state(1)[0] % self.num_actions)

    def __call__(self, states):
        states, single = _as_batch(states)
        actions = np.array([self._action(s) for s in states], dtype=int)
        return int(actions[0]) if single else actions


class LspiIterate(object):
    """
    One evaluation + improvement step.

    Attributes:
        index: iteration number, from 0
        q: QFunction of the policy evaluated at this step
        policy: greedy policy extracted from q
        action_changes: next-state actions that differ from the previous policy
        metric: score of policy (None without a scorer)
    """

    def __init__(self, index, q, policy, action_changes, metric=None):
        self.index = index
        self.q = q
        self.policy = policy
        self.action_changes = action_changes
        self.metric = metric

    def record(self):
        return {'iteration': self.index,
                'action_changes': int(self.action_changes),
                'metric': None if self.metric is None else float(self.metric),
                'diagnostics': self.q.diagnostics}


class LspiRun(object):
    """
    Every iterate of one LSPI run. The run keeps all iterates; picking the
    best one is left to the caller.

    Attributes:
        iterates: list of LspiIterate
        converged_at: index of the iterate whose policy matched its
            predecessor on all next states, or None
        max_iterations: iteration cap
        error: message of the solver failure that ended the run, or None
    """

    def __init__(self, max_iterations=MAX_ITERATIONS):
        self.iterates = []
        self.converged_at = None
        self.max_iterations = max_iterations
        self.error = None

    def __len__(self):
        return len(self.iterates)

    @property
    def metrics(self):
        return np.array([np.nan if it.metric is None else it.metric
                         for it in self.iterates])

    @property
    def final(self):
        return self.iterates[-1] if self.iterates else None

    def best(self, higher_is_better=True):
        """Iterate with the best metric (earliest among ties), or None"""

        m = self.metrics
        if not m.size or np.isnan(m).all():
            return None
        if higher_is_better:
            idx = np.nanargmax(m)
        else:
            idx = np.nanargmin(m)
        return self.iterates[idx]

    def records(self):
        out = [it.record() for it in self.iterates]
        out.append({'summary': True, 'iterations': len(self),
                    'converged_at': self.converged_at,
                    'max_iterations': self.max_iterations,
                    'error': self.error})
        return out

    def save(self, path):
        """Write the run as JSON lines, one iterate per line plus a summary"""

        with open(path, 'w') as f:
            for rec in self.records():
                f.write(json.dumps(rec, sort_keys=True, default=float) + '\n')

    def __repr__(self):
        text = f"""\
            LspiRun with properties:
            iterations:    {len(self)} (cap {self.max_iterations})
            converged at:  {self.converged_at}
            error:         {self.error}"""
        return dedent(text)


def lspi_run(dataset, solver, initial_policy, max_iter=MAX_ITERATIONS,
             scorer=None):
    """
    Policy iteration on a fixed dataset. Each step evaluates the current
    policy with solver.fit(dataset, next_actions) and takes the greedy policy
    of the result.

    Args:
        dataset: Dataset
        solver: object with fit(dataset, policy) -> QFunction
        initial_policy: callable on (m, d) states
        max_iter: iteration cap
        scorer: optional callable policy -> float recorded per iterate

    Returns:
        LspiRun. Stops when the greedy policy's actions on every next state
        equal those of the policy it was derived from, at max_iter, or on a
        solver failure (stored in LspiRun.error).
    """

    if not len(dataset):
        raise ValueError("Cannot run LSPI on an empty dataset")
    max_iter = int(max_iter)
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")

    run = LspiRun(max_iter)
    actions = np.asarray(initial_policy(dataset.next_states), dtype=int)

    for k in range(max_iter):
        try:
            q = solver.fit(dataset, actions)
        except SOLVER_ERRORS as e:
            run.error = "iteration {}: {}: {}".format(k, type(e).__name__, e)
            logger.warning("LSPI stopped early, %s", run.error)
            break

        policy = GreedyPolicy(q)
        new_actions = policy(dataset.next_states)
        changes = int((new_actions != actions).sum())
        metric = None if scorer is None else scorer(policy)
        run.iterates.append(LspiIterate(k, q, policy, changes, metric))
        logger.info("LSPI iteration %d: %d action changes, metric %s",
                    k, changes, metric)

        if not changes:
            run.converged_at = k
            break
        actions = new_actions

    return run


def policy_mismatch_count(policy, optimal_table, env=None):
    """
    Number of evaluable two-room cells where the policy's action is not
    optimal.

    Args:
        policy: callable on (m, 2) states, or a per-cell action array
        optimal_table: OptimalPolicyTable
        env: TwoRoom, needed when policy is a callable

    Returns:
        int in [0, number of evaluable cells]
    """

    if callable(policy):
        if env is None:
            raise ValueError("Need the environment to tabulate a policy")
        table = env.policy_table(policy)
    else:
        table = np.asarray(policy).reshape(-1).astype(int)
    n_cells = optimal_table.optimal.shape[0]
    if table.size != n_cells:
        raise ValueError("Policy table has {} entries, expected {}"
                         .format(table.size, n_cells))

    ok = optimal_table.optimal[np.arange(n_cells), table]
    return int((~ok & optimal_table.evaluable).sum())


def evaluate_rollout(policy, env=None, trials=100, max_steps=None, rng=None):
    """
    Average balancing time of a cart-pole policy. All trials are simulated
    as one batch with the same Euler step as cartpole_step(); start states
    are drawn in the order a sequential run would draw them.

    Args:
        policy: callable mapping (m, 2) pole states to m actions
        env: CartPole, supplies max_episode_steps when given
        trials: number of episodes
        max_steps: episode cap (default: env.max_episode_steps when set,
            else 200)
        rng: np.random.Generator for the start states

    Returns:
        float in [1, max_steps]
    """

    if rng is None:
        raise ValueError("evaluate_rollout needs an explicit rng")
    if max_steps is None:
        if env is not None and env.max_episode_steps is not None:
            max_steps = env.max_episode_steps
        else:
            max_steps = 200

    full = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(int(trials), 4))
    steps = np.zeros(int(trials), dtype=int)
    alive = np.ones(int(trials), dtype=bool)

    for _ in range(int(max_steps)):
        idx = np.flatnonzero(alive)
        if not idx.size:
            break
        actions = np.asarray(policy(full[idx, 2:])).reshape(-1)
        full[idx] = cartpole_dynamics(full[idx], actions)
        steps[idx] += 1
        alive[idx] = ~failed(full[idx, 2])

    return float(steps.mean())
