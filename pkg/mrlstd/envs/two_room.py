"""
Two-room navigation on a 10x10 grid.

Columns 0-4 form the first room and columns 5-9 the second; a wall runs
along the boundary between x=4 and x=5 with a single doorway at row 5.
The agent starts at (0, 0) and the goal is the opposite corner (9, 9).
Each move succeeds with probability 0.9 (blocked moves leave the agent in
place), otherwise the agent stays. Entering the goal pays 1; the goal is
absorbing and pays nothing afterwards.

States are (x, y) cell coordinates. Actions: 0 up (+y), 1 right (+x),
2 down (-y), 3 left (-x).
"""

import logging
from textwrap import dedent

import numpy as np

from mrlstd.envs.mdp import MdpSpec, TabularModel
from mrlstd.envs.dataset import Dataset

logger = logging.getLogger(__name__)

UP, RIGHT, DOWN, LEFT = 0, 1, 2, 3
ACTION_NAMES = ('up', 'right', 'down', 'left')
MOVES = np.array([(0, 1), (1, 0), (0, -1), (-1, 0)])


class TwoRoom(object):
    """
    Args:
        size: grid side length (default 10)
        wall_col: the wall lies between columns wall_col and wall_col + 1
        doorway_row: row of the single doorway through the wall
        success_prob: probability that an action moves the agent
        gamma: discount factor
    """

    name = 'two_room'

    def __init__(self, size=10, wall_col=4, doorway_row=5, success_prob=0.9,
                 gamma=0.9):

        self.size = int(size)
        self.wall_col = int(wall_col)
        self.doorway_row = int(doorway_row)
        self.success_prob = float(success_prob)
        self.start = (0, 0)
        self.goal = (self.size - 1, self.size - 1)
        self.spec = MdpSpec(state_dim=2, num_actions=4, gamma=gamma)
        self._model = None

        # Cell index = y * size + x
        xs, ys = np.meshgrid(np.arange(self.size), np.arange(self.size),
                             indexing='xy')
        self.cells = np.stack((xs.reshape(-1), ys.reshape(-1)), axis=1)
        self.next_cell = np.array([[self._move(c, a) for a in range(4)]
                                   for c in self.cells])

    @property
    def n_cells(self):
        return self.cells.shape[0]

    @property
    def num_actions(self):
        return self.spec.num_actions

    @property
    def gamma(self):
        return self.spec.gamma

    @property
    def goal_index(self):
        return self.cell_index(self.goal)

    @property
    def evaluable(self):
        """Mask over cells that carry a meaningful action (all but the goal)"""
        mask = np.ones(self.n_cells, dtype=bool)
        mask[self.goal_index] = False
        return mask

    def blocked(self, cell, action):
        """True if moving from cell in the given direction hits a border or wall"""

        x, y = cell
        nx, ny = x + MOVES[action][0], y + MOVES[action][1]
        if not (0 <= nx < self.size and 0 <= ny < self.size):
            return True
        crosses = {x, nx} == {self.wall_col, self.wall_col + 1}
        return crosses and y != self.doorway_row

    def _move(self, cell, action):
        if tuple(cell) == self.goal or self.blocked(cell, action):
            return self.cell_index(cell)
        return self.cell_index(cell + MOVES[action])

    def is_valid(self, s):
        s = np.asarray(s)
        return (s.shape == (2,) and np.all(np.mod(s, 1) == 0)
                and np.all((s >= 0) & (s < self.size)))

    def cell_index(self, s):
        """Linear index of one cell, or an array of indices for an (m, 2) array"""

        s = np.asarray(s)
        if s.ndim == 1:
            if not self.is_valid(s):
                raise ValueError("{} is not a valid cell".format(s))
            return int(s[1]) * self.size + int(s[0])
        s = np.rint(s).astype(int)
        if ((s < 0) | (s >= self.size)).any():
            raise ValueError("States outside of the grid")
        return s[:, 1] * self.size + s[:, 0]

    def reward(self, idx, next_idx):
        return ((np.asarray(next_idx) == self.goal_index)
                & (np.asarray(idx) != self.goal_index)).astype(float)

    def step(self, s, a, rng=None, success=None):
        """
        One transition from cell s under action a.

        Args:
            s: (x, y) cell
            a: action index in {0, 1, 2, 3}
            rng: np.random.Generator, used unless success is given
            success: force (True) or suppress (False) the movement branch

        Returns:
            (s_next, r)
        """

        if a not in range(self.num_actions):
            raise ValueError("Invalid action {}".format(a))
        idx = self.cell_index(s)
        if success is None:
            if rng is None:
                raise ValueError("Need either an rng or an explicit success flag")
            success = rng.random() < self.success_prob
        next_idx = self.next_cell[idx, a] if success else idx
        return self.cells[next_idx].copy(), float(self.reward(idx, next_idx))

    def model(self):
        """Exact tabular model (cached)"""

        if self._model is None:
            S, A = self.n_cells, self.num_actions
            P = np.zeros((S, A, S))
            idx = np.arange(S)
            for a in range(A):
                P[idx, a, self.next_cell[:, a]] += self.success_prob
                P[idx, a, idx] += 1 - self.success_prob
            R = np.einsum('ijk,k->ij', P, np.eye(S)[self.goal_index])
            R[self.goal_index] = 0.0
            self._model = TabularModel(P, R, self.gamma)
        return self._model

    def empirical_model(self, dataset):
        """
        Tabular model estimated from sample counts. Every (cell, action)
        pair must appear in the dataset.
        """

        S, A = self.n_cells, self.num_actions
        counts = np.zeros((S, A, S))
        reward_sum = np.zeros((S, A))
        idx = self.cell_index(dataset.states)
        next_idx = self.cell_index(dataset.next_states)
        np.add.at(counts, (idx, dataset.actions, next_idx), 1)
        np.add.at(reward_sum, (idx, dataset.actions), dataset.rewards)

        visits = counts.sum(axis=2)
        if (visits == 0).any():
            raise ValueError("Dataset leaves {} (cell, action) pairs uncovered"
                             .format(int((visits == 0).sum())))
        return TabularModel(counts / visits[:, :, None], reward_sum / visits,
                            self.gamma)

    def policy_table(self, policy):
        """Evaluate a policy (callable on (m, 2) states, or array) on every cell"""

        if callable(policy):
            table = policy(self.cells.astype(float))
        else:
            table = policy
        table = np.asarray(table).reshape(-1).astype(int)
        if table.size != self.n_cells:
            raise ValueError("Policy table has {} entries, expected {}"
                             .format(table.size, self.n_cells))
        return table

    def render_policy(self, policy):
        """Text rendering of a policy, top row first"""

        arrows = np.array(['^', '>', 'v', '<'])
        grid = arrows[self.policy_table(policy)].reshape(self.size, self.size)
        grid[self.goal[1], self.goal[0]] = 'G'
        rows = []
        for y in reversed(range(self.size)):
            left = ' '.join(grid[y, :self.wall_col + 1])
            right = ' '.join(grid[y, self.wall_col + 1:])
            sep = ' ' if y == self.doorway_row else '|'
            rows.append(f"{left} {sep} {right}")
        return '\n'.join(rows)

    def __repr__(self):
        text = f"""\
            TwoRoom with properties:
            grid:          {self.size} x {self.size}
            wall:          between x={self.wall_col} and x={self.wall_col + 1}
            doorway row:   {self.doorway_row}
            goal:          {self.goal}
            success prob:  {self.success_prob}
            gamma:         {self.gamma}"""
        return dedent(text)


class OptimalPolicyTable(object):
    """
    Set of optimal actions per cell.

    Attributes:
        q: (S, A) optimal action values
        optimal: (S, A) bool mask of optimal actions
        evaluable: (S,) bool mask of cells counted by mismatch metrics
    """

    def __init__(self, q, optimal, evaluable):
        self.q = q
        self.optimal = optimal
        self.evaluable = evaluable

    def greedy(self):
        """One optimal action per cell (lowest index among ties)"""
        return np.argmax(self.optimal, axis=1)


def two_room_step(s, a, rng, env=None, success=None):
    """One two-room transition, see TwoRoom.step()"""
    env = env or TwoRoom()
    return env.step(s, a, rng, success)


def two_room_optimal_policy(env=None, model=None, tol=1e-10, atol=1e-8):
    """
    Optimal action sets per cell by value iteration.

    Args:
        env: TwoRoom (default layout if None)
        model: TabularModel to solve (default: env's exact model)
        tol: value-iteration residual
        atol: actions within atol of the best value count as optimal

    Returns:
        OptimalPolicyTable
    """

    env = env or TwoRoom()
    model = model or env.model()
    q = model.value_iteration(tol=tol)
    optimal = q >= q.max(axis=1, keepdims=True) - atol
    return OptimalPolicyTable(q, optimal, env.evaluable)


def exact_q_pi(env, policy, model=None):
    """
    Exact Q^pi of a policy on the tabular two-room MDP by a direct solve.

    Args:
        env: TwoRoom
        policy: callable on (m, 2) states, or length-S action array
        model: TabularModel (default: env's exact model)

    Returns:
        (S, A) array, indexed by env cell index and action
    """

    model = model or env.model()
    table = env.policy_table(policy)
    Q = model.q_pi(table)
    residual = np.abs(model.bellman(Q, table) - Q).max()
    logger.debug("exact_q_pi residual %.3e", residual)
    return Q


def collect_uniform(env, n, rng, seed=None):
    """
    n transitions with the state uniform over cells and the action uniform
    over the four moves.

    Returns:
        Dataset
    """

    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1, got {}".format(n))

    idx = rng.integers(env.n_cells, size=n)
    actions = rng.integers(env.num_actions, size=n)
    success = rng.random(n) < env.success_prob
    next_idx = np.where(success, env.next_cell[idx, actions], idx)
    meta = {'env': env.name, 'mode': 'uniform', 'seed': seed}
    return Dataset(env.cells[idx], actions, env.reward(idx, next_idx),
                   env.cells[next_idx], None, env.num_actions, meta)


def collect_exhaustive(env, rng, repeats=1, seed=None):
    """
    Every (cell, action) pair `repeats` times, next states sampled from the
    dynamics.

    Returns:
        Dataset
    """

    idx, actions = np.meshgrid(np.arange(env.n_cells),
                               np.arange(env.num_actions), indexing='ij')
    idx = np.tile(idx.reshape(-1), repeats)
    actions = np.tile(actions.reshape(-1), repeats)
    success = rng.random(idx.size) < env.success_prob
    next_idx = np.where(success, env.next_cell[idx, actions], idx)
    meta = {'env': env.name, 'mode': 'exhaustive', 'seed': seed}
    return Dataset(env.cells[idx], actions, env.reward(idx, next_idx),
                   env.cells[next_idx], None, env.num_actions, meta)
