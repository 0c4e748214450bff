"""
Batches of transitions (s, a, r, s', done) collected before policy iteration,
with CSV + YAML sidecar persistence.
"""

import os
import os.path as op
import hashlib
from dataclasses import dataclass
from textwrap import dedent

import numpy as np
import yaml

from mrlstd.kernel import StateActions


@dataclass
class Sample:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool = False


class Dataset(object):
    """
    Fixed batch of n transitions.

    Args:
        states: (n, d) array
        actions: (n,) int array
        rewards: (n,) array
        next_states: (n, d) array
        done: (n,) bool array, True where s' is absorbing (no bootstrap).
            Defaults to all False.
        num_actions: size of the action set
        meta: dict of construction metadata (env, mode, seed, ...)
    """

    def __init__(self, states, actions, rewards, next_states, done=None,
                 num_actions=None, meta=None):

        states = np.asarray(states, dtype=float)
        next_states = np.asarray(next_states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if next_states.ndim == 1:
            next_states = next_states[:, None]
        actions = np.asarray(actions).reshape(-1).astype(int)
        rewards = np.asarray(rewards, dtype=float).reshape(-1)
        n = states.shape[0]
        if done is None:
            done = np.zeros(n, dtype=bool)
        done = np.asarray(done).reshape(-1).astype(bool)

        if not (next_states.shape == states.shape
                and actions.size == rewards.size == done.size == n):
            raise ValueError("Inconsistent dataset shapes: states {}, actions {}, "
                             "rewards {}, next_states {}, done {}".format(
                                 states.shape, actions.shape, rewards.shape,
                                 next_states.shape, done.shape))

        if num_actions is None:
            num_actions = int(actions.max()) + 1 if n else 0
        if n and (actions.min() < 0 or actions.max() >= num_actions):
            raise ValueError("actions must lie in [0, {})".format(num_actions))

        self.states = states
        self.actions = actions
        self.rewards = rewards
        self.next_states = next_states
        self.done = done
        self.num_actions = int(num_actions)
        self.meta = dict(meta or {})
        self.meta['n'] = n

    @classmethod
    def from_samples(cls, samples, num_actions=None, meta=None):
        samples = list(samples)
        if not samples:
            raise ValueError("Cannot build a dataset from no samples")
        return cls(np.stack([np.atleast_1d(x.s) for x in samples]),
                   [x.a for x in samples],
                   [x.r for x in samples],
                   np.stack([np.atleast_1d(x.s_next) for x in samples]),
                   [x.done for x in samples],
                   num_actions, meta)

    def __len__(self):
        return self.states.shape[0]

    @property
    def n(self):
        return len(self)

    @property
    def state_dim(self):
        return self.states.shape[1]

    @property
    def X(self):
        """Sampled state-action points (s_i, a_i)"""
        return StateActions(self.states, self.actions)

    @property
    def R(self):
        return self.rewards

    @property
    def samples(self):
        return [Sample(s, int(a), float(r), s_n, bool(d)) for s, a, r, s_n, d
                in zip(self.states, self.actions, self.rewards,
                       self.next_states, self.done)]

    def next_points(self, policy):
        """X' = (s'_i, pi(s'_i)) for the policy being evaluated"""
        return StateActions(self.next_states, policy(self.next_states))

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.states[idx], self.actions[idx], self.rewards[idx],
                       self.next_states[idx], self.done[idx],
                       self.num_actions, self.meta)

    def fingerprint(self):
        """sha256 of the transition arrays"""
        h = hashlib.sha256()
        for arr in (self.states, self.actions, self.rewards,
                    self.next_states, self.done):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def save_csv(self, path):
        """
        Save as CSV (columns s*, a, r, s_next*, done) with a YAML sidecar
        holding the metadata at <path>.meta.yaml
        """

        d = self.state_dim
        header = ([f"s{i}" for i in range(d)] + ['a', 'r']
                  + [f"s_next{i}" for i in range(d)] + ['done'])
        table = np.column_stack((self.states, self.actions, self.rewards,
                                 self.next_states, self.done.astype(int)))
        os.makedirs(op.dirname(op.abspath(path)), exist_ok=True)
        np.savetxt(path, table, delimiter=',', header=','.join(header),
                   comments='', fmt='%.17g')

        meta = dict(self.meta)
        meta.update({'n': len(self), 'state_dim': d,
                     'num_actions': self.num_actions})
        with open(path + '.meta.yaml', 'w') as f:
            yaml.safe_dump(meta, f, sort_keys=True)

    @classmethod
    def load_csv(cls, path):
        """Load a dataset written by save_csv()"""

        with open(path + '.meta.yaml', 'r') as f:
            meta = yaml.safe_load(f)
        d = int(meta['state_dim'])
        table = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
        if table.shape[1] != 2 * d + 3:
            raise ValueError("CSV at {} has {} columns, expected {}"
                             .format(path, table.shape[1], 2 * d + 3))
        return cls(table[:, :d], table[:, d], table[:, d + 1],
                   table[:, d + 2: 2 * d + 2], table[:, -1] > 0,
                   int(meta['num_actions']), meta)

    def __repr__(self):
        text = f"""\
            Dataset with properties:
            samples:     {len(self)}
            state dim:   {self.state_dim}
            actions:     {self.num_actions}
            terminal:    {int(self.done.sum())}
            environment: {self.meta.get('env', 'unknown')}
            mode:        {self.meta.get('mode', 'unknown')}
            seed:        {self.meta.get('seed', 'unknown')}"""
        return dedent(text)
