"""
Cart-pole balancing with the classic benchmark constants and explicit Euler
integration. The learner observes only the pole (theta, theta_dot); the cart
position and velocity evolve internally and do not affect the pole.

Reward is 0 per step and -1 on the step that takes |theta| beyond 12 degrees,
which ends the episode. Episodes are also cut at max_episode_steps (reward 0);
that cut is a truncation, not an absorbing state.
"""

import math
import logging
from textwrap import dedent

import numpy as np

from mrlstd.envs.mdp import MdpSpec
from mrlstd.envs.dataset import Dataset

logger = logging.getLogger(__name__)

GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
TOTAL_MASS = MASS_CART + MASS_POLE
HALF_LENGTH = 0.5
POLEMASS_LENGTH = MASS_POLE * HALF_LENGTH
FORCE_MAG = 10.0
TAU = 0.02
THETA_THRESHOLD = 12 * 2 * math.pi / 360
INIT_RANGE = 0.05

PUSH_LEFT, PUSH_RIGHT = 0, 1


def cartpole_dynamics(state, action):
    """
    One Euler step of the full cart-pole state.

    Args:
        state: (..., 4) array of (x, x_dot, theta, theta_dot)
        action: action index or array broadcastable against state[..., 0];
            1 pushes right, 0 pushes left

    Returns:
        (..., 4) array
    """

    state = np.asarray(state, dtype=float)
    x, x_dot, theta, theta_dot = np.moveaxis(state, -1, 0)
    force = np.where(np.asarray(action) == PUSH_RIGHT, FORCE_MAG, -FORCE_MAG)
    costheta = np.cos(theta)
    sintheta = np.sin(theta)

    temp = (force + POLEMASS_LENGTH * theta_dot ** 2 * sintheta) / TOTAL_MASS
    thetaacc = ((GRAVITY * sintheta - costheta * temp)
                / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * costheta ** 2 / TOTAL_MASS)))
    xacc = temp - POLEMASS_LENGTH * thetaacc * costheta / TOTAL_MASS

    return np.stack((x + TAU * x_dot,
                     x_dot + TAU * xacc,
                     theta + TAU * theta_dot,
                     theta_dot + TAU * thetaacc), axis=-1)


def failed(theta):
    return np.abs(theta) > THETA_THRESHOLD


def cartpole_step(s, a, cart=(0.0, 0.0)):
    """
    Pure single step on the observable pole state.

    Args:
        s: (theta, theta_dot)
        a: 0 (push left) or 1 (push right)
        cart: hidden (x, x_dot); the pole dynamics do not depend on it

    Returns:
        (s_next, r, done): done and r = -1 when |theta_next| > 12 degrees
    """

    if a not in (PUSH_LEFT, PUSH_RIGHT):
        raise ValueError("Invalid action {}".format(a))
    s = np.asarray(s, dtype=float)
    if s.shape != (2,):
        raise ValueError("Cart-pole state must be (theta, theta_dot), got shape {}"
                         .format(s.shape))

    full = cartpole_dynamics(np.concatenate((np.asarray(cart, dtype=float), s)), a)
    s_next = full[2:]
    done = bool(failed(s_next[0]))
    return s_next, (-1.0 if done else 0.0), done


class CartPole(object):
    """
    Stateful cart-pole episode.

    Args:
        gamma: discount factor
        max_episode_steps: truncation length
    """

    name = 'cart_pole'

    def __init__(self, gamma=0.99, max_episode_steps=200):
        self.spec = MdpSpec(state_dim=2, num_actions=2, gamma=gamma,
                            max_episode_steps=max_episode_steps)
        self.full_state = None
        self.steps = 0
        self.done = True
        self.failed = False

    @property
    def num_actions(self):
        return self.spec.num_actions

    @property
    def gamma(self):
        return self.spec.gamma

    @property
    def max_episode_steps(self):
        return self.spec.max_episode_steps

    @property
    def state(self):
        """Observable (theta, theta_dot)"""
        return self.full_state[2:].copy()

    def reset(self, rng):
        """Perturbed upright start, all four coordinates uniform in +-0.05"""

        self.full_state = rng.uniform(-INIT_RANGE, INIT_RANGE, size=4)
        self.steps = 0
        self.done = False
        self.failed = False
        return self.state

    def step(self, a):
        """
        Returns:
            (s_next, r, done)
        """

        if self.done:
            raise RuntimeError("Episode has terminated, call reset() first")
        if a not in (PUSH_LEFT, PUSH_RIGHT):
            raise ValueError("Invalid action {}".format(a))

        self.full_state = cartpole_dynamics(self.full_state, a)
        self.steps += 1
        self.failed = bool(failed(self.full_state[2]))
        truncated = (self.max_episode_steps is not None
                     and self.steps >= self.max_episode_steps)
        self.done = self.failed or truncated
        return self.state, (-1.0 if self.failed else 0.0), self.done

    def __repr__(self):
        text = f"""\
            CartPole with properties:
            observed state:  (theta, theta_dot)
            threshold:       {math.degrees(THETA_THRESHOLD):.1f} degrees
            max steps:       {self.max_episode_steps}
            gamma:           {self.gamma}"""
        return dedent(text)


def collect_episodes(env, n, rng, seed=None):
    """
    Random-action episodes from perturbed upright starts, concatenated until
    n transitions are gathered (the last episode is cut to fit).

    Returns:
        Dataset, with done marking failures only
    """

    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1, got {}".format(n))

    states, actions, rewards, next_states, done = [], [], [], [], []
    episodes = 0
    while len(states) < n:
        s = env.reset(rng)
        episodes += 1
        while not env.done and len(states) < n:
            a = int(rng.integers(env.num_actions))
            s_next, r, _ = env.step(a)
            states.append(s)
            actions.append(a)
            rewards.append(r)
            next_states.append(s_next)
            done.append(env.failed)
            s = s_next

    logger.debug("collected %d transitions from %d episodes", n, episodes)
    meta = {'env': env.name, 'mode': 'episodes', 'seed': seed,
            'episodes': episodes}
    return Dataset(np.array(states), actions, rewards, np.array(next_states),
                   done, env.num_actions, meta)
