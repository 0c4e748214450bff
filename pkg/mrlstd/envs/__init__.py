from mrlstd.envs.mdp import (MdpSpec, TabularModel, make_rng, STREAM_DATA,
                             STREAM_POLICY, STREAM_EVAL)
from mrlstd.envs.dataset import Sample, Dataset
from mrlstd.envs.two_room import (TwoRoom, OptimalPolicyTable, two_room_step,
                                  two_room_optimal_policy, exact_q_pi,
                                  collect_uniform, collect_exhaustive)
from mrlstd.envs.cartpole import (CartPole, cartpole_step, cartpole_dynamics,
                                  collect_episodes)

ENVIRONMENTS = {'two_room': TwoRoom, 'cart_pole': CartPole}


def make_env(name, gamma=None):
    """Construct a benchmark environment by name"""

    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError("Unknown environment '{}', expected one of {}"
                         .format(name, sorted(ENVIRONMENTS)))
    return cls() if gamma is None else cls(gamma=gamma)


def make_dataset(env, n, seed):
    """
    The benchmark's data-collection protocol, reproducible from (env, n, seed):
    uniform state-action sampling for two-room, random episodes for cart-pole.
    """

    rng = make_rng(seed, STREAM_DATA)
    if isinstance(env, TwoRoom):
        return collect_uniform(env, n, rng, seed=seed)
    elif isinstance(env, CartPole):
        return collect_episodes(env, n, rng, seed=seed)
    else:
        raise ValueError("No collection protocol for {}".format(type(env)))
