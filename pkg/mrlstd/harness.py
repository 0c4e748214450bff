"""
Experiment orchestration: YAML experiment configs, grid search over
hyperparameters, seed-replicated LSPI runs distributed over a process pool,
aggregation into per-setting metrics and benchmark tables in CSV.

Every (config, setting, seed) cell is seeded from the seed alone, so the
per-seed results do not depend on scheduling or on the number of workers.
"""

import os
import os.path as op
import csv
import json
import time
import glob
import hashlib
import logging
import functools
import itertools
import multiprocessing as mp
from dataclasses import dataclass, field, asdict, replace
from textwrap import dedent

import numpy as np
import yaml

from mrlstd.envs import (make_env, make_dataset, make_rng, STREAM_EVAL,
                         TwoRoom, two_room_optimal_policy, exact_q_pi)
from mrlstd.solvers import make_solver
from mrlstd.lspi import (lspi_run, RandomPolicy, policy_mismatch_count,
                         evaluate_rollout, MAX_ITERATIONS)

logger = logging.getLogger(__name__)

ENVIRONMENTS = ('two_room', 'cart_pole')
METHODS = ('polynomial', 'rbf', 'eigenmap', 'reg_lstd', 'mr_lstd')
SAMPLE_SIZES = (250, 500, 1000)
DEFAULT_SEEDS = 100
FAST_SEEDS = 20

METRICS = {'two_room': ('mismatches', False), 'cart_pole': ('steps', True)}

_KERNEL_GRID = {'sigma': [0.25, 0.5, 1.0, 2.0],
                'lambda_h': [1e-4, 1e-3, 1e-2, 1e-1],
                'lambda_Q': [1e-4, 1e-3, 1e-2, 1e-1]}

DEFAULT_GRIDS = {
    'reg_lstd': {'two_room': _KERNEL_GRID, 'cart_pole': _KERNEL_GRID},
    'mr_lstd': {
        'two_room': dict(_KERNEL_GRID, lambda_M=[1.0, 1e1, 1e2, 1e3],
                         epsilon=[1.0]),
        'cart_pole': dict(_KERNEL_GRID, lambda_M=[1.0, 1e1, 1e2, 1e3],
                          epsilon=[0.1, 0.2, 0.5]),
    },
    'polynomial': {env: {'degree': list(range(1, 9)), 'ridge': [1e-6]}
                   for env in ENVIRONMENTS},
    'rbf': {env: {'centers': list(range(2, 8)), 'ridge': [1e-6]}
            for env in ENVIRONMENTS},
    'eigenmap': {'two_room': {'k': [5, 10, 20, 30], 'epsilon': [1.0],
                              'ridge': [1e-6]}},
}

_GRID_KEYS = {
    'reg_lstd': {'sigma', 'lambda_h', 'lambda_Q'},
    'mr_lstd': {'sigma', 'lambda_h', 'lambda_Q', 'lambda_M', 'epsilon'},
    'polynomial': {'degree', 'ridge'},
    'rbf': {'centers', 'ridge'},
    'eigenmap': {'k', 'epsilon', 'ridge'},
}


class ConfigError(ValueError):
    pass


def _check_value(key, value):
    if key == 'degree':
        ok = isinstance(value, int) and 1 <= value <= 8
        rule = "an integer in [1, 8]"
    elif key == 'centers':
        ok = isinstance(value, int) and 2 <= value <= 7
        rule = "an integer in [2, 7]"
    elif key == 'k':
        ok = isinstance(value, int) and value >= 1
        rule = "a positive integer"
    elif key in ('sigma', 'epsilon', 'lambda_h', 'lambda_Q'):
        ok = isinstance(value, (int, float)) and value > 0
        rule = "positive"
    else:
        ok = isinstance(value, (int, float)) and value >= 0
        rule = "non-negative"
    if isinstance(value, bool) or not ok:
        raise ConfigError("grid value {}={!r} must be {}".format(key, value, rule))


@dataclass
class ExperimentConfig:
    """
    One (environment, method, sample size) experiment.

    Attributes:
        environment: 'two_room' or 'cart_pole'
        method: 'polynomial', 'rbf', 'eigenmap', 'reg_lstd' or 'mr_lstd'
        n_samples: transitions collected per seed
        grid: hyperparameter name -> list of values; missing names take the
            method/environment defaults
        seeds: number of seeds, run as 0 .. seeds-1
        max_lspi_iter: LSPI iteration cap
        gamma: discount (None: the environment's default)
        rollout_trials: cart-pole evaluation episodes per policy
        standardize: z-score states for the kernel methods (None: on for
            cart_pole only)
        same_action_only: MR-LSTD graph edges only between equal actions
        name: label used in tables and file names
    """

    environment: str
    method: str
    n_samples: int
    grid: dict = field(default_factory=dict)
    seeds: int = DEFAULT_SEEDS
    max_lspi_iter: int = MAX_ITERATIONS
    gamma: float = None
    rollout_trials: int = 100
    standardize: bool = None
    same_action_only: bool = True
    name: str = None

    def __post_init__(self):

        if self.environment not in ENVIRONMENTS:
            raise ConfigError("environment must be one of {}, got {!r}"
                              .format(ENVIRONMENTS, self.environment))
        if self.method not in METHODS:
            raise ConfigError("method must be one of {}, got {!r}"
                              .format(METHODS, self.method))
        if self.environment not in DEFAULT_GRIDS[self.method]:
            raise ConfigError("method {} is not available for {}"
                              .format(self.method, self.environment))
        for key in ('n_samples', 'seeds', 'max_lspi_iter', 'rollout_trials'):
            value = getattr(self, key)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError("{} must be a positive integer, got {!r}"
                                  .format(key, value))
        if self.n_samples < 2:
            raise ConfigError("n_samples must be at least 2")
        if self.gamma is not None and not (0 < self.gamma < 1):
            raise ConfigError("gamma must lie in (0, 1), got {}".format(self.gamma))

        grid = dict(DEFAULT_GRIDS[self.method][self.environment])
        for key, values in (self.grid or {}).items():
            if key not in _GRID_KEYS[self.method]:
                raise ConfigError("unknown hyperparameter {!r} for method {}"
                                  .format(key, self.method))
            if not isinstance(values, (list, tuple)):
                values = [values]
            if not values:
                raise ConfigError("empty value list for {}".format(key))
            for v in values:
                _check_value(key, v)
            grid[key] = list(values)
        self.grid = {k: list(grid[k]) for k in sorted(grid)}

        if self.standardize is None:
            self.standardize = self.environment == 'cart_pole'
        if self.name is None:
            self.name = "{}_{}_{}".format(self.environment, self.method,
                                          self.n_samples)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError("unknown config keys: {}".format(sorted(unknown)))
        missing = {'environment', 'method', 'n_samples'} - set(d)
        if missing:
            raise ConfigError("missing config keys: {}".format(sorted(missing)))
        return cls(**d)

    @classmethod
    def from_yaml(cls, path):
        with open(path, 'r') as f:
            d = yaml.safe_load(f)
        if not isinstance(d, dict):
            raise ConfigError("{} does not hold a mapping".format(path))
        d.setdefault('name', op.splitext(op.basename(path))[0])
        return cls.from_dict(d)

    def to_dict(self):
        return asdict(self)

    def to_yaml(self, path):
        with open(path, 'w') as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=True)

    def fingerprint(self):
        """sha256 of the canonical JSON of to_dict()"""
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    def settings(self):
        """Expanded grid, one dict per setting, in a fixed order"""
        keys = sorted(self.grid)
        return [dict(zip(keys, values)) for values
                in itertools.product(*(self.grid[k] for k in keys))]

    @property
    def metric(self):
        return METRICS[self.environment][0]

    @property
    def higher_is_better(self):
        return METRICS[self.environment][1]

    def with_overrides(self, seeds=None, max_lspi_iter=None):
        changes = {}
        if seeds is not None:
            changes['seeds'] = seeds
        if max_lspi_iter is not None:
            changes['max_lspi_iter'] = max_lspi_iter
        return replace(self, **changes)


def make_scorer(config, env, seed):
    """Policy metric for one seed: mismatch count or average rollout length"""

    if isinstance(env, TwoRoom):
        table = two_room_optimal_policy(env)
        return functools.partial(policy_mismatch_count, optimal_table=table,
                                 env=env)

    def score(policy):
        # Same start states for every iterate of a seed
        rng = make_rng(seed, STREAM_EVAL)
        return evaluate_rollout(policy, env, config.rollout_trials, rng=rng)

    return score


def run_cell(config, setting_index, setting, seed):
    """
    Collect data, run LSPI and score every iterate for one
    (config, setting, seed). Failures are recorded, never raised.

    Returns:
        dict row for the per-seed table
    """

    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    row = {'config': config.name, 'fingerprint': config.fingerprint(),
           'environment': config.environment, 'method': config.method,
           'n_samples': config.n_samples, 'setting': setting_index,
           'setting_json': json.dumps(setting, sort_keys=True), 'seed': seed,
           'best': np.nan, 'final': np.nan, 'iterations': 0,
           'converged_at': '', 'trajectory': '', 'dataset': '', 'error': ''}

    t0 = time.perf_counter()
    try:
        env = make_env(config.environment, config.gamma)
        dataset = make_dataset(env, config.n_samples, seed)
        row['dataset'] = dataset.fingerprint()
        solver = make_solver(config.method, setting, env.gamma,
                             config.standardize, config.same_action_only)
        run = lspi_run(dataset, solver, RandomPolicy(env.num_actions, seed),
                       config.max_lspi_iter, make_scorer(config, env, seed))

        metrics = run.metrics
        row['iterations'] = len(run)
        row['converged_at'] = '' if run.converged_at is None else run.converged_at
        row['trajectory'] = ';'.join(repr(float(m)) for m in metrics)
        if len(run):
            best = run.best(config.higher_is_better)
            row['best'] = float(best.metric)
            row['final'] = float(run.final.metric)
        if run.error:
            row['error'] = run.error

    except Exception as e:
        row['error'] = "{}: {}".format(type(e).__name__, e)
        logger.warning("%s setting %d seed %d failed: %s", config.name,
                       setting_index, seed, row['error'])

    row['seconds'] = time.perf_counter() - t0
    logger.info("%s setting %d seed %d: best %s (%.2fs)", config.name,
                setting_index, seed, row['best'], row['seconds'])
    return row


def run_cells(configs, jobs=1):
    """
    Run every (config, setting, seed) cell, serially or on a process pool.
    Rows come back in cell order regardless of scheduling.
    """

    cells = [(c.to_dict(), i, s, seed) for c in configs
             for i, s in enumerate(c.settings()) for seed in range(c.seeds)]
    logger.info("running %d cells on %d worker(s)", len(cells), jobs)

    if jobs == 1:
        return [run_cell(*cell) for cell in cells]
    with mp.Pool(jobs) as p:
        return p.starmap(run_cell, cells)


@dataclass
class MetricsRecord:
    """
    Aggregate of one experiment config.

    Attributes:
        per_seed: headline values (per-seed best over LSPI iterations) of the
            best setting, in seed order; NaN for failed seeds
        mean, stderr: over the completed seeds of per_seed
        final_mean: mean of the final-iterate values of the best setting
        average_then_best: best over iterations of the across-seed mean
            trajectory (converged runs hold their last value)
        n_incomplete: seeds of the best setting whose LSPI run stopped early
            on a solver error; their per_seed value is the best reached
            before the error
        best_setting: hyperparameters with the best mean
        settings: per-setting summaries (index, setting, mean, stderr, failed,
            incomplete)
        seconds: wall-clock per run of the best setting
    """

    name: str
    fingerprint: str
    environment: str
    method: str
    n_samples: int
    metric: str
    higher_is_better: bool
    per_seed: list
    mean: float
    stderr: float
    final_mean: float
    average_then_best: float
    best_setting: dict
    best_setting_index: int
    n_seeds: int
    n_failed: int
    settings: list
    n_incomplete: int = 0
    seconds: list = field(default_factory=list)

    @property
    def complete(self):
        return self.n_failed == 0 and self.n_incomplete == 0

    def to_dict(self, timings=False):
        d = asdict(self)
        if not timings:
            d.pop('seconds')
        return d

    def __repr__(self):
        text = f"""\
            MetricsRecord with properties:
            experiment:    {self.name}
            metric:        {self.metric} ({'higher' if self.higher_is_better else 'lower'} is better)
            mean:          {self.mean:.4f} +- {self.stderr:.4f}
            seeds:         {self.n_seeds} ({self.n_failed} failed, {self.n_incomplete} incomplete)
            best setting:  {self.best_setting}"""
        return dedent(text)


def _mean_stderr(values):
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if not v.size:
        return np.nan, np.nan
    stderr = v.std(ddof=1) / np.sqrt(v.size) if v.size > 1 else 0.0
    return float(v.mean()), float(stderr)


def _trajectory(row, length):
    if not row['trajectory']:
        return np.full(length, np.nan)
    t = np.array([float(x) for x in row['trajectory'].split(';')])
    out = np.full(length, t[-1])
    out[:t.size] = t[:length]
    return out


def aggregate(config, rows):
    """
    Reduce the per-seed rows of one config to a MetricsRecord. Uses only
    values stored in the rows, so it can be recomputed from per_seed.csv.
    """

    rows = [r for r in rows if r['fingerprint'] == config.fingerprint()]
    settings = config.settings()
    sign = -1.0 if config.higher_is_better else 1.0

    summaries, best_idx, best_key = [], None, None
    for i, s in enumerate(settings):
        sub = sorted((r for r in rows if int(r['setting']) == i),
                     key=lambda r: int(r['seed']))
        values = [float(r['best']) for r in sub]
        mean, stderr = _mean_stderr(values)
        failed = int(np.isnan(values).sum()) if values else 0
        incomplete = sum(1 for r, v in zip(sub, values)
                         if r.get('error') and not np.isnan(v))
        summaries.append({'index': i, 'setting': s, 'mean': mean,
                          'stderr': stderr, 'failed': failed,
                          'incomplete': incomplete})
        if not np.isnan(mean) and (best_key is None or sign * mean < best_key):
            best_idx, best_key = i, sign * mean

    if best_idx is None:
        best_idx = 0
    sub = sorted((r for r in rows if int(r['setting']) == best_idx),
                 key=lambda r: int(r['seed']))
    per_seed = [float(r['best']) for r in sub]
    n_incomplete = summaries[best_idx]['incomplete']
    mean, stderr = _mean_stderr(per_seed)
    final_mean, _ = _mean_stderr([float(r['final']) for r in sub])

    traj = np.array([_trajectory(r, config.max_lspi_iter) for r in sub])
    average_then_best = np.nan
    if traj.size and not np.isnan(traj).all():
        curve = np.nanmean(traj, axis=0)
        average_then_best = float(np.nanmax(curve) if config.higher_is_better
                                  else np.nanmin(curve))

    return MetricsRecord(
        name=config.name, fingerprint=config.fingerprint(),
        environment=config.environment, method=config.method,
        n_samples=config.n_samples, metric=config.metric,
        higher_is_better=config.higher_is_better, per_seed=per_seed,
        mean=mean, stderr=stderr, final_mean=final_mean,
        average_then_best=average_then_best,
        best_setting=settings[best_idx], best_setting_index=best_idx,
        n_seeds=len(per_seed), n_failed=int(np.isnan(per_seed).sum()),
        settings=summaries, n_incomplete=n_incomplete,
        seconds=[float(r.get('seconds', np.nan)) for r in sub])


PER_SEED_COLUMNS = ['config', 'fingerprint', 'environment', 'method',
                    'n_samples', 'setting', 'setting_json', 'seed', 'best',
                    'final', 'iterations', 'converged_at', 'trajectory',
                    'dataset', 'error']


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def _write_csv(path, columns, rows):
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, columns, extrasaction='ignore')
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(r.get(k, '')) for k in columns})


def _read_csv(path):
    with open(path, 'r', newline='') as f:
        return list(csv.DictReader(f))


def table_rows(records):
    """
    Table layout: one row per (environment, n_samples), one column per
    method. Cells are means; '*' marks failed or incomplete seeds, FAILED
    an empty cell.
    """

    methods = [m for m in METHODS if any(r.method == m for r in records)]
    keys = sorted({(r.environment, r.n_samples) for r in records})
    out = []
    for env, n in keys:
        row = {'environment': env, 'n_samples': n}
        for m in methods:
            match = [r for r in records if (r.environment, r.n_samples, r.method)
                     == (env, n, m)]
            if not match:
                row[m] = ''
                continue
            rec = match[-1]
            if np.isnan(rec.mean):
                row[m] = 'FAILED'
            else:
                row[m] = "{:.2f}{}".format(rec.mean, '' if rec.complete else '*')
        out.append(row)
    return ['environment', 'n_samples'] + methods, out


def summary_text(records):
    lines = []
    for r in records:
        flag = '' if r.complete else "  [{} failed, {} incomplete seeds]".format(
            r.n_failed, r.n_incomplete)
        lines.append("{:<32s} {:>10s} mean {:9.4f} +- {:7.4f}  final {:9.4f}  "
                     "avg-then-best {:9.4f}  best {}{}".format(
                         r.name, r.metric, r.mean, r.stderr, r.final_mean,
                         r.average_then_best,
                         json.dumps(r.best_setting, sort_keys=True), flag))
    return '\n'.join(lines) + '\n'


def _unique_names(configs):
    seen = {}
    out = []
    for c in configs:
        if c.name in seen:
            c = replace(c, name="{}_{}".format(c.name, c.fingerprint()[:8]))
        seen[c.name] = True
        out.append(c)
    return out


def write_outputs(out_dir, records):
    """aggregate.csv, table.csv, results.json and summary.txt"""

    agg = [{'config': r.name, 'fingerprint': r.fingerprint,
            'environment': r.environment, 'method': r.method,
            'n_samples': r.n_samples, 'metric': r.metric, 'mean': r.mean,
            'stderr': r.stderr, 'final_mean': r.final_mean,
            'average_then_best': r.average_then_best, 'n_seeds': r.n_seeds,
            'n_failed': r.n_failed, 'n_incomplete': r.n_incomplete,
            'best_setting': json.dumps(r.best_setting, sort_keys=True)}
           for r in records]
    if agg:
        _write_csv(op.join(out_dir, 'aggregate.csv'), list(agg[0]), agg)
    columns, rows = table_rows(records)
    _write_csv(op.join(out_dir, 'table.csv'), columns, rows)

    results = [r.to_dict(timings=False) for r in records]
    with open(op.join(out_dir, 'results.json'), 'w') as f:
        json.dump(results, f, sort_keys=True, indent=1, allow_nan=True)
    with open(op.join(out_dir, 'summary.txt'), 'w') as f:
        f.write(summary_text(records))


def write_run_dir(out_dir, configs, rows, records):
    """Persist configs, per-seed rows, timings, fingerprints and aggregates"""

    os.makedirs(op.join(out_dir, 'configs'), exist_ok=True)
    for c in configs:
        c.to_yaml(op.join(out_dir, 'configs', c.name + '.yaml'))

    _write_csv(op.join(out_dir, 'per_seed.csv'), PER_SEED_COLUMNS, rows)
    _write_csv(op.join(out_dir, 'timings.csv'),
               ['config', 'setting', 'seed', 'seconds'], rows)

    prints = {c.name: {'config': c.fingerprint(),
                       'datasets': {int(r['seed']): r['dataset'] for r in rows
                                    if r['fingerprint'] == c.fingerprint()
                                    and r['dataset']}}
              for c in configs}
    with open(op.join(out_dir, 'fingerprints.yaml'), 'w') as f:
        yaml.safe_dump(prints, f, sort_keys=True)

    write_outputs(out_dir, records)


class SweepResult(object):
    """Records of a sweep and its table (columns, rows)"""

    def __init__(self, records, out_dir=None):
        self.records = records
        self.columns, self.rows = table_rows(records)
        self.out_dir = out_dir

    def __repr__(self):
        return summary_text(self.records)


def sweep(configs, out_dir=None, jobs=1):
    """
    Run a list of configs with all their cells in one pool.

    Args:
        configs: non-empty list of ExperimentConfig
        out_dir: run directory to write (optional)
        jobs: worker processes

    Returns:
        SweepResult
    """

    configs = _unique_names(list(configs))
    if not configs:
        raise ConfigError("sweep needs at least one config")

    rows = run_cells(configs, jobs)
    records = [aggregate(c, rows) for c in configs]
    if out_dir is not None:
        write_run_dir(out_dir, configs, rows, records)
    return SweepResult(records, out_dir)


def run_experiment(config, out_dir=None, jobs=1):
    """Run one config over all its settings and seeds -> MetricsRecord"""
    return sweep([config], out_dir, jobs).records[0]


def load_configs(path):
    """A YAML config file, or every *.yaml / *.yml file in a directory"""

    if op.isdir(path):
        files = sorted(glob.glob(op.join(path, '*.yaml'))
                       + glob.glob(op.join(path, '*.yml')))
        if not files:
            raise ConfigError("no config files in {}".format(path))
        return [ExperimentConfig.from_yaml(f) for f in files]
    return [ExperimentConfig.from_yaml(path)]


def report(run_dir):
    """
    Re-aggregate a run directory from its configs and per_seed.csv and
    rewrite aggregate.csv, table.csv, results.json and summary.txt.

    Returns:
        list of MetricsRecord
    """

    configs = load_configs(op.join(run_dir, 'configs'))
    rows = _read_csv(op.join(run_dir, 'per_seed.csv'))
    for r in rows:
        for key in ('best', 'final'):
            r[key] = float(r[key])
    timing_path = op.join(run_dir, 'timings.csv')
    if op.isfile(timing_path):
        timings = {(t['config'], t['setting'], t['seed']): float(t['seconds'])
                   for t in _read_csv(timing_path)}
        for r in rows:
            r['seconds'] = timings.get((r['config'], r['setting'], r['seed']),
                                       np.nan)

    records = [aggregate(c, rows) for c in configs]
    write_outputs(run_dir, records)
    return records


def oracle(out_dir, env=None):
    """
    Write two-room reference tables: optimal Q from value iteration, the
    optimal action mask, exact Q of the greedy optimal policy and a text
    rendering of that policy.

    Returns:
        dict of written paths
    """

    env = env or TwoRoom()
    os.makedirs(out_dir, exist_ok=True)
    table = two_room_optimal_policy(env)
    greedy = table.greedy()
    q_pi = exact_q_pi(env, greedy)

    header = ['x', 'y'] + ['a{}'.format(a) for a in range(env.num_actions)]
    paths = {}
    for name, values, fmt in (('q_star', table.q, '%.17g'),
                              ('optimal_actions', table.optimal.astype(int), '%d'),
                              ('q_pi_star', q_pi, '%.17g')):
        path = op.join(out_dir, name + '.csv')
        np.savetxt(path, np.column_stack((env.cells, values)), delimiter=',',
                   header=','.join(header), comments='',
                   fmt=['%d', '%d'] + [fmt] * env.num_actions)
        paths[name] = path

    path = op.join(out_dir, 'optimal_policy.txt')
    with open(path, 'w') as f:
        f.write(env.render_policy(greedy) + '\n')
    paths['optimal_policy'] = path
    logger.info("wrote oracle tables to %s", out_dir)
    return paths
