"""
JSON experiment files.

Layout (every block optional except ``env``)::

    {
      "env": {"kind": "wireless", ...environment parameters},
      "trainer": {"episodes": 200, "n1": 64, "n2": 64, "horizon": 500, "gamma": 1.0,
                  "seed": 0, "init_scale": 0.0, "variant": "reward_to_go",
                  "optimizer": {"kind": "adam", "lr": 0.01},
                  "utility": {"kind": "alpha_fair_inverse", "scale": 500},
                  "eval_objective_source": {"kind": "n2_batch"}},
      "sweep": {"N": [1, 4, 16, 64], "seeds": [0, 1, 2]},
      "diagnostics": {"gamma": 0.9, "horizons": [5, 10, 20], ...},
      "output": "runs/wireless",
      "jobs": 1
    }

Missing values are filled from per-environment defaults; the filled document
is what ``effective_config.json`` echoes.
"""
import copy
import dataclasses
from contextlib import contextmanager
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Tuple, Union

from .config import Config
from .envs import ENVIRONMENTS, Environment, QueueConfig, WirelessConfig, make_environment
from .errors import ConfigurationError
from .estimator import VARIANTS
from .mdp import DiscountSchedule
from .policy import PolicyParams, init_policy
from .trainer import EVAL_SOURCES, STEP_RULES, EvalSource, StepRuleSpec, TrainerConfig
from .utility import KINDS, UtilitySpec

TOP_KEYS = ('env', 'trainer', 'sweep', 'diagnostics', 'output', 'jobs')
TRAINER_KEYS = ('episodes', 'n1', 'n2', 'horizon', 'gamma', 'seed', 'init_scale', 'variant',
                'optimizer', 'utility', 'eval_objective_source')
OPTIMIZER_KEYS = ('kind', 'lr', 'beta1', 'beta2', 'eps')
UTILITY_KEYS = ('kind', 'scale', 'clamp_floor', 'weights')
EVAL_KEYS = ('kind', 'size')
SWEEP_KEYS = ('N', 'seeds')
DIAGNOSTIC_KEYS = ('gamma', 'horizon', 'horizons', 'n2_values', 'reps', 'variance_n2',
                   'variance_samples', 'agreement_n', 'agreement_repeats', 'existence_samples',
                   'tail_tol', 'seed')

ENV_PARAMS = {
    'wireless': WirelessConfig,
    'queuing': QueueConfig,
    'synthetic': None,
}

# horizon, gamma, utility kind, whether the utility scale follows H, Adam lr
ENV_DEFAULTS = {
    'wireless': (500, 1.0, 'alpha_fair_inverse', True, 0.01),
    'queuing': (500, 1.0, 'sum_log', True, 0.005),
    'synthetic': (20, 0.9, 'sum_log', False, 0.01),
}

DEFAULT_EPISODES = 200
DEFAULT_N = 64

DIAGNOSTIC_MINIMUMS = {'variance_samples': 2, 'existence_samples': 2, 'seed': 0}

DIAGNOSTIC_DEFAULTS = {
    'gamma': 0.9,
    'horizon': 20,
    'horizons': [5, 10, 20],
    'n2_values': [4, 16, 64, 256],
    'reps': 100_000,
    'variance_n2': 64,
    'variance_samples': 20000,
    'agreement_n': 20000,
    'agreement_repeats': 10,
    'existence_samples': 10000,
    'tail_tol': 1e-10,
    'seed': 0,
}


class _Locator:
    """Maps a key path to the 1-based line where it appears in the source text."""

    def __init__(self, text: Optional[str]):
        self.text = text or ''

    def line(self, *path: str) -> Optional[int]:
        pos = 0
        for key in path:
            match = re.compile(r'"%s"\s*:' % re.escape(key)).search(self.text, pos)
            if match is None:
                return None
            pos = match.start()
        return self.text.count('\n', 0, pos) + 1 if path else None


@dataclass(frozen=True)
class DiagnosticsConfig:
    gamma: float
    horizon: int
    horizons: Tuple[int, ...]
    n2_values: Tuple[int, ...]
    reps: int
    variance_n2: int
    variance_samples: int
    agreement_n: int
    agreement_repeats: int
    existence_samples: int
    tail_tol: float
    seed: int


@dataclass(frozen=True)
class ExperimentConfig:
    env_kind: str
    env_params: Dict[str, Any]
    trainer: TrainerConfig
    init_scale: float
    sweep_n: Tuple[int, ...]
    seeds: Tuple[int, ...]
    diagnostics: DiagnosticsConfig
    output: str
    jobs: int
    effective: Dict[str, Any]

    def make_env(self) -> Environment:
        return make_environment(self.env_kind, **self.env_params)

    def initial_policy(self, env: Environment, seed: int) -> PolicyParams:
        return init_policy(env.spec.num_states, env.spec.num_actions, self.init_scale, seed)

    def trainer_for(self, n: Optional[int], seed: int) -> TrainerConfig:
        """The trainer block with N1 = N2 = n (kept as written when n is None) and ``seed``."""
        if n is None:
            return dataclasses.replace(self.trainer, seed=seed)
        return dataclasses.replace(self.trainer, n1=n, n2=n, seed=seed)

    def combinations(self) -> List[Tuple[Optional[int], int]]:
        """(N, seed) pairs in output order; N is None without a sweep."""
        sizes: Tuple[Optional[int], ...] = self.sweep_n or (None,)
        return [(n, seed) for n in sizes for seed in self.seeds]

    def write_effective(self, directory: Union[str, Path]) -> Path:
        path = Path(directory) / 'effective_config.json'
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.effective, indent=2) + '\n', encoding='utf-8')
        return path


# ---------------------------------------------------------------- parsing helpers

def _check_keys(block: Dict[str, Any], allowed: Iterable[str], where: Tuple[str, ...],
                locate: _Locator):
    if not isinstance(block, dict):
        raise ConfigurationError(f"'{'.'.join(where)}' must be an object", locate.line(*where))
    for key in block:
        if key not in allowed:
            raise ConfigurationError(f"unknown key '{'.'.join(where + (key,))}'",
                                     locate.line(*where, key))


def _number(block, key, where, locate, integer=False):
    raw = block[key]
    ok = isinstance(raw, int) if integer else isinstance(raw, (int, float))
    if isinstance(raw, bool) or not ok:
        kind = 'an integer' if integer else 'a number'
        raise ConfigurationError(f"'{'.'.join(where + (key,))}' must be {kind}, got {raw!r}",
                                 locate.line(*where, key))
    return int(raw) if integer else float(raw)


def _int_list(block, key, where, locate) -> List[int]:
    raw = block[key]
    if isinstance(raw, int) and not isinstance(raw, bool):
        raw = [raw]
    if (not isinstance(raw, list) or not raw
            or any(isinstance(v, bool) or not isinstance(v, int) for v in raw)):
        raise ConfigurationError(f"'{'.'.join(where + (key,))}' must be a non-empty list of integers",
                                 locate.line(*where, key))
    return list(raw)


@contextmanager
def _anchored(where: Tuple[str, ...], locate: _Locator) -> Iterator[None]:
    """Re-raise ConfigurationError from a constructor with the block's line attached."""
    try:
        yield
    except ConfigurationError as exc:
        if exc.line is not None:
            raise
        raise ConfigurationError(str(exc), locate.line(*where)) from exc


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    return value


# ---------------------------------------------------------------- defaults

def _fill_env(raw: Dict[str, Any], locate: _Locator) -> Dict[str, Any]:
    env = raw.get('env')
    if env is None:
        raise ConfigurationError("missing required block 'env'")
    if not isinstance(env, dict) or 'kind' not in env:
        raise ConfigurationError("'env' must be an object with a 'kind'", locate.line('env'))
    kind = env['kind']
    if kind not in ENVIRONMENTS:
        raise ConfigurationError(
            f"unknown environment '{kind}' (choose from {', '.join(sorted(ENVIRONMENTS))})",
            locate.line('env', 'kind'))
    params_cls = ENV_PARAMS[kind]
    allowed = ['kind'] + ([f.name for f in dataclasses.fields(params_cls)] if params_cls else [])
    _check_keys(env, allowed, ('env',), locate)
    params = {k: v for k, v in env.items() if k != 'kind'}
    if params_cls is not None:
        with _anchored(('env',), locate):
            try:
                filled = dataclasses.asdict(params_cls(**params))
            except TypeError as exc:
                raise ConfigurationError(f'bad environment parameters: {exc}') from exc
        params = {k: _jsonable(v) for k, v in filled.items()}
    return dict(kind=kind, **params)


def _fill_trainer(raw: Dict[str, Any], env: Dict[str, Any], locate: _Locator) -> Dict[str, Any]:
    block = copy.deepcopy(raw.get('trainer', {}))
    _check_keys(block, TRAINER_KEYS, ('trainer',), locate)
    horizon, gamma, utility_kind, scale_is_h, lr = ENV_DEFAULTS[env['kind']]
    horizon = env.get('horizon', horizon)
    block.setdefault('episodes', DEFAULT_EPISODES)
    block.setdefault('n1', DEFAULT_N)
    block.setdefault('n2', block['n1'])
    block.setdefault('horizon', horizon)
    block.setdefault('gamma', gamma)
    block.setdefault('seed', 0)
    block.setdefault('init_scale', 0.0)
    block.setdefault('variant', 'reward_to_go')

    optimizer = block.setdefault('optimizer', {})
    _check_keys(optimizer, OPTIMIZER_KEYS, ('trainer', 'optimizer'), locate)
    optimizer.setdefault('kind', 'adam')
    optimizer.setdefault('lr', lr)
    for key, default in (('beta1', 0.9), ('beta2', 0.999), ('eps', 1e-8)):
        optimizer.setdefault(key, default)

    utility = block.setdefault('utility', {})
    _check_keys(utility, UTILITY_KEYS, ('trainer', 'utility'), locate)
    utility.setdefault('kind', utility_kind)
    if 'scale' not in utility:
        h = block['horizon']
        use_h = scale_is_h and utility['kind'] != 'weighted_sum' and isinstance(h, int)
        utility['scale'] = float(h) if use_h else 1.0
    utility.setdefault('clamp_floor', 1e-6)

    source = block.setdefault('eval_objective_source', {})
    _check_keys(source, EVAL_KEYS, ('trainer', 'eval_objective_source'), locate)
    source.setdefault('kind', 'n2_batch')
    source.setdefault('size', 0)
    return block


def _fill_sweep(raw: Dict[str, Any], trainer: Dict[str, Any], locate: _Locator) -> Dict[str, Any]:
    block = copy.deepcopy(raw.get('sweep') or {})
    _check_keys(block, SWEEP_KEYS, ('sweep',), locate)
    block.setdefault('N', [])
    block.setdefault('seeds', [trainer['seed']])
    return block


def _fill_diagnostics(raw: Dict[str, Any], locate: _Locator) -> Dict[str, Any]:
    block = copy.deepcopy(raw.get('diagnostics', {}))
    _check_keys(block, DIAGNOSTIC_KEYS, ('diagnostics',), locate)
    for key, default in DIAGNOSTIC_DEFAULTS.items():
        block.setdefault(key, copy.deepcopy(default))
    return block


# ---------------------------------------------------------------- building

def _build_trainer(block: Dict[str, Any], locate: _Locator) -> TrainerConfig:
    where = ('trainer',)
    ints = {k: _number(block, k, where, locate, integer=True)
            for k in ('episodes', 'n1', 'n2', 'horizon', 'seed')}
    gamma = _number(block, 'gamma', where, locate)
    if block['variant'] not in VARIANTS:
        raise ConfigurationError(f"unknown estimator variant '{block['variant']}'",
                                 locate.line('trainer', 'variant'))

    opt_where = where + ('optimizer',)
    optimizer = block['optimizer']
    if optimizer['kind'] not in STEP_RULES:
        raise ConfigurationError(f"unknown optimizer '{optimizer['kind']}'",
                                 locate.line(*opt_where, 'kind'))
    with _anchored(opt_where, locate):
        step_rule = StepRuleSpec(
            optimizer['kind'],
            *(_number(optimizer, k, opt_where, locate) for k in ('lr', 'beta1', 'beta2', 'eps')),
        )

    util_where = where + ('utility',)
    utility = block['utility']
    if utility['kind'] not in KINDS:
        raise ConfigurationError(f"unknown utility '{utility['kind']}'",
                                 locate.line(*util_where, 'kind'))
    weights = utility.get('weights')
    if weights is not None and (not isinstance(weights, list)
                                or any(not isinstance(w, (int, float)) for w in weights)):
        raise ConfigurationError('utility weights must be a list of numbers',
                                 locate.line(*util_where, 'weights'))
    with _anchored(util_where, locate):
        utility_spec = UtilitySpec(
            utility['kind'],
            _number(utility, 'scale', util_where, locate),
            _number(utility, 'clamp_floor', util_where, locate),
            tuple(weights) if weights is not None else None,
        )

    eval_where = where + ('eval_objective_source',)
    source = block['eval_objective_source']
    if source['kind'] not in EVAL_SOURCES:
        raise ConfigurationError(f"unknown eval_objective_source '{source['kind']}'",
                                 locate.line(*eval_where, 'kind'))
    with _anchored(eval_where, locate):
        eval_source = EvalSource(source['kind'], _number(source, 'size', eval_where, locate, True))

    with _anchored(where, locate):
        return TrainerConfig(
            episodes=ints['episodes'], n1=ints['n1'], n2=ints['n2'],
            schedule=DiscountSchedule(gamma, ints['horizon']),
            utility=utility_spec, step_rule=step_rule, seed=ints['seed'],
            eval_source=eval_source, variant=block['variant'],
        )


def _build_diagnostics(block: Dict[str, Any], locate: _Locator) -> DiagnosticsConfig:
    where = ('diagnostics',)
    gamma = _number(block, 'gamma', where, locate)
    if not 0.0 < gamma < 1.0:
        raise ConfigurationError(f'diagnostics need gamma in (0, 1), got {gamma}',
                                 locate.line(*where, 'gamma'))
    ints = {}
    for key in ('horizon', 'reps', 'variance_n2', 'variance_samples', 'agreement_n',
                'agreement_repeats', 'existence_samples', 'seed'):
        ints[key] = _number(block, key, where, locate, integer=True)
        minimum = DIAGNOSTIC_MINIMUMS.get(key, 1)
        if ints[key] < minimum:
            raise ConfigurationError(f"'diagnostics.{key}' must be >= {minimum}",
                                     locate.line(*where, key))
    lists = {}
    for key in ('horizons', 'n2_values'):
        lists[key] = tuple(_int_list(block, key, where, locate))
        if min(lists[key]) < 1:
            raise ConfigurationError(f"'diagnostics.{key}' entries must be >= 1",
                                     locate.line(*where, key))
    tol = _number(block, 'tail_tol', where, locate)
    if not tol > 0:
        raise ConfigurationError('tail_tol must be > 0', locate.line(*where, 'tail_tol'))
    return DiagnosticsConfig(gamma=gamma, tail_tol=tol, **ints, **lists)


def apply_overrides(raw: Dict[str, Any], overrides: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    """Fold command-line flags (None means not given) into the raw document."""
    raw = copy.deepcopy(raw)
    if not overrides:
        return raw
    given = {k: v for k, v in overrides.items() if v is not None}
    if 'env' in given:
        current = raw.get('env') if isinstance(raw.get('env'), dict) else {}
        if current.get('kind') != given['env']:
            raw['env'] = {'kind': given['env']}
    trainer = raw.setdefault('trainer', {})
    if not isinstance(trainer, dict):
        return raw
    for flag, key in (('K', 'episodes'), ('H', 'horizon'), ('gamma', 'gamma')):
        if flag in given:
            trainer[key] = given[flag]
    if 'N' in given:
        trainer['n1'] = trainer['n2'] = given['N']
        raw.setdefault('sweep', {})
        if isinstance(raw['sweep'], dict):
            raw['sweep']['N'] = [given['N']]
    if 'seed' in given:
        trainer['seed'] = given['seed']
        if isinstance(raw.get('sweep'), dict):
            raw['sweep']['seeds'] = [given['seed']]
    if 'lr' in given:
        trainer.setdefault('optimizer', {})['lr'] = given['lr']
    if 'optimizer' in given:
        trainer.setdefault('optimizer', {})['kind'] = given['optimizer']
    if 'utility' in given:
        utility = trainer.get('utility') if isinstance(trainer.get('utility'), dict) else {}
        if utility.get('kind') != given['utility']:
            trainer['utility'] = {'kind': given['utility']}
    if 'H' in given:
        env = raw.get('env') if isinstance(raw.get('env'), dict) else {}
        if 'horizon' in env:
            env['horizon'] = given['H']
        utility = trainer.get('utility')
        scale_is_h = env.get('kind') in ENV_DEFAULTS and ENV_DEFAULTS[env['kind']][3]
        if scale_is_h and isinstance(utility, dict) and utility.get('kind') != 'weighted_sum':
            # c follows H; a scale pinned in the file was derived from the old H
            utility.pop('scale', None)
    if 'out' in given:
        raw['output'] = given['out']
    if 'jobs' in given:
        raw['jobs'] = given['jobs']
    return raw


def parse_experiment(raw: Dict[str, Any], text: Optional[str] = None,
                     overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Validate a raw document (plus overrides) into an ExperimentConfig."""
    locate = _Locator(text)
    if not isinstance(raw, dict):
        raise ConfigurationError('experiment file must hold a JSON object', 1 if text else None)
    _check_keys(raw, TOP_KEYS, (), locate)
    raw = apply_overrides(raw, overrides)

    env = _fill_env(raw, locate)
    trainer_block = _fill_trainer(raw, env, locate)
    sweep = _fill_sweep(raw, trainer_block, locate)
    diagnostics_block = _fill_diagnostics(raw, locate)
    output = raw.get('output', str(Path(Config.OUTPUT_DIR) / env['kind']))
    if not isinstance(output, str) or not output:
        raise ConfigurationError("'output' must be a non-empty path", locate.line('output'))
    jobs = raw.get('jobs', Config.JOBS)
    if isinstance(jobs, bool) or not isinstance(jobs, int) or jobs == 0:
        raise ConfigurationError("'jobs' must be a non-zero integer", locate.line('jobs'))

    trainer = _build_trainer(trainer_block, locate)
    if 'horizon' in env:
        raw_env, raw_trainer = raw['env'], raw.get('trainer') or {}
        if ('horizon' in raw_env and 'horizon' in raw_trainer
                and raw_env['horizon'] != raw_trainer['horizon']):
            raise ConfigurationError(
                f"'env.horizon' ({raw_env['horizon']}) disagrees with "
                f"'trainer.horizon' ({raw_trainer['horizon']})", locate.line('trainer', 'horizon'))
        env['horizon'] = trainer.schedule.horizon
    init_scale = _number(trainer_block, 'init_scale', ('trainer',), locate)
    if init_scale < 0:
        raise ConfigurationError('init_scale must be >= 0', locate.line('trainer', 'init_scale'))
    sweep_n = tuple(_int_list(sweep, 'N', ('sweep',), locate)) if sweep['N'] else ()
    seeds = tuple(_int_list(sweep, 'seeds', ('sweep',), locate))
    if any(n < 1 for n in sweep_n) or any(s < 0 for s in seeds):
        raise ConfigurationError('sweep N values must be >= 1 and seeds >= 0', locate.line('sweep'))
    diagnostics = _build_diagnostics(diagnostics_block, locate)

    effective = {
        'env': env,
        'trainer': trainer_block,
        'sweep': {'N': list(sweep_n), 'seeds': list(seeds)},
        'diagnostics': diagnostics_block,
        'output': output,
        'jobs': jobs,
    }
    return ExperimentConfig(
        env_kind=env['kind'],
        env_params={k: v for k, v in env.items() if k != 'kind'},
        trainer=trainer,
        init_scale=init_scale,
        sweep_n=sweep_n,
        seeds=seeds,
        diagnostics=diagnostics,
        output=output,
        jobs=jobs,
        effective=effective,
    )


def load_experiment(path: Union[str, Path],
                    overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise ConfigurationError(f'cannot read experiment file {path}: {exc}') from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f'invalid JSON: {exc.msg}', exc.lineno) from exc
    return parse_experiment(raw, text, overrides)

