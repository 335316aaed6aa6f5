#!/usr/bin/env python3
"""
Experiment front end.

Usage:
    python3 -m mopg.main run configs/wireless.json            # train (N / seed sweep)
    python3 -m mopg.main run configs/queuing.json --N 16 --K 50
    python3 -m mopg.main diagnose configs/synthetic.json      # exact-oracle diagnostics

Exit codes: 0 success, 2 invalid config or unsupported environment,
3 training aborted, 4 a diagnostic bound or check failed.
"""
import argparse
import csv
import sys
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .config import Config
from .envs import make_bandit
from .errors import ArgumentError, ConfigurationError, TrainingAborted, UnsupportedEnvironmentError
from .experiment import ExperimentConfig, load_experiment
from .logger import logger
from .mdp import DiscountSchedule
from .oracle import (
    bias_existence,
    estimate_variance,
    estimator_check,
    log_log_slope,
    measure_bias_terms,
    truncation_gap,
)
from .policy import save_theta
from .trainer import train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORTED = 3
EXIT_CHECK_FAILED = 4

SLOPE_RANGE = (-0.75, -0.25)
SUMMARY_HEADER = ['episode', 'N', 'mean_objective', 'std_objective', 'num_seeds']


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Dict[str, object]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as handle:
        writer = csv.DictWriter(handle, fieldnames=list(header))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return path


# ---------------------------------------------------------------- run

def _run_one(config: ExperimentConfig, n: Optional[int], seed: int, out_dir: Path) -> Dict[str, object]:
    """Train one (N, seed) combination and write its run CSV and theta snapshot."""
    env = config.make_env()
    trainer_config = config.trainer_for(n, seed)
    size = trainer_config.n1
    stem = f'env-{config.env_kind}_N{size}_seed{seed}'
    policy = config.initial_policy(env, seed)
    try:
        run_log = train(env, policy, trainer_config)
    except TrainingAborted as exc:
        if exc.run_log is not None:
            exc.run_log.to_csv(out_dir / f'run_{stem}.csv')
        return {'N': size, 'seed': seed, 'objectives': None, 'error': str(exc)}
    run_log.to_csv(out_dir / f'run_{stem}.csv')
    save_theta(policy, out_dir / f'theta_{stem}.csv')
    return {'N': size, 'seed': seed, 'objectives': run_log.objectives(), 'error': None}


def summarize(results: List[Dict[str, object]]) -> List[Dict[str, object]]:
    """Per (N, episode): mean and std (ddof=1, 0 for one seed) of the objective across seeds."""
    rows = []
    for size in dict.fromkeys(r['N'] for r in results):
        curves = [r['objectives'] for r in results if r['N'] == size and r['objectives'] is not None]
        if not curves:
            continue
        stacked = np.vstack(curves)
        ddof = 1 if stacked.shape[0] > 1 else 0
        means, stds = stacked.mean(axis=0), stacked.std(axis=0, ddof=ddof)
        for k in range(stacked.shape[1]):
            rows.append({'episode': k, 'N': size, 'mean_objective': float(means[k]),
                         'std_objective': float(stds[k]), 'num_seeds': stacked.shape[0]})
    return rows


def cmd_run(config_path: str, overrides: Optional[Dict[str, object]] = None) -> int:
    """Train every (N, seed) combination; write run CSVs, a summary and the effective config."""
    try:
        config = load_experiment(config_path, overrides)
    except ConfigurationError as exc:
        logger.error('Invalid experiment %s: %s', config_path, exc)
        print(f'✗ {config_path}: {exc}', file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(config.output)
    config.write_effective(out_dir)
    combos = config.combinations()
    logger.info('Running %d combination(s) of %s into %s (jobs=%d)',
                len(combos), config.env_kind, out_dir, config.jobs)
    results = Parallel(n_jobs=config.jobs)(
        delayed(_run_one)(config, n, seed, out_dir) for n, seed in combos
    )
    _write_rows(out_dir / 'summary.csv', SUMMARY_HEADER, summarize(results))

    failed = [r for r in results if r['error'] is not None]
    for r in failed:
        logger.error('Run N=%s seed=%s aborted: %s', r['N'], r['seed'], r['error'])
        print(f"✗ N={r['N']} seed={r['seed']}: {r['error']}", file=sys.stderr)
    if failed:
        return EXIT_ABORTED
    print(f'✓ {len(results)} run(s) written to {out_dir}')
    return EXIT_OK


# ---------------------------------------------------------------- diagnose

def _check(name: str, value: float, passed: bool) -> Dict[str, object]:
    if not passed:
        logger.warning('Diagnostic %s failed (value %.4g)', name, value)
    return {'check': name, 'value': float(value), 'passed': int(passed)}


def run_diagnostics(config: ExperimentConfig, out_dir: Path) -> List[Dict[str, object]]:
    """Write bias, variance, truncation and agreement tables; return the check rows."""
    diag = config.diagnostics
    env = config.make_env()
    model = env.require_model()
    utility = config.trainer.utility
    policy = config.initial_policy(env, diag.seed)
    schedule = DiscountSchedule(diag.gamma, diag.horizon)
    checks = []

    reports = []
    for horizon in sorted(set(diag.horizons) | {diag.horizon}):
        for n2 in diag.n2_values:
            reports.append(measure_bias_terms(env, policy, schedule.with_horizon(horizon), utility,
                                              n2, diag.reps, diag.seed, diag.tail_tol, config.jobs))
    rows = [r.as_row() for r in reports]
    _write_rows(out_dir / 'bias_terms.csv', list(rows[0]), rows)
    for r in reports:
        tag = f'N2={r.n2},H={r.horizon}'
        for term, ok in zip(('I', 'II', 'III'), r.within_bounds):
            checks.append(_check(f'bias_bound_{term}[{tag}]', getattr(r, f'magnitude_{term}'), ok))
        checks.append(_check(f'bias_triangle[{tag}]', r.total_bias, r.triangle_holds))

    at_horizon = [r for r in reports if r.horizon == diag.horizon]
    if not utility.is_linear and len(at_horizon) >= 2:
        slope = log_log_slope([r.n2 for r in at_horizon], [r.magnitude_I for r in at_horizon])
        checks.append(_check(f'bias_I_slope[H={diag.horizon}]', slope,
                             SLOPE_RANGE[0] <= slope <= SLOPE_RANGE[1]))

    variances = []
    for variant in ('reward_to_go', 'full_return'):
        var = estimate_variance(env, policy, schedule, utility, diag.variance_n2,
                                diag.variance_samples, diag.seed, variant)
        variances.append({'variant': variant, 'H': diag.horizon, 'samples': diag.variance_samples,
                          'variance': var})
        checks.append(_check(f'variance_finite[{variant}]', var, bool(np.isfinite(var))))
    _write_rows(out_dir / 'variance.csv', list(variances[0]), variances)
    logger.info('Gradient variance: reward_to_go %.4g, full_return %.4g',
                variances[0]['variance'], variances[1]['variance'])

    gaps = truncation_gap(model, policy, diag.gamma, diag.horizons, diag.tail_tol)
    _write_rows(out_dir / 'truncation.csv', ['H', 'gap', 'bound', 'within_bound'],
                [{'H': g.horizon, 'gap': g.gap, 'bound': g.bound, 'within_bound': int(g.within_bound)}
                 for g in gaps])
    for g in gaps:
        checks.append(_check(f'truncation[H={g.horizon}]', g.gap, g.within_bound))

    agreement = estimator_check(env, policy, schedule, utility, diag.agreement_n,
                                diag.agreement_n, diag.seed, diag.agreement_repeats)
    _write_rows(out_dir / 'agreement.csv', ['parameter', 'estimate', 'exact'],
                [{'parameter': i, 'estimate': float(e), 'exact': float(x)}
                 for i, (e, x) in enumerate(zip(agreement.omega, agreement.exact))])
    checks.append(_check('estimator_vs_exact', agreement.relative_error, agreement.passed))

    if not utility.is_linear:
        existence = bias_existence(make_bandit(), utility, DiscountSchedule(diag.gamma, 1),
                                   n2=1, samples=diag.existence_samples, seed=diag.seed)
        checks.append(_check('bias_existence', float(np.min(existence.z_scores)),
                             existence.detected()))

    _write_rows(out_dir / 'checks.csv', ['check', 'value', 'passed'], checks)
    return checks


def cmd_diagnose(config_path: str, overrides: Optional[Dict[str, object]] = None) -> int:
    try:
        config = load_experiment(config_path, overrides)
        out_dir = Path(config.output) / 'diagnostics'
        config.write_effective(out_dir)
        checks = run_diagnostics(config, out_dir)
    except (ConfigurationError, UnsupportedEnvironmentError, ArgumentError) as exc:
        logger.error('Cannot diagnose %s: %s', config_path, exc)
        print(f'✗ {config_path}: {exc}', file=sys.stderr)
        return EXIT_CONFIG

    failed = [c for c in checks if not c['passed']]
    if failed:
        for c in failed:
            print(f"✗ {c['check']}: {c['value']!r}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    print(f'✓ {len(checks)} diagnostic checks passed; tables in {out_dir}')
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Multi-objective policy-gradient experiments')
    subparsers = parser.add_subparsers(dest='command', help='Command to run')
    for name, text in (('run', 'Train (optionally sweeping N and seeds)'),
                       ('diagnose', 'Bias, variance and truncation diagnostics')):
        sub = subparsers.add_parser(name, help=text)
        sub.add_argument('config', help='JSON experiment file')
        sub.add_argument('--env', help='Environment kind')
        sub.add_argument('--N', type=int, help='Trajectories per batch (N1 = N2)')
        sub.add_argument('--K', type=int, help='Episodes')
        sub.add_argument('--H', type=int, help='Horizon')
        sub.add_argument('--gamma', type=float, help='Discount factor')
        sub.add_argument('--seed', type=int, help='Master seed')
        sub.add_argument('--lr', type=float, help='Learning rate / constant step size')
        sub.add_argument('--optimizer', choices=['adam', 'constant'], help='Step rule')
        sub.add_argument('--utility', help='Utility kind')
        sub.add_argument('--out', help='Output directory')
        sub.add_argument('--jobs', type=int, help='Parallel workers (-1 for all cores)')
    return parser


OVERRIDE_FLAGS = ('env', 'N', 'K', 'H', 'gamma', 'seed', 'lr', 'optimizer', 'utility', 'out', 'jobs')


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not Config.validate():
        logger.error('Runtime settings are invalid; check your .env file')
        return EXIT_CONFIG
    overrides = {flag: getattr(args, flag) for flag in OVERRIDE_FLAGS}
    if args.command == 'run':
        return cmd_run(args.config, overrides)
    if args.command == 'diagnose':
        return cmd_diagnose(args.config, overrides)
    parser.print_help()
    return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
