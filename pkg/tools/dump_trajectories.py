#!/usr/bin/env python3
"""Sample trajectories for an experiment file and dump them step by step to CSV."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from dotenv import load_dotenv

load_dotenv(dotenv_path=Path(__file__).resolve().parents[1] / ".env")

from mopg.errors import ConfigurationError  # noqa: E402
from mopg.experiment import load_experiment  # noqa: E402
from mopg.mdp import dump_trajectories, sample_batch  # noqa: E402
from mopg.policy import load_theta  # noqa: E402
from mopg.streams import BATCH_EVAL, StreamFactory  # noqa: E402


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument('config', help='JSON experiment file')
    parser.add_argument('--count', type=int, default=4, help='Trajectories to sample')
    parser.add_argument('--episode', type=int, default=0, help='Episode counter for the streams')
    parser.add_argument('--seed', type=int, default=None, help='Master seed (defaults to the config)')
    parser.add_argument('--theta', type=Path, default=None, help='Policy snapshot written by a run')
    parser.add_argument('--out', type=Path, default=Path('trajectories.csv'))
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        config = load_experiment(args.config)
    except ConfigurationError as exc:
        print(f'✗ {exc}', file=sys.stderr)
        return 2
    env = config.make_env()
    seed = config.trainer.seed if args.seed is None else args.seed
    policy = load_theta(args.theta) if args.theta else config.initial_policy(env, seed)
    streams = StreamFactory(seed).streams(args.episode, BATCH_EVAL, args.count)
    batch = sample_batch(env, policy, config.trainer.schedule, streams)
    path = dump_trajectories(batch, args.out)
    print(f'✓ Wrote {len(batch)} trajectories ({batch.horizon} steps each) to {path}')
    return 0


if __name__ == '__main__':
    sys.exit(main())
