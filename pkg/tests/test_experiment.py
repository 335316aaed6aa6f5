"""Tests for JSON experiment files, defaults and command-line overrides."""

import json

import pytest

from mopg.errors import ConfigurationError
from mopg.experiment import apply_overrides, load_experiment, parse_experiment


def _write(tmp_path, text, name='exp.json'):
    path = tmp_path / name
    path.write_text(text, encoding='utf-8')
    return path


def test_wireless_defaults():
    """An env-only document picks up the wireless defaults."""
    config = parse_experiment({'env': {'kind': 'wireless'}})
    trainer = config.trainer
    assert trainer.schedule.horizon == 500 and trainer.schedule.gamma == 1.0
    assert trainer.n1 == trainer.n2 == 64 and trainer.episodes == 200
    assert trainer.utility.kind == 'alpha_fair_inverse' and trainer.utility.scale == 500.0
    assert trainer.step_rule.kind == 'adam' and trainer.step_rule.lr == 0.01
    assert trainer.eval_source.kind == 'n2_batch'
    assert config.env_params['num_users'] == 4
    assert config.combinations() == [(None, 0)]


def test_queuing_and_synthetic_defaults():
    """Queuing uses sum_log with lr 0.005; synthetic uses gamma 0.9 and H 20."""
    queuing = parse_experiment({'env': {'kind': 'queuing'}}).trainer
    assert queuing.utility.kind == 'sum_log' and queuing.step_rule.lr == 0.005
    synthetic = parse_experiment({'env': {'kind': 'synthetic'}}).trainer
    assert synthetic.schedule.gamma == 0.9 and synthetic.schedule.horizon == 20
    assert synthetic.utility.scale == 1.0


def test_environment_horizon_sets_trainer_horizon():
    """A horizon on the env block becomes the default trainer horizon and utility scale."""
    config = parse_experiment({'env': {'kind': 'wireless', 'horizon': 50}})
    assert config.trainer.schedule.horizon == 50
    assert config.trainer.utility.scale == 50.0


def test_environment_horizon_follows_trainer():
    """The echoed env horizon always equals the trainer horizon."""
    config = parse_experiment({'env': {'kind': 'wireless'}, 'trainer': {'horizon': 40}})
    assert config.env_params['horizon'] == 40
    assert config.effective['env']['horizon'] == 40


def test_conflicting_horizons_rejected():
    """An env horizon that disagrees with trainer.horizon is a config error."""
    text = ('{\n  "env": {"kind": "wireless", "horizon": 50},\n'
            '  "trainer": {"horizon": 100}\n}')
    with pytest.raises(ConfigurationError) as excinfo:
        parse_experiment(json.loads(text), text)
    assert excinfo.value.line == 3


def test_queue_config_has_no_horizon():
    """The queue horizon lives on the trainer block only."""
    with pytest.raises(ConfigurationError):
        parse_experiment({'env': {'kind': 'queuing', 'horizon': 500}})


@pytest.mark.parametrize('env', [
    {'kind': 'queuing', 'queue_cap': 2.5},
    {'kind': 'queuing', 'exact_model': 'yes'},
    {'kind': 'wireless', 'num_users': 4.0},
])
def test_non_integer_environment_counts_rejected(env):
    """Fractional or non-boolean environment parameters fail validation."""
    with pytest.raises(ConfigurationError):
        parse_experiment({'env': env})


def test_horizon_override_rederives_scale():
    """--H replaces a scale pinned for the old horizon when c follows H."""
    raw = {'env': {'kind': 'wireless'},
           'trainer': {'horizon': 500, 'utility': {'kind': 'alpha_fair_inverse', 'scale': 500}}}
    config = parse_experiment(raw, overrides={'H': 100})
    assert config.trainer.schedule.horizon == 100
    assert config.trainer.utility.scale == 100.0
    assert config.env_params['horizon'] == 100


def test_horizon_override_keeps_synthetic_scale():
    """Where c does not follow H, an explicit scale survives --H."""
    raw = {'env': {'kind': 'synthetic'}, 'trainer': {'utility': {'kind': 'sum_log', 'scale': 3.0}}}
    config = parse_experiment(raw, overrides={'H': 7})
    assert config.trainer.utility.scale == 3.0


def test_sweep_combinations():
    """Every N runs every seed, and the trainer is specialised per pair."""
    config = parse_experiment({'env': {'kind': 'synthetic'},
                               'sweep': {'N': [1, 4], 'seeds': [0, 1, 2]}})
    assert config.combinations() == [(1, 0), (1, 1), (1, 2), (4, 0), (4, 1), (4, 2)]
    trainer = config.trainer_for(4, 2)
    assert trainer.n1 == trainer.n2 == 4 and trainer.seed == 2
    assert config.trainer_for(None, 5).n1 == config.trainer.n1


def test_unknown_key_reports_line(tmp_path):
    """Unknown keys fail with the line they appear on."""
    text = '{\n  "env": {"kind": "synthetic"},\n  "trainer": {\n    "epochs": 3\n  }\n}\n'
    with pytest.raises(ConfigurationError) as excinfo:
        load_experiment(_write(tmp_path, text))
    assert excinfo.value.line == 4
    assert 'trainer.epochs' in str(excinfo.value)


def test_invalid_json_reports_line(tmp_path):
    """Malformed JSON carries the decoder's line number."""
    text = '{\n  "env": {"kind": "synthetic"},\n  "trainer": {\n}\n'
    with pytest.raises(ConfigurationError) as excinfo:
        load_experiment(_write(tmp_path, text))
    assert excinfo.value.line is not None


def test_missing_file_is_configuration_error(tmp_path):
    """A path that does not exist is reported, not raised as OSError."""
    with pytest.raises(ConfigurationError):
        load_experiment(tmp_path / 'nope.json')


@pytest.mark.parametrize('raw', [
    {},
    {'env': {'kind': 'mars'}},
    {'env': {'kind': 'wireless', 'num_users': 0}},
    {'env': {'kind': 'synthetic'}, 'trainer': {'n1': 0}},
    {'env': {'kind': 'synthetic'}, 'trainer': {'gamma': 1.5}},
    {'env': {'kind': 'synthetic'}, 'trainer': {'episodes': 'ten'}},
    {'env': {'kind': 'synthetic'}, 'trainer': {'variant': 'baseline'}},
    {'env': {'kind': 'synthetic'}, 'trainer': {'optimizer': {'kind': 'sgd'}}},
    {'env': {'kind': 'synthetic'}, 'trainer': {'utility': {'kind': 'max_min'}}},
    {'env': {'kind': 'synthetic'}, 'trainer': {'init_scale': -1}},
    {'env': {'kind': 'synthetic'}, 'sweep': {'N': [0]}},
    {'env': {'kind': 'synthetic'}, 'jobs': 0},
    {'env': {'kind': 'synthetic'}, 'diagnostics': {'gamma': 1.0}},
    {'env': {'kind': 'synthetic'}, 'diagnostics': {'horizons': []}},
])
def test_invalid_documents(raw):
    """Each malformed document is a ConfigurationError."""
    with pytest.raises(ConfigurationError):
        parse_experiment(raw)


def test_diagnostics_line_number():
    """Diagnostics errors point at the offending key."""
    text = '{\n  "env": {"kind": "synthetic"},\n  "diagnostics": {\n    "gamma": 1.0\n  }\n}'
    with pytest.raises(ConfigurationError) as excinfo:
        parse_experiment(json.loads(text), text)
    assert excinfo.value.line == 4


def test_overrides_take_precedence():
    """Flags replace file values; --N pins both batch sizes and the sweep."""
    raw = {'env': {'kind': 'synthetic'}, 'sweep': {'N': [1, 4], 'seeds': [0, 1]}}
    overrides = {'N': 16, 'K': 5, 'H': 7, 'gamma': 0.5, 'seed': 3, 'lr': 0.1,
                 'optimizer': 'constant', 'out': 'elsewhere', 'jobs': 2, 'utility': None}
    config = parse_experiment(raw, overrides=overrides)
    assert config.combinations() == [(16, 3)]
    trainer = config.trainer
    assert trainer.n1 == trainer.n2 == 16 and trainer.episodes == 5
    assert trainer.schedule.horizon == 7 and trainer.schedule.gamma == 0.5
    assert trainer.step_rule.kind == 'constant' and trainer.step_rule.lr == 0.1
    assert config.output == 'elsewhere' and config.jobs == 2


def test_override_leaves_input_untouched():
    """apply_overrides works on a copy."""
    raw = {'env': {'kind': 'wireless', 'num_users': 2, 'good_rates': [1, 1], 'bad_rates': [0, 0]}}
    changed = apply_overrides(raw, {'env': 'queuing'})
    assert changed['env'] == {'kind': 'queuing'}
    assert raw['env']['num_users'] == 2
    assert apply_overrides(raw, {'env': 'wireless'})['env']['num_users'] == 2


def test_utility_override_resets_block():
    """Switching the utility kind drops parameters meant for the old kind."""
    raw = {'env': {'kind': 'synthetic'},
           'trainer': {'utility': {'kind': 'weighted_sum', 'weights': [1, 2]}}}
    config = parse_experiment(raw, overrides={'utility': 'sum_log'})
    assert config.trainer.utility.kind == 'sum_log' and config.trainer.utility.weights is None


def test_effective_config_round_trip(tmp_path):
    """effective_config.json parses back to the same experiment."""
    config = parse_experiment({'env': {'kind': 'wireless'}, 'sweep': {'N': [4], 'seeds': [0, 1]},
                               'output': str(tmp_path)})
    path = config.write_effective(tmp_path)
    again = load_experiment(path)
    assert again.effective == config.effective
    assert again.trainer == config.trainer
    assert again.combinations() == config.combinations()


def test_default_output_under_output_dir():
    """Without an output key the run lands under the configured output directory."""
    config = parse_experiment({'env': {'kind': 'queuing'}})
    assert config.output.endswith('queuing')
