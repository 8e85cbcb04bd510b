import csv
import json
import os
import pytest
from app.exceptions import ConfigurationError
from app.experiments.forms import load_config
from app.models import ExperimentConfig

MDE_SCAN = '''
experiment = "mde-scan"
N = 1
z = [0.0, 0.5, 1.2]
eta = [1e-6, 1e-3, 0.1]
'''

LOCALLAW_SCAN = '''
experiment = "locallaw-scan"
N = 16
trials = 2
z = [0.0, 0.5]
eta_rule = "fixed"
eta = [0.3]
seed = 5
'''


def run(cli, *args):
    return cli.invoke(args=['lab', 'run', *[str(a) for a in args]])


def read_csv(path):
    with open(path, encoding='utf-8', newline='') as f:
        return list(csv.DictReader(f))


def test_load_config_defaults(write_config):
    '''Keys left out of the document take their defaults'''
    cfg = load_config(write_config(MDE_SCAN))
    assert isinstance(cfg, ExperimentConfig)
    assert cfg.field == 'complex'
    assert cfg.z == (0.0, 0.5, 1.2)
    assert cfg.noise is True
    assert cfg.dt is None


def test_load_config_seed_override(write_config):
    '''A command-line seed replaces the document seed'''
    assert load_config(write_config(LOCALLAW_SCAN), seed=11).seed == 11


def test_load_config_seed_range(write_config):
    '''Seeds cover the full unsigned 64-bit range'''
    path = write_config(LOCALLAW_SCAN)
    assert load_config(path, seed=2**64 - 1).seed == 2**64 - 1
    with pytest.raises(ConfigurationError) as e:
        load_config(path, seed=2**64)
    assert 'seed' in e.value.payload['fields']


@pytest.mark.parametrize('text, field', [
    ('experiment = "mde-scan"\n', 'N'),
    ('experiment = "mde-scan"\nN = 1\nxi = 0.5\n', 'xi'),
    ('experiment = "flow-drift"\nN = 512\n', 'N'),
    ('experiment = "flow-drift"\nN = 16\ntrials = 5\n', 'trials'),
    ('experiment = "mde-scan"\nN = 1\nnoise = "yes"\n', 'noise'),
    ('experiment = "locallaw-scan"\nN = 16\neta_rule = "fixed"\n', 'eta_rule'),
])
def test_load_config_rejects_invalid_values(write_config, text, field):
    '''Invalid values are reported per field'''
    with pytest.raises(ConfigurationError) as e:
        load_config(write_config(text))
    assert field in e.value.payload['fields']


def test_load_config_rejects_unknown_keys(write_config):
    '''Unknown keys are rejected by name'''
    with pytest.raises(ConfigurationError) as e:
        load_config(write_config(MDE_SCAN + 'colour = "blue"\n'))
    assert e.value.payload['fields'] == ['colour']


def test_run_missing_N_exits_2(cli, write_config):
    '''A config without N exits with code 2 and names the field'''
    result = run(cli, write_config('experiment = "mde-scan"\n'))
    assert result.exit_code == 2
    assert '"N"' in result.output


def test_run_malformed_toml_exits_2(cli, write_config):
    '''A TOML syntax error exits with code 2 and reports the line'''
    result = run(cli, write_config('experiment = "mde-scan"\nN = = 1\n'))
    assert result.exit_code == 2
    assert 'line 2' in result.output


def test_run_missing_file_exits_2(cli, tmp_path):
    '''An unreadable config exits with code 2'''
    assert run(cli, tmp_path / 'nope.toml').exit_code == 2


def test_mde_scan_writes_results(cli, write_config, tmp_path):
    '''An MDE scan passes every criterion and writes matching JSON and CSV files'''
    stem = tmp_path / 'scan'
    result = run(cli, write_config(MDE_SCAN), '--out', stem)
    assert result.exit_code == 0, result.output
    assert 'residual: pass' in result.output
    with open(f"{stem}.json", encoding='utf-8') as f:
        doc = json.load(f)
    assert doc['passed']
    assert doc['config']['experiment'] == 'mde-scan'
    assert doc['summary']['points'] == 9
    rows = read_csv(f"{stem}.csv")
    assert len(rows) == 9
    assert list(rows[0]) == doc['columns']
    assert max(float(r['residual']) for r in rows) <= 1e-12


def test_default_output_goes_to_results_dir(cli, lab_app, write_config):
    '''Without --out the files land under RESULTS_DIR named by experiment and seed'''
    result = run(cli, write_config(MDE_SCAN))
    assert result.exit_code == 0
    assert os.path.exists(os.path.join(lab_app.config['RESULTS_DIR'], 'mde-scan-seed0.csv'))


def test_reruns_are_byte_identical(cli, write_config, tmp_path):
    '''Same config and seed give identical tables, also when rerun from the JSON echo'''
    path = write_config(LOCALLAW_SCAN)
    assert run(cli, path, '--out', tmp_path / 'a').exit_code == 0
    assert run(cli, path, '--out', tmp_path / 'b').exit_code == 0
    assert run(cli, tmp_path / 'a.json', '--out', tmp_path / 'c').exit_code == 0
    a = (tmp_path / 'a.csv').read_bytes()
    assert a == (tmp_path / 'b.csv').read_bytes()
    assert a == (tmp_path / 'c.csv').read_bytes()
    assert b'\r\n' not in a


def test_seed_changes_the_sample(cli, write_config, tmp_path):
    '''--seed overrides the document and changes the drawn matrices'''
    path = write_config(LOCALLAW_SCAN)
    run(cli, path, '--out', tmp_path / 'a')
    run(cli, path, '--seed', 6, '--out', tmp_path / 'b')
    with open(tmp_path / 'b.json', encoding='utf-8') as f:
        assert json.load(f)['config']['seed'] == 6
    assert (tmp_path / 'a.csv').read_bytes() != (tmp_path / 'b.csv').read_bytes()


def test_plot_is_idempotent(cli, write_config, tmp_path):
    '''Projecting a view twice writes the same bytes'''
    stem = tmp_path / 'scan'
    run(cli, write_config(MDE_SCAN), '--out', stem)
    first = cli.invoke(args=['lab', 'plot', f"{stem}.json", 'rho-vs-eta'])
    assert first.exit_code == 0
    out = tmp_path / 'scan.rho-vs-eta.csv'
    data = out.read_bytes()
    assert cli.invoke(args=['lab', 'plot', f"{stem}.json", 'rho-vs-eta']).exit_code == 0
    assert out.read_bytes() == data
    rows = read_csv(out)
    assert list(rows[0]) == ['z_abs', 'eta', 'rho']
    assert len(rows) == 9


def test_plot_rejects_unknown_or_mismatched_views(cli, write_config, tmp_path):
    '''Unknown views and views of another experiment exit with code 2'''
    stem = tmp_path / 'scan'
    run(cli, write_config(MDE_SCAN), '--out', stem)
    assert cli.invoke(args=['lab', 'plot', f"{stem}.json", 'histogram']).exit_code == 2
    assert cli.invoke(args=['lab', 'plot', f"{stem}.json", 'stat-vs-N']).exit_code == 2


def test_locallaw_scan_view(cli, write_config, tmp_path):
    '''Z1-vs-z keeps one row per trial and grid point'''
    stem = tmp_path / 'scan'
    assert run(cli, write_config(LOCALLAW_SCAN), '--out', stem).exit_code == 0
    out = tmp_path / 'z1.csv'
    assert cli.invoke(args=['lab', 'plot', f"{stem}.json", 'Z1-vs-z', '--out', out]).exit_code == 0
    assert len(read_csv(out)) == 4


def test_deloc_view(cli, write_config, tmp_path):
    '''stat-vs-N has one row per size'''
    stem = tmp_path / 'deloc'
    text = 'experiment = "deloc"\nN = 16\nsizes = [16, 32]\ntrials = 2\n'
    result = run(cli, write_config(text), '--out', stem)
    assert result.exit_code in (0, 1)
    out = tmp_path / 'stat.csv'
    assert cli.invoke(args=['lab', 'plot', f"{stem}.json", 'stat-vs-N', '--out', out]).exit_code == 0
    rows = read_csv(out)
    assert [int(r['N']) for r in rows] == [16, 32]
    assert all(int(r['trials']) == 2 for r in rows)


def test_noiseless_flow_drift(cli, write_config, tmp_path):
    '''A noise-off drift run reports a first-order finite-difference residual'''
    stem = tmp_path / 'flow'
    text = ('experiment = "flow-drift"\nN = 16\nnoise = false\nz = [0.3]\nc = 2.0\n'
            'a_star = 0.9\nT = 0.01\ndt = 1e-3\nsteps = 32\n')
    result = run(cli, write_config(text), '--out', stem)
    assert result.exit_code in (0, 1)
    with open(f"{stem}.json", encoding='utf-8') as f:
        doc = json.load(f)
    assert doc['criteria']['drift']
    assert doc['criteria']['X1_bound']
    assert doc['summary']['X1_bound_fraction'] == 1.0
    assert doc['summary']['observed_order'] >= 0.9


def test_load_config_compare_T(write_config):
    '''compare_T is optional and must lie in (0, 1)'''
    text = 'experiment = "ensemble-compare"\nN = 8\n'
    assert load_config(write_config(text)).compare_T is None
    assert load_config(write_config(text + 'compare_T = 0.5\n')).compare_T == 0.5
    with pytest.raises(ConfigurationError) as e:
        load_config(write_config(text + 'compare_T = 1.0\n'))
    assert 'compare_T' in e.value.payload['fields']


def test_gaussian_divisible_comparison(cli, write_config, tmp_path):
    '''With compare_T set, side B is the Gaussian-divisible ensemble'''
    stem = tmp_path / 'compare'
    text = ('experiment = "ensemble-compare"\nN = 8\ntrials = 10\ndistribution = "rademacher"\n'
            'compare_distribution = "rademacher"\ncompare_T = 0.3\nc = 0.5\na_star = 0.9\n')
    result = run(cli, write_config(text), '--out', stem)
    assert result.exit_code in (0, 1)
    with open(f"{stem}.json", encoding='utf-8') as f:
        doc = json.load(f)
    assert doc['summary']['divisible_T'] == 0.3
    assert doc['config']['compare_T'] == 0.3
    assert len(read_csv(f"{stem}.csv")) == 10
