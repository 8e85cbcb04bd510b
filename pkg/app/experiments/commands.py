import json
import logging
import os
from functools import wraps

import click
from flask import current_app

from . import experiments
from .forms import load_config
from .results import emit_plot_data, write_record
from .runners import run_experiment
from app.exceptions import LabError


def exits_on_lab_error(f):
    '''
    Reports a LabError as JSON on stderr and exits with its code:
    2 for configuration problems, 3 for numerical failures.
    '''
    @wraps(f)
    def decorated_function(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return f(*args, **kwargs)
        except LabError as e:
            logging.error("%s: %s", type(e).__name__, e.message)
            click.echo(json.dumps(e.to_dict(), default=str, sort_keys=True), err=True)
            ctx.exit(e.exit_code)
    return decorated_function


@experiments.cli.command('run')
@click.argument('config_path', type=click.Path(dir_okay=False))
@click.option('--seed', type=int, default=None, help='Override the config seed.')
@click.option('--out', default=None, help='Output stem; writes <out>.json and <out>.csv.')
@exits_on_lab_error
def run(config_path, seed, out):
    '''Run the experiment CONFIG_PATH describes. Exit 0 iff every criterion passes.'''
    conf = current_app.config
    defaults = {'envelope_factor': conf['ENVELOPE_FACTOR'], 'statistic_cap': conf['STATISTIC_CAP'],
                'ks_cap': conf['KS_CAP'], 'a_star': conf['A_STAR']}
    cfg = load_config(config_path, seed=seed, defaults=defaults)
    record = run_experiment(cfg, threads=current_app.config['THREADS'])
    stem = out or cfg.output or os.path.join(current_app.config['RESULTS_DIR'], f"{cfg.experiment}-seed{cfg.seed}")
    json_path, csv_path = write_record(record, stem)
    click.echo(json_path)
    click.echo(csv_path)
    for name, ok in record.criteria.items():
        click.echo(f"{name}: {'pass' if ok else 'FAIL'}")
    click.get_current_context().exit(0 if record.passed else 1)


@experiments.cli.command('plot')
@click.argument('result_path', type=click.Path(dir_okay=False))
@click.argument('view')
@click.option('--out', default=None, help='Table path; defaults to <result>.<view>.csv.')
@exits_on_lab_error
def plot(result_path, view, out):
    '''Project the rows of RESULT_PATH into the table VIEW.'''
    click.echo(emit_plot_data(result_path, view, out))
