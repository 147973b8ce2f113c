"""Command-line surface: data generation, training, evaluation, ablation, rendering, gradient checks.

Every subcommand prints a JSON result on standard output and logs to
standard error. Exit codes: 0 on success, 1 when a run or validation fails,
2 on usage errors.
"""
import json
import sys
from dataclasses import fields
from typing import Any, Dict, List, Optional, Sequence

import click

from calvin.errors import CalvinError
from calvin.gradcheck import SUITES
from calvin.maze import MOTIONS
from calvin.training import TrainConfig
from App.config import PRESETS
from App.main import create_runtime
from App.services import ExperimentService

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2

_CHOICES = {
    'planner': ('calvin', 'vin'),
    'motion': tuple(sorted(MOTIONS)),
    'backbone': ('oracle', 'lpn'),
    'observability': ('full', 'partial'),
}
_ALIASES = {'observability': ('--obs',)}
_OPTIONAL_INTS = {'vin_hidden_actions', 'sample_cap', 'max_steps'}


class _Unset:
    """Marks an optional integer explicitly set to none on the command line."""


EXPLICIT_NONE = _Unset()


class OptionalInt(click.ParamType):
    name = 'integer|none'

    def convert(self, value, param, ctx):
        if isinstance(value, (int, _Unset)):
            return value
        if str(value).lower() == 'none':
            return EXPLICIT_NONE
        try:
            return int(value)
        except ValueError:
            self.fail(f"{value!r} is not an integer or 'none'", param, ctx)


def _train_option(field):
    flag = '--' + field.name.replace('_', '-')
    names = (flag,) + _ALIASES.get(field.name, ())
    help_text = f"Override {field.name} (default {field.default})"
    if field.name in _CHOICES:
        return click.option(*names, field.name, type=click.Choice(_CHOICES[field.name]), default=None, help=help_text)
    if isinstance(field.default, bool):
        return click.option(f"{flag}/--no-{flag[2:]}", field.name, default=None, help=help_text)
    if field.name in _OPTIONAL_INTS:
        return click.option(*names, field.name, type=OptionalInt(), default=None, help=help_text)
    kind = float if isinstance(field.default, float) else int
    return click.option(*names, field.name, type=kind, default=None, help=help_text)


def train_options(func):
    """Add one flag per training configuration field."""
    for field in reversed(fields(TrainConfig)):
        func = _train_option(field)(func)
    return func


def _overrides(params: Dict[str, Any]) -> Dict[str, Any]:
    names = {f.name for f in fields(TrainConfig)}
    chosen = {k: v for k, v in params.items() if k in names and v is not None}
    return {k: (None if v is EXPLICIT_NONE else v) for k, v in chosen.items()}


def _service(ctx: click.Context, params: Dict[str, Any]) -> ExperimentService:
    options = ctx.obj
    overrides = _overrides(params)
    if options.get('log_level'):
        overrides['LOG_LEVEL'] = options['log_level']
    config = create_runtime(overrides, options.get('config_file'), options.get('presets', ()))
    return ExperimentService(config, options.get('out_dir'))


def _finish(result: Dict[str, Any], quiet: bool = False) -> int:
    if not quiet:
        click.echo(json.dumps(result.get('details', result), sort_keys=True, indent=2, default=str))
    if result.get('status') != 'success':
        click.echo(f"Error: {result.get('message', 'unknown failure')}", err=True)
        return EXIT_FAILED
    return EXIT_OK


@click.group(help='Differentiable planning experiments')
@click.option('--config', 'config_file', type=click.Path(dir_okay=False), default=None, help='JSON configuration file')
@click.option(
    '--preset', 'presets', multiple=True, type=click.Choice(sorted(PRESETS)), help='Configuration preset (repeatable)'
)
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None, help='Output directory')
@click.option(
    '--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False), default=None
)
@click.pass_context
def calvin_cli(ctx, config_file, presets, out_dir, log_level):
    ctx.obj = {'config_file': config_file, 'presets': presets, 'out_dir': out_dir, 'log_level': log_level}


@calvin_cli.command('gen-data', help='Generate expert demonstrations')
@train_options
@click.option('--dataset', 'dataset_path', default=None, help='Output JSON-lines path')
@click.pass_context
def gen_data_command(ctx, dataset_path, **params):
    return _finish(_service(ctx, params).generate_data(dataset_path))


@calvin_cli.command('train', help='Train a planner on expert demonstrations')
@train_options
@click.option('--dataset', 'dataset_path', default=None, help='Demonstrations to train on')
@click.option('--quiet', is_flag=True, help='Suppress result output')
@click.pass_context
def train_command(ctx, dataset_path, quiet, **params):
    return _finish(_service(ctx, params).train(dataset_path), quiet)


@calvin_cli.command('eval', help='Success rate and collision preference on unseen mazes')
@train_options
@click.option('--checkpoint', 'checkpoint_path', default=None, help='Model checkpoint')
@click.option('--mazes', type=click.IntRange(min=1), default=None, help='Mazes per seed')
@click.option('--seeds', type=click.IntRange(min=1), default=None, help='Number of evaluation seeds')
@click.option('--policy', type=click.Choice(['planner', 'oracle', 'random']), default='planner')
@click.pass_context
def eval_command(ctx, checkpoint_path, mazes, seeds, policy, **params):
    seed_list = list(range(seeds)) if seeds else None
    return _finish(_service(ctx, params).evaluate(checkpoint_path, mazes, seed_list, policy))


@calvin_cli.command('ablate', help='Retrain with loss components removed and evaluate each variant')
@train_options
@click.option('--dataset', 'dataset_path', default=None)
@click.option('--mazes', type=click.IntRange(min=1), default=None)
@click.option('--seeds', type=click.IntRange(min=1), default=None)
@click.pass_context
def ablate_command(ctx, dataset_path, mazes, seeds, **params):
    seed_list = list(range(seeds)) if seeds else None
    return _finish(_service(ctx, params).ablate(dataset_path, mazes, seed_list))


@calvin_cli.command('render', help='Render value and reward maps of a trained model')
@train_options
@click.option('--checkpoint', 'checkpoint_path', default=None)
@click.option('--maze-seed', type=int, default=0, help='Evaluation maze to render')
@click.option('--step', 'steps', type=click.IntRange(min=0), multiple=True, help='Rollout step(s) to render')
@click.option('--png/--no-png', default=None, help='Also write PNG files')
@click.pass_context
def render_command(ctx, checkpoint_path, maze_seed, steps, png, **params):
    return _finish(_service(ctx, params).render(checkpoint_path, maze_seed, steps or (0,), png))


@calvin_cli.command('gradcheck', help='Finite-difference gradient checks')
@click.option('--seeds', type=click.IntRange(min=1), default=20)
@click.option('--suite', 'suites', type=click.Choice(SUITES), multiple=True, help='Suite(s) to run (default all)')
@click.pass_context
def gradcheck_command(ctx, seeds, suites):
    return _finish(_service(ctx, {}).gradcheck(seeds, suites or SUITES))


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line and return its exit code."""
    args: List[str] = list(sys.argv[1:] if argv is None else argv)
    try:
        rv = calvin_cli.main(args=args, prog_name='calvin', standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_FAILED
    except click.Abort:
        return EXIT_FAILED
    except (CalvinError, ValueError) as e:
        click.echo(f"Error: {e}", err=True)
        return EXIT_FAILED
    return rv if isinstance(rv, int) else EXIT_OK
