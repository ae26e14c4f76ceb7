import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from loguru import logger

from ..errors import (
    ConfigError,
    InconsistentConstants,
    OptslideError,
    ResultsWriteError,
)
from .commands import (
    CompareTable1,
    EmitPlotData,
    RunExperiment,
    ScaleExperiment,
)
from .config import ExperimentConfig, load_config
from .experiments import ExperimentHandler
from .results import emit_results, emit_summary, parse_json

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3

LOG_LEVELS = {'debug': 'DEBUG', 'info': 'INFO'}


def configure_logging() -> None:
    level = LOG_LEVELS.get(os.environ.get('OPTSLIDE_LOG', 'info').lower(), 'INFO')
    logger.remove()
    logger.add(sys.stderr, level=level)
    logger.enable('optslide')


def _values(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(',') if item.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f'not a comma-separated list: {text}') from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='optslide',
        description='Oracle-counting benchmarks for accelerated gradient sliding.',
    )
    commands = parser.add_subparsers(dest='command', required=True)

    def experiment(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument('--config', type=Path, required=True)
        sub.add_argument('--out', type=Path, required=True)
        sub.add_argument('--format', choices=('csv', 'json'), default='csv')
        sub.add_argument(
            '--seed', type=int, action='append',
            help='overrides the config seeds; repeat for several',
        )
        return sub

    experiment('run', 'run every method for every seed')
    scale = experiment('scale', 'fit counter scaling along one axis')
    scale.add_argument('--axis', choices=('m', 'n', 's', 'mu'), required=True)
    scale.add_argument('--values', type=_values, required=True)
    experiment('table1', 'weighted-cost comparison of FGM and sliding')

    plot = commands.add_parser('plot', help='write gnuplot data files')
    plot.add_argument('--results', type=Path, required=True)
    plot.add_argument('--out', type=Path, required=True)

    schema = commands.add_parser('schema', help='print the config JSON schema')
    schema.add_argument('--out', type=Path)
    return parser


def _summary_path(out: Path) -> Path:
    return out.with_name(out.name + '.summary.json')


def _config(args: argparse.Namespace) -> ExperimentConfig:
    return load_config(args.config).with_seeds(args.seed)


def execute(args: argparse.Namespace) -> None:
    handler = ExperimentHandler()
    if args.command == 'schema':
        text = json.dumps(ExperimentConfig.model_json_schema(), indent=2) + '\n'
        if args.out is None:
            sys.stdout.write(text)
        else:
            try:
                args.out.write_text(text)
            except OSError as exc:
                raise ResultsWriteError(f'cannot write {args.out}: {exc}') from exc
        return
    if args.command == 'plot':
        try:
            rows = parse_json(args.results.read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f'cannot read results {args.results}: {exc}') from exc
        handler(EmitPlotData(tuple(rows), args.out))
        return
    config = _config(args)
    if args.command == 'run':
        outcome = handler(RunExperiment(config))
    elif args.command == 'scale':
        outcome = handler(ScaleExperiment(config, args.axis, tuple(args.values)))
    else:
        outcome = handler(CompareTable1(config))
    emit_results(outcome.rows, args.format, args.out)
    if outcome.summary:
        emit_summary(outcome.summary, _summary_path(args.out))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        execute(args)
    except (ConfigError, InconsistentConstants) as exc:
        logger.error('config error: {}', exc)
        print(f'optslide: {exc}', file=sys.stderr)
        return EXIT_CONFIG
    except ResultsWriteError as exc:
        logger.error('write error: {}', exc)
        print(f'optslide: {exc}', file=sys.stderr)
        return EXIT_IO
    except OptslideError as exc:
        logger.error('cannot run: {!r}', exc)
        print(f'optslide: {exc}', file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
