from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Sequence

from pydantic import BaseModel, ConfigDict, TypeAdapter

from ..errors import ResultsWriteError

Format = Literal['csv', 'json']

COLUMNS = (
    'method', 'n', 'm', 's', 'eps', 'L_used', 'grad_f_calls', 'grad_gk_calls',
    'wall_time_s', 'final_gap', 'converged', 'seed',
)


class ResultRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    method: str
    n: int
    m: int
    s: int
    eps: float
    L_used: float
    grad_f_calls: int
    grad_gk_calls: int
    wall_time_s: float
    final_gap: float
    converged: bool
    seed: int


Rows = TypeAdapter(List[ResultRow])


@dataclass
class Outcome:
    rows: List[ResultRow]
    summary: Dict[str, Any] = field(default_factory=dict)


def _cell(value: Any) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    return repr(value) if isinstance(value, float) else str(value)


def render_csv(rows: Sequence[ResultRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow([_cell(getattr(row, column)) for column in COLUMNS])
    return buffer.getvalue()


def render_json(rows: Sequence[ResultRow]) -> str:
    return json.dumps([row.model_dump() for row in rows], indent=2) + '\n'


def parse_json(text: str) -> List[ResultRow]:
    return Rows.validate_json(text)


def _write(path: Path, text: str) -> None:
    try:
        with open(path, 'w', newline='') as stream:
            stream.write(text)
    except OSError as exc:
        raise ResultsWriteError(f'cannot write {path}: {exc}') from exc


def emit_results(rows: Sequence[ResultRow], fmt: Format, path: Path) -> None:
    if not rows:
        raise ValueError('nothing to emit')
    _write(Path(path), render_csv(rows) if fmt == 'csv' else render_json(rows))


def emit_summary(summary: Dict[str, Any], path: Path) -> None:
    _write(Path(path), json.dumps(summary, indent=2, sort_keys=True) + '\n')


def write_plot_data(rows: Sequence[ResultRow], directory: Path) -> List[Path]:
    """One gnuplot data file per method: m, grad_f_calls, grad_gk_calls, final_gap."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ResultsWriteError(f'cannot create {directory}: {exc}') from exc
    written = []
    for method in sorted({row.method for row in rows}):
        selected = sorted(
            (row for row in rows if row.method == method),
            key=lambda row: (row.m, row.seed),
        )
        lines = ['# m grad_f_calls grad_gk_calls final_gap']
        lines.extend(
            f'{row.m} {row.grad_f_calls} {row.grad_gk_calls} {row.final_gap!r}'
            for row in selected
        )
        path = directory / f'{method.lower()}.dat'
        _write(path, '\n'.join(lines) + '\n')
        written.append(path)
    return written
