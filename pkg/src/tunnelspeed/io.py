"""Run configuration and result serialization (CSV tables, JSON summaries).

Outputs are byte-deterministic: floats are written with 17 significant
digits in CSV and as shortest round-trip reprs in JSON, and key order is
fixed by construction.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import __version__

OUTPUT_DIR_ENV = "TUNNELSPEED_OUTPUT_DIR"

COMMANDS = (
    "solve-waveguide",
    "solve-step",
    "population",
    "fit-speed",
    "trajectory",
    "bbm-run",
    "dwell",
    "invariance",
    "sweep",
)


@dataclass
class RunConfig:
    command: str
    params: dict[str, float]
    options: dict[str, Any] = field(default_factory=dict)
    format: str = "csv"
    # where files go is not part of the run's identity: excluded from the
    # echo so runs into different directories stay byte-identical
    output_dir: str = field(default=".", compare=False)

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "params": dict(self.params),
            "options": dict(self.options),
            "format": self.format,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        return cls(
            command=d["command"],
            params=dict(d["params"]),
            options=dict(d.get("options", {})),
            format=d.get("format", "csv"),
            output_dir=d.get("output_dir", "."),
        )


@dataclass
class RunSummary:
    config: RunConfig
    results: dict[str, Any]
    artifacts: list[str] = field(default_factory=list)
    wall_time: float | None = None
    version: str = __version__

    def as_dict(self) -> dict:
        d = {
            "command": self.config.command,
            "version": self.version,
            "config": self.config.as_dict(),
            "results": self.results,
            "artifacts": list(self.artifacts),
        }
        if self.wall_time is not None:
            d["wall_time"] = self.wall_time
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunSummary":
        return cls(
            config=RunConfig.from_dict(d["config"]),
            results=dict(d["results"]),
            artifacts=list(d.get("artifacts", [])),
            wall_time=d.get("wall_time"),
            version=d.get("version", __version__),
        )


def jsonable(value):
    """Convert numpy scalars/arrays and complex numbers into JSON-ready values."""
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    if isinstance(value, Mapping):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if hasattr(value, "tolist"):
        return jsonable(value.tolist())
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, allow_nan=False) + "\n"


def format_cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return format(value, ".17g")
    if hasattr(value, "dtype"):
        return format_cell(value.item())
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])


def write_table(out_dir: Path, stem: str, columns: Sequence[str], rows: Sequence[Sequence], fmt: str) -> Path:
    if fmt == "csv":
        path = out_dir / f"{stem}.csv"
        write_csv(path, columns, rows)
    elif fmt == "json":
        path = out_dir / f"{stem}.json"
        records = [dict(zip(columns, row)) for row in rows]
        path.write_text(dumps({"columns": list(columns), "rows": records}))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def read_csv_columns(path, columns: Sequence[str]) -> list[list[float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in columns if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing column(s) {missing}")
        return [[float(rec[c]) for c in columns] for rec in reader]


def emit_results(summary: RunSummary, tables: Mapping[str, tuple[Sequence[str], Sequence[Sequence]]]) -> list[Path]:
    """Write every table and then the JSON summary; returns the written paths."""
    cfg = summary.config
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = cfg.command
    paths = []
    for name, (columns, rows) in tables.items():
        paths.append(write_table(out_dir, f"{stem}.{name}", columns, rows, cfg.format))
    summary.artifacts = [p.name for p in paths]
    summary_path = out_dir / f"{stem}.summary.json"
    summary_path.write_text(dumps(summary.as_dict()))
    return [*paths, summary_path]


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, ".")


def load_config_file(path) -> dict:
    """Read a JSON config; a run summary is accepted and its ``config`` used."""
    with open(path) as fh:
        data = json.load(fh)
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    return data
