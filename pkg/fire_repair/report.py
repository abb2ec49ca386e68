"""
Result files and terminal output.

Every file carries the config hash, root seed and package version:

    CSV          leading ``# key=value`` comment lines, then the table
    JSON         a top-level ``provenance`` object
    JSON lines   first line ``{"provenance": {...}}``, then one record per line

Payloads never contain timestamps, so rerunning a command with the same config
reproduces them byte for byte (latency fields aside).
"""

from __future__ import annotations

import json
import sys
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

import polars as pl

from fire_repair.config import ExperimentConfig, config_hash


def _version() -> str:
    from fire_repair import __version__
    return __version__


def provenance(config: ExperimentConfig, **extra: Any) -> dict[str, Any]:
    return {"config_hash": config_hash(config), "seed": config.seed, "version": _version(), **extra}


def write_csv(frame: pl.DataFrame, path: str | Path, config: ExperimentConfig, **extra: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [f"# {k}={v}" for k, v in provenance(config, **extra).items()]
    header.append(f"# columns={','.join(frame.columns)}")
    path.write_text("\n".join(header) + "\n" + frame.write_csv(), encoding="utf-8")
    return path


def read_csv(path: str | Path) -> pl.DataFrame:
    return pl.read_csv(path, comment_prefix="#")


def read_csv_header(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.startswith("#"):
            break
        key, _, value = line[1:].strip().partition("=")
        out[key] = value
    return out


def write_json(payload: dict[str, Any], path: str | Path, config: ExperimentConfig, **extra: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"provenance": provenance(config, **extra), **payload}
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_jsonl(records: Iterable[dict[str, Any]], path: str | Path, config: ExperimentConfig,
                **extra: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"provenance": provenance(config, **extra)}, sort_keys=True) + "\n")
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def read_jsonl(path: str | Path) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    """Return (provenance, records)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = json.loads(lines[0])["provenance"] if lines else {}
    return head, [json.loads(line) for line in lines[1:] if line.strip()]


def _fmt(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    if isinstance(value, int) and not isinstance(value, bool):
        return f"{value:,}"
    return str(value)


def print_rows(rows: Sequence[tuple[str, Any]], stream=None) -> None:
    """Aligned key/value rows; cyan keys and bold yellow values on a terminal."""
    stream = stream or sys.stdout
    if not rows:
        return
    color = stream.isatty()
    RESET = "\033[0m"    if color else ""
    KEY   = "\033[36m"   if color else ""
    VAL   = "\033[1;33m" if color else ""

    rendered = [(k, _fmt(v)) for k, v in rows]
    key_w = max(len(k) for k, _ in rendered)
    val_w = max(len(v) for _, v in rendered)
    for key, val in rendered:
        print(f"  {KEY}{key:>{key_w}}{RESET}   {VAL}{val:>{val_w}}{RESET}", file=stream)


def print_frame(frame: pl.DataFrame, stream=None) -> None:
    print(frame, file=stream or sys.stdout)
