"""
Output path utilities for fire-repair.
"""

from __future__ import annotations

import os
from pathlib import Path

DEFAULT_OUT_DIR = Path.home() / ".fire-repair" / "out"
OUT_DIR_ENV = "FIRE_OUT_DIR"


def get_out_dir(configured: str | Path | None = None) -> Path:
    """Return the output directory.

    Resolution order: the ``FIRE_OUT_DIR`` environment variable, then the configured
    directory, then ``~/.fire-repair/out``.
    """
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return Path(env)
    if configured:
        return Path(configured)
    return DEFAULT_OUT_DIR


def get_dataset_dir(out_dir: Path) -> Path:
    """Return the directory holding the generated dataset."""
    return out_dir / "dataset"


def get_checkpoint_file(out_dir: Path, attack: str) -> Path:
    """Return the checkpoint path for a trained model.

    Args:
        out_dir: Output directory.
        attack: Trigger kind the model was backdoored with (patch, blended, warp).
    """
    return out_dir / "checkpoints" / f"{attack}.fire"


def require_checkpoint(out_dir: Path, attack: str) -> Path:
    """Return the checkpoint path, raising if it has not been trained yet."""
    path = get_checkpoint_file(out_dir, attack)
    if path.exists():
        return path
    raise FileNotFoundError(
        f"Checkpoint not found for attack '{attack}' at {path}. "
        "Run 'fire train' with the same config to create it."
    )


def require_dataset(out_dir: Path) -> Path:
    """Return the dataset directory, raising if it has not been generated yet."""
    path = get_dataset_dir(out_dir)
    if (path / "index.json").exists():
        return path
    raise FileNotFoundError(
        f"Dataset not found at {path}. "
        "Run 'fire gen-data' with the same config to create it."
    )


def get_run_dir(out_dir: Path, command: str, attack: str) -> Path:
    """Return (and create) the directory for one command's results."""
    path = out_dir / command / attack
    path.mkdir(parents=True, exist_ok=True)
    return path
