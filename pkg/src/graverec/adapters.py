"""Subprocess contracts for the external detector, OCR and angle classifier.

Each helper turns a command into a callable the pipeline can use; failures
degrade per the pipeline's rules instead of aborting it.
"""

from __future__ import annotations

import io
import subprocess
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import AdapterFailure, DetectorFailure


def _crop_to_tempfile(crop: np.ndarray, tmpdir: str) -> Path:
    path = Path(tmpdir) / "crop.png"
    Image.fromarray(np.asarray(crop, dtype=np.uint8)).save(path, format="PNG")
    return path


def run_detector(command: str, page_png: bytes | str | Path) -> str:
    """`detector <page.png>` writing detection JSON lines to stdout."""
    with tempfile.TemporaryDirectory() as tmpdir:
        if isinstance(page_png, (str, Path)):
            path = Path(page_png)
        else:
            path = Path(tmpdir) / "page.png"
            path.write_bytes(page_png)
        proc = subprocess.run(
            [command, str(path)], capture_output=True, text=True, timeout=600
        )
    if proc.returncode != 0:
        raise DetectorFailure(f"{command} exited {proc.returncode}: {proc.stderr.strip()}")
    return proc.stdout


def ocr_command(command: str):
    """Wrap `ocr <crop.png>` as a crop -> text callable."""

    def call(crop: np.ndarray) -> str:
        with tempfile.TemporaryDirectory() as tmpdir:
            path = _crop_to_tempfile(crop, tmpdir)
            proc = subprocess.run([command, str(path)], capture_output=True, text=True, timeout=120)
        if proc.returncode != 0:
            raise AdapterFailure(f"{command} exited {proc.returncode}")
        return proc.stdout.strip()

    return call


def arrow_classifier_command(command: str):
    """Wrap `arrowcls <crop.png>` as a (crop, detection) -> bin callable."""

    def call(crop: np.ndarray, detection=None) -> int:
        with tempfile.TemporaryDirectory() as tmpdir:
            path = _crop_to_tempfile(crop, tmpdir)
            proc = subprocess.run([command, str(path)], capture_output=True, text=True, timeout=120)
        if proc.returncode != 0:
            raise AdapterFailure(f"{command} exited {proc.returncode}")
        try:
            bin_idx = int(proc.stdout.strip())
        except ValueError:
            raise AdapterFailure(f"{command} printed {proc.stdout!r}, expected a bin 0..35") from None
        if not 0 <= bin_idx <= 35:
            raise AdapterFailure(f"{command} returned bin {bin_idx} outside 0..35")
        return bin_idx

    return call


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)
