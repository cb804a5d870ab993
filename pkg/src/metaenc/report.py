"""Run reports, CSV tables and PGM image grids."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .data import to_pixels
from .metrics import EvalReport

# Fixed leading columns of every evaluation CSV; ``kth_mse_{k}, drift_{k}`` pairs follow in ascending k.
EVAL_COLUMNS = EvalReport.BASE_COLUMNS

COMPARE_ROWS = (("train_mse", "Training MSE"), ("test_mse", "Testing MSE"),
                ("train_sr_mse", "Training Second Reconstruction MSE"),
                ("test_sr_mse", "Testing Second Reconstruction MSE"))


@dataclass
class RunReport:
    config: dict
    history: list[float]
    train: EvalReport
    test: EvalReport | None = None
    seconds: float = 0.0
    steps: int = 0
    skipped_batches: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config": self.config, "history": self.history, "train": self.train.to_dict(),
                "test": None if self.test is None else self.test.to_dict(), "seconds": self.seconds,
                "steps": self.steps, "skipped_batches": self.skipped_batches, **self.extra}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        reports = [r for r in (self.train, self.test) if r is not None]
        return eval_csv(reports, splits=["train", "test"][:len(reports)])


def eval_csv(reports: list[EvalReport], splits: list[str] | None = None) -> str:
    """One CSV row per report. With ``splits`` a leading ``split`` column is added."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = reports[0].csv_header()
    w.writerow((["split"] if splits else []) + header)
    for i, rep in enumerate(reports):
        if rep.csv_header() != header:
            raise ValueError("reports in one CSV must share the same k list")
        w.writerow(([splits[i]] if splits else []) + rep.csv_row())
    return buf.getvalue()


def compare_csv(table: dict[str, dict[str, float]]) -> str:
    """Table with one row per metric and one column per model."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(table)
    w.writerow(["metric", *names])
    for key, _ in COMPARE_ROWS:
        w.writerow([key, *(repr(table[name][key]) for name in names)])
    return buf.getvalue()


def compare_markdown(table: dict[str, dict[str, float]]) -> str:
    names = list(table)
    lines = ["| | " + " | ".join(names) + " |", "|---" * (len(names) + 1) + "|"]
    for key, label in COMPARE_ROWS:
        lines.append(f"| {label} | " + " | ".join(f"{table[n][key]:.4e}" for n in names) + " |")
    return "\n".join(lines) + "\n"


def image_grid(columns: list[np.ndarray], image_shape: tuple[int, int], scale: float = 1.0 / 255.0,
               offset: float = 0.0, gap: int = 2) -> np.ndarray:
    """uint8 grid: one row per sample, one tile per entry of ``columns`` (each (N, n))."""
    rows, cols = image_shape
    N = columns[0].shape[0]
    H = N * rows + (N - 1) * gap
    W = len(columns) * cols + (len(columns) - 1) * gap
    grid = np.full((H, W), 255, dtype=np.uint8)
    for j, block in enumerate(columns):
        tiles = to_pixels(block, scale, offset).reshape(N, rows, cols)
        for i in range(N):
            y, x = i * (rows + gap), j * (cols + gap)
            grid[y:y + rows, x:x + cols] = tiles[i]
    return grid


def pgm_bytes(image: np.ndarray) -> bytes:
    """Binary 8-bit PGM (P5)."""
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError("PGM output needs a 2-D uint8 image")
    h, w = image.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + image.tobytes()


def read_pgm(raw: bytes) -> np.ndarray:
    """Inverse of :func:`pgm_bytes` (newline-separated header, as written there)."""
    magic, size, maxval, pixels = raw.split(b"\n", 3)
    if magic != b"P5" or int(maxval) != 255:
        raise ValueError("not an 8-bit binary PGM")
    w, h = map(int, size.split())
    return np.frombuffer(pixels, dtype=np.uint8, count=w * h).reshape(h, w)
