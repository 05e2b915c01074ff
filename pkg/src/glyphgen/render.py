"""Deterministic rasterization of spline strokes onto a small canvas.

Strokes live in a 105x105 source frame and are drawn onto a 28x28
grayscale canvas (uniform scale 28/105) as anti-aliased unit-width
polylines.  Ink composites by per-pixel maximum, which makes rendering
idempotent, order-invariant, and monotone; those properties stand in for
an ink model the source material leaves unspecified.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CorpusFormatError
from .splines import SplineStroke, eval_spline

CANVAS_SIZE = 28
SOURCE_SIZE = 105
SCALE = CANVAS_SIZE / SOURCE_SIZE
SAMPLES_PER_SEGMENT = 20


@dataclass
class Canvas:
    """28x28 intensity grid in [0,1] plus a lost-ink counter."""

    pixels: np.ndarray = field(default_factory=lambda: np.zeros((CANVAS_SIZE, CANVAS_SIZE)))
    clipped: int = 0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.shape != (CANVAS_SIZE, CANVAS_SIZE):
            raise ValueError(f"canvas must be {CANVAS_SIZE}x{CANVAS_SIZE}, got {self.pixels.shape}")

    @classmethod
    def blank(cls) -> "Canvas":
        return cls()

    def copy(self) -> "Canvas":
        return Canvas(self.pixels.copy(), self.clipped)


_PIXEL_CENTERS = (
    np.stack(
        np.meshgrid(np.arange(CANVAS_SIZE) + 0.5, np.arange(CANVAS_SIZE) + 0.5, indexing="xy"),
        axis=-1,
    ).reshape(-1, 2)
)  # (784, 2) as (x, y) per pixel in row-major (row, col) order


def _segment_coverage(points: np.ndarray) -> np.ndarray:
    """Tent-filtered coverage of a unit-width polyline, shape (28, 28).

    Each pixel's intensity is max(0, 1 - d) over its center's distance d
    to the nearest polyline segment, a linear approximation of box-filter
    coverage of a 1-pixel-wide rectangle.
    """
    a = points[:-1] if len(points) > 1 else points
    b = points[1:] if len(points) > 1 else points
    ab = b - a  # (S, 2)
    den = np.einsum("sk,sk->s", ab, ab)
    den = np.where(den == 0.0, 1.0, den)
    ap = _PIXEL_CENTERS[:, None, :] - a[None, :, :]  # (P, S, 2)
    t = np.clip(np.einsum("psk,sk->ps", ap, ab) / den, 0.0, 1.0)
    nearest = a[None, :, :] + t[..., None] * ab[None, :, :]
    d = np.linalg.norm(_PIXEL_CENTERS[:, None, :] - nearest, axis=-1)
    cov = np.clip(1.0 - d.min(axis=1), 0.0, 1.0)
    return cov.reshape(CANVAS_SIZE, CANVAS_SIZE)


def render_stroke(canvas: Canvas, stroke: SplineStroke) -> Canvas:
    """Draw one stroke; returns a new canvas, max-composited and clamped."""
    traj = eval_spline(stroke, SAMPLES_PER_SEGMENT) * SCALE  # (T, 2) as (x, y)
    off_plate = (
        (traj[:, 0] < 0.0)
        | (traj[:, 0] >= CANVAS_SIZE)
        | (traj[:, 1] < 0.0)
        | (traj[:, 1] >= CANVAS_SIZE)
    )
    cov = _segment_coverage(traj)
    pixels = np.maximum(canvas.pixels, cov)
    np.clip(pixels, 0.0, 1.0, out=pixels)
    return Canvas(pixels, canvas.clipped + int(off_plate.sum()))


def render_drawing(strokes: list[SplineStroke]) -> Canvas:
    """Fold of render_stroke over the strokes, starting from a zero canvas."""
    canvas = Canvas.blank()
    for stroke in strokes:
        canvas = render_stroke(canvas, stroke)
    return canvas


def save_pgm(image: Canvas | np.ndarray, path) -> None:
    """Write an intensity image as binary PGM (P5, maxval 255), round(p*255)."""
    pixels = image.pixels if isinstance(image, Canvas) else np.asarray(image, dtype=np.float64)
    levels = np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = levels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(levels.tobytes())


def load_pgm(path) -> np.ndarray:
    """Read a binary PGM written by save_pgm; returns uint8 levels."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise CorpusFormatError(f"not a binary PGM: magic {magic!r}")
        dims = fh.readline().split()
        maxval = int(fh.readline())
        w, h = int(dims[0]), int(dims[1])
        if maxval != 255:
            raise CorpusFormatError(f"unsupported PGM maxval {maxval}")
        data = fh.read(w * h)
        if len(data) != w * h:
            raise CorpusFormatError("truncated PGM payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def tile_canvases(canvases: list[Canvas] | list[np.ndarray], columns: int, pad: int = 1) -> np.ndarray:
    """Tile canvases row-major into one image with white separator lines."""
    arrays = [c.pixels if isinstance(c, Canvas) else np.asarray(c) for c in canvases]
    rows = (len(arrays) + columns - 1) // columns
    cell = CANVAS_SIZE + pad
    out = np.ones((rows * cell - pad, columns * cell - pad))
    for i, arr in enumerate(arrays):
        r, c = divmod(i, columns)
        out[r * cell : r * cell + CANVAS_SIZE, c * cell : c * cell + CANVAS_SIZE] = arr
    return out
