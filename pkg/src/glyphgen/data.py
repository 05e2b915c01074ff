"""Corpus ingestion, preprocessing, and split construction.

Raw corpora are NDJSON, one drawing per line:
``{"alphabet": str, "character_id": str, "drawing_id": str,
"strokes": [[[x, y, t?], ...], ...]}`` with x, y in [0, 105) and t an
optional timestamp.  Processed corpora replace point lists with fitted
spline strokes: ``{"start": [x, y], "offsets": [[dx, dy], ...]}``.
Saving always emits a canonical form (sorted keys, compact separators,
float coordinates), so load then save is byte-stable.

Splits hash class identities with the seed and fold, never positions in
the file, so identical corpus content yields identical splits on any
platform and in any file order.  The split unit is the character class.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorpusFormatError, DegenerateDataError, EmptyDrawingError
from .splines import SplineDrawing, SplineStroke, fit_minimal_spline, trajectory_length

log = logging.getLogger("glyphgen.data")

COORD_LIMIT = 105.0
SPLIT_MODES = ("alphabet", "character", "holdout")
FOLDS = (1, 2, 3)


@dataclass
class DrawingRecord:
    """One raw drawing: identity plus per-stroke point arrays (x, y[, t])."""

    alphabet: str
    character_id: str
    drawing_id: str
    strokes: list[np.ndarray]

    @property
    def key(self) -> str:
        return f"{self.alphabet}/{self.character_id}/{self.drawing_id}"

    @property
    def class_key(self) -> str:
        return f"{self.alphabet}/{self.character_id}"


@dataclass
class ProcessedRecord:
    alphabet: str
    character_id: str
    drawing_id: str
    strokes: SplineDrawing

    @property
    def key(self) -> str:
        return f"{self.alphabet}/{self.character_id}/{self.drawing_id}"

    @property
    def class_key(self) -> str:
        return f"{self.alphabet}/{self.character_id}"


@dataclass
class PreprocessConfig:
    min_length: float = 10.0
    residual_threshold: float = 1.5
    max_control_points: int = 30

    def __post_init__(self):
        if self.min_length < 0 or self.residual_threshold <= 0 or self.max_control_points < 4:
            raise ConfigError("preprocess config out of range")


@dataclass
class PreprocessStats:
    records_in: int = 0
    records_kept: int = 0
    strokes_in: int = 0
    strokes_dropped: int = 0
    records_excluded: list[str] = field(default_factory=list)


@dataclass
class SplitSpec:
    mode: str
    fold: int = 1
    seed: int = 0
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.mode not in SPLIT_MODES:
            raise ConfigError(f"split mode must be one of {SPLIT_MODES}, got {self.mode!r}")
        if self.fold not in FOLDS:
            raise ConfigError(f"fold must be one of {FOLDS}, got {self.fold}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train fraction must lie in (0, 1), got {self.train_fraction}")


# -- raw corpus I/O -----------------------------------------------------------


def _fail(line_no: int, message: str) -> CorpusFormatError:
    return CorpusFormatError(message, line=line_no)


def _parse_raw_line(obj, line_no: int) -> DrawingRecord:
    if not isinstance(obj, dict):
        raise _fail(line_no, "record must be a JSON object")
    required = {"alphabet", "character_id", "drawing_id", "strokes"}
    if set(obj) != required:
        raise _fail(line_no, f"record keys must be exactly {sorted(required)}, got {sorted(obj)}")
    for k in ("alphabet", "character_id", "drawing_id"):
        if not isinstance(obj[k], str) or not obj[k]:
            raise _fail(line_no, f"{k} must be a non-empty string")
    strokes_raw = obj["strokes"]
    if not isinstance(strokes_raw, list) or len(strokes_raw) == 0:
        raise _fail(line_no, "strokes must be a non-empty list")
    strokes = []
    for si, stroke in enumerate(strokes_raw):
        if not isinstance(stroke, list) or len(stroke) == 0:
            raise _fail(line_no, f"stroke {si} must be a non-empty point list")
        width = len(stroke[0]) if isinstance(stroke[0], list) else 0
        if width not in (2, 3):
            raise _fail(line_no, f"stroke {si} points must be [x, y] or [x, y, t]")
        pts = []
        for pi, point in enumerate(stroke):
            if not isinstance(point, list) or len(point) != width:
                raise _fail(line_no, f"stroke {si} point {pi} has inconsistent arity")
            try:
                values = [float(v) for v in point]
            except (TypeError, ValueError):
                raise _fail(line_no, f"stroke {si} point {pi} is not numeric") from None
            if not all(np.isfinite(values)):
                raise _fail(line_no, f"stroke {si} point {pi} has a non-finite coordinate")
            x, y = values[0], values[1]
            if not (0.0 <= x < COORD_LIMIT and 0.0 <= y < COORD_LIMIT):
                raise _fail(line_no, f"stroke {si} point {pi} outside [0, {COORD_LIMIT:g})")
            pts.append(values)
        strokes.append(np.array(pts, dtype=np.float64))
    return DrawingRecord(obj["alphabet"], obj["character_id"], obj["drawing_id"], strokes)


def load_corpus(path) -> list[DrawingRecord]:
    """Read a raw NDJSON corpus; malformed lines fail with their line number."""
    records = []
    seen: set[str] = set()
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise _fail(line_no, f"invalid JSON ({e.msg})") from None
        record = _parse_raw_line(obj, line_no)
        if record.key in seen:
            raise _fail(line_no, f"duplicate drawing id {record.key}")
        seen.add(record.key)
        records.append(record)
    return records


def save_corpus(records: list[DrawingRecord], path) -> None:
    lines = []
    for r in records:
        obj = {
            "alphabet": r.alphabet,
            "character_id": r.character_id,
            "drawing_id": r.drawing_id,
            "strokes": [[[float(v) for v in p] for p in stroke.tolist()] for stroke in r.strokes],
        }
        lines.append(json.dumps(obj, sort_keys=True, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# -- processed corpus I/O ------------------------------------------------------


def _parse_processed_line(obj, line_no: int) -> ProcessedRecord:
    if not isinstance(obj, dict):
        raise _fail(line_no, "record must be a JSON object")
    required = {"alphabet", "character_id", "drawing_id", "strokes"}
    if set(obj) != required:
        raise _fail(line_no, f"record keys must be exactly {sorted(required)}, got {sorted(obj)}")
    if not isinstance(obj["strokes"], list) or len(obj["strokes"]) == 0:
        raise _fail(line_no, "strokes must be a non-empty list")
    strokes = []
    for si, s in enumerate(obj["strokes"]):
        if not isinstance(s, dict) or set(s) != {"start", "offsets"}:
            raise _fail(line_no, f"stroke {si} must have exactly the keys start, offsets")
        try:
            start = np.array([float(v) for v in s["start"]], dtype=np.float64)
            offsets = np.array([[float(v) for v in row] for row in s["offsets"]], dtype=np.float64)
        except (TypeError, ValueError):
            raise _fail(line_no, f"stroke {si} is not numeric") from None
        if start.shape != (2,) or offsets.ndim != 2 or offsets.shape[1] != 2 or len(offsets) == 0:
            raise _fail(line_no, f"stroke {si} has malformed start or offsets")
        if not (np.isfinite(start).all() and np.isfinite(offsets).all()):
            raise _fail(line_no, f"stroke {si} has a non-finite value")
        strokes.append(SplineStroke(start=start, offsets=offsets))
    return ProcessedRecord(obj["alphabet"], obj["character_id"], obj["drawing_id"], strokes)


def load_processed(path) -> list[ProcessedRecord]:
    records = []
    seen: set[str] = set()
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise _fail(line_no, f"invalid JSON ({e.msg})") from None
        record = _parse_processed_line(obj, line_no)
        if record.key in seen:
            raise _fail(line_no, f"duplicate drawing id {record.key}")
        seen.add(record.key)
        records.append(record)
    return records


def save_processed(records: list[ProcessedRecord], path) -> None:
    lines = []
    for r in records:
        obj = {
            "alphabet": r.alphabet,
            "character_id": r.character_id,
            "drawing_id": r.drawing_id,
            "strokes": [
                {"start": [float(v) for v in s.start], "offsets": [[float(v) for v in row] for row in s.offsets]}
                for s in r.strokes
            ],
        }
        lines.append(json.dumps(obj, sort_keys=True, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# -- preprocessing ------------------------------------------------------------


def preprocess_drawing(record: DrawingRecord, cfg: PreprocessConfig | None = None) -> SplineDrawing:
    """Drop short strokes, fit minimal splines to the rest, keep order."""
    cfg = cfg or PreprocessConfig()
    strokes = []
    for pts in record.strokes:
        xy = pts[:, :2]
        if trajectory_length(xy) < cfg.min_length:
            continue
        strokes.append(fit_minimal_spline(xy, cfg.residual_threshold, cfg.max_control_points))
    if not strokes:
        raise EmptyDrawingError(f"{record.key}: every stroke fell under min_length={cfg.min_length:g}")
    return strokes


def preprocess_corpus(
    records: list[DrawingRecord],
    cfg: PreprocessConfig | None = None,
    threads: int = 1,
) -> tuple[list[ProcessedRecord], PreprocessStats]:
    """Preprocess a whole corpus; output is ordered by record key and
    records whose strokes all fall under the length filter are excluded."""
    cfg = cfg or PreprocessConfig()
    ordered = sorted(records, key=lambda r: r.key)
    stats = PreprocessStats(records_in=len(ordered))

    def run(record: DrawingRecord):
        try:
            return preprocess_drawing(record, cfg)
        except EmptyDrawingError:
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, ordered))
    else:
        results = [run(r) for r in ordered]

    out = []
    for record, drawing in zip(ordered, results):
        stats.strokes_in += len(record.strokes)
        if drawing is None:
            stats.records_excluded.append(record.key)
            stats.strokes_dropped += len(record.strokes)
            continue
        stats.strokes_dropped += len(record.strokes) - len(drawing)
        stats.records_kept += 1
        out.append(ProcessedRecord(record.alphabet, record.character_id, record.drawing_id, drawing))
    if stats.records_excluded:
        log.info("preprocess excluded %d empty drawings: %s",
                 len(stats.records_excluded), ", ".join(stats.records_excluded[:5]))
    return out, stats


# -- splits --------------------------------------------------------------------


def _rank(spec: SplitSpec, key: str) -> int:
    digest = hashlib.sha256(f"{spec.seed}:{spec.fold}:{spec.mode}:{key}".encode()).hexdigest()
    return int(digest[:16], 16)


def _ordered(records):
    return sorted(records, key=lambda r: r.key)


def make_splits(records, spec: SplitSpec, eval_records=None):
    """Partition a corpus into (train, test) by character class or alphabet.

    Pure in (corpus content, mode, fold, seed): membership comes from
    hashing identities, output order from sorting keys.
    """
    if len(records) == 0:
        raise DegenerateDataError("cannot split an empty corpus")
    if spec.mode == "holdout":
        return _ordered(records), _ordered(eval_records or [])

    if spec.mode == "alphabet":
        alphabets = sorted({r.alphabet for r in records})
        if len(alphabets) < 5:
            raise DegenerateDataError(
                f"alphabet split needs at least 5 alphabets, got {len(alphabets)}"
            )
        ranked = sorted(alphabets, key=lambda a: (_rank(spec, a), a))
        n_train = max(1, int(spec.train_fraction * len(ranked)))
        train_set = set(ranked[:n_train])
        train = [r for r in records if r.alphabet in train_set]
        test = [r for r in records if r.alphabet not in train_set]
        return _ordered(train), _ordered(test)

    # character mode: within each alphabet, 80% of classes (every drawing follows its class)
    by_alphabet: dict[str, set[str]] = {}
    for r in records:
        by_alphabet.setdefault(r.alphabet, set()).add(r.class_key)
    train_classes: set[str] = set()
    for alphabet in sorted(by_alphabet):
        ranked = sorted(by_alphabet[alphabet], key=lambda c: (_rank(spec, c), c))
        n_train = max(1, int(spec.train_fraction * len(ranked)))
        train_classes.update(ranked[:n_train])
    train = [r for r in records if r.class_key in train_classes]
    test = [r for r in records if r.class_key not in train_classes]
    return _ordered(train), _ordered(test)


# -- synthetic corpus -----------------------------------------------------------


def synthetic_corpus(
    seed: int,
    n_alphabets: int = 3,
    chars_per_alphabet: int = 6,
    drawings_per_char: int = 4,
) -> list[DrawingRecord]:
    """Random but class-consistent corpus so the suite runs with no dataset.

    Each character class owns a prototype of 1-3 smooth strokes; drawings
    jitter the prototype, so same-class drawings stay visually close.
    """
    rng = np.random.default_rng([int(seed), 0x5C])
    records = []
    for a in range(n_alphabets):
        for c in range(chars_per_alphabet):
            prototype = _prototype_strokes(rng)
            for d in range(drawings_per_char):
                strokes = []
                for pts in prototype:
                    jitter = rng.normal(0.0, 1.2, size=pts.shape)
                    jitter[0] = rng.normal(0.0, 2.0, size=2)  # nudge the start too
                    strokes.append(np.clip(pts + jitter, 0.0, COORD_LIMIT - 1e-6))
                records.append(
                    DrawingRecord(f"alpha{a:02d}", f"char{c:02d}", f"draw{d:02d}", strokes)
                )
    return records


def _prototype_strokes(rng: np.random.Generator) -> list[np.ndarray]:
    strokes = []
    for _ in range(int(rng.integers(1, 4))):
        n = int(rng.integers(25, 50))
        start = rng.uniform(15.0, 90.0, size=2)
        heading = rng.uniform(0.0, 2.0 * np.pi)
        turn = rng.normal(0.0, 0.18, size=n - 1)
        speed = rng.uniform(1.2, 2.4)
        angles = heading + np.cumsum(turn)
        deltas = speed * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        pts = np.vstack([start, start + np.cumsum(deltas, axis=0)])
        strokes.append(np.clip(pts, 0.0, COORD_LIMIT - 1e-6))
    return strokes
