"""Likelihood evaluation across splits, paired significance testing,
perceptual nearest neighbors, and sample-grid layout.

Mean test NLLs are reported per model and split in a plain-text table
shaped like the full-scale results grid (models as rows, splits as
columns); the full-scale numbers themselves appear only as a footer for
context since desk-scale runs cannot reproduce them.

The Student-t tail probability is computed here from scratch via the
regularized incomplete beta function (Lentz continued fraction); the
test suite pins it against an independent high-precision oracle.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .autodiff.nn import ConvBlock, Dense, ParameterStore
from .errors import ConfigError, DegenerateDataError, DimensionError, TrainingDivergedError
from .models import GenerativeModel
from .render import CANVAS_SIZE, Canvas
from .training import AdamMoments, TrainConfig, adam_step, clip_gradients

# full-scale reference results in nats per character, kept for report
# footers only; desk-scale runs are not expected to approach them
REFERENCE_NLL = {
    "full_ns": {
        "alphabet:1": 13.77, "alphabet:2": 14.18, "alphabet:3": 17.53,
        "character:1": 12.35, "character:2": 12.59, "character:3": 12.57,
        "holdout": 19.51,
    },
    "hlstm": {
        "alphabet:1": 14.37, "alphabet:2": 14.56, "alphabet:3": 17.71,
        "character:1": 12.24, "character:2": 12.80, "character:3": 12.51,
        "holdout": 20.16,
    },
    "baseline": {
        "alphabet:1": 14.32, "alphabet:2": 14.42, "alphabet:3": 17.71,
        "character:1": 12.20, "character:2": 12.77, "character:3": 12.39,
        "holdout": 19.66,
    },
}


# -- likelihood reports ----------------------------------------------------------


@dataclass
class EvalReport:
    model_id: str
    split_id: str
    nlls: list[float]

    @property
    def mean_nll(self) -> float:
        return float(np.mean(self.nlls))

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "split_id": self.split_id,
            "mean_nll": self.mean_nll,
            "nlls": list(self.nlls),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(model_id=d["model_id"], split_id=d["split_id"], nlls=[float(x) for x in d["nlls"]])


def evaluate(
    model: GenerativeModel,
    drawings: Sequence,
    model_id: str = "",
    split_id: str = "",
    threads: int = 1,
) -> EvalReport:
    """Teacher-forced NLL of every test drawing, in input order."""
    if len(drawings) == 0:
        raise DegenerateDataError("cannot evaluate on an empty test set")
    model.eval()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            nlls = list(pool.map(model.score_drawing, drawings))
    else:
        nlls = [model.score_drawing(d) for d in drawings]
    return EvalReport(model_id=model_id, split_id=split_id, nlls=[float(x) for x in nlls])


def summary_table(reports: Sequence[EvalReport]) -> str:
    """Models-by-splits grid of mean NLLs with the full-scale reference
    footer appended."""
    if not reports:
        raise DegenerateDataError("no reports to summarize")
    models = list(dict.fromkeys(r.model_id for r in reports))
    splits = list(dict.fromkeys(r.split_id for r in reports))
    cells = {(r.model_id, r.split_id): r.mean_nll for r in reports}
    width = max(12, *(len(m) + 2 for m in models))
    col = max(12, *(len(s) + 2 for s in splits))
    lines = ["mean test NLL, nats per character (lower is better)", ""]
    lines.append("".ljust(width) + "".join(s.rjust(col) for s in splits))
    for m in models:
        row = m.ljust(width)
        for s in splits:
            value = cells.get((m, s))
            row += ("-" if value is None else f"{value:.2f}").rjust(col)
        lines.append(row)
    lines.append("")
    lines.append("reference full-scale results (context only, not reproducible at desk scale):")
    ref_splits = list(REFERENCE_NLL["full_ns"])
    lines.append("".ljust(width) + "".join(s.rjust(col) for s in ref_splits))
    for m, values in REFERENCE_NLL.items():
        lines.append(m.ljust(width) + "".join(f"{values[s]:.2f}".rjust(col) for s in ref_splits))
    return "\n".join(lines) + "\n"


# -- paired t-test ----------------------------------------------------------------


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    # Lentz's algorithm for the continued fraction in the regularized
    # incomplete beta function
    max_iter, eps, tiny = 300, 3e-16, 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if a <= 0 or b <= 0:
        raise ConfigError("beta function parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # use the representation that converges fast on this side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: int) -> float:
    """P(|T| >= |t|) for a Student-t variable with df degrees of freedom."""
    if df < 1:
        raise ConfigError(f"degrees of freedom must be >= 1, got {df}")
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


@dataclass
class TTestResult:
    t: float
    df: int
    p: float

    def to_dict(self) -> dict:
        return {"t": self.t, "df": self.df, "p": self.p}


def paired_t_test(nlls_a: Sequence[float], nlls_b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on per-drawing score differences.

    Identical nonzero differences have zero spread with a nonzero mean,
    which is reported as t = +/-inf with p = 0 rather than an error;
    all-zero differences carry no signal at all and are rejected.
    """
    a = np.asarray(nlls_a, dtype=np.float64)
    b = np.asarray(nlls_b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"paired samples must be equal-length 1-D, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise DegenerateDataError(f"paired t-test needs n >= 2, got {n}")
    d = a - b
    sd = float(d.std(ddof=1))
    mean = float(d.mean())
    if sd == 0.0:
        if mean == 0.0:
            raise DegenerateDataError("all paired differences are zero")
        return TTestResult(t=math.copysign(math.inf, mean), df=n - 1, p=0.0)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t=t, df=n - 1, p=student_t_two_sided_p(t, n - 1))


# -- canvas classifier -------------------------------------------------------------


@dataclass
class ClassifierConfig:
    filters: tuple[int, int, int, int] = (16, 32, 32, 64)
    embed_units: int = 64
    activation: str = "tanh"
    steps: int = 300
    batch_size: int = 16
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        self.filters = tuple(int(f) for f in self.filters)
        if len(self.filters) != 4 or any(f < 1 for f in self.filters):
            raise ConfigError(f"classifier needs 4 positive filter counts, got {self.filters}")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("classifier learning_rate must be positive")


def _canvas_batch(canvases) -> np.ndarray:
    rows = [c.pixels if isinstance(c, Canvas) else np.asarray(c, dtype=np.float64) for c in canvases]
    batch = np.stack(rows)
    if batch.ndim != 3 or batch.shape[1:] != (CANVAS_SIZE, CANVAS_SIZE):
        raise DimensionError(f"expected (N, {CANVAS_SIZE}, {CANVAS_SIZE}) canvases, got {batch.shape}")
    if not np.isfinite(batch).all():
        raise DegenerateDataError("canvas batch contains non-finite values")
    return batch


class CanvasClassifier:
    """Small pooled CNN over rendered canvases; the layer feeding the
    softmax doubles as the embedding space for perceptual similarity."""

    def __init__(self, labels: Sequence[str], config: ClassifierConfig | None = None):
        self.labels = tuple(labels)
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError("classifier labels must be unique")
        if len(self.labels) < 2:
            raise DegenerateDataError(f"classifier needs at least 2 classes, got {len(self.labels)}")
        self.config = config or ClassifierConfig()
        self.params = ParameterStore()
        rng = np.random.default_rng([self.config.seed, 0xC1])
        self.blocks = []
        c_in = 1
        for i, c_out in enumerate(self.config.filters):
            self.blocks.append(
                ConvBlock(self.params, f"block{i}", c_in, c_out, self.config.activation, 0.0, rng)
            )
            c_in = c_out
        flat = self.config.filters[-1] * 4
        self.hidden = Dense(self.params, "hidden", flat, self.config.embed_units,
                            self.config.activation, rng)
        self.head = Dense(self.params, "head", self.config.embed_units, len(self.labels), "none", rng)
        self._rng = np.random.default_rng([self.config.seed, 0xC2])

    def _forward(self, x: Tensor, mode: str) -> tuple[Tensor, Tensor]:
        for block in self.blocks:
            x = block(x, mode, self._rng)
        n = x.data.shape[0]
        e = self.hidden(ad.reshape(x, (n, -1)))
        return e, self.head(e)

    def logits(self, canvases, mode: str = "eval") -> Tensor:
        batch = _canvas_batch(canvases)
        x = Tensor(batch[:, None, :, :])
        return self._forward(x, mode)[1]

    def embed(self, canvases) -> np.ndarray:
        batch = _canvas_batch(canvases)
        with ad.no_grad():
            e, _ = self._forward(Tensor(batch[:, None, :, :]), "eval")
        return e.data.copy()

    def predict(self, canvases) -> list[str]:
        with ad.no_grad():
            scores = self.logits(canvases).data
        return [self.labels[int(i)] for i in np.argmax(scores, axis=1)]


def save_classifier(clf: CanvasClassifier, path) -> None:
    meta = {
        "labels": list(clf.labels),
        "config": {
            "filters": list(clf.config.filters),
            "embed_units": clf.config.embed_units,
            "activation": clf.config.activation,
            "steps": clf.config.steps,
            "batch_size": clf.config.batch_size,
            "learning_rate": clf.config.learning_rate,
            "clip_norm": clf.config.clip_norm,
            "seed": clf.config.seed,
        },
    }
    arrays = {f"param:{k}": v for k, v in clf.params.arrays().items()}
    np.savez(path, meta=np.bytes_(json.dumps(meta, sort_keys=True)), **arrays)


def load_classifier(path) -> CanvasClassifier:
    with np.load(path) as bundle:
        meta = json.loads(bytes(bundle["meta"]))
        arrays = {k[len("param:"):]: bundle[k] for k in bundle.files if k.startswith("param:")}
    cfg = meta["config"]
    cfg["filters"] = tuple(cfg["filters"])
    clf = CanvasClassifier(meta["labels"], ClassifierConfig(**cfg))
    clf.params.load_arrays({k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})
    return clf


def train_classifier(
    examples: Sequence[tuple], config: ClassifierConfig | None = None
) -> CanvasClassifier:
    """Cross-entropy training of CanvasClassifier on (canvas, label) pairs."""
    cfg = config or ClassifierConfig()
    if len(examples) == 0:
        raise DegenerateDataError("cannot train a classifier on zero examples")
    labels = sorted({label for _, label in examples})
    if len(labels) < 2:
        raise DegenerateDataError(f"classifier needs at least 2 classes, got {len(labels)}")
    clf = CanvasClassifier(labels, cfg)
    label_index = {label: i for i, label in enumerate(labels)}
    x_all = _canvas_batch([c for c, _ in examples])[:, None, :, :]
    y_all = np.array([label_index[label] for _, label in examples])

    opt_cfg = TrainConfig(
        batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
        max_steps=cfg.steps, eval_every=cfg.steps, seed=cfg.seed, clip_norm=cfg.clip_norm,
    )
    trainable = [p.name for p in clf.params.trainable()]
    moments = AdamMoments.zeros_like({n: clf.params[n].data for n in trainable})
    epoch, cursor = 0, 0
    order = np.random.default_rng([cfg.seed, epoch]).permutation(len(examples))
    for step in range(1, cfg.steps + 1):
        picks = []
        while len(picks) < min(cfg.batch_size, len(examples)):
            if cursor >= len(order):
                epoch += 1
                order = np.random.default_rng([cfg.seed, epoch]).permutation(len(examples))
                cursor = 0
            picks.append(int(order[cursor]))
            cursor += 1
        clf.params.zero_grads()
        _, logit = clf._forward(Tensor(x_all[picks]), "train")
        log_probs = ad.log_softmax(logit, axis=1)
        picked = log_probs[np.arange(len(picks)), y_all[picks]]
        loss = ad.neg(ad.tmean(picked))
        if not np.isfinite(loss.data):
            raise TrainingDivergedError(f"classifier loss became non-finite at step {step}")
        loss.backward()
        grads = {n: clf.params[n].grad for n in trainable if clf.params[n].grad is not None}
        clip_gradients(grads, cfg.clip_norm)
        arrays = {n: clf.params[n].data for n in trainable}
        adam_step(arrays, grads, moments, step, opt_cfg)
        for name in trainable:
            clf.params[name].data = arrays[name]
    return clf


# -- perceptual neighbors -----------------------------------------------------------


@dataclass
class EmbeddingIndex:
    classifier_id: str
    ids: list[str]
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise DimensionError(f"embedding matrix must be 2-D, got {self.vectors.shape}")
        if len(self.ids) != self.vectors.shape[0]:
            raise DimensionError(
                f"{len(self.ids)} ids for {self.vectors.shape[0]} embedding rows"
            )
        if not np.isfinite(self.vectors).all():
            raise DegenerateDataError("embedding index contains non-finite vectors")
        if np.any(np.linalg.norm(self.vectors, axis=1) == 0):
            raise DegenerateDataError("embedding index contains zero-norm vectors")

    def __len__(self) -> int:
        return len(self.ids)


def build_index(classifier: CanvasClassifier, canvases, ids: Sequence[str],
                classifier_id: str = "") -> EmbeddingIndex:
    return EmbeddingIndex(classifier_id=classifier_id, ids=list(ids),
                          vectors=classifier.embed(canvases))


def cosine_distances(queries: np.ndarray, index_vectors: np.ndarray) -> np.ndarray:
    """1 - cosine similarity between every query row and every index row."""
    q = np.asarray(queries, dtype=np.float64)
    v = np.asarray(index_vectors, dtype=np.float64)
    if q.ndim != 2 or v.ndim != 2 or q.shape[1] != v.shape[1]:
        raise DimensionError(f"incompatible embedding shapes {q.shape} and {v.shape}")
    qn = np.linalg.norm(q, axis=1)
    vn = np.linalg.norm(v, axis=1)
    if np.any(qn == 0) or np.any(vn == 0):
        raise DegenerateDataError("cosine distance undefined for zero-norm vectors")
    return 1.0 - (q @ v.T) / np.outer(qn, vn)


def nearest_neighbors(queries, index: EmbeddingIndex, k: int = 5,
                      classifier: CanvasClassifier | None = None) -> list[list[tuple[str, float]]]:
    """k nearest index entries per query under cosine distance, distance
    ties broken by training-drawing id.

    Queries may be precomputed embeddings (2-D array) or canvases, in
    which case a classifier must be supplied to embed them.
    """
    q = np.asarray(queries, dtype=np.float64) if not isinstance(queries, list) else None
    if q is not None and q.ndim == 2:
        embeddings = q
    else:
        if classifier is None:
            raise ConfigError("embedding canvases requires a classifier")
        embeddings = classifier.embed(queries)
    if k < 1 or k > len(index):
        raise DimensionError(f"k must be in [1, {len(index)}], got {k}")
    dist = cosine_distances(embeddings, index.vectors)
    ids = np.asarray(index.ids)
    table = []
    for row in dist:
        ranked = np.lexsort((ids, row))[:k]
        table.append([(str(ids[j]), float(row[j])) for j in ranked])
    return table


# -- sample grid layout --------------------------------------------------------------


@dataclass
class GridLayout:
    order: np.ndarray
    neighbor_ids: list[list[str]] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.order.shape[0]

    def to_dict(self) -> dict:
        return {"order": self.order.tolist(), "neighbor_ids": self.neighbor_ids}


def adjacent_distance(embeddings: np.ndarray, order: np.ndarray) -> float:
    """Total cosine distance over orthogonally adjacent grid cells."""
    d = cosine_distances(embeddings, embeddings)
    total = 0.0
    size = order.shape[0]
    for r in range(size):
        for c in range(size):
            if c + 1 < size:
                total += d[order[r, c], order[r, c + 1]]
            if r + 1 < size:
                total += d[order[r, c], order[r + 1, c]]
    return float(total)


def arrange_grid(canvases, classifier: CanvasClassifier, index: EmbeddingIndex | None = None,
                 size: int = 10) -> GridLayout:
    """Greedy row-major placement: cell (0,0) takes sample 0, then each
    next cell takes the unplaced sample with the smallest mean cosine
    distance to its already-placed orthogonal neighbors (index ties go
    to the smallest sample number).  When an embedding index is given,
    the rank-1 training neighbor of each placed sample fills a second
    grid of the same shape."""
    embeddings = canvases if isinstance(canvases, np.ndarray) and canvases.ndim == 2 else classifier.embed(canvases)
    n = embeddings.shape[0]
    if n != size * size:
        raise DimensionError(f"grid needs exactly {size * size} samples, got {n}")
    d = cosine_distances(embeddings, embeddings)
    order = np.full((size, size), -1, dtype=np.int64)
    unplaced = list(range(1, n))
    order[0, 0] = 0
    for cell in range(1, n):
        r, c = divmod(cell, size)
        anchors = []
        if r > 0:
            anchors.append(order[r - 1, c])
        if c > 0:
            anchors.append(order[r, c - 1])
        cost = d[np.ix_(unplaced, anchors)].mean(axis=1)
        best = int(np.argmin(cost))  # argmin takes the first, so ties go to the smallest index
        order[r, c] = unplaced.pop(best)
    layout = GridLayout(order=order)
    if index is not None:
        table = nearest_neighbors(embeddings[order.reshape(-1)], index, k=1)
        flat = [row[0][0] for row in table]
        layout.neighbor_ids = [flat[r * size : (r + 1) * size] for r in range(size)]
    return layout
