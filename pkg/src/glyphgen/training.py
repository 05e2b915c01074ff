"""Maximum-likelihood training: Adam, gradient clipping, checkpoints,
and grid-based hyperparameter selection.

Batches are handled as per-drawing graphs (no padding): each drawing's
loss is backpropagated separately and parameter gradients accumulate,
which keeps variable-length likelihoods exact.  A training run is a pure
function of (seed, corpus, config) in single-threaded mode; shuffling
derives from (seed, epoch) and dropout masks from a reseeded stream.

Checkpoint files carry the magic ``GGCKPT01``, an 8-byte little-endian
manifest length, a JSON manifest (version, configs, tensor directory,
step, loss trace, RNG state), then a packed little-endian float32
payload.  Compute stays 64-bit; storage is 32-bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import (
    CheckpointError,
    ConfigError,
    ConfigMismatchError,
    DegenerateDataError,
    TrainingDivergedError,
)
from .models import GenerativeModel, ModelConfig, build_model
from .splines import SplineDrawing

MAGIC = b"GGCKPT01"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    batch_size: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: int = 1000
    eval_every: int = 100
    seed: int = 0
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        # zero is allowed so a frozen run is expressible; negatives are not
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.eps <= 0 or self.clip_norm <= 0:
            raise ConfigError("eps and clip_norm must be positive")
        if self.max_steps < 1 or self.eval_every < 1:
            raise ConfigError("max_steps and eval_every must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdamMoments:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, arrays: dict[str, np.ndarray]) -> "AdamMoments":
        return cls(
            m={k: np.zeros_like(a) for k, a in arrays.items()},
            v={k: np.zeros_like(a) for k, a in arrays.items()},
        )


def adam_step(
    arrays: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    moments: AdamMoments,
    t: int,
    cfg: TrainConfig,
) -> None:
    """Bias-corrected Adam update, in place on arrays and moments."""
    if t < 1:
        raise ConfigError(f"adam step counter starts at 1, got {t}")
    for name, a in arrays.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(a)
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient in parameter {name!r}")
        m, v = moments.m[name], moments.v[name]
        m[...] = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v[...] = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        a[...] = a - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients so the global L2 norm is at most max_norm.

    Returns the pre-clip norm; scaling is in place.
    """
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


# -- checkpoints ----------------------------------------------------------------


@dataclass
class ModelCheckpoint:
    version: int
    model_config: ModelConfig
    train_config: TrainConfig
    arrays: dict[str, np.ndarray]
    moments: AdamMoments
    step: int
    loss_trace: list[float] = field(default_factory=list)
    rng_state: dict = field(default_factory=dict)

    def build_model(self, seed: int = 0) -> GenerativeModel:
        model = build_model(self.model_config, seed=seed)
        model.params.load_arrays(self.arrays)
        return model

    def restore_into(self, model: GenerativeModel) -> None:
        if model.config != self.model_config:
            raise ConfigMismatchError(
                f"checkpoint was trained as {self.model_config.kind!r} with a different "
                f"configuration than the target {model.config.kind!r} model"
            )
        model.params.load_arrays(self.arrays)


def snapshot(
    model: GenerativeModel,
    cfg: TrainConfig,
    moments: AdamMoments,
    step: int,
    loss_trace: list[float],
    rng_state: dict | None = None,
) -> ModelCheckpoint:
    return ModelCheckpoint(
        version=CHECKPOINT_VERSION,
        model_config=model.config,
        train_config=cfg,
        arrays={k: a.copy() for k, a in model.params.arrays().items()},
        moments=AdamMoments(
            m={k: a.copy() for k, a in moments.m.items()},
            v={k: a.copy() for k, a in moments.v.items()},
        ),
        step=step,
        loss_trace=list(loss_trace),
        rng_state=dict(rng_state or {}),
    )


def _payload_entries(ckpt: ModelCheckpoint) -> list[tuple[str, np.ndarray]]:
    entries = [(f"param/{k}", ckpt.arrays[k]) for k in sorted(ckpt.arrays)]
    entries += [(f"adam_m/{k}", ckpt.moments.m[k]) for k in sorted(ckpt.moments.m)]
    entries += [(f"adam_v/{k}", ckpt.moments.v[k]) for k in sorted(ckpt.moments.v)]
    return entries


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    directory = []
    chunks = []
    offset = 0
    for name, array in _payload_entries(ckpt):
        blob = np.ascontiguousarray(array, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(array.shape), "offset": offset, "nbytes": len(blob)})
        chunks.append(blob)
        offset += len(blob)
    manifest = {
        "version": ckpt.version,
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "tensors": directory,
        "step": ckpt.step,
        "loss_trace": ckpt.loss_trace,
        "rng_state": ckpt.rng_state,
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(b"".join(chunks))


def load_checkpoint(path) -> ModelCheckpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (manifest_len,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    body_start = len(MAGIC) + 8
    if len(raw) < body_start + manifest_len:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[body_start : body_start + manifest_len])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupt manifest ({e.msg})") from None
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {manifest.get('version')!r}"
        )
    payload = raw[body_start + manifest_len :]
    arrays: dict[str, np.ndarray] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(payload):
            raise CheckpointError(f"{path}: truncated payload at tensor {entry['name']!r}")
        data = np.frombuffer(payload[lo:hi], dtype="<f4").astype(np.float64)
        shape = tuple(entry["shape"])
        if data.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{path}: tensor {entry['name']!r} size does not match shape")
        data = data.reshape(shape)
        group, _, key = entry["name"].partition("/")
        {"param": arrays, "adam_m": m, "adam_v": v}[group][key] = data
    return ModelCheckpoint(
        version=manifest["version"],
        model_config=ModelConfig.from_dict(manifest["model_config"]),
        train_config=TrainConfig.from_dict(manifest["train_config"]),
        arrays=arrays,
        moments=AdamMoments(m=m, v=v),
        step=manifest["step"],
        loss_trace=[float(x) for x in manifest["loss_trace"]],
        rng_state=manifest["rng_state"],
    )


# -- training loop ----------------------------------------------------------------


def train(
    model: GenerativeModel,
    drawings: list[SplineDrawing],
    cfg: TrainConfig,
) -> Iterator[ModelCheckpoint]:
    """Minimize mean per-drawing NLL; yields a checkpoint every
    ``eval_every`` steps and once more at the end of the run.

    On a non-finite batch loss the run aborts with
    ``TrainingDivergedError`` whose ``checkpoint`` attribute holds the
    last good state.
    """
    if len(drawings) == 0:
        raise DegenerateDataError("cannot train on an empty drawing set")
    model.dropout_rng = np.random.default_rng([cfg.seed, 0xDD])
    trainable = [p.name for p in model.params.trainable()]
    moments = AdamMoments.zeros_like({n: model.params[n].data for n in trainable})
    loss_trace: list[float] = []

    epoch = 0
    order = np.random.default_rng([cfg.seed, epoch]).permutation(len(drawings))
    cursor = 0
    model.train()
    last_good = snapshot(model, cfg, moments, 0, loss_trace, {"epoch": 0, "cursor": 0})
    try:
        for step in range(1, cfg.max_steps + 1):
            entering = snapshot(
                model,
                cfg,
                moments,
                step - 1,
                loss_trace,
                {
                    "epoch": epoch,
                    "cursor": cursor,
                    "dropout": _jsonable(model.dropout_rng.bit_generator.state),
                },
            )

            batch = []
            while len(batch) < cfg.batch_size:
                if cursor >= len(order):
                    epoch += 1
                    order = np.random.default_rng([cfg.seed, epoch]).permutation(len(drawings))
                    cursor = 0
                batch.append(drawings[int(order[cursor])])
                cursor += 1

            model.params.zero_grads()
            batch_loss = 0.0
            try:
                for drawing in batch:
                    loss = model.nll(drawing)
                    batch_loss += float(loss.data)
                    loss.backward()
            except DegenerateDataError as cause:
                # non-finite parameters surface as degenerate head outputs
                err = TrainingDivergedError(f"model outputs became degenerate at step {step}: {cause}")
                err.checkpoint = last_good
                raise err from cause
            batch_loss /= len(batch)
            if not np.isfinite(batch_loss):
                err = TrainingDivergedError(f"batch loss became non-finite at step {step}")
                err.checkpoint = last_good
                raise err
            # this step's parameters just produced a finite loss, so they
            # become the divergence fallback
            last_good = entering
            loss_trace.append(batch_loss)

            grads = {}
            for name in trainable:
                g = model.params[name].grad
                grads[name] = (g / len(batch)) if g is not None else np.zeros_like(model.params[name].data)
            clip_gradients(grads, cfg.clip_norm)
            arrays = {n: model.params[n].data for n in trainable}
            try:
                adam_step(arrays, grads, moments, step, cfg)
            except TrainingDivergedError as err:
                err.checkpoint = last_good
                raise
            for name in trainable:
                model.params[name].data = arrays[name]

            if step % cfg.eval_every == 0 or step == cfg.max_steps:
                rng_state = {
                    "epoch": epoch,
                    "cursor": cursor,
                    "dropout": _jsonable(model.dropout_rng.bit_generator.state),
                }
                yield snapshot(model, cfg, moments, step, loss_trace, rng_state)
    finally:
        model.eval()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


# -- hyperparameter search ---------------------------------------------------------


def config_id(overrides: dict) -> str:
    return json.dumps(overrides, sort_keys=True, separators=(",", ":"))


@dataclass
class HpResult:
    config_id: str
    overrides: dict
    fold_losses: list[float]

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.fold_losses))


def select_best(table: list[HpResult]) -> HpResult:
    """Argmin of mean validation loss; ties go to the smallest config id."""
    if not table:
        raise ConfigError("hyperparameter results table is empty")
    return min(table, key=lambda r: (r.mean_loss, r.config_id))


def hp_search(
    base_config: ModelConfig,
    grid: list[dict],
    folds: list[tuple[list[SplineDrawing], list[SplineDrawing]]],
    cfg: TrainConfig,
) -> tuple[ModelConfig, HpResult, list[HpResult]]:
    """Train every grid configuration on every fold and select the argmin
    of mean validation NLL.  Returns (best config, best row, full table)."""
    if not grid:
        raise ConfigError("hyperparameter grid is empty")
    if not folds:
        raise ConfigError("hyperparameter search needs at least one fold")
    table: list[HpResult] = []
    for overrides in grid:
        merged = ModelConfig.from_dict({**base_config.to_dict(), **overrides})
        fold_losses = []
        for i, (train_set, val_set) in enumerate(folds):
            model = build_model(merged, seed=cfg.seed + i)
            for _ in train(model, train_set, cfg):
                pass
            fold_losses.append(float(np.mean([model.score_drawing(d) for d in val_set])))
        table.append(HpResult(config_id(overrides), dict(overrides), fold_losses))
    best = select_best(table)
    merged = ModelConfig.from_dict({**base_config.to_dict(), **best.overrides})
    return merged, best, table
