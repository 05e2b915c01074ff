"""Tests for the optimizer, training loop, checkpoint format, and
hyperparameter grid selection.

Oracles: a reference Adam trajectory written out long-hand in the test,
the closed-form first-step size, a 200-step convergence pin on a convex
quadratic, and byte-level checks on the checkpoint container.
"""

import numpy as np
import pytest

from glyphgen.errors import (
    CheckpointError,
    ConfigError,
    ConfigMismatchError,
    DegenerateDataError,
    TrainingDivergedError,
)
from glyphgen.models import ModelConfig, build_model
from glyphgen.splines import SplineStroke
from glyphgen.training import (
    MAGIC,
    AdamMoments,
    HpResult,
    ModelCheckpoint,
    TrainConfig,
    adam_step,
    clip_gradients,
    config_id,
    hp_search,
    load_checkpoint,
    save_checkpoint,
    select_best,
    snapshot,
    train,
)

TINY = dict(
    cnn_filters=(2, 2, 2, 2),
    stroke_filters=(2, 2),
    activation="tanh",
    dense_units=3,
    lstm_layers=1,
    lstm_units=3,
    attention_units=3,
    encoder_units=3,
    stroke_units=3,
    mlp_units=3,
    mixture_components=2,
    dropout=0.0,
)


def tiny_model(kind, seed=3, **overrides):
    return build_model(ModelConfig(kind=kind, **{**TINY, **overrides}), seed=seed)


def small_drawings(n=4, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        out.append(
            [
                SplineStroke(start=rng.uniform(20, 80, 2), offsets=rng.uniform(-12, 12, (3, 2))),
                SplineStroke(start=rng.uniform(20, 80, 2), offsets=rng.uniform(-12, 12, (2, 2))),
            ]
        )
    return out


def quick_cfg(**overrides):
    base = dict(batch_size=2, learning_rate=1e-3, max_steps=4, eval_every=2, seed=7)
    return TrainConfig(**{**base, **overrides})


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.batch_size == 200
        assert cfg.learning_rate == 1e-3
        assert (cfg.beta1, cfg.beta2, cfg.eps) == (0.9, 0.999, 1e-8)
        assert cfg.clip_norm == 5.0

    def test_zero_batch_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0)

    def test_negative_learning_rate_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=-1e-3)

    def test_zero_learning_rate_allowed(self):
        assert TrainConfig(learning_rate=0.0).learning_rate == 0.0

    def test_bad_cadence_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(eval_every=0)
        with pytest.raises(ConfigError):
            TrainConfig(max_steps=0)

    def test_dict_round_trip(self):
        cfg = TrainConfig(batch_size=8, seed=42)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"momentum": 0.9})


class TestAdam:
    def test_first_step_is_signed_learning_rate(self):
        # bias correction makes m_hat = g and v_hat = g^2 at t=1, so the
        # update is -lr * g / (|g| + eps), i.e. -lr * sign(g) for g >> eps
        cfg = TrainConfig(learning_rate=0.05)
        for g in (1e-3, 0.5, -7.0):
            arrays = {"w": np.array([2.0])}
            moments = AdamMoments.zeros_like(arrays)
            adam_step(arrays, {"w": np.array([g])}, moments, 1, cfg)
            delta = arrays["w"][0] - 2.0
            assert np.isclose(delta, -cfg.learning_rate * np.sign(g), rtol=1e-4)

    def test_zero_gradient_leaves_fresh_state_unchanged(self):
        cfg = TrainConfig()
        arrays = {"w": np.array([1.5, -2.5])}
        moments = AdamMoments.zeros_like(arrays)
        adam_step(arrays, {"w": np.zeros(2)}, moments, 1, cfg)
        assert np.array_equal(arrays["w"], [1.5, -2.5])
        assert np.array_equal(moments.m["w"], np.zeros(2))
        assert np.array_equal(moments.v["w"], np.zeros(2))

    def test_zero_gradient_decays_existing_moments(self):
        cfg = TrainConfig()
        arrays = {"w": np.array([1.0])}
        moments = AdamMoments(m={"w": np.array([0.4])}, v={"w": np.array([0.09])})
        adam_step(arrays, {"w": np.zeros(1)}, moments, 5, cfg)
        assert np.isclose(moments.m["w"][0], 0.9 * 0.4, rtol=0, atol=1e-15)
        assert np.isclose(moments.v["w"][0], 0.999 * 0.09, rtol=0, atol=1e-15)

    def test_quadratic_converges_in_200_steps(self):
        # f(w) = w^2 from w = 1 at lr = 0.1 lands within 1e-2 of the minimum
        cfg = TrainConfig(learning_rate=0.1)
        arrays = {"w": np.array([1.0])}
        moments = AdamMoments.zeros_like(arrays)
        for t in range(1, 201):
            adam_step(arrays, {"w": 2.0 * arrays["w"]}, moments, t, cfg)
        assert abs(arrays["w"][0]) < 1e-2

    def test_matches_reference_trajectory(self):
        cfg = TrainConfig(learning_rate=3e-3)
        rng = np.random.default_rng(11)
        w = {"a": rng.normal(size=3), "b": rng.normal(size=(2, 2))}
        arrays = {k: v.copy() for k, v in w.items()}
        moments = AdamMoments.zeros_like(arrays)
        ref = {k: v.copy() for k, v in w.items()}
        m = {k: np.zeros_like(v) for k, v in w.items()}
        v = {k: np.zeros_like(a) for k, a in w.items()}
        for t in range(1, 11):
            grads = {k: rng.normal(size=a.shape) for k, a in w.items()}
            adam_step(arrays, grads, moments, t, cfg)
            for k in ref:
                g = grads[k]
                m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * g
                v[k] = cfg.beta2 * v[k] + (1 - cfg.beta2) * g * g
                m_hat = m[k] / (1 - cfg.beta1**t)
                v_hat = v[k] / (1 - cfg.beta2**t)
                ref[k] = ref[k] - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        for k in ref:
            assert np.allclose(arrays[k], ref[k], rtol=0, atol=1e-15)

    def test_non_finite_gradient_names_parameter(self):
        arrays = {"lstm.w": np.zeros(2)}
        moments = AdamMoments.zeros_like(arrays)
        with pytest.raises(TrainingDivergedError, match="lstm.w"):
            adam_step(arrays, {"lstm.w": np.array([1.0, np.nan])}, moments, 1, TrainConfig())

    def test_missing_gradient_treated_as_zero(self):
        arrays = {"w": np.array([3.0])}
        moments = AdamMoments.zeros_like(arrays)
        adam_step(arrays, {}, moments, 1, TrainConfig())
        assert np.array_equal(arrays["w"], [3.0])

    def test_step_counter_starts_at_one(self):
        arrays = {"w": np.zeros(1)}
        with pytest.raises(ConfigError):
            adam_step(arrays, {"w": np.zeros(1)}, AdamMoments.zeros_like(arrays), 0, TrainConfig())


class TestClipGradients:
    def test_large_norm_clipped_exactly_to_bound(self):
        rng = np.random.default_rng(2)
        grads = {"a": rng.normal(size=5) * 10, "b": rng.normal(size=(3, 2)) * 10}
        before = {k: g.copy() for k, g in grads.items()}
        pre = clip_gradients(grads, 5.0)
        post = np.sqrt(sum(np.sum(g * g) for g in grads.values()))
        assert pre > 5.0
        assert np.isclose(post, 5.0, rtol=1e-12)
        # clipping rescales, never rotates
        for k in grads:
            assert np.allclose(grads[k] * pre / 5.0, before[k], rtol=1e-12)

    def test_small_norm_untouched(self):
        grads = {"a": np.array([0.3, -0.4])}
        pre = clip_gradients(grads, 5.0)
        assert np.isclose(pre, 0.5)
        assert np.array_equal(grads["a"], [0.3, -0.4])


class TestTrainLoop:
    def test_same_seed_identical_traces(self):
        cfg = quick_cfg()
        drawings = small_drawings()
        traces = []
        for _ in range(2):
            model = tiny_model("baseline", seed=5)
            ckpts = list(train(model, drawings, cfg))
            traces.append(ckpts[-1].loss_trace)
        assert traces[0] == traces[1]

    def test_dropout_runs_are_reproducible(self):
        cfg = quick_cfg(batch_size=1, max_steps=2, eval_every=2)
        drawings = small_drawings(2)
        traces = []
        for _ in range(2):
            model = tiny_model("hlstm", seed=5, dropout=0.3)
            ckpts = list(train(model, drawings, cfg))
            traces.append(ckpts[-1].loss_trace)
        assert traces[0] == traces[1]

    def test_zero_learning_rate_trace_is_constant(self):
        cfg = quick_cfg(batch_size=1, learning_rate=0.0, max_steps=5, eval_every=5)
        model = tiny_model("baseline")
        (ckpt,) = train(model, small_drawings(1), cfg)
        assert len(set(ckpt.loss_trace)) == 1

    def test_loss_decreases_on_single_drawing(self):
        cfg = quick_cfg(batch_size=1, learning_rate=1e-2, max_steps=30, eval_every=30)
        model = tiny_model("baseline")
        (ckpt,) = train(model, small_drawings(1), cfg)
        assert ckpt.loss_trace[-1] < ckpt.loss_trace[0]

    def test_checkpoint_cadence(self):
        model = tiny_model("baseline")
        ckpts = list(train(model, small_drawings(), quick_cfg(max_steps=6, eval_every=2)))
        assert [c.step for c in ckpts] == [2, 4, 6]

    def test_final_partial_interval_still_checkpointed(self):
        model = tiny_model("baseline")
        ckpts = list(train(model, small_drawings(), quick_cfg(max_steps=5, eval_every=2)))
        assert [c.step for c in ckpts] == [2, 4, 5]

    def test_trace_length_matches_steps(self):
        model = tiny_model("baseline")
        ckpts = list(train(model, small_drawings(), quick_cfg(max_steps=4, eval_every=2)))
        assert len(ckpts[-1].loss_trace) == 4
        assert all(np.isfinite(ckpts[-1].loss_trace))

    def test_empty_drawing_set_rejected(self):
        with pytest.raises(DegenerateDataError):
            next(train(tiny_model("baseline"), [], quick_cfg()))

    def test_poisoned_parameter_aborts_with_last_good_checkpoint(self):
        model = tiny_model("baseline")
        gen = train(model, small_drawings(), quick_cfg(max_steps=10, eval_every=1))
        next(gen)
        next(gen)
        name = next(iter(model.params.arrays()))
        bad = model.params[name].data.copy()
        bad.reshape(-1)[0] = np.nan
        model.params[name].data = bad
        with pytest.raises(TrainingDivergedError) as exc:
            next(gen)
        ckpt = exc.value.checkpoint
        assert ckpt.step == 1
        assert all(np.isfinite(a).all() for a in ckpt.arrays.values())

    def test_model_left_in_eval_mode(self):
        model = tiny_model("baseline")
        list(train(model, small_drawings(), quick_cfg(max_steps=2, eval_every=2)))
        assert model.mode == "eval"


class TestCheckpointFile:
    def run_short(self, kind="baseline", seed=5):
        model = tiny_model(kind, seed=seed)
        ckpts = list(train(model, small_drawings(), quick_cfg(max_steps=2, eval_every=2)))
        return model, ckpts[-1]

    def test_round_trip_fields(self, tmp_path):
        _, ckpt = self.run_short()
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        back = load_checkpoint(path)
        assert back.model_config == ckpt.model_config
        assert back.train_config == ckpt.train_config
        assert back.step == ckpt.step
        assert back.loss_trace == ckpt.loss_trace
        assert back.rng_state == ckpt.rng_state

    def test_arrays_round_trip_at_32_bit(self, tmp_path):
        _, ckpt = self.run_short()
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        back = load_checkpoint(path)
        assert set(back.arrays) == set(ckpt.arrays)
        for k, a in ckpt.arrays.items():
            assert np.array_equal(back.arrays[k], a.astype(np.float32).astype(np.float64))
        for k, a in ckpt.moments.m.items():
            assert np.array_equal(back.moments.m[k], a.astype(np.float32).astype(np.float64))

    def test_save_load_save_is_byte_identical(self, tmp_path):
        _, ckpt = self.run_short()
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(ckpt, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_restore_preserves_scores_within_float32(self, tmp_path):
        model, ckpt = self.run_short()
        drawing = small_drawings(1)[0]
        want = model.score_drawing(drawing)
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        fresh = tiny_model("baseline", seed=99)
        load_checkpoint(path).restore_into(fresh)
        assert np.isclose(fresh.score_drawing(drawing), want, rtol=1e-5)

    def test_build_model_from_checkpoint(self, tmp_path):
        model, ckpt = self.run_short()
        drawing = small_drawings(1)[0]
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        rebuilt = load_checkpoint(path).build_model()
        assert np.isclose(rebuilt.score_drawing(drawing), model.score_drawing(drawing), rtol=1e-5)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_payload_rejected(self, tmp_path):
        _, ckpt = self.run_short()
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-10])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_truncated_manifest_rejected(self, tmp_path):
        _, ckpt = self.run_short()
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(MAGIC) + 8 + 5])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_unknown_version_rejected(self, tmp_path):
        _, ckpt = self.run_short()
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        raw = path.read_bytes()
        assert raw.count(b'"version":1') == 1
        path.write_bytes(raw.replace(b'"version":1', b'"version":9'))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_cross_architecture_restore_rejected(self, tmp_path):
        _, ckpt = self.run_short(kind="baseline")
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        with pytest.raises(ConfigMismatchError):
            load_checkpoint(path).restore_into(tiny_model("hlstm"))

    def test_same_kind_different_width_rejected(self, tmp_path):
        _, ckpt = self.run_short(kind="baseline")
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        with pytest.raises(ConfigMismatchError):
            load_checkpoint(path).restore_into(tiny_model("baseline", lstm_units=4))


class TestHpSearch:
    def rows(self):
        return [
            HpResult(config_id({"lstm_units": 2}), {"lstm_units": 2}, [3.0, 4.0]),
            HpResult(config_id({"lstm_units": 3}), {"lstm_units": 3}, [2.0, 2.5]),
        ]

    def test_select_best_is_argmin_of_mean(self):
        assert select_best(self.rows()).overrides == {"lstm_units": 3}

    def test_injected_sentinel_wins(self):
        rows = self.rows() + [HpResult("zzz", {}, [-np.inf])]
        assert select_best(rows).config_id == "zzz"

    def test_tie_breaks_to_smallest_config_id(self):
        rows = [
            HpResult("b", {"x": 2}, [1.0]),
            HpResult("a", {"x": 1}, [1.0]),
        ]
        assert select_best(rows).config_id == "a"

    def test_empty_table_rejected(self):
        with pytest.raises(ConfigError):
            select_best([])

    def test_grid_search_end_to_end(self):
        drawings = small_drawings(4)
        folds = [(drawings[:3], drawings[3:])]
        base = ModelConfig(kind="baseline", **TINY)
        grid = [{"lstm_units": 2}, {"lstm_units": 3}]
        cfg = quick_cfg(max_steps=2, eval_every=2)
        best_config, best_row, table = hp_search(base, grid, folds, cfg)
        assert len(table) == 2
        assert all(len(r.fold_losses) == 1 for r in table)
        assert best_row in table
        assert best_config.kind == "baseline"
        assert best_config.lstm_units == best_row.overrides["lstm_units"]
        assert best_row.mean_loss == min(r.mean_loss for r in table)

    def test_empty_grid_rejected(self):
        with pytest.raises(ConfigError):
            hp_search(ModelConfig(kind="baseline", **TINY), [], [([], [])], quick_cfg())


def test_snapshot_copies_are_independent():
    model = tiny_model("baseline")
    moments = AdamMoments.zeros_like(model.params.arrays())
    ckpt = snapshot(model, TrainConfig(), moments, 0, [])
    name = next(iter(ckpt.arrays))
    before = ckpt.arrays[name].copy()
    bad = model.params[name].data.copy()
    bad.reshape(-1)[0] += 1.0
    model.params[name].data = bad
    assert np.array_equal(ckpt.arrays[name], before)
    assert isinstance(ckpt, ModelCheckpoint)
