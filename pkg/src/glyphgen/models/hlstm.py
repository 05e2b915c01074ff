"""Image-free hierarchical model.

A character-level LSTM consumes, at each step, the previous stroke's
start location and a bidirectional-LSTM encoding of its offsets; learned
embeddings stand in for both at the first step so the opening prediction
is trainable.  A two-layer MLP on the hidden state emits the next start
location mixture plus a stop logit, and a stroke-level LSTM conditioned
on (hidden state, sampled location) emits offsets with an end bit.

The stop factor is skipped at the first step (every character has at
least one stroke) and the closing stop is read from one extra backbone
step after the last stroke.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .. import mdn
from ..autodiff import Dense, LSTMLayer, LSTMStack, Tensor
from ..render import Canvas, render_drawing
from ..splines import SplineDrawing, SplineStroke
from .base import COORD_SCALE, GenerativeModel, drawing_to_steps, sigmoid_value, split_offset_head
from .config import ModelConfig


class HierarchicalLSTM(GenerativeModel):
    kind = "hlstm"

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__(config, seed)
        rng = np.random.default_rng([self.seed, 0x02])
        store, k = self.params, config.mixture_components
        e, u = config.encoder_units, config.lstm_units
        self.enc_fwd = LSTMLayer(store, "encoder.fwd", 2, e, rng)
        self.enc_bwd = LSTMLayer(store, "encoder.bwd", 2, e, rng)
        self.backbone = LSTMStack(store, "character.lstm", 2 + 2 * e, u, config.lstm_layers, rng)
        self.start_y = store.add("character.start_y", rng.normal(0.0, 0.1, 2))
        self.start_enc = store.add("character.start_enc", rng.normal(0.0, 0.1, 2 * e))
        self.loc_hidden = Dense(store, "location.hidden", u, config.mlp_units, config.activation, rng)
        self.loc_head = Dense(store, "location.head", config.mlp_units, 6 * k + 1, "none", rng)
        self.stroke_lstm = LSTMStack(store, "stroke.lstm", 2 + u + 2, config.stroke_units, 1, rng)
        self.offset_start = store.add("stroke.start_embed", rng.normal(0.0, 0.1, 2))
        self.stroke_head = Dense(store, "stroke.head", config.stroke_units, 6 * k + 1, "none", rng)

    # -- submodel forwards -------------------------------------------------------

    def encode_stroke(self, offsets_norm: np.ndarray) -> Tensor:
        """Fixed-length stroke code: concatenated final states of a forward
        and a backward pass over the offset sequence."""
        fwd = self.enc_fwd.initial_state(1)
        bwd = self.enc_bwd.initial_state(1)
        for row in offsets_norm:
            fwd = self.enc_fwd.step(Tensor(row.reshape(1, 2)), fwd)
        for row in offsets_norm[::-1]:
            bwd = self.enc_bwd.step(Tensor(row.reshape(1, 2)), bwd)
        return ad.concat([fwd[0], bwd[0]], axis=1)

    def _head(self, h: Tensor) -> tuple[Tensor, Tensor]:
        """(location mixture raw, stop logit) from one backbone state."""
        h = ad.dropout(h, self.config.dropout, self.mode, self.dropout_rng)
        raw = self.loc_head(self.loc_hidden(h))
        k = self.config.mixture_components
        return raw[:, : 6 * k], ad.reshape(raw[:, 6 * k :], ())

    def _start_input(self) -> Tensor:
        return ad.concat(
            [ad.reshape(self.start_y.tensor, (1, 2)), ad.reshape(self.start_enc.tensor, (1, -1))],
            axis=1,
        )

    def _stroke_log_prob(self, h: Tensor, y_norm: np.ndarray, offsets_norm: np.ndarray) -> Tensor:
        k = self.config.mixture_components
        y_row = Tensor(y_norm.reshape(1, 2))
        prev = ad.reshape(self.offset_start.tensor, (1, 2))
        states = self.stroke_lstm.initial_state(1)
        total = Tensor(0.0)
        n = len(offsets_norm)
        for j in range(n):
            out, states = self.stroke_lstm.step(ad.concat([prev, h, y_row], axis=1), states)
            gmm_raw, end_logit = split_offset_head(self.stroke_head(out), k)
            total = total + mdn.gmm_log_prob(mdn.gmm_from_raw(gmm_raw), offsets_norm[j])
            total = total + mdn.bernoulli_logit_log_prob(end_logit, j == n - 1)
            prev = Tensor(offsets_norm[j].reshape(1, 2))
        return total

    # -- scoring -----------------------------------------------------------------

    def nll(self, drawing: SplineDrawing) -> Tensor:
        steps = drawing_to_steps(drawing)
        total = Tensor(0.0)
        states = self.backbone.initial_state(1)
        prev_input = self._start_input()
        for t, step in enumerate(steps):
            h, states = self.backbone.step(prev_input, states)
            gmm_raw, stop_logit = self._head(h)
            if t > 0:
                total = total + mdn.bernoulli_logit_log_prob(stop_logit, False)
            y_norm = step.y / COORD_SCALE
            offsets_norm = step.x / COORD_SCALE
            total = total + mdn.gmm_log_prob(mdn.gmm_from_raw(gmm_raw), y_norm)
            total = total + self._stroke_log_prob(h, y_norm, offsets_norm)
            prev_input = ad.concat([Tensor(y_norm.reshape(1, 2)), self.encode_stroke(offsets_norm)], axis=1)
        h, states = self.backbone.step(prev_input, states)
        _, stop_logit = self._head(h)
        total = total + mdn.bernoulli_logit_log_prob(stop_logit, True)
        return ad.neg(total)

    # -- sampling ----------------------------------------------------------------

    def generate(self, rng: np.random.Generator, temperature: float = 1.0) -> tuple[SplineDrawing, Canvas]:
        """Draw order per step is fixed: stop bit (from the second stroke
        on), location, then per-offset (mixture, end bit)."""
        was_training, self.training = self.training, False
        try:
            with ad.no_grad():
                strokes = self._generate(rng, temperature)
        finally:
            self.training = was_training
        return strokes, render_drawing(strokes)

    def _generate(self, rng: np.random.Generator, temperature: float) -> SplineDrawing:
        k = self.config.mixture_components
        strokes: SplineDrawing = []
        states = self.backbone.initial_state(1)
        prev_input = self._start_input()
        for t in range(self.config.max_strokes):
            h, states = self.backbone.step(prev_input, states)
            gmm_raw, stop_logit = self._head(h)
            if t > 0 and mdn.bernoulli_sample(sigmoid_value(float(stop_logit.data)), temperature, rng):
                break
            y_norm = mdn.gmm_sample(mdn.gmm_from_raw(gmm_raw), temperature, rng)
            y_row = Tensor(y_norm.reshape(1, 2))
            prev = ad.reshape(self.offset_start.tensor, (1, 2))
            stroke_states = self.stroke_lstm.initial_state(1)
            offsets = []
            for _ in range(self.config.max_offsets_per_stroke):
                out, stroke_states = self.stroke_lstm.step(ad.concat([prev, h, y_row], axis=1), stroke_states)
                sub_raw, end_logit = split_offset_head(self.stroke_head(out), k)
                delta = mdn.gmm_sample(mdn.gmm_from_raw(sub_raw), temperature, rng)
                offsets.append(delta)
                prev = Tensor(delta.reshape(1, 2))
                if mdn.bernoulli_sample(sigmoid_value(float(end_logit.data)), temperature, rng):
                    break
            offsets = np.array(offsets)
            strokes.append(SplineStroke(start=y_norm * COORD_SCALE, offsets=offsets * COORD_SCALE))
            prev_input = ad.concat([Tensor(y_norm.reshape(1, 2)), self.encode_stroke(offsets)], axis=1)
        return strokes
