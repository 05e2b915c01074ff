"""Canvas-conditioned generative model.

Three submodels, each reading the 28x28 working canvas: a feed-forward
CNN that proposes the next stroke's start location as a mixture, a
no-pooling CNN whose 14x14 feature map an LSTM attends over while
emitting spline offsets one at a time, and a feed-forward CNN that
decides termination after every rendered stroke.  Scoring re-renders the
canvas between strokes exactly as generation does.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .. import mdn
from ..autodiff import ConvBlock, Dense, LSTMStack, Tensor
from ..render import Canvas, render_stroke
from ..splines import SplineDrawing, SplineStroke
from .base import COORD_SCALE, GenerativeModel, drawing_to_steps, sigmoid_value, split_offset_head
from .config import ModelConfig

FEATURE_SIDE = 14
N_FEATURE_CELLS = FEATURE_SIDE * FEATURE_SIDE


class FullNeuroSymbolic(GenerativeModel):
    kind = "full_ns"

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__(config, seed)
        rng = np.random.default_rng([self.seed, 0x01])
        act, p, k = config.activation, config.dropout, config.mixture_components
        store = self.params

        def feedforward_cnn(prefix: str, head_out: int):
            blocks, c_in = [], 1
            for i, c_out in enumerate(config.cnn_filters):
                blocks.append(ConvBlock(store, f"{prefix}.block{i}", c_in, c_out, act, p, rng))
                c_in = c_out
            side = 28
            for _ in config.cnn_filters:
                side = (side + 1) // 2
            dense_in = c_in * side * side
            hidden = Dense(store, f"{prefix}.dense", dense_in, config.dense_units, act, rng)
            head = Dense(store, f"{prefix}.head", config.dense_units, head_out, "none", rng)
            return blocks, hidden, head

        self.loc_blocks, self.loc_dense, self.loc_head = feedforward_cnn("location", 6 * k)
        self.term_blocks, self.term_dense, self.term_head = feedforward_cnn("termination", 1)

        # high-resolution branch: one stride-2 cut from 28 to 14, no pooling after
        self.stroke_blocks, c_in = [], 1
        for i, c_out in enumerate(config.stroke_filters):
            self.stroke_blocks.append(
                ConvBlock(store, f"stroke.block{i}", c_in, c_out, act, p, rng, pool=False)
            )
            c_in = c_out
        self.feature_channels = c_in

        u = config.lstm_units
        self.attn_hidden = Dense(store, "attention.hidden", c_in + u, config.attention_units, act, rng)
        self.attn_score = Dense(store, "attention.score", config.attention_units, 1, "none", rng)
        self.stroke_lstm = LSTMStack(store, "stroke.lstm", 2 + c_in + 2, u, config.lstm_layers, rng)
        self.offset_start = store.add("stroke.start_embed", rng.normal(0.0, 0.1, 2))
        self.stroke_head = Dense(store, "stroke.head", u, 6 * k + 1, "none", rng)

    # -- submodel forwards -------------------------------------------------------

    def _feedforward(self, x: Tensor, blocks, hidden: Dense, head: Dense) -> Tensor:
        out = x
        for block in blocks:
            out = block(out, self.mode, self.dropout_rng)
        out = ad.reshape(out, (out.data.shape[0], -1))
        out = hidden(out)
        out = ad.dropout(out, self.config.dropout, self.mode, self.dropout_rng)
        return head(out)

    def location_params(self, canvases: Tensor) -> mdn.GmmParams:
        """Mixture over the next start location, one row per input canvas."""
        return mdn.gmm_from_raw(self._feedforward(canvases, self.loc_blocks, self.loc_dense, self.loc_head))

    def termination_logits(self, canvases: Tensor) -> Tensor:
        return self._feedforward(canvases, self.term_blocks, self.term_dense, self.term_head)

    def feature_map(self, canvases: Tensor) -> Tensor:
        """(N, 1, 28, 28) -> (N, C, 14, 14) high-resolution features."""
        out = self.stroke_blocks[0](canvases, self.mode, self.dropout_rng)
        out = out[:, :, ::2, ::2]
        for block in self.stroke_blocks[1:]:
            out = block(out, self.mode, self.dropout_rng)
        return out

    def attend(self, features: Tensor, h: Tensor) -> tuple[Tensor, Tensor]:
        """Soft attention over feature cells.

        features is (cells, C), h is (1, units); returns the weighted
        context (1, C) and the weights (cells, 1), which sum to one.
        """
        tiled = ad.add(Tensor(np.zeros((features.data.shape[0], 1))), h)
        scores = self.attn_score(self.attn_hidden(ad.concat([features, tiled], axis=1)))
        weights = ad.softmax(scores, axis=0)
        return ad.matmul(ad.transpose(weights), features), weights

    def _stroke_log_prob(self, features: Tensor, y_norm: np.ndarray, offsets_norm: np.ndarray) -> Tensor:
        """Teacher-forced offset-sequence log-likelihood for one stroke."""
        k = self.config.mixture_components
        y_row = Tensor(y_norm.reshape(1, 2))
        prev = ad.reshape(self.offset_start.tensor, (1, 2))
        states = self.stroke_lstm.initial_state(1)
        total = Tensor(0.0)
        n = len(offsets_norm)
        for j in range(n):
            context, _ = self.attend(features, states[-1][0])
            out, states = self.stroke_lstm.step(ad.concat([prev, context, y_row], axis=1), states)
            raw = self.stroke_head(out)
            gmm_raw, end_logit = split_offset_head(raw, k)
            total = total + mdn.gmm_log_prob(mdn.gmm_from_raw(gmm_raw), offsets_norm[j])
            total = total + mdn.bernoulli_logit_log_prob(end_logit, j == n - 1)
            prev = Tensor(offsets_norm[j].reshape(1, 2))
        return total

    # -- scoring -----------------------------------------------------------------

    def nll(self, drawing: SplineDrawing) -> Tensor:
        steps = drawing_to_steps(drawing)
        canvases = [Canvas.blank()]
        for stroke in drawing:
            canvases.append(render_stroke(canvases[-1], stroke))
        before = Tensor(np.stack([c.pixels[None] for c in canvases[:-1]]))
        after = Tensor(np.stack([c.pixels[None] for c in canvases[1:]]))

        ys = np.stack([s.y for s in steps]) / COORD_SCALE
        total = ad.tsum(mdn.gmm_log_prob(self.location_params(before), ys))

        term = self.termination_logits(after)
        for t, step in enumerate(steps):
            total = total + mdn.bernoulli_logit_log_prob(ad.reshape(term[t], ()), step.terminal)

        features = self.feature_map(before)
        cells = ad.reshape(features, (len(steps), self.feature_channels, N_FEATURE_CELLS))
        for t, step in enumerate(steps):
            total = total + self._stroke_log_prob(
                ad.transpose(cells[t]), step.y / COORD_SCALE, step.x / COORD_SCALE
            )
        return ad.neg(total)

    # -- sampling ----------------------------------------------------------------

    def generate(self, rng: np.random.Generator, temperature: float = 1.0) -> tuple[SplineDrawing, Canvas]:
        """Ancestral sampling.  Draw order per stroke is fixed: location,
        then per-offset (mixture, end bit), then termination on the
        freshly rendered canvas, so a seeded generator replays exactly."""
        was_training, self.training = self.training, False
        try:
            with ad.no_grad():
                return self._generate(rng, temperature)
        finally:
            self.training = was_training

    def _generate(self, rng: np.random.Generator, temperature: float) -> tuple[SplineDrawing, Canvas]:
        k = self.config.mixture_components
        canvas = Canvas.blank()
        strokes: SplineDrawing = []
        for _ in range(self.config.max_strokes):
            image = Tensor(canvas.pixels[None, None])
            y_norm = mdn.gmm_sample(self.location_params(image), temperature, rng)
            features = ad.transpose(
                ad.reshape(self.feature_map(image), (self.feature_channels, N_FEATURE_CELLS))
            )
            y_row = Tensor(y_norm.reshape(1, 2))
            prev = ad.reshape(self.offset_start.tensor, (1, 2))
            states = self.stroke_lstm.initial_state(1)
            offsets = []
            for _ in range(self.config.max_offsets_per_stroke):
                context, _ = self.attend(features, states[-1][0])
                out, states = self.stroke_lstm.step(ad.concat([prev, context, y_row], axis=1), states)
                gmm_raw, end_logit = split_offset_head(self.stroke_head(out), k)
                delta = mdn.gmm_sample(mdn.gmm_from_raw(gmm_raw), temperature, rng)
                offsets.append(delta * COORD_SCALE)
                prev = Tensor(delta.reshape(1, 2))
                if mdn.bernoulli_sample(sigmoid_value(float(end_logit.data)), temperature, rng):
                    break
            stroke = SplineStroke(start=y_norm * COORD_SCALE, offsets=np.array(offsets))
            strokes.append(stroke)
            canvas = render_stroke(canvas, stroke)
            term_logit = float(self.termination_logits(Tensor(canvas.pixels[None, None])).data[0, 0])
            if mdn.bernoulli_sample(sigmoid_value(term_logit), temperature, rng):
                break
        return strokes, canvas
