"""Latent-space sequence model: linear maps around a single LSTM cell.

A 256-dim latent enters through a 256->64 linear map, one unidirectional
LSTM cell (64 hidden/cell units) advances the state, and a 64->256 linear
map emits the predicted next latent. Over a 50-frame chunk the model
consumes the first 25 ground-truth latents (predicting one step ahead each
time), then feeds its own previous prediction back for the remaining 24
steps: 49 predictions per chunk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import artifacts
from . import numerics as nm
from .dataset import Chunk, CHUNK_LEN, PointFrame
from .encoder import EncoderParams, LATENT_DIM, encode
from .numerics import DTYPE, Tensor
from .setdecoder import (
    DecoderParams,
    LossHistory,
    NOISE_DIM,
    NoiseSpec,
    chamfer,
    decode,
    mlp_decode,
)

HIDDEN_DIM = 64
OBSERVE_STEPS = 25

_GATE_NAMES = ("i", "f", "g", "o")


@dataclass
class LSTMParams:
    """Input map, four gate weight/bias pairs, output map."""

    w_in: np.ndarray
    b_in: np.ndarray
    gates: dict[str, tuple[np.ndarray, np.ndarray]]  # keys i, f, g, o
    w_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self):
        if self.w_in.shape != (HIDDEN_DIM, LATENT_DIM) or self.b_in.shape != (HIDDEN_DIM,):
            raise ValueError("lstm input map must be 256 -> 64 with bias")
        for name in _GATE_NAMES:
            w, b = self.gates[name]
            if w.shape != (HIDDEN_DIM, 2 * HIDDEN_DIM) or b.shape != (HIDDEN_DIM,):
                raise ValueError(f"gate {name} must map 128 -> 64 with bias")
        if self.w_out.shape != (LATENT_DIM, HIDDEN_DIM) or self.b_out.shape != (LATENT_DIM,):
            raise ValueError("lstm output map must be 64 -> 256 with bias")

    def param_count(self) -> int:
        total = self.w_in.size + self.b_in.size + self.w_out.size + self.b_out.size
        total += sum(w.size + b.size for w, b in self.gates.values())
        return total

    def copy(self) -> "LSTMParams":
        return LSTMParams(
            self.w_in.copy(), self.b_in.copy(),
            {k: (w.copy(), b.copy()) for k, (w, b) in self.gates.items()},
            self.w_out.copy(), self.b_out.copy(),
        )

    def tensors(self, requires_grad: bool = False) -> list[Tensor]:
        arrays = [self.w_in, self.b_in]
        for name in _GATE_NAMES:
            arrays.extend(self.gates[name])
        arrays.extend([self.w_out, self.b_out])
        return [Tensor(a, requires_grad=requires_grad) for a in arrays]


def init_lstm(rng: np.random.Generator, dtype=DTYPE) -> LSTMParams:
    bound = 1.0 / math.sqrt(HIDDEN_DIM)

    def uniform(*shape):
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    return LSTMParams(
        w_in=uniform(HIDDEN_DIM, LATENT_DIM),
        b_in=uniform(HIDDEN_DIM),
        gates={n: (uniform(HIDDEN_DIM, 2 * HIDDEN_DIM), uniform(HIDDEN_DIM)) for n in _GATE_NAMES},
        w_out=uniform(LATENT_DIM, HIDDEN_DIM),
        b_out=uniform(LATENT_DIM),
    )


def lstm_cell(
    u: Tensor, h: Tensor, c: Tensor, gates: Sequence[Tensor]
) -> tuple[Tensor, Tensor]:
    """Standard cell: sigmoid input/forget/output gates, tanh candidate.

    ``gates`` is the flat tensor list (w_i, b_i, w_f, b_f, w_g, b_g, w_o, b_o).
    """
    xh = nm.concat(u, h)
    w_i, b_i, w_f, b_f, w_g, b_g, w_o, b_o = gates
    i = nm.sigmoid(nm.linear(xh, w_i, b_i))
    f = nm.sigmoid(nm.linear(xh, w_f, b_f))
    g = nm.tanh(nm.linear(xh, w_g, b_g))
    o = nm.sigmoid(nm.linear(xh, w_o, b_o))
    c_next = nm.add(nm.mul(f, c), nm.mul(i, g))
    h_next = nm.mul(o, nm.tanh(c_next))
    return h_next, c_next


def _step_tensors(z: Tensor, h: Tensor, c: Tensor, weights: Sequence[Tensor]):
    u = nm.linear(z, weights[0], weights[1])
    h_next, c_next = lstm_cell(u, h, c, weights[2:10])
    z_out = nm.linear(h_next, weights[10], weights[11])
    return z_out, h_next, c_next


def lstm_step(
    z: np.ndarray, state: tuple[np.ndarray, np.ndarray], params: LSTMParams
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """One untaped step from a latent and an (h, c) state."""
    dtype = params.w_in.dtype
    weights = params.tensors()
    z_out, h, c = _step_tensors(
        Tensor(np.asarray(z, dtype=dtype)),
        Tensor(np.asarray(state[0], dtype=dtype)),
        Tensor(np.asarray(state[1], dtype=dtype)),
        weights,
    )
    return z_out.data, (h.data, c.data)


def zero_state(dtype=DTYPE) -> tuple[np.ndarray, np.ndarray]:
    return np.zeros(HIDDEN_DIM, dtype=dtype), np.zeros(HIDDEN_DIM, dtype=dtype)


@dataclass
class RolloutResult:
    """Predictions for frames 2..50 of a chunk, plus input accounting."""

    predictions: np.ndarray  # (49, 256)
    observed_inputs: int
    recursive_inputs: int
    losses: np.ndarray | None = None  # per-step Chamfer after decoding


def _rollout_graph(
    latent_rows: Sequence[Tensor], weights: Sequence[Tensor], observe: int
) -> list[Tensor]:
    dtype = weights[0].dtype
    hidden = weights[0].shape[0]  # width-agnostic: toy dims reuse this graph
    h = Tensor(np.zeros(hidden, dtype=dtype))
    c = Tensor(np.zeros(hidden, dtype=dtype))
    preds: list[Tensor] = []
    for t in range(len(latent_rows) - 1):
        src = latent_rows[t] if t < observe else preds[-1]
        z_out, h, c = _step_tensors(src, h, c, weights)
        preds.append(z_out)
    return preds


def rollout(
    latents: np.ndarray, params: LSTMParams, observe: int = OBSERVE_STEPS
) -> RolloutResult:
    """Observe-then-recurse pass over one chunk's 50 latent vectors."""
    latents = np.asarray(latents, dtype=params.w_in.dtype)
    if latents.shape != (CHUNK_LEN, LATENT_DIM):
        raise ValueError(
            f"rollout expects ({CHUNK_LEN}, {LATENT_DIM}) latents, got {latents.shape}"
        )
    if not 1 <= observe < CHUNK_LEN:
        raise ValueError("rollout: observe must be in [1, 49]")
    rows = [Tensor(latents[t]) for t in range(CHUNK_LEN)]
    preds = _rollout_graph(rows, params.tensors(), observe)
    return RolloutResult(
        predictions=np.stack([p.data for p in preds]),
        observed_inputs=observe,
        recursive_inputs=CHUNK_LEN - 1 - observe,
    )


@dataclass
class LstmTrainConfig:
    lr: float = 5e-4
    batch_size: int = 16
    epochs: int = 50
    observe: int = OBSERVE_STEPS
    eval_noise_seed: int = 0

    def validate(self) -> "LstmTrainConfig":
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("lstm config: lr > 0, batch >= 1, epochs >= 1")
        if not 1 <= self.observe < CHUNK_LEN:
            raise ValueError("lstm config: observe must be in [1, 49]")
        return self


def _chunk_latents(chunk: Chunk, encoder_params: EncoderParams, dtype) -> np.ndarray:
    return np.stack([encode(f, encoder_params).astype(dtype) for f in chunk.frames])


def prediction_loss(
    encoder_params: EncoderParams,
    decoder_params: DecoderParams,
    lstm_params: LSTMParams,
    chunks: Sequence[Chunk],
    noise: NoiseSpec,
    observe: int = OBSERVE_STEPS,
) -> float:
    """Mean per-step Chamfer loss of decoded rollouts over chunks."""
    if not chunks:
        raise ValueError("prediction_loss: no chunks")
    total = 0.0
    for chunk in chunks:
        _, result = predict_sets(chunk, encoder_params, decoder_params, lstm_params,
                                 noise=noise, observe=observe)
        total += float(result.losses.mean())
    return total / len(chunks)


def train_lstm(
    encoder_params: EncoderParams,
    decoder_params: DecoderParams,
    train_chunks: Sequence[Chunk],
    val_chunks: Sequence[Chunk],
    config: LstmTrainConfig,
    rng: np.random.Generator,
    params: LSTMParams | None = None,
) -> tuple[LSTMParams, LossHistory]:
    """Stage-3: BPTT through the full rollout and the frozen decoder.

    The recursive feedback path is part of the graph, so gradients flow
    through predictions fed back as inputs. Encoder and decoder stay
    bitwise untouched; only LSTM parameters update.
    """
    config.validate()
    if encoder_params is None or decoder_params is None:
        raise ValueError("train_lstm: frozen encoder and decoder are required")
    if not train_chunks or not val_chunks:
        raise ValueError("train_lstm: empty chunk list")
    if params is None:
        params = init_lstm(rng)
    dtype = params.w_in.dtype

    latents = [_chunk_latents(c, encoder_params, dtype) for c in train_chunks]
    targets = [[np.asarray(f.points, dtype=dtype) for f in c.frames] for c in train_chunks]
    frozen_decoder = decoder_params.tensors(requires_grad=False)

    tensors = params.tensors(requires_grad=True)
    opt = nm.Adam(tensors, lr=config.lr)
    eval_noise = NoiseSpec(seed=config.eval_noise_seed)
    history = LossHistory()
    best: tuple[float, LSTMParams] | None = None

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_chunks))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            with nm.Tape() as tape:
                chunk_losses = []
                for ci in batch:
                    rows = [Tensor(latents[ci][t]) for t in range(CHUNK_LEN)]
                    preds = _rollout_graph(rows, tensors, config.observe)
                    step_losses = []
                    for j, pred in enumerate(preds):
                        target = targets[ci][j + 1]
                        eps = rng.standard_normal((len(target), NOISE_DIM)).astype(dtype)
                        pts = mlp_decode(pred, eps, frozen_decoder)
                        step_losses.append(nm.chamfer_smooth_l1(pts, target))
                    chunk_losses.append(nm.mean_scalars(step_losses))
                loss = nm.mean_scalars(chunk_losses)
            opt.step(tape.gradient(loss, tensors))
            epoch_loss += loss.item() * len(batch)
        val = prediction_loss(
            encoder_params, decoder_params, params, val_chunks,
            noise=eval_noise, observe=config.observe,
        )
        history.rows.append((epoch, epoch_loss / len(train_chunks), val))
        if best is None or val < best[0]:
            best = (val, params.copy())
            history.best_epoch = epoch
    return best[1], history


def predict_sets(
    chunk: Chunk,
    encoder_params: EncoderParams,
    decoder_params: DecoderParams,
    lstm_params: LSTMParams,
    noise: NoiseSpec,
    observe: int = OBSERVE_STEPS,
) -> tuple[list[PointFrame], RolloutResult]:
    """Decoded predictions for one chunk with ground-truth point counts.

    Returns (frames, rollout_result); ``rollout_result.losses`` holds the
    per-step Chamfer curve and the frames carry the ground-truth timestamps.
    """
    dtype = decoder_params.layers[0][0].dtype
    latents = _chunk_latents(chunk, encoder_params, dtype)
    result = rollout(latents, lstm_params, observe=observe)
    frames: list[PointFrame] = []
    losses = np.zeros(len(result.predictions))
    for j, pred in enumerate(result.predictions):
        truth = chunk.frames[j + 1]
        pts = decode(pred, truth.n, noise, decoder_params)
        losses[j] = chamfer(pts, truth.points)
        frames.append(PointFrame(t=truth.t, points=np.asarray(pts, dtype=np.float64)))
    result.losses = losses
    return frames, result


def save_lstm(params: LSTMParams, path) -> None:
    arrays = {"w_in": params.w_in, "b_in": params.b_in,
              "w_out": params.w_out, "b_out": params.b_out}
    for name in _GATE_NAMES:
        w, b = params.gates[name]
        arrays[f"w_{name}"] = w
        arrays[f"b_{name}"] = b
    artifacts.save_checkpoint(
        path, kind="lstm", meta={"hidden": HIDDEN_DIM, "latent": LATENT_DIM}, arrays=arrays
    )


def load_lstm(path) -> LSTMParams:
    _, arrays = artifacts.load_checkpoint(path, expected_kind="lstm")
    return LSTMParams(
        w_in=arrays["w_in"], b_in=arrays["b_in"],
        gates={n: (arrays[f"w_{n}"], arrays[f"b_{n}"]) for n in _GATE_NAMES},
        w_out=arrays["w_out"], b_out=arrays["b_out"],
    )
