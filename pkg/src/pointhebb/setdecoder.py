"""Sampling set decoder and smooth-L1 Chamfer reconstruction training.

The decoder turns one latent vector into N points by drawing a fresh
16-dim standard-normal noise vector per point, concatenating it to the
latent, and running a per-point MLP (272 -> 128 -> 128 -> 64 -> 2) with a
sigmoid head, so outputs land in the unit square. Stage-2 training freezes
the encoder and minimizes the Chamfer loss between decoded and true points
with Adam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import artifacts
from . import numerics as nm
from .dataset import PointFrame
from .encoder import EncoderParams, LATENT_DIM, encode
from .numerics import DTYPE, Tensor

NOISE_DIM = 16
HIDDEN_WIDTHS = (128, 128, 64)
OUTPUT_DIM = 2


@dataclass
class NoiseSpec:
    """Seeded standard-normal noise stream for the sampling layer."""

    dim: int = NOISE_DIM
    seed: int = 0

    def draw(self, n: int, dtype=DTYPE) -> np.ndarray:
        return np.random.default_rng(self.seed).standard_normal((n, self.dim)).astype(dtype)


@dataclass
class DecoderParams:
    """Weight/bias pairs for the four per-point MLP layers."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        dims = (LATENT_DIM + NOISE_DIM,) + HIDDEN_WIDTHS + (OUTPUT_DIM,)
        if len(self.layers) != len(dims) - 1:
            raise ValueError(f"decoder needs {len(dims) - 1} layers")
        for (w, b), d_in, d_out in zip(self.layers, dims, dims[1:]):
            if w.shape != (d_out, d_in) or b.shape != (d_out,):
                raise ValueError(f"decoder layer shape {w.shape}/{b.shape} != ({d_out},{d_in})")
        if self.layers[-1][0].shape[0] != OUTPUT_DIM:
            raise ValueError("decoder output layer must emit 2 coordinates")

    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def copy(self) -> "DecoderParams":
        return DecoderParams([(w.copy(), b.copy()) for w, b in self.layers])

    def tensors(self, requires_grad: bool = False) -> list[Tensor]:
        out = []
        for w, b in self.layers:
            out.append(Tensor(w, requires_grad=requires_grad))
            out.append(Tensor(b, requires_grad=requires_grad))
        return out


def init_decoder(rng: np.random.Generator, dtype=DTYPE) -> DecoderParams:
    """Fan-in-scaled uniform init for weights and biases."""
    dims = (LATENT_DIM + NOISE_DIM,) + HIDDEN_WIDTHS + (OUTPUT_DIM,)
    layers = []
    for d_in, d_out in zip(dims, dims[1:]):
        bound = 1.0 / math.sqrt(d_in)
        layers.append(
            (
                rng.uniform(-bound, bound, size=(d_out, d_in)).astype(dtype),
                rng.uniform(-bound, bound, size=d_out).astype(dtype),
            )
        )
    return DecoderParams(layers)


def smooth_l1(a: float, b: float) -> float:
    """0.5(a-b)^2 when |a-b| < 1, else |a-b| - 0.5."""
    return float(nm.smooth_l1_value(np.asarray(float(a) - float(b))))


def chamfer(s1: np.ndarray, s2: np.ndarray) -> float:
    """Symmetric nearest-neighbor sum under coordinate-wise smooth-L1."""
    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    value, _, _ = nm.chamfer_forward(s1, s2)
    return float(value)


def mlp_decode(z: Tensor, eps: np.ndarray, weights: Sequence[Tensor]) -> Tensor:
    """Width-agnostic decode graph: concat noise rows, ReLU MLP, sigmoid head.

    ``weights`` alternates W, b per layer (as from ``DecoderParams.tensors``).
    """
    h = nm.concat(nm.tile_rows(z, len(eps)), nm.as_tensor(eps))
    pairs = [(weights[i], weights[i + 1]) for i in range(0, len(weights), 2)]
    for w, b in pairs[:-1]:
        h = nm.relu(nm.linear(h, w, b))
    w, b = pairs[-1]
    return nm.sigmoid(nm.linear(h, w, b))


def decode(z: np.ndarray, n: int, noise: NoiseSpec, params: DecoderParams) -> np.ndarray:
    """Sample exactly ``n`` points from a latent vector; deterministic per seed."""
    if n < 1:
        raise ValueError("decode: point count must be at least 1")
    dtype = params.layers[0][0].dtype
    eps = noise.draw(n, dtype=dtype)
    z_t = Tensor(np.asarray(z, dtype=dtype))
    return mlp_decode(z_t, eps, params.tensors()).data


@dataclass
class DecoderTrainConfig:
    lr: float = 5e-4
    batch_size: int = 16
    epochs: int = 100
    eval_noise_seed: int = 0

    def validate(self) -> "DecoderTrainConfig":
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("decoder config: lr > 0, batch >= 1, epochs >= 1")
        return self


@dataclass
class LossHistory:
    rows: list[tuple[int, float, float]] = field(default_factory=list)  # epoch, train, val
    best_epoch: int = -1

    @property
    def train(self) -> list[float]:
        return [r[1] for r in self.rows]

    @property
    def validation(self) -> list[float]:
        return [r[2] for r in self.rows]


def reconstruction_loss(
    encoder_params: EncoderParams,
    decoder_params: DecoderParams,
    frames: Sequence[PointFrame],
    noise: NoiseSpec,
) -> float:
    """Mean Chamfer loss of encode-decode round trips over frames."""
    if not frames:
        raise ValueError("reconstruction_loss: no frames")
    total = 0.0
    for frame in frames:
        z = encode(frame, encoder_params)
        pts = decode(z, frame.n, noise, decoder_params)
        total += chamfer(pts, frame.points)
    return total / len(frames)


def train_decoder(
    encoder_params: EncoderParams,
    train_frames: Sequence[PointFrame],
    val_frames: Sequence[PointFrame],
    config: DecoderTrainConfig,
    rng: np.random.Generator,
    params: DecoderParams | None = None,
) -> tuple[DecoderParams, LossHistory]:
    """Stage-2: Adam on Chamfer reconstruction with the encoder frozen.

    Frames are individually shuffled per epoch; the checkpoint with the best
    validation loss is returned. Gradients flow only into decoder weights.
    """
    config.validate()
    if not train_frames or not val_frames:
        raise ValueError("train_decoder: empty frame list")
    if params is None:
        params = init_decoder(rng)
    dtype = params.layers[0][0].dtype

    # encoder frozen: latents are constants, computed once
    latents = [encode(f, encoder_params).astype(dtype) for f in train_frames]
    targets = [np.asarray(f.points, dtype=dtype) for f in train_frames]

    tensors = params.tensors(requires_grad=True)
    opt = nm.Adam(tensors, lr=config.lr)
    eval_noise = NoiseSpec(seed=config.eval_noise_seed)
    history = LossHistory()
    best: tuple[float, DecoderParams] | None = None

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_frames))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            with nm.Tape() as tape:
                losses = []
                for idx in batch:
                    eps = rng.standard_normal((len(targets[idx]), NOISE_DIM)).astype(dtype)
                    pts = mlp_decode(Tensor(latents[idx]), eps, tensors)
                    losses.append(nm.chamfer_smooth_l1(pts, targets[idx]))
                loss = nm.mean_scalars(losses)
            opt.step(tape.gradient(loss, tensors))
            epoch_loss += loss.item() * len(batch)
        val = reconstruction_loss(encoder_params, params, val_frames, eval_noise)
        history.rows.append((epoch, epoch_loss / len(train_frames), val))
        if best is None or val < best[0]:
            best = (val, params.copy())
            history.best_epoch = epoch
    return best[1], history


def save_decoder(params: DecoderParams, path) -> None:
    arrays = {}
    for i, (w, b) in enumerate(params.layers, start=1):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    artifacts.save_checkpoint(
        path, kind="decoder",
        meta={"widths": list(HIDDEN_WIDTHS), "noise_dim": NOISE_DIM}, arrays=arrays,
    )


def load_decoder(path) -> DecoderParams:
    _, arrays = artifacts.load_checkpoint(path, expected_kind="decoder")
    n_layers = len(arrays) // 2
    return DecoderParams(
        [(arrays[f"w{i}"], arrays[f"b{i}"]) for i in range(1, n_layers + 1)]
    )
