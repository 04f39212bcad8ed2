"""Comparison models: untrained encoder, end-to-end self-supervised encoder
(no k-WTA), and the limited-encoder-data study.

The self-supervised variant shares the encoder architecture but drops the
winner mask and trains through backprop jointly with a decoder; gradients
route through ReLU, the per-point max-normalization, and the max-pool
argmax. The untrained baseline freezes a randomly initialized encoder and
only trains a decoder against it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nm
from .dataset import Chunk, DatasetSplit, PointFrame, frames_of
from .encoder import EncoderParams, INPUT_DIM, LAYER_WIDTHS, init_encoder_centered
from .hebbian import HebbConfig, train_encoder
from .numerics import Tensor
from .setdecoder import (
    DecoderParams,
    DecoderTrainConfig,
    LossHistory,
    NOISE_DIM,
    NoiseSpec,
    init_decoder,
    mlp_decode,
    reconstruction_loss,
    train_decoder,
)


class BaselineKind(enum.Enum):
    UNTRAINED = "untrained"
    SELF_SUPERVISED = "self_supervised"


def encode_graph(points: np.ndarray, weights: Sequence[Tensor], k: int | None = None) -> Tensor:
    """Taped encoder forward: linear / ReLU / max-normalize per layer, then
    columnwise max-pool. ``k=None`` disables the winner mask (the
    self-supervised variant); any k equal to a layer's width is a no-op.

    Width-agnostic so gradient tests can run at toy sizes.
    """
    from .encoder import kwta_winners  # untaped winner search for the mask

    x = nm.as_tensor(points)
    for w in weights:
        a = nm.max_normalize_rows(nm.relu(nm.linear(x, w)))
        if k is not None and k < w.shape[0]:
            mask = np.zeros((x.shape[0], w.shape[0]), dtype=a.dtype)
            for i in range(x.shape[0]):
                mask[i, kwta_winners(np.asarray(x.data[i]), w.data, k)] = 1
            a = nm.mul(a, Tensor(mask))
        x = a
    return nm.max_over_rows(x)


@dataclass
class SelfSupConfig:
    lr: float = 5e-4
    batch_size: int = 16
    epochs: int = 100
    eval_noise_seed: int = 0

    def validate(self) -> "SelfSupConfig":
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("self-supervised config: lr > 0, batch >= 1, epochs >= 1")
        return self


def train_self_supervised(
    train_frames: Sequence[PointFrame],
    val_frames: Sequence[PointFrame],
    config: SelfSupConfig,
    rng: np.random.Generator,
) -> tuple[EncoderParams, DecoderParams, LossHistory]:
    """Joint encoder+decoder Chamfer training with no winner mask.

    Starts from the same fresh random initialization the untrained baseline
    uses; the best-validation pair is returned. The returned EncoderParams
    carry k=None, so the winner mask stays off downstream as well.
    """
    config.validate()
    if not train_frames or not val_frames:
        raise ValueError("train_self_supervised: empty frame list")
    encoder = init_encoder_centered(None, rng)
    decoder = init_decoder(rng)
    dtype = decoder.layers[0][0].dtype

    enc_tensors = [Tensor(w, requires_grad=True) for w in encoder.layers]
    dec_tensors = decoder.tensors(requires_grad=True)
    all_tensors = enc_tensors + dec_tensors
    opt = nm.Adam(all_tensors, lr=config.lr)
    eval_noise = NoiseSpec(seed=config.eval_noise_seed)
    targets = [np.asarray(f.points, dtype=dtype) for f in train_frames]

    history = LossHistory()
    best: tuple[float, EncoderParams, DecoderParams] | None = None
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_frames))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            with nm.Tape() as tape:
                losses = []
                for idx in batch:
                    latent = encode_graph(targets[idx], enc_tensors, k=None)
                    eps = rng.standard_normal((len(targets[idx]), NOISE_DIM)).astype(dtype)
                    pts = mlp_decode(latent, eps, dec_tensors)
                    losses.append(nm.chamfer_smooth_l1(pts, targets[idx]))
                loss = nm.mean_scalars(losses)
            opt.step(tape.gradient(loss, all_tensors))
            epoch_loss += loss.item() * len(batch)
        val = reconstruction_loss(encoder, decoder, val_frames, eval_noise)
        history.rows.append((epoch, epoch_loss / len(train_frames), val))
        if best is None or val < best[0]:
            best = (val, encoder.copy(), decoder.copy())
            history.best_epoch = epoch
    return best[1], best[2], history


def run_untrained_baseline(
    seed: int,
    train_frames: Sequence[PointFrame],
    val_frames: Sequence[PointFrame],
    config: DecoderTrainConfig,
) -> tuple[EncoderParams, DecoderParams, LossHistory]:
    """Stage-2 training against a frozen, randomly initialized encoder.

    Same mask-free architecture and init distribution as the
    self-supervised baseline; the only difference is that the encoder never
    trains, so the pair isolates what end-to-end training buys.
    """
    rng = np.random.default_rng(seed)
    encoder = init_encoder_centered(None, rng)
    decoder, history = train_decoder(encoder, train_frames, val_frames, config, rng)
    return encoder, decoder, history


def subsample_frames(
    frames: Sequence[PointFrame], fraction: float, seed: int
) -> list[PointFrame]:
    """Seeded nested subsample: smaller fractions are prefixes of larger ones."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    count = int(len(frames) * fraction)
    if count < 1:
        raise ValueError(f"fraction {fraction} of {len(frames)} frames yields no data")
    order = np.random.default_rng(seed).permutation(len(frames))
    return [frames[i] for i in order[:count]]


DEFAULT_FRACTIONS = (0.5, 0.25, 0.1, 0.05, 0.02, 0.01)


@dataclass
class StudyRow:
    fraction: float
    method: str
    recon_loss: float
    pred_loss: float | None = None


def limited_data_study(
    split: DatasetSplit,
    fractions: Sequence[float],
    seeds: Sequence[int],
    hebb_config: HebbConfig,
    decoder_config: DecoderTrainConfig,
    selfsup_config: SelfSupConfig,
    lstm_config=None,
    eval_noise_seed: int = 0,
) -> list[StudyRow]:
    """Encoder-data ablation: both encoder variants on a subsample, all
    downstream stages on full data, losses on the test split.

    Prediction losses are filled in only when ``lstm_config`` is given
    (stage-3 runs are the expensive part of the grid).
    """
    from .predictor import prediction_loss, train_lstm

    train = frames_of(split.train)
    val = frames_of(split.validation)
    test = frames_of(split.test)
    noise = NoiseSpec(seed=eval_noise_seed)
    rows: list[StudyRow] = []

    for seed in seeds:
        for fraction in fractions:
            subset = subsample_frames(train, fraction, seed)
            for method in ("hebbian", "self_supervised"):
                if method == "hebbian":
                    enc, _ = train_encoder(
                        subset, hebb_config, np.random.default_rng(seed)
                    )
                else:
                    enc, _, _ = train_self_supervised(
                        subset, val, selfsup_config, np.random.default_rng(seed)
                    )
                dec, _ = train_decoder(
                    enc, train, val, decoder_config, np.random.default_rng(seed + 1)
                )
                recon = reconstruction_loss(enc, dec, test, noise)
                pred = None
                if lstm_config is not None:
                    lstm, _ = train_lstm(
                        enc, dec, split.train, split.validation, lstm_config,
                        np.random.default_rng(seed + 2),
                    )
                    pred = prediction_loss(enc, dec, lstm, split.test, noise)
                rows.append(StudyRow(fraction, method, recon, pred))
    return rows
