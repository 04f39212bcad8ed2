"""Point-set encoder: per-point MLP, distance-based k-WTA, global max-pool.

Each point runs through three bias-free layers (2 -> 32 -> 128 -> 256). Per
layer: linear, ReLU, per-point max-normalization, then a k-winner mask that
keeps only the k rows of the weight matrix nearest (Euclidean) to the
layer's *input* vector. The frame's latent vector is the columnwise max of
the last layer's codes, a fixed 256-dim permutation-invariant summary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import artifacts
from .dataset import PointFrame
from .numerics import DTYPE, rows_over_max

INPUT_DIM = 2
LAYER_WIDTHS = (32, 128, 256)
LATENT_DIM = LAYER_WIDTHS[-1]


@dataclass
class EncoderParams:
    """Three prototype-row weight matrices plus the winner count k.

    ``k=None`` disables the winner mask entirely (the self-supervised
    baseline's architecture); otherwise the same k applies at every layer.
    """

    layers: tuple[np.ndarray, np.ndarray, np.ndarray]  # each (d_out, d_in)
    k: int | None

    def __post_init__(self):
        dims = (INPUT_DIM,) + LAYER_WIDTHS
        for w, d_in, d_out in zip(self.layers, dims, dims[1:]):
            if w.shape != (d_out, d_in):
                raise ValueError(f"encoder layer shape {w.shape} != ({d_out}, {d_in})")
            if not np.all(np.isfinite(w)):
                raise ValueError("encoder weights must be finite")
        if self.k is not None and not 1 <= self.k <= min(LAYER_WIDTHS):
            raise ValueError(f"k must be in [1, {min(LAYER_WIDTHS)}], got {self.k}")

    def param_count(self) -> int:
        return sum(w.size for w in self.layers)

    def copy(self) -> "EncoderParams":
        return EncoderParams(tuple(w.copy() for w in self.layers), self.k)


def max_normalize(v: np.ndarray) -> np.ndarray:
    """Divide a non-negative vector by its max; all-zero input is unchanged."""
    v = np.asarray(v)
    m = v.max() if v.size else 0.0
    return v / m if m > 0 else v


def pairwise_sq_dists(x: np.ndarray, w: np.ndarray, xw: np.ndarray | None = None) -> np.ndarray:
    """Squared Euclidean distances |x_i - w_j|^2 as an (N, d_out) matrix.

    Uses the expansion |x|^2 + |w|^2 - 2 x.w so the x @ w.T product computed
    for the layer forward doubles as the distance term; clipped at zero
    against rounding.
    """
    if xw is None:
        xw = x @ w.T
    sq = (x * x).sum(axis=1)[:, None] + (w * w).sum(axis=1)[None, :] - 2.0 * xw
    return np.maximum(sq, 0.0)


def kwta_winners(x: np.ndarray, w: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k weight rows nearest to x, ascending; ties break low."""
    if k > len(w):
        raise ValueError(f"k={k} exceeds layer width {len(w)}")
    d = pairwise_sq_dists(x[None, :], w)[0]
    return np.sort(np.argsort(d, kind="stable")[:k])


def layer_forward(
    x: np.ndarray, w: np.ndarray, k: int | None, dists: list | None = None
) -> np.ndarray:
    """One encoder layer over a stack of per-point inputs.

    Returns the (N, d_out) sparse code: linear -> ReLU -> max-normalize ->
    winner mask. ``k=None`` (or k equal to the layer width) skips the mask.
    ``dists``, when given, receives the squared-distance matrix for reuse by
    the Hebbian update.
    """
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"layer input {x.shape} incompatible with weights {w.shape}")
    if k is not None and k > len(w):
        raise ValueError(f"k={k} exceeds layer width {len(w)}")
    z = x @ w.T
    a = rows_over_max(np.maximum(z, 0))
    d = pairwise_sq_dists(x, w, xw=z)
    if dists is not None:
        dists.append(d)
    if k is not None and k < len(w):
        winners = np.argsort(d, axis=1, kind="stable")[:, :k]
        mask = np.zeros_like(a, dtype=bool)
        np.put_along_axis(mask, winners, True, axis=1)
        a = np.where(mask, a, 0)
    return a


def forward_codes(points: np.ndarray, params: EncoderParams, dists: list | None = None):
    """Layer inputs and codes for every layer: ([x1, x2, x3], [c1, c2, c3])."""
    x = np.ascontiguousarray(points, dtype=params.layers[0].dtype)
    inputs, codes = [], []
    for w in params.layers:
        inputs.append(x)
        x = layer_forward(x, w, params.k, dists=dists)
        codes.append(x)
    return inputs, codes


def encode(frame: PointFrame | np.ndarray, params: EncoderParams) -> np.ndarray:
    """Latent vector of a frame: columnwise max of the last layer's codes."""
    points = frame.points if isinstance(frame, PointFrame) else np.asarray(frame)
    if len(points) < 1:
        raise ValueError("encode: frame must contain at least one point")
    _, codes = forward_codes(points, params)
    return codes[-1].max(axis=0)


def init_encoder_centered(
    k: int | None, rng: np.random.Generator, dtype=DTYPE
) -> EncoderParams:
    """Fan-in-scaled centered init for the gradient-trained baselines.

    Mixed-sign rows keep pre-activations spread so ReLU sparsifies and the
    max-normalized codes vary across points; the all-positive prototype init
    would collapse mask-free latents toward a constant.
    """
    dims = (INPUT_DIM,) + LAYER_WIDTHS
    layers = tuple(
        rng.uniform(-1.0, 1.0, size=(d_out, d_in)).astype(dtype) / np.sqrt(d_in)
        for d_in, d_out in zip(dims, dims[1:])
    )
    return EncoderParams(layers, k)


def init_encoder(
    k: int | None,
    rng: np.random.Generator,
    frames: Sequence[PointFrame] | None = None,
    dtype=DTYPE,
    warmup_frames: int = 64,
) -> EncoderParams:
    """Prototype initialization for the Hebbian/k-WTA path.

    Layer-1 rows are uniform points of the unit square. With ``frames``,
    deeper rows copy the layer-input vector of a uniformly sampled training
    point from a warm-up pass, starting prototypes on the data manifold;
    without frames they are uniform [0, 1] (the instar updates then pull
    them onto the data, which is the regime the objective-trend experiments
    run in).
    """
    layers = [rng.uniform(0.0, 1.0, size=(LAYER_WIDTHS[0], INPUT_DIM)).astype(dtype)]
    sample_frames = None
    if frames:
        picks = rng.integers(len(frames), size=min(len(frames), warmup_frames))
        sample_frames = [frames[i] for i in picks]
    for d_in, d_out in zip(LAYER_WIDTHS, LAYER_WIDTHS[1:]):
        if sample_frames is None:
            layers.append(rng.uniform(0.0, 1.0, size=(d_out, d_in)).astype(dtype))
            continue
        # warm-up pass with the layers built so far
        pool = []
        for frame in sample_frames:
            x = np.ascontiguousarray(frame.points, dtype=dtype)
            for w in layers:
                x = layer_forward(x, w, k)
            pool.append(x)
        pool = np.vstack(pool)
        rows = pool[rng.integers(len(pool), size=d_out)]
        layers.append(np.ascontiguousarray(rows, dtype=dtype))
    return EncoderParams(tuple(layers), k)


def save_encoder(params: EncoderParams, path) -> None:
    artifacts.save_checkpoint(
        path,
        kind="encoder",
        meta={"k": params.k, "widths": list(LAYER_WIDTHS)},
        arrays={f"w{i+1}": w for i, w in enumerate(params.layers)},
    )


def load_encoder(path) -> EncoderParams:
    meta, arrays = artifacts.load_checkpoint(path, expected_kind="encoder")
    k = meta["k"]
    return EncoderParams(
        (arrays["w1"], arrays["w2"], arrays["w3"]), k=None if k is None else int(k)
    )
