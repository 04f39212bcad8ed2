"""Activity-aware Hebbian/anti-Hebbian training of the encoder.

Per layer and frame, each weight row is pulled toward (or pushed away from)
the single layer-input point nearest to it, scaled by the learning rate and
1/N. The sign comes from comparing the row's activity — the fraction of
points whose post-mask output on that neuron is strictly positive — against
the target activity k/d. The orthogonality objective counts colliding
activation pairs per neuron; training keeps the checkpoint with the lowest
mean last-layer objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import PointFrame
from .encoder import (
    EncoderParams,
    LAYER_WIDTHS,
    forward_codes,
    init_encoder,
    pairwise_sq_dists,
)


@dataclass
class ActivityStats:
    """Per-neuron activation counts and fractions over one frame."""

    n: np.ndarray  # activation counts per neuron
    p: np.ndarray  # n / point count
    n_points: int
    p_star: float | None = None


@dataclass
class HebbConfig:
    eta: float = 0.01
    batch_size: int = 16
    epochs: int = 50
    k: int = 5

    def validate(self) -> "HebbConfig":
        if self.eta <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("hebbian config: eta > 0, epochs >= 1, batch >= 1")
        return self


def nearest_point(w_row: np.ndarray, x: np.ndarray) -> int:
    """Index of the input point nearest to one weight row; ties break low."""
    if len(x) < 1:
        raise ValueError("nearest_point: need at least one point")
    d = pairwise_sq_dists(x, w_row[None, :])[:, 0]
    return int(np.argmin(d))


def activity(code: np.ndarray, p_star: float | None = None) -> ActivityStats:
    """Counts of strictly-positive outputs per neuron (step function at 0)."""
    n = (code > 0).sum(axis=0)
    n_points = code.shape[0]
    return ActivityStats(n=n, p=n / n_points, n_points=n_points, p_star=p_star)


def learning_sign(p: float, p_star: float) -> int:
    """+1 Hebbian below target activity, -1 anti-Hebbian above, 0 at it."""
    if p < p_star:
        return 1
    if p > p_star:
        return -1
    return 0


def instar_delta(
    x: np.ndarray, w: np.ndarray, signs: np.ndarray, eta: float,
    dists: np.ndarray | None = None,
) -> np.ndarray:
    """Raw update: eta * sign_j * (x_nearest(j) - w_j) / N for every row."""
    n = len(x)
    if n < 1:
        raise ValueError("instar_delta: need at least one point")
    if dists is None:
        dists = pairwise_sq_dists(x, w)
    nearest = np.argmin(dists, axis=0)
    delta = (x[nearest] - w) * (np.asarray(signs, dtype=w.dtype)[:, None] * (eta / n))
    return delta.astype(w.dtype, copy=False)


def hebbian_step(
    x: np.ndarray,
    w: np.ndarray,
    code: np.ndarray,
    config: HebbConfig,
    dists: np.ndarray | None = None,
) -> np.ndarray:
    """One layer's weight update from one frame."""
    p_star = config.k / len(w)
    stats = activity(code, p_star=p_star)
    signs = np.sign(p_star - stats.p)
    return instar_delta(x, w, signs, config.eta, dists=dists)


def objective(code: np.ndarray) -> float:
    """Colliding-pair count: sum over neurons of C(n_r, 2)."""
    n = (code > 0).sum(axis=0).astype(np.int64)
    return float((n * (n - 1) // 2).sum())


def optimal_activity(k: int, d: int) -> float:
    """Target activity k/d minimizing colliding pairs under the k-WTA budget."""
    if not 1 <= k <= d:
        raise ValueError(f"optimal_activity: need 1 <= k <= d, got k={k}, d={d}")
    return k / d


@dataclass
class EncoderTrainHistory:
    """Per-epoch mean objective per layer, plus the pre-training baseline."""

    initial: tuple[float, ...]  # mean objective per layer at initialization
    per_epoch: list[tuple[float, ...]] = field(default_factory=list)
    selected_epoch: int = -1  # 1-based epoch of the returned checkpoint

    @property
    def last_layer(self) -> list[float]:
        return [row[-1] for row in self.per_epoch]

    def rows(self):
        yield (0, *self.initial)
        for i, row in enumerate(self.per_epoch, start=1):
            yield (i, *row)


def _mean_objectives(frames: Sequence[PointFrame], params: EncoderParams) -> tuple[float, ...]:
    totals = np.zeros(len(LAYER_WIDTHS))
    for frame in frames:
        _, codes = forward_codes(frame.points, params)
        totals += [objective(c) for c in codes]
    return tuple(totals / len(frames))


def train_encoder(
    frames: Sequence[PointFrame],
    config: HebbConfig,
    rng: np.random.Generator,
    params: EncoderParams | None = None,
) -> tuple[EncoderParams, EncoderTrainHistory]:
    """Stage-1 training loop over shuffled frame batches.

    Per frame, every layer computes its own update from its own inputs and
    codes (forward pass uses pre-step weights everywhere); per-frame updates
    are averaged over the batch before applying. Returns the checkpoint from
    the epoch with the minimum mean last-layer objective (earliest on ties).

    Default initialization is uniform random prototypes: the objective then
    starts high and the activity-aware updates drive it down (fitting the
    minimum-selection rule). Pass ``params`` for any other starting point,
    e.g. ``init_encoder(k, rng, frames=...)`` prototypes copied from data.
    """
    config.validate()
    if not frames:
        raise ValueError("train_encoder: empty training split")
    if params is None:
        params = init_encoder(config.k, rng)
    elif params.k != config.k:
        raise ValueError("train_encoder: params.k differs from config.k")

    history = EncoderTrainHistory(initial=_mean_objectives(frames, params))
    best: tuple[float, EncoderParams] | None = None
    weights = [w.copy() for w in params.layers]

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(frames))
        epoch_totals = np.zeros(len(LAYER_WIDTHS))
        current = EncoderParams(tuple(weights), config.k)
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            acc = [np.zeros_like(w) for w in weights]
            for idx in batch:
                frame = frames[idx]
                dists: list[np.ndarray] = []
                inputs, codes = forward_codes(frame.points, current, dists=dists)
                for li in range(len(weights)):
                    acc[li] += hebbian_step(
                        inputs[li], weights[li], codes[li], config, dists=dists[li]
                    )
                epoch_totals += [objective(c) for c in codes]
            for li in range(len(weights)):
                weights[li] += acc[li] / len(batch)
        history.per_epoch.append(tuple(epoch_totals / len(frames)))
        if best is None or history.per_epoch[-1][-1] < best[0]:
            best = (
                history.per_epoch[-1][-1],
                EncoderParams(tuple(w.copy() for w in weights), config.k),
            )
            history.selected_epoch = epoch
    return best[1], history
