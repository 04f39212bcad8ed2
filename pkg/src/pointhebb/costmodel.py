"""Analytic parameter/activation/FLOP accounting for the model family.

Conventions (chosen to reproduce the published rows exactly and applied
uniformly):

* FLOPs = 2 * multiply-accumulates of linear/conv/gate contractions; biases,
  activation functions, normalization, and winner-search distances are
  excluded. An LSTM cell therefore costs 8*(in+hidden)*hidden per step and a
  conv-LSTM cell 8*kh*kw*cin*cout*H*W.
* Activations sum the output sizes of linear/conv layers and of activation
  functions. A fused LSTM cell contributes its gate activations (4h) plus
  the cell update, its tanh, and the hidden state (3h); the gate
  pre-activations are internal to the cell and not counted.
* Per-point layers multiply by the point count N; pooled outputs count once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .encoder import INPUT_DIM, LAYER_WIDTHS
from .predictor import HIDDEN_DIM
from .setdecoder import HIDDEN_WIDTHS, NOISE_DIM, OUTPUT_DIM

__all__ = [
    "ArchSpec", "Linear", "Activation", "MaxPool", "Concat", "LSTMCell",
    "Conv", "ConvLSTMCell", "CostReport", "CostRatios", "REFERENCE_N",
    "count_params", "count_flops", "count_activations", "report",
    "compare_report", "encoder_spec", "predictor_spec", "decoder_spec",
    "model_spec", "convlstm_spec", "format_table", "reports_json",
]


@dataclass(frozen=True)
class Linear:
    d_in: int
    d_out: int
    bias: bool = True
    per_point: bool = False


@dataclass(frozen=True)
class Activation:
    dim: int
    per_point: bool = False


@dataclass(frozen=True)
class MaxPool:
    dim: int
    per_point: bool = False  # pooled output counts once


@dataclass(frozen=True)
class Concat:
    """Side input joined to the running feature (e.g. the sampling noise)."""

    extra: int
    per_point: bool = False


@dataclass(frozen=True)
class LSTMCell:
    d_in: int
    hidden: int
    per_point: bool = False


@dataclass(frozen=True)
class Conv:
    kh: int
    kw: int
    c_in: int
    c_out: int
    h: int
    w: int
    per_point: bool = False


@dataclass(frozen=True)
class ConvLSTMCell:
    kh: int
    kw: int
    c_in: int  # input channels including the stacked hidden state
    c_out: int
    h: int
    w: int
    per_point: bool = False


@dataclass(frozen=True)
class ArchSpec:
    name: str
    layers: tuple

    def __post_init__(self):
        # linear/activation chains must agree on dimensions
        prev_out = None
        for layer in self.layers:
            if isinstance(layer, Linear):
                if prev_out is not None and layer.d_in != prev_out:
                    raise ValueError(
                        f"{self.name}: linear d_in {layer.d_in} != previous d_out {prev_out}"
                    )
                prev_out = layer.d_out
            elif isinstance(layer, (Activation, MaxPool)):
                if prev_out is not None and layer.dim != prev_out:
                    raise ValueError(
                        f"{self.name}: activation dim {layer.dim} != previous d_out {prev_out}"
                    )
                prev_out = layer.dim
            elif isinstance(layer, LSTMCell):
                if prev_out is not None and layer.d_in != prev_out:
                    raise ValueError(
                        f"{self.name}: lstm d_in {layer.d_in} != previous d_out {prev_out}"
                    )
                prev_out = layer.hidden
            elif isinstance(layer, Concat):
                if prev_out is not None:
                    prev_out += layer.extra
            else:
                prev_out = None  # conv shapes are self-contained


@dataclass(frozen=True)
class CostReport:
    name: str
    params: int
    activations: int
    flops: int
    n_points: int

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "params": self.params,
            "activations": self.activations,
            "flops": self.flops,
            "n_points": self.n_points,
        }


def _params(layer) -> int:
    if isinstance(layer, Linear):
        return layer.d_in * layer.d_out + (layer.d_out if layer.bias else 0)
    if isinstance(layer, LSTMCell):
        concat = layer.d_in + layer.hidden
        return 4 * (concat * layer.hidden + layer.hidden)
    if isinstance(layer, Conv):
        return layer.kh * layer.kw * layer.c_in * layer.c_out + layer.c_out
    if isinstance(layer, ConvLSTMCell):
        return 4 * (layer.kh * layer.kw * layer.c_in * layer.c_out + layer.c_out)
    return 0


def _flops(layer) -> int:
    if isinstance(layer, Linear):
        return 2 * layer.d_in * layer.d_out
    if isinstance(layer, LSTMCell):
        return 8 * (layer.d_in + layer.hidden) * layer.hidden
    if isinstance(layer, Conv):
        return 2 * layer.kh * layer.kw * layer.c_in * layer.c_out * layer.h * layer.w
    if isinstance(layer, ConvLSTMCell):
        return 8 * layer.kh * layer.kw * layer.c_in * layer.c_out * layer.h * layer.w
    return 0


def _activations(layer) -> int:
    if isinstance(layer, Linear):
        return layer.d_out
    if isinstance(layer, (Activation, MaxPool)):
        return layer.dim
    if isinstance(layer, LSTMCell):
        return 7 * layer.hidden  # 4 gate activations + cell, tanh(cell), hidden
    if isinstance(layer, Conv):
        return layer.c_out * layer.h * layer.w
    if isinstance(layer, ConvLSTMCell):
        return 7 * layer.c_out * layer.h * layer.w
    return 0


def _total(spec: ArchSpec, per_layer, n: int) -> int:
    total = 0
    for layer in spec.layers:
        total += per_layer(layer) * (n if layer.per_point else 1)
    return total


def count_params(spec: ArchSpec) -> int:
    return _total(spec, _params, 1)


def count_flops(spec: ArchSpec, n: int = 1) -> int:
    if n < 1:
        raise ValueError("count_flops: n must be at least 1")
    return _total(spec, _flops, n)


def count_activations(spec: ArchSpec, n: int = 1) -> int:
    if n < 1:
        raise ValueError("count_activations: n must be at least 1")
    return _total(spec, _activations, n)


def report(spec: ArchSpec, n: int = 1) -> CostReport:
    return CostReport(
        name=spec.name,
        params=count_params(spec),
        activations=count_activations(spec, n),
        flops=count_flops(spec, n),
        n_points=n,
    )


# --------------------------------------------------------------------------
# the concrete architectures
# --------------------------------------------------------------------------

# N implied by the published encoder activation total (159*832 + 256)
REFERENCE_N = 159


def encoder_spec() -> ArchSpec:
    layers = []
    d_in = INPUT_DIM
    for width in LAYER_WIDTHS:
        layers.append(Linear(d_in, width, bias=False, per_point=True))
        layers.append(Activation(width, per_point=True))
        d_in = width
    layers.append(MaxPool(LAYER_WIDTHS[-1]))
    return ArchSpec("encoder", tuple(layers))


def predictor_spec() -> ArchSpec:
    latent = LAYER_WIDTHS[-1]
    return ArchSpec(
        "lstm",
        (
            Linear(latent, HIDDEN_DIM),
            LSTMCell(HIDDEN_DIM, HIDDEN_DIM),
            Linear(HIDDEN_DIM, latent),
        ),
    )


def decoder_spec() -> ArchSpec:
    dims = (LAYER_WIDTHS[-1] + NOISE_DIM,) + HIDDEN_WIDTHS + (OUTPUT_DIM,)
    layers = []
    for d_in, d_out in zip(dims, dims[1:]):
        layers.append(Linear(d_in, d_out, per_point=True))
        layers.append(Activation(d_out, per_point=True))
    return ArchSpec("decoder", tuple(layers))


def model_spec() -> ArchSpec:
    """Encoder + LSTM + decoder as one per-prediction pipeline."""
    return ArchSpec(
        "set-model",
        encoder_spec().layers
        + predictor_spec().layers
        + (Concat(NOISE_DIM, per_point=True),)
        + decoder_spec().layers,
    )


def convlstm_spec(resolution: int = 256) -> ArchSpec:
    """Frame-based baseline: one conv-LSTM cell plus an output convolution.

    Input (1, H, W), hidden (32, H, W); each gate convolves the stacked
    (1+32)-channel tensor with a 7x7 kernel; a final 7x7 conv maps the
    hidden state back to one channel.
    """
    return ArchSpec(
        "convlstm",
        (
            ConvLSTMCell(7, 7, 33, 32, resolution, resolution),
            Conv(7, 7, 32, 1, resolution, resolution),
        ),
    )


@dataclass(frozen=True)
class CostRatios:
    activations: float
    flops: float


def compare_report(model: CostReport, reference: CostReport) -> CostRatios:
    """How many times more activations/FLOPs the reference spends."""
    if model.activations == 0 or model.flops == 0:
        raise ZeroDivisionError("compare_report: model report has zero counts")
    return CostRatios(
        activations=reference.activations / model.activations,
        flops=reference.flops / model.flops,
    )


def _human(value: int) -> str:
    for cut, suffix in ((1e9, "G"), (1e6, "M"), (1e3, "k")):
        if value >= cut:
            return f"{value / cut:.1f}{suffix}"
    return str(value)


def format_table(reports: Sequence[CostReport]) -> str:
    """Aligned text table with raw and human-readable counts."""
    header = f"{'model':<12} {'params':>12} {'activations':>14} {'flops':>16}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(
            f"{r.name:<12} {r.params:>12,} {r.activations:>14,} {r.flops:>16,}"
        )
        lines.append(
            f"{'':<12} {_human(r.params):>12} {_human(r.activations):>14} {_human(r.flops):>16}"
        )
    return "\n".join(lines)


def reports_json(reports: Sequence[CostReport]) -> str:
    return json.dumps([r.as_dict() for r in reports], indent=2)
