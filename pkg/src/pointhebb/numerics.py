"""Dense array substrate with reverse-mode gradients.

The gradient-trained stages (set decoder, latent LSTM, end-to-end baseline)
are built from a small set of primitives over :class:`Tensor`. Each primitive
computes its forward value with plain numpy; when a :class:`Tape` is active
and a gradient-requiring tensor is involved, the primitive also appends one
record to the tape. The reverse pass walks records last-to-first, which is
reverse topological order because an op's inputs always exist before the op
runs.

Training runs in single precision by default; gradient tests construct
float64 tensors and get float64 arithmetic throughout.
"""

from __future__ import annotations

import contextvars
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Operand shapes incompatible with an op."""

    def __init__(self, op: str, *shapes):
        pretty = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {pretty}")
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)


class Tensor:
    """A numpy array plus gradient bookkeeping.

    ``requires_grad`` marks leaves the caller wants gradients for; it is set
    automatically on op outputs that depend on such a leaf while a tape is
    active.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def as_tensor(x, dtype=None) -> Tensor:
    """Wrap ``x`` as a constant Tensor (no-op on Tensors)."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "pointhebb_active_tape", default=None
)

# A record is (output, inputs, vjp) where vjp maps the output adjoint to one
# adjoint per input (None for inputs that do not require grad).
_Record = tuple[Tensor, tuple[Tensor, ...], Callable[[np.ndarray], tuple]]


class Tape:
    """Execution-ordered record of taped primitive applications.

    Use as a context manager::

        with Tape() as tape:
            loss = model(params)
        grads = tape.gradient(loss, params)

    A tape is single-writer: one forward pass per tape. Separate tapes are
    independent, so disjoint tapes may run concurrently.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._token = None

    def __enter__(self) -> "Tape":
        if _ACTIVE_TAPE.get() is not None:
            raise RuntimeError("a tape is already active in this context")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self._records)

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp) -> None:
        self._records.append((out, inputs, vjp))

    def gradient(self, loss: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Adjoints of a scalar ``loss`` with respect to ``sources``.

        Walks the record list in reverse, visiting each recorded op exactly
        once. Sources never touched by the forward pass get zero gradients.
        """
        if loss.data.ndim != 0:
            raise ShapeError("gradient", loss.shape)
        keep = {id(s) for s in sources}
        adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, vjp in reversed(self._records):
            out_g = adjoint.get(id(out))
            if out_g is None:
                continue
            if id(out) not in keep:
                del adjoint[id(out)]
            for inp, g in zip(inputs, vjp(out_g)):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + g
                else:
                    adjoint[key] = g
        return [
            adjoint.get(id(s), np.zeros_like(s.data)) for s in sources
        ]


def _apply(inputs: tuple[Tensor, ...], value: np.ndarray, vjp) -> Tensor:
    tape = _ACTIVE_TAPE.get()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=track)
    if track:
        tape._record(out, inputs, vjp)
    return out


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T (+ b)`` for ``x`` a vector or a stack of row vectors.

    ``w`` has shape (d_out, d_in); ``b``, when given, (d_out,).
    """
    if x.data.ndim not in (1, 2) or w.data.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError("linear", x.shape, w.shape)
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError("linear(bias)", b.shape, w.shape)
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data

    def vjp(g):
        gx = g @ w.data if x.requires_grad else None
        if w.requires_grad:
            gw = np.outer(g, x.data) if x.data.ndim == 1 else g.T @ x.data
        else:
            gw = None
        if b is None:
            return gx, gw
        gb = (g if g.ndim == 1 else g.sum(axis=0)) if b.requires_grad else None
        return gx, gw, gb

    return _apply((x, w) if b is None else (x, w, b), y, vjp)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0); subgradient at 0 is 0."""
    y = np.maximum(x.data, 0)

    def vjp(g):
        return (g * (x.data > 0),)

    return _apply((x,), y, vjp)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch form avoids exp overflow for large |x| and preserves dtype
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(np.asarray(x.data))

    def vjp(g):
        return (g * y * (1.0 - y),)

    return _apply((x,), y, vjp)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - y * y),)

    return _apply((x,), y, vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError("add", a.shape, b.shape)

    def vjp(g):
        return g, g

    return _apply((a, b), a.data + b.data, vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)

    def vjp(g):
        ga = g * b.data if a.requires_grad else None
        gb = g * a.data if b.requires_grad else None
        return ga, gb

    return _apply((a, b), a.data * b.data, vjp)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    c = float(c)

    def vjp(g):
        return (g * c,)

    return _apply((x,), x.data * np.asarray(c, dtype=x.dtype), vjp)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis (vectors or row stacks)."""
    if a.data.ndim != b.data.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError("concat", a.shape, b.shape)
    split = a.shape[-1]

    def vjp(g):
        return g[..., :split], g[..., split:]

    return _apply((a, b), np.concatenate([a.data, b.data], axis=-1), vjp)


def tile_rows(v: Tensor, n: int) -> Tensor:
    """Stack ``n`` copies of a vector as rows; adjoint sums over rows."""
    if v.data.ndim != 1:
        raise ShapeError("tile_rows", v.shape)

    def vjp(g):
        return (g.sum(axis=0),)

    return _apply((v,), np.tile(v.data, (n, 1)), vjp)


def mean_scalars(terms: Sequence[Tensor]) -> Tensor:
    """Mean of scalar tensors via an add chain (keeps the graph taped)."""
    acc = terms[0]
    for t in terms[1:]:
        acc = add(acc, t)
    return scale(acc, 1.0 / len(terms))


def reduce_mean(x: Tensor) -> Tensor:
    """Mean of all elements, as a scalar tensor."""
    size = x.data.size
    if size == 0:
        raise ShapeError("reduce_mean", x.shape)

    def vjp(g):
        return (np.full_like(x.data, g / size),)

    return _apply((x,), x.data.mean(), vjp)


def max_over_rows(x: Tensor) -> Tensor:
    """Columnwise max of a row stack; gradient routed to the argmax row only.

    Ties break to the lowest row index. Exactly permutation-invariant in the
    row order because max is an exact reduction.
    """
    if x.data.ndim != 2:
        raise ShapeError("max_over_rows", x.shape)
    winners = np.argmax(x.data, axis=0)
    y = x.data[winners, np.arange(x.shape[1])]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[winners, np.arange(x.shape[1])] = g
        return (gx,)

    return _apply((x,), y, vjp)


def rows_over_max(a: np.ndarray) -> np.ndarray:
    """Each row divided by its own max; all-zero rows pass through.

    Plain-numpy kernel shared by the taped op and the untaped encoder path
    so both produce bitwise-identical forwards. Expects non-negative input.
    """
    m = a.max(axis=1)
    safe = np.where(m > 0, m, 1).astype(a.dtype, copy=False)
    return a / safe[:, None]


def max_normalize_rows(x: Tensor) -> Tensor:
    """Per-row max-normalization with subgradient through the max element."""
    if x.data.ndim != 2:
        raise ShapeError("max_normalize_rows", x.shape)
    a = x.data
    m = a.max(axis=1)
    arg = np.argmax(a, axis=1)
    safe = np.where(m > 0, m, 1).astype(a.dtype, copy=False)
    y = a / safe[:, None]

    def vjp(g):
        gx = g / safe[:, None]
        rows = np.arange(a.shape[0])
        # the dividing element collects -sum_j g_ij * a_ij / m^2; for the
        # max element itself the two contributions cancel to zero
        corr = -(g * a).sum(axis=1) / (safe * safe)
        gx[rows, arg] = np.where(m > 0, corr + g[rows, arg] * a[rows, arg] / (safe * safe), g[rows, arg])
        return (gx,)

    return _apply((x,), y, vjp)


def smooth_l1_value(delta: np.ndarray) -> np.ndarray:
    """0.5*d^2 inside |d|<1, |d|-0.5 outside; continuous at the boundary."""
    ad = np.abs(delta)
    return np.where(ad < 1.0, 0.5 * delta * delta, ad - 0.5)


def chamfer_forward(s1: np.ndarray, s2: np.ndarray):
    """Chamfer sum under coordinate-wise smooth-L1 distance.

    Returns (value, nearest-in-s2 per s1 row, nearest-in-s1 per s2 row).
    The two directional sums are each accumulated in sorted order, which
    makes the value exactly invariant to permutations of either set.
    """
    if len(s1) == 0 or len(s2) == 0:
        raise ValueError("chamfer: point sets must be non-empty")
    diff = s1[:, None, :] - s2[None, :, :]
    d = smooth_l1_value(diff).sum(axis=-1)
    fwd = np.argmin(d, axis=1)
    bwd = np.argmin(d, axis=0)
    rows = d[np.arange(len(s1)), fwd]
    cols = d[bwd, np.arange(len(s2))]
    value = np.sort(rows).sum() + np.sort(cols).sum()
    return value, fwd, bwd


def chamfer_smooth_l1(pred: Tensor, target: np.ndarray) -> Tensor:
    """Taped Chamfer loss of predicted points against a fixed target set.

    ``pred`` is (n, 2); gradient flows to ``pred`` through the matched pairs
    (argmin ties to the lowest index).
    """
    if pred.data.ndim != 2:
        raise ShapeError("chamfer_smooth_l1", pred.shape)
    target = np.asarray(target, dtype=pred.dtype)
    value, fwd, bwd = chamfer_forward(pred.data, target)

    def vjp(g):
        gp = np.zeros_like(pred.data)
        # forward term: every predicted point pulls toward its nearest target
        delta = pred.data - target[fwd]
        gp += np.clip(delta, -1.0, 1.0)
        # backward term: each target pulls its nearest predicted point
        delta = pred.data[bwd] - target
        np.add.at(gp, bwd, np.clip(delta, -1.0, 1.0))
        return (gp * g,)

    return _apply((pred,), np.asarray(value), vjp)


# ---------------------------------------------------------------------------
# gradient checking and optimization
# ---------------------------------------------------------------------------


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    theta: np.ndarray,
    h: float = 1e-5,
    sample: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between taped and central-difference gradients.

    ``f`` maps a parameter tensor to a scalar tensor. With ``sample`` set,
    only that many randomly chosen components are perturbed (for large
    parameters); otherwise every component is checked.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if h <= 0:
        raise ValueError("finite_diff_check: h must be positive")
    param = Tensor(theta.copy(), requires_grad=True)
    with Tape() as tape:
        loss = f(param)
    if not np.isfinite(loss.data):
        raise ValueError("finite_diff_check: non-finite loss at theta")
    analytic = tape.gradient(loss, [param])[0]

    flat = theta.reshape(-1)
    idx = np.arange(flat.size)
    if sample is not None and sample < flat.size:
        rng = rng or np.random.default_rng(0)
        idx = rng.choice(flat.size, size=sample, replace=False)
    worst = 0.0
    for i in idx:
        bumped = flat.copy()
        bumped[i] += h
        hi = f(Tensor(bumped.reshape(theta.shape))).item()
        bumped[i] -= 2 * h
        lo = f(Tensor(bumped.reshape(theta.shape))).item()
        fd = (hi - lo) / (2 * h)
        a = analytic.reshape(-1)[i]
        err = abs(a - fd) / max(abs(a), abs(fd), 1e-12)
        worst = max(worst, err)
    return worst


class Adam:
    """Adaptive-moment gradient descent over a fixed parameter list.

    ``step`` consumes gradients aligned with the parameter list (as returned
    by :meth:`Tape.gradient`) and updates parameter data in place.
    """

    def __init__(self, params: Sequence[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("Adam.step: gradient list does not match parameters")
        self._t += 1
        b1t = 1.0 - self.beta1 ** self._t
        b2t = 1.0 - self.beta2 ** self._t
        for p, g, m, v in zip(self.params, grads, self._m, self._v):
            g = np.asarray(g, dtype=p.dtype)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= (self.lr / b1t) * m / (np.sqrt(v / b2t) + self.eps)
