"""Dense float64 tensors with taped reverse-mode differentiation.

The engine is deliberately small: a :class:`Tensor` is a thin wrapper around
a 64-bit numpy array, and a :class:`Tape` records every primitive applied
while it is active. ``backward`` replays the tape once in reverse to produce
gradients for the parameters of a watched store. There is no graph
optimization, no broadcasting cleverness beyond what the model needs, and no
dtype other than float64.

All primitives are deterministic given their inputs (and, for the stochastic
regularizers, an explicit RngStream), so two forward passes with the same
seed are bit-identical.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeMismatch",
    "backward",
    "finite_diff_grad",
    "matmul",
    "add",
    "add_n",
    "mul",
    "scale",
    "concat",
    "reshape",
    "transpose",
    "tanh",
    "sigmoid",
    "softmax",
    "log_softmax",
    "embedding_lookup",
    "layer_norm",
    "dropout",
    "gaussian_dropout",
    "mask_apply",
    "sum_all",
    "sum_last",
    "one_minus",
    "unstack",
    "shared_matvec",
    "cell_matvec",
    "rowwise_weighted_sum",
]


class ShapeMismatch(ValueError):
    """Raised when an op receives incompatible operand shapes."""

    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}")


class Tensor:
    """Dense float64 value in row-major order."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


def _wrap(arr: np.ndarray) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = arr
    return t


# Active tapes; ops record onto the innermost one.
_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Inputs are always recorded before their consumers, so a single reverse
    sweep visits every node after all of its uses. A tape supports exactly
    one backward pass.
    """

    def __init__(self):
        self._records = []  # (out, inputs tuple, backward fn)
        self._watched = {}  # name -> Tensor
        self._consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def watch(self, store) -> None:
        """Track a ParamStore (or name->Tensor mapping) for gradient output."""
        items = store.items() if hasattr(store, "items") else store
        for name, tensor in items:
            self._watched[name] = tensor

    def record(self, out, inputs, bwd) -> None:
        self._records.append((out, inputs, bwd))

    def __len__(self):
        return len(self._records)


def _record(out, inputs, bwd):
    if _TAPE_STACK:
        _TAPE_STACK[-1]._records.append((out, inputs, bwd))


def backward(tape: Tape, loss: Tensor) -> dict:
    """Gradients of a scalar loss w.r.t. every watched parameter.

    Parameters not reached by the recorded graph get zero gradients.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if tape._consumed:
        raise RuntimeError("backward: tape already consumed by a previous backward pass")
    tape._consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, bwd in reversed(tape._records):
        if type(out) is tuple:
            # Multi-output record: bwd receives the raw grad list, None for
            # outputs the loss never reached.
            gs = [grads.pop(id(o), None) for o in out]
            if all(g is None for g in gs):
                continue
            contribs = bwd(gs)
        else:
            g = grads.pop(id(out), None)
            if g is None:
                continue
            contribs = bwd(g)
        for inp, contrib in zip(inputs, contribs):
            if contrib is None:
                continue
            key = id(inp)
            acc = grads.get(key)
            if acc is None:
                grads[key] = contrib if contrib.flags.owndata else contrib.copy()
            else:
                acc += contrib

    out = {}
    for name, tensor in tape._watched.items():
        g = grads.get(id(tensor))
        out[name] = _wrap(g if g is not None else np.zeros_like(tensor.data))
    return out


def finite_diff_grad(f, params, step: float = 1e-6) -> dict:
    """Central-difference gradient of ``f()`` w.r.t. every store entry.

    ``f`` must be a pure, deterministic closure over the store (run with
    dropout disabled and any rng fixed). Coordinates are perturbed in place
    and restored exactly.
    """
    if step <= 0:
        raise ValueError("finite_diff_grad: step must be positive")
    out = {}
    for name, tensor in params.items():
        flat = tensor.data.reshape(-1)
        grad = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f()
            flat[i] = orig - step
            lo = f()
            flat[i] = orig
            grad[i] = (hi - lo) / (2.0 * step)
        out[name] = _wrap(grad.reshape(tensor.data.shape))
    return out


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim > 2 or bd.ndim > 2 or ad.shape[-1] != bd.shape[0]:
        raise ShapeMismatch("matmul", ad.shape, bd.shape)
    out = _wrap(ad @ bd)

    def bwd(g):
        # Promote 1-D operands to matrices so one rule covers all four cases.
        am = ad.reshape(1, -1) if ad.ndim == 1 else ad
        bm = bd.reshape(-1, 1) if bd.ndim == 1 else bd
        gm = g.reshape(am.shape[0], bm.shape[1])
        ga = (gm @ bm.T).reshape(ad.shape)
        gb = (am.T @ gm).reshape(bd.shape)
        return ga, gb

    _record(out, (a, b), bwd)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    try:
        out = _wrap(ad + bd)
    except ValueError:
        raise ShapeMismatch("add", ad.shape, bd.shape) from None

    def bwd(g):
        return _unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)

    _record(out, (a, b), bwd)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add_n(tensors) -> Tensor:
    tensors = list(tensors)
    shape = tensors[0].data.shape
    acc = tensors[0].data.copy()
    for t in tensors[1:]:
        if t.data.shape != shape:
            raise ShapeMismatch("add_n", shape, t.data.shape)
        acc += t.data
    out = _wrap(acc)

    def bwd(g):
        return tuple(g for _ in tensors)

    _record(out, tuple(tensors), bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    try:
        out = _wrap(ad * bd)
    except ValueError:
        raise ShapeMismatch("mul", ad.shape, bd.shape) from None

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    _record(out, (a, b), bwd)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _wrap(a.data * c)
    _record(out, (a,), lambda g: (g * c,))
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    datas = [t.data for t in tensors]
    try:
        out_data = np.concatenate(datas, axis=axis)
    except ValueError:
        raise ShapeMismatch("concat", *[d.shape for d in datas]) from None
    out = _wrap(out_data)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(
            np.moveaxis(moved[offsets[i]:offsets[i + 1]], 0, axis)
            for i in range(len(datas))
        )

    _record(out, tuple(tensors), bwd)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape
    out = _wrap(a.data.reshape(shape))
    _record(out, (a,), lambda g: (g.reshape(orig),))
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch("transpose", a.data.shape)
    out = _wrap(a.data.T.copy())
    _record(out, (a,), lambda g: (g.T,))
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = _wrap(y)
    _record(out, (a,), lambda g: (g * (1.0 - y * y),))
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = _wrap(y)
    _record(out, (a,), lambda g: (g * y * (1.0 - y),))
    return out


def _softmax_data(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeMismatch("softmax", a.data.shape)
    s = _softmax_data(a.data, axis)
    out = _wrap(s)

    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return ((g - dot) * s,)

    _record(out, (a,), bwd)
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeMismatch("log_softmax", a.data.shape)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    out = _wrap(y)
    s = np.exp(y)

    def bwd(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    _record(out, (a,), bwd)
    return out


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.intp)
    if ids.ndim != 1 or table.data.ndim != 2:
        raise ShapeMismatch("embedding_lookup", table.data.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(
            f"embedding_lookup: id out of range for table with {table.data.shape[0]} rows"
        )
    out = _wrap(table.data[ids])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    _record(out, (table,), bwd)
    return out


def layer_norm(a: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis to zero mean and unit variance.

    No learned scale/shift; the model applies it to fixed-width feature
    vectors where plain standardization is what is wanted.
    """
    x = a.data
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv
    out = _wrap(y)
    n = x.shape[-1]

    def bwd(g):
        gy = g * inv
        gvar = (g * centered).sum(axis=-1, keepdims=True) * (-0.5) * inv**3
        gmean = -gy.sum(axis=-1, keepdims=True)
        return (gy + gvar * 2.0 * centered / n + gmean / n,)

    _record(out, (a,), bwd)
    return out


def dropout(a: Tensor, rate: float, rng, training: bool) -> Tensor:
    """Inverted dropout; exact identity (same object) in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    out = _wrap(a.data * keep)
    _record(out, (a,), lambda g: (g * keep,))
    return out


def gaussian_dropout(a: Tensor, rate: float, rng, training: bool) -> Tensor:
    """Multiplicative Gaussian noise with mean 1 and variance rate/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"gaussian_dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    noise = rng.normal(1.0, np.sqrt(rate / (1.0 - rate)), a.data.shape)
    out = _wrap(a.data * noise)
    _record(out, (a,), lambda g: (g * noise,))
    return out


def mask_apply(a: Tensor, mask) -> Tensor:
    """Elementwise multiply by a constant mask; no gradient for the mask.

    The mask may broadcast against ``a`` but must not enlarge it.
    """
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    prod = a.data * m
    if prod.shape != a.data.shape:
        raise ShapeMismatch("mask_apply", a.data.shape, m.shape)
    out = _wrap(prod)
    _record(out, (a,), lambda g: (g * m,))
    return out


def sum_all(a: Tensor) -> Tensor:
    out = _wrap(np.asarray(a.data.sum()))
    shape = a.data.shape
    _record(out, (a,), lambda g: (np.broadcast_to(g, shape),))
    return out


def sum_last(a: Tensor) -> Tensor:
    """Sum over the last axis."""
    out = _wrap(a.data.sum(axis=-1))
    _record(out, (a,), lambda g: (np.broadcast_to(g[..., None], a.data.shape),))
    return out


def one_minus(a: Tensor) -> Tensor:
    out = _wrap(1.0 - a.data)
    _record(out, (a,), lambda g: (-g,))
    return out


def unstack(a: Tensor, axis: int = 1) -> list:
    """Split into views along an axis; one multi-output tape record."""
    n = a.data.shape[axis]
    moved = np.moveaxis(a.data, axis, 0)
    outs = tuple(_wrap(moved[i]) for i in range(n))
    piece_shape = moved.shape[1:]

    def bwd(gs):
        stacked = np.stack(
            [g if g is not None else np.zeros(piece_shape) for g in gs], axis=0
        )
        return (np.moveaxis(stacked, 0, axis),)

    _record(outs, (a,), bwd)
    return list(outs)


def shared_matvec(x: Tensor, w: Tensor) -> Tensor:
    """Apply C per-cell matrices to one shared input batch.

    x: (P, I); w: (C, I, J) -> out (P, C, J) with out[p, c] = x[p] @ w[c].
    """
    xd, wd = x.data, w.data
    if xd.ndim != 2 or wd.ndim != 3 or xd.shape[1] != wd.shape[1]:
        raise ShapeMismatch("shared_matvec", xd.shape, wd.shape)
    c, i, j = wd.shape
    w2 = wd.transpose(1, 0, 2).reshape(i, c * j)
    out = _wrap((xd @ w2).reshape(xd.shape[0], c, j))

    def bwd(g):
        g2 = g.reshape(xd.shape[0], c * j)
        gx = g2 @ w2.T
        gw = (xd.T @ g2).reshape(i, c, j).transpose(1, 0, 2)
        return gx, gw

    _record(out, (x, w), bwd)
    return out


def cell_matvec(h: Tensor, u: Tensor) -> Tensor:
    """Apply C per-cell matrices to C per-cell input batches.

    h: (P, C, I); u: (C, I, J) -> out (P, C, J) with out[p, c] = h[p, c] @ u[c].
    """
    hd, ud = h.data, u.data
    if hd.ndim != 3 or ud.ndim != 3 or hd.shape[1:] != ud.shape[:2]:
        raise ShapeMismatch("cell_matvec", hd.shape, ud.shape)
    ht = hd.transpose(1, 0, 2)
    out = _wrap(np.matmul(ht, ud).transpose(1, 0, 2))

    def bwd(g):
        gt = g.transpose(1, 0, 2)
        gh = np.matmul(gt, ud.transpose(0, 2, 1)).transpose(1, 0, 2)
        gu = np.matmul(ht.transpose(0, 2, 1), gt)
        return gh, gu

    _record(out, (h, u), bwd)
    return out


def rowwise_weighted_sum(w: Tensor, v: Tensor) -> Tensor:
    """Per-row convex combination: w (R, N), v (R, N, D) -> (R, D)."""
    wd, vd = w.data, v.data
    if wd.ndim != 2 or vd.ndim != 3 or wd.shape != vd.shape[:2]:
        raise ShapeMismatch("rowwise_weighted_sum", wd.shape, vd.shape)
    out = _wrap(np.matmul(wd[:, None, :], vd)[:, 0, :])

    def bwd(g):
        gw = np.matmul(vd, g[:, :, None])[:, :, 0]
        gv = wd[:, :, None] * g[:, None, :]
        return gw, gv

    _record(out, (w, v), bwd)
    return out
