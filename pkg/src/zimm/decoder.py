"""Decoder: patient embedding x -> mixture/multinomial parameters.

Three pieces:

* mixture head: one dense layer + softmax over B+1 logits -> pi;
* shared recurrence: a GRU unrolled B steps with x as the input at every
  step (h_0 = 0) producing h_1..h_B;
* parallel recurrences: B independent GRUs, each consuming the shared
  sequence (h_t); cell b's state at step t is projected to a scalar by a
  per-cell vector (no bias), and the B scalars of cell b are softmaxed over
  t to give row b of P. Bucket index therefore corresponds to the step axis.

The batched path (``decode_batch``) builds the differentiable graph used by
training and evaluation and returns log-probabilities. ``mixture_head``,
``shared_states``, ``multinomial_rows`` and ``decode`` are plain-numpy
single-patient references (eval mode) used as independent oracles.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cells import GRU_GATES, gru_step, init_gru, init_gru_stack, parallel_gru_step
from .config import Config
from .dist import ZimmParams

__all__ = [
    "init_decoder",
    "decode_batch",
    "mixture_head",
    "shared_states",
    "multinomial_rows",
    "decode",
]


def init_decoder(store, config: Config, x_dim: int) -> None:
    dec = config.decoder
    B = config.preprocessing.buckets
    store.glorot("decoder.mix.w", (x_dim, B + 1))
    store.zeros("decoder.mix.b", (B + 1,))
    in_dim = x_dim
    for layer in range(dec.shared_layers):
        init_gru(store, f"decoder.shared{layer}", in_dim, dec.units)
        in_dim = dec.units
    in_dim = dec.units
    for layer in range(dec.parallel_layers):
        init_gru_stack(store, f"decoder.par{layer}", B, in_dim, dec.units)
        in_dim = dec.units
    store.glorot_vector("decoder.proj", (B, dec.units))


def decode_batch(store, x: Tensor, config: Config, rng=None, training: bool = False):
    """x (P, x_dim) -> (log_pi (P, B+1), log_P (P, B, B))."""
    dec = config.decoder
    B = config.preprocessing.buckets
    P = x.data.shape[0]

    xd = ad.gaussian_dropout(x, dec.gaussian_dropout, rng, training)
    logits = ad.add(ad.matmul(xd, store["decoder.mix.w"]), store["decoder.mix.b"])
    log_pi = ad.log_softmax(logits, axis=1)

    shared = []
    h = [Tensor(np.zeros((P, dec.units))) for _ in range(dec.shared_layers)]
    for _ in range(B):
        inp = xd
        for layer in range(dec.shared_layers):
            h[layer] = gru_step(store, f"decoder.shared{layer}", inp, h[layer],
                                dec.recurrent_dropout, rng, training)
            inp = h[layer]
        shared.append(h[-1])

    proj = store["decoder.proj"]
    hp = [Tensor(np.zeros((P, B, dec.units))) for _ in range(dec.parallel_layers)]
    scores = []
    for t in range(B):
        hp[0] = parallel_gru_step(store, "decoder.par0", shared[t], hp[0],
                                  dec.recurrent_dropout, rng, training)
        for layer in range(1, dec.parallel_layers):
            hp[layer] = _stacked_parallel_step(store, f"decoder.par{layer}",
                                               hp[layer - 1], hp[layer],
                                               dec.recurrent_dropout, rng, training)
        s_t = ad.sum_last(ad.mul(hp[-1], proj))
        scores.append(ad.reshape(s_t, (P, B, 1)))
    log_P = ad.log_softmax(ad.concat(scores, axis=2), axis=2)
    return log_pi, log_P


def _stacked_parallel_step(store, prefix: str, x: Tensor, h: Tensor,
                           rec_rate: float, rng, training: bool) -> Tensor:
    """Parallel-GRU step whose input is itself per-cell: x (P, C, in)."""
    hd = ad.dropout(h, rec_rate, rng, training)

    def pre(g):
        wx = ad.cell_matvec(x, store[f"{prefix}.w{g}"])
        uh = ad.cell_matvec(hd, store[f"{prefix}.u{g}"])
        return ad.add(ad.add(wx, uh), store[f"{prefix}.b{g}"])

    z = ad.sigmoid(pre("z"))
    r = ad.sigmoid(pre("r"))
    wxn = ad.cell_matvec(x, store[f"{prefix}.wn"])
    uhn = ad.cell_matvec(hd, store[f"{prefix}.un"])
    n = ad.tanh(ad.add(ad.add(wxn, ad.mul(r, uhn)), store[f"{prefix}.bn"]))
    return ad.add(ad.mul(ad.one_minus(z), n), ad.mul(z, h))


# ---------------------------------------------------------------------------
# plain-numpy reference implementations (independent oracles, eval mode)
# ---------------------------------------------------------------------------


def _np_softmax(v, axis=-1):
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _np_gru(x, h, w):
    z = _np_sigmoid(x @ w["wz"] + h @ w["uz"] + w["bz"])
    r = _np_sigmoid(x @ w["wr"] + h @ w["ur"] + w["br"])
    n = np.tanh(x @ w["wn"] + r * (h @ w["un"]) + w["bn"])
    return (1.0 - z) * n + z * h


def _np_sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _gate_weights(store, prefix):
    return {k + g: store[f"{prefix}.{k}{g}"].data for g in GRU_GATES for k in ("w", "u", "b")}


def mixture_head(x: np.ndarray, store) -> np.ndarray:
    """Reference pi: softmax of the dense mixture logits."""
    x = np.asarray(x, dtype=np.float64)
    return _np_softmax(x @ store["decoder.mix.w"].data + store["decoder.mix.b"].data)


def shared_states(x: np.ndarray, store, config: Config) -> list:
    """Reference shared recurrence: B states of (units,)."""
    dec = config.decoder
    B = config.preprocessing.buckets
    x = np.asarray(x, dtype=np.float64)
    hs = [np.zeros(dec.units) for _ in range(dec.shared_layers)]
    out = []
    for _ in range(B):
        inp = x
        for layer in range(dec.shared_layers):
            hs[layer] = _np_gru(inp, hs[layer], _gate_weights(store, f"decoder.shared{layer}"))
            inp = hs[layer]
        out.append(hs[-1].copy())
    return out


def multinomial_rows(states, store, config: Config) -> np.ndarray:
    """Reference P: per-cell GRU over the shared sequence, projected and
    softmaxed over steps."""
    dec = config.decoder
    B = config.preprocessing.buckets
    proj = store["decoder.proj"].data
    scores = np.zeros((B, B))
    for c in range(B):
        per_layer = []
        for layer in range(dec.parallel_layers):
            w = {
                k + g: store[f"decoder.par{layer}.{k}{g}"].data[c]
                for g in GRU_GATES
                for k in ("w", "u")
            }
            for g in GRU_GATES:
                w["b" + g] = store[f"decoder.par{layer}.b{g}"].data[c]
            per_layer.append(w)
        hs = [np.zeros(dec.units) for _ in range(dec.parallel_layers)]
        for t in range(B):
            inp = np.asarray(states[t], dtype=np.float64)
            for layer in range(dec.parallel_layers):
                hs[layer] = _np_gru(inp, hs[layer], per_layer[layer])
                inp = hs[layer]
            scores[c, t] = hs[-1] @ proj[c]
    return _np_softmax(scores, axis=1)


def decode(x: np.ndarray, store, config: Config) -> ZimmParams:
    """Reference decode: compose the three reference pieces."""
    pi = mixture_head(x, store)
    P = multinomial_rows(shared_states(x, store, config), store, config)
    return ZimmParams(pi, P)
