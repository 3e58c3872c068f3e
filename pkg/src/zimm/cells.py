"""LSTM and GRU cells built from autodiff primitives.

Two layers of API:

* single-state cells (``lstm_cell``, ``gru_cell``) operating on 1-D state
  vectors with explicit weight dicts — used by tests and hand oracles;
* batched step functions operating on (batch, units) or (batch, cells, units)
  states against a ParamStore prefix — used by the encoder/decoder forward
  passes. ``parallel_gru_step`` runs C independent GRUs whose weights are
  stored stacked as (C, in, units) tensors; independence from cell to cell is
  structural (each cell's slice only ever multiplies its own state).

Gate conventions: per-gate weight matrices and biases (no fused/stacked gate
projections within a cell). GRU: z (update), r (reset), n (candidate) with
h' = (1-z)*n + z*h and the reset gate applied to the recurrent term before
the candidate addition. LSTM: i, f, g, o gates, c' = f*c + i*g,
h' = o*tanh(c').

Recurrent dropout, when enabled, multiplies the previous hidden state by a
fresh mask before the recurrent matmuls of every gate in that step.
"""

from __future__ import annotations

from .autodiff import (
    Tensor,
    add,
    cell_matvec,
    dropout,
    matmul,
    mul,
    one_minus,
    shared_matvec,
    sigmoid,
    tanh,
)

__all__ = [
    "gru_cell",
    "lstm_cell",
    "init_gru",
    "init_lstm",
    "init_gru_stack",
    "gru_step",
    "lstm_step",
    "parallel_gru_step",
    "GRU_GATES",
    "LSTM_GATES",
]

GRU_GATES = ("z", "r", "n")
LSTM_GATES = ("i", "f", "g", "o")


def gru_cell(x: Tensor, h: Tensor, weights: dict) -> Tensor:
    """One GRU step on a single state vector.

    weights: {"wz","uz","bz","wr","ur","br","wn","un","bn"} with w* shaped
    (in, units), u* (units, units), b* (units,).
    """
    z = sigmoid(add(add(matmul(x, weights["wz"]), matmul(h, weights["uz"])), weights["bz"]))
    r = sigmoid(add(add(matmul(x, weights["wr"]), matmul(h, weights["ur"])), weights["br"]))
    n = tanh(add(add(matmul(x, weights["wn"]), mul(r, matmul(h, weights["un"]))), weights["bn"]))
    return add(mul(one_minus(z), n), mul(z, h))


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, weights: dict) -> tuple:
    """One LSTM step on a single state vector; returns (h', c').

    weights: {"wi","ui","bi","wf","uf","bf","wg","ug","bg","wo","uo","bo"}.
    """
    def gate(name, act):
        pre = add(
            add(matmul(x, weights["w" + name]), matmul(h, weights["u" + name])),
            weights["b" + name],
        )
        return act(pre)

    i = gate("i", sigmoid)
    f = gate("f", sigmoid)
    g = gate("g", tanh)
    o = gate("o", sigmoid)
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


def init_gru(store, prefix: str, in_dim: int, units: int, decay: float = 0.0) -> None:
    for g in GRU_GATES:
        store.glorot(f"{prefix}.w{g}", (in_dim, units), decay)
        store.glorot(f"{prefix}.u{g}", (units, units), decay)
        store.zeros(f"{prefix}.b{g}", (units,))


def init_lstm(store, prefix: str, in_dim: int, units: int, decay: float = 0.0) -> None:
    for g in LSTM_GATES:
        store.glorot(f"{prefix}.w{g}", (in_dim, units), decay)
        store.glorot(f"{prefix}.u{g}", (units, units), decay)
        store.zeros(f"{prefix}.b{g}", (units,))


def init_gru_stack(store, prefix: str, cells: int, in_dim: int, units: int,
                   decay: float = 0.0) -> None:
    """C independent GRUs stored stacked; fan sizes are per cell."""
    for g in GRU_GATES:
        store.glorot_stack(f"{prefix}.w{g}", (cells, in_dim, units), decay)
        store.glorot_stack(f"{prefix}.u{g}", (cells, units, units), decay)
        store.zeros(f"{prefix}.b{g}", (cells, units))


def _weights(store, prefix: str, gates) -> dict:
    return {k + g: store[f"{prefix}.{k}{g}"] for g in gates for k in ("w", "u", "b")}


def gru_step(store, prefix: str, x: Tensor, h: Tensor,
             rec_rate: float = 0.0, rng=None, training: bool = False) -> Tensor:
    """Batched GRU step: x (P, in), h (P, units) -> h' (P, units)."""
    w = _weights(store, prefix, GRU_GATES)
    hd = dropout(h, rec_rate, rng, training)
    z = sigmoid(add(add(matmul(x, w["wz"]), matmul(hd, w["uz"])), w["bz"]))
    r = sigmoid(add(add(matmul(x, w["wr"]), matmul(hd, w["ur"])), w["br"]))
    n = tanh(add(add(matmul(x, w["wn"]), mul(r, matmul(hd, w["un"]))), w["bn"]))
    return add(mul(one_minus(z), n), mul(z, h))


def lstm_step(store, prefix: str, x: Tensor, h: Tensor, c: Tensor,
              rec_rate: float = 0.0, rng=None, training: bool = False) -> tuple:
    """Batched LSTM step: x (P, in), h/c (P, units) -> (h', c')."""
    w = _weights(store, prefix, LSTM_GATES)
    hd = dropout(h, rec_rate, rng, training)

    def gate(name, act):
        return act(add(add(matmul(x, w["w" + name]), matmul(hd, w["u" + name])), w["b" + name]))

    i = gate("i", sigmoid)
    f = gate("f", sigmoid)
    g = gate("g", tanh)
    o = gate("o", sigmoid)
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


def parallel_gru_step(store, prefix: str, x: Tensor, h: Tensor,
                      rec_rate: float = 0.0, rng=None, training: bool = False) -> Tensor:
    """One step of C independent GRUs sharing the input.

    x (P, in) is fed to every cell; h (P, C, units) holds per-cell states.
    """
    hd = dropout(h, rec_rate, rng, training)

    def pre(g):
        wx = shared_matvec(x, store[f"{prefix}.w{g}"])
        uh = cell_matvec(hd, store[f"{prefix}.u{g}"])
        return wx, uh, store[f"{prefix}.b{g}"]

    wxz, uhz, bz = pre("z")
    z = sigmoid(add(add(wxz, uhz), bz))
    wxr, uhr, br = pre("r")
    r = sigmoid(add(add(wxr, uhr), br))
    wxn, uhn, bn = pre("n")
    n = tanh(add(add(wxn, mul(r, uhn)), bn))
    return add(mul(one_minus(z), n), mul(z, h))
