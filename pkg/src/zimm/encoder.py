"""Pathway encoder: event history -> fixed-size patient embedding x.

Per day and per code type, the set of code embeddings is pooled by a
two-layer self-attention head stack: head k scores every code with
alpha_k' tanh(A_k E_C) and softmaxes over codes; the K head weightings are
then themselves attended over (b' tanh(B W)) to give one convex combination
per type. Pooling is permutation-invariant in the day's codes by
construction. The three pooled vectors are concatenated with horizon and
duration embeddings into a 200-dim day vector (defaults), layer-normalized,
and consumed chronologically by an LSTM; the final hidden state is
concatenated with an age embedding to give x.

Execution is batched: whole patient batches are packed into padded integer
arrays once, and the forward graph operates on (patients*days, codes)
blocks. Padding slots carry an additive -1e30 attention mask (so they get
exactly zero attention weight) and padded days are blended out of the
recurrence, so they have provably zero influence on x. Patient sequences
are padded at the front; real days always end at the last step.

``self_attention_aggregate`` and ``encode_day`` are plain-numpy reference
implementations of the same arithmetic, used as independent oracles against
the batched graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cells import init_lstm, lstm_step
from .config import Config
from .tokens import AGE_VOCAB, DURATION_VOCAB, HORIZON_VOCAB

__all__ = [
    "DayInput",
    "PatientSequence",
    "CODE_KINDS",
    "init_encoder",
    "pack_batch",
    "encode_batch",
    "encode_patient",
    "self_attention_aggregate",
    "encode_day",
    "day_dim",
]

CODE_KINDS = ("drug", "procedure", "diagnosis")

# Additive pre-softmax mask for padding slots.
_MASK_VALUE = -1e30


@dataclass(frozen=True)
class DayInput:
    """One observed day: token ids per code type plus day-level tokens.

    ``offset`` is the raw number of days before the index date (used by the
    window-based baseline features); ``horizon`` is its bucketized token.
    """

    drugs: tuple
    procedures: tuple
    diagnoses: tuple
    horizon: int
    duration: int
    offset: int

    def codes(self, kind: str) -> tuple:
        if kind == "drug":
            return self.drugs
        if kind == "procedure":
            return self.procedures
        if kind == "diagnosis":
            return self.diagnoses
        raise KeyError(kind)

    def total_codes(self) -> int:
        return len(self.drugs) + len(self.procedures) + len(self.diagnoses)


@dataclass(frozen=True)
class PatientSequence:
    """Chronologically ordered days (all strictly before the index date)."""

    days: tuple
    age_token: int


def day_dim(config: Config) -> int:
    return 3 * config.embedding.code_dim + 2 * config.embedding.time_dim


def init_encoder(store, config: Config, vocab_sizes: dict) -> None:
    """Create all encoder parameters (embedding row 0 = no-code/OOV)."""
    emb = config.embedding
    agg = config.aggregation
    for kind in CODE_KINDS:
        rows = vocab_sizes[kind] + 1
        store.embedding(f"encoder.emb.{kind}", (rows, emb.code_dim), decay=emb.code_l2)
        for k in range(agg.heads):
            store.glorot(f"encoder.attn.{kind}.A{k}", (emb.code_dim, emb.code_dim), decay=agg.l2)
            store.glorot_vector(f"encoder.attn.{kind}.a{k}", (emb.code_dim,), decay=agg.l2)
        store.glorot(f"encoder.attn.{kind}.B", (agg.heads, agg.heads), decay=agg.l2)
        store.glorot_vector(f"encoder.attn.{kind}.b", (agg.heads,), decay=agg.l2)
    store.embedding("encoder.emb.horizon", (HORIZON_VOCAB, emb.time_dim), decay=emb.time_l2)
    store.embedding("encoder.emb.duration", (DURATION_VOCAB, emb.time_dim), decay=emb.time_l2)
    store.embedding("encoder.emb.age", (AGE_VOCAB, emb.age_dim))
    in_dim = day_dim(config)
    for layer in range(config.encoder.layers):
        init_lstm(store, f"encoder.lstm{layer}", in_dim, config.encoder.units)
        in_dim = config.encoder.units


def pack_batch(seqs, config: Config) -> dict:
    """Pad a list of PatientSequence into dense index/mask arrays.

    Front padding: patient p with D_p days occupies slots
    [D_max - D_p, D_max). Each code-type list is replaced by the no-code
    sentinel [0] when empty, then padded to the batch-wide per-type maximum
    with attention-masked zeros.
    """
    P = len(seqs)
    if P == 0:
        raise ValueError("pack_batch: empty batch")
    for s in seqs:
        if len(s.days) == 0:
            raise ValueError("pack_batch: patient with no observed days")
    d_max = max(len(s.days) for s in seqs)
    n_max = {
        kind: max(1, max((len(d.codes(kind)) for s in seqs for d in s.days), default=1))
        for kind in CODE_KINDS
    }
    ids = {k: np.zeros((P, d_max, n_max[k]), dtype=np.intp) for k in CODE_KINDS}
    attn_mask = {k: np.full((P, d_max, n_max[k]), _MASK_VALUE) for k in CODE_KINDS}
    horizon = np.zeros((P, d_max), dtype=np.intp)
    duration = np.zeros((P, d_max), dtype=np.intp)
    day_mask = np.zeros((P, d_max))
    age = np.zeros(P, dtype=np.intp)
    for p, s in enumerate(seqs):
        age[p] = s.age_token
        start = d_max - len(s.days)
        for j, day in enumerate(s.days):
            slot = start + j
            day_mask[p, slot] = 1.0
            horizon[p, slot] = day.horizon
            duration[p, slot] = day.duration
            for kind in CODE_KINDS:
                codes = day.codes(kind) or (0,)
                ids[kind][p, slot, : len(codes)] = codes
                attn_mask[kind][p, slot, : len(codes)] = 0.0
    return {
        "ids": ids,
        "attn_mask": attn_mask,
        "horizon": horizon,
        "duration": duration,
        "day_mask": day_mask,
        "age": age,
        "P": P,
        "D": d_max,
    }


def _attend_type(store, kind: str, packed, config: Config, rng, training: bool) -> Tensor:
    """Pooled embedding per (patient, day) slot for one code type: (P*D, d_E)."""
    agg = config.aggregation
    emb = config.embedding
    ids = packed["ids"][kind]
    P, D, n = ids.shape
    addmask = packed["attn_mask"][kind].reshape(P * D, n)

    E = ad.embedding_lookup(store[f"encoder.emb.{kind}"], ids.reshape(-1))
    E = ad.gaussian_dropout(E, emb.code_gaussian_dropout, rng, training)

    heads = []
    for k in range(agg.heads):
        A = ad.dropout(store[f"encoder.attn.{kind}.A{k}"], agg.drop_connect, rng, training)
        scores = ad.matmul(ad.tanh(ad.matmul(E, ad.transpose(A))),
                           store[f"encoder.attn.{kind}.a{k}"])
        scores = ad.add(ad.reshape(scores, (P * D, n)), Tensor(addmask))
        w = ad.softmax(scores, axis=1)
        w = ad.dropout(w, agg.dropout, rng, training)
        heads.append(ad.reshape(w, (P * D, n, 1)))
    W = ad.concat(heads, axis=2)

    B = ad.dropout(store[f"encoder.attn.{kind}.B"], agg.drop_connect, rng, training)
    mix = ad.matmul(ad.tanh(ad.matmul(ad.reshape(W, (P * D * n, agg.heads)),
                                      ad.transpose(B))),
                    store[f"encoder.attn.{kind}.b"])
    mix = ad.add(ad.reshape(mix, (P * D, n)), Tensor(addmask))
    mu = ad.softmax(mix, axis=1)
    return ad.rowwise_weighted_sum(mu, ad.reshape(E, (P * D, n, emb.code_dim)))


def encode_batch(store, packed, config: Config, rng=None, training: bool = False) -> Tensor:
    """Batched forward: packed arrays -> x (P, units + age_dim)."""
    enc = config.encoder
    P, D = packed["P"], packed["D"]

    pooled = [_attend_type(store, kind, packed, config, rng, training) for kind in CODE_KINDS]
    hor = ad.embedding_lookup(store["encoder.emb.horizon"], packed["horizon"].reshape(-1))
    dur = ad.embedding_lookup(store["encoder.emb.duration"], packed["duration"].reshape(-1))
    days = ad.layer_norm(ad.concat(pooled + [hor, dur], axis=1), config.embedding.norm_eps)
    steps = ad.unstack(ad.reshape(days, (P, D, day_dim(config))), axis=1)

    day_mask = packed["day_mask"]
    units = enc.units
    h = [Tensor(np.zeros((P, units))) for _ in range(enc.layers)]
    c = [Tensor(np.zeros((P, units))) for _ in range(enc.layers)]
    for t in range(D):
        m = day_mask[:, t: t + 1]
        keep = 1.0 - m
        x_t = ad.dropout(steps[t], enc.dropout, rng, training)
        for layer in range(enc.layers):
            h_new, c_new = lstm_step(
                store, f"encoder.lstm{layer}", x_t, h[layer], c[layer],
                enc.recurrent_dropout, rng, training,
            )
            h[layer] = ad.add(ad.mask_apply(h_new, m), ad.mask_apply(h[layer], keep))
            c[layer] = ad.add(ad.mask_apply(c_new, m), ad.mask_apply(c[layer], keep))
            x_t = h[layer]

    age_emb = ad.embedding_lookup(store["encoder.emb.age"], packed["age"])
    return ad.concat([h[-1], age_emb], axis=1)


def encode_patient(seq: PatientSequence, store, config: Config,
                   training: bool = False, rng=None) -> Tensor:
    """Encode one patient; singleton batch through the batched path."""
    if len(seq.days) == 0:
        raise ValueError("encode_patient: sequence has no unmasked days")
    packed = pack_batch([seq], config)
    x = encode_batch(store, packed, config, rng, training)
    return ad.reshape(x, (x.data.shape[1],))


# ---------------------------------------------------------------------------
# plain-numpy reference implementations (independent oracles)
# ---------------------------------------------------------------------------


def _np_softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max())
    return e / e.sum()


def self_attention_aggregate(E_C: np.ndarray, store, prefix: str, heads: int) -> np.ndarray:
    """Reference pooling of a d_E x |C| embedding matrix (eval mode).

    w_k = softmax(alpha_k' tanh(A_k E_C)); W stacks the K weighings row-wise;
    mu = softmax(b' tanh(B W)); returns E_C mu.
    """
    E_C = np.asarray(E_C, dtype=np.float64)
    if E_C.ndim != 2 or E_C.shape[1] < 1:
        raise ValueError("self_attention_aggregate: need a d_E x |C| matrix with |C| >= 1")
    rows = []
    for k in range(heads):
        A = store[f"{prefix}.A{k}"].data
        alpha = store[f"{prefix}.a{k}"].data
        rows.append(_np_softmax(alpha @ np.tanh(A @ E_C)))
    W = np.stack(rows, axis=0)
    B = store[f"{prefix}.B"].data
    b = store[f"{prefix}.b"].data
    mu = _np_softmax(b @ np.tanh(B @ W))
    return E_C @ mu


def encode_day(day: DayInput, store, config: Config) -> np.ndarray:
    """Reference day vector (eval mode): pooled types + time embeddings,
    layer-normalized."""
    parts = []
    for kind in CODE_KINDS:
        codes = day.codes(kind) or (0,)
        table = store[f"encoder.emb.{kind}"].data
        if max(codes) >= table.shape[0]:
            raise IndexError(f"{kind} token out of range")
        E_C = table[list(codes)].T
        parts.append(self_attention_aggregate(E_C, store, f"encoder.attn.{kind}",
                                              config.aggregation.heads))
    parts.append(store["encoder.emb.horizon"].data[day.horizon])
    parts.append(store["encoder.emb.duration"].data[day.duration])
    v = np.concatenate(parts)
    centered = v - v.mean()
    return centered / np.sqrt((centered * centered).mean() + config.embedding.norm_eps)
