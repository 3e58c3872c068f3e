"""Loss construction, the training loop, evaluation, and checkpoint files.

The loss for a batch is the mean over patients of the negative label
log-likelihood under the decoded distribution, plus on-graph L2 penalty
terms 0.5 * decay * ||w||^2 for every parameter registered with a nonzero
decay coefficient. Keeping the penalty in the loss (rather than adding
decay * w to gradients inside the optimizer) makes reported loss values and
gradient checks exactly consistent; the optimizer-side variant exists behind
``nadam_step(apply_decay=True)`` and would double-count if combined.

Training is reproducible bit-for-bit from the seed: parameter init, batch
shuffling, and dropout noise all come from named RngStream splits, and each
batch records exactly one tape whose backward pass accumulates gradients in
a fixed order.
"""

from __future__ import annotations

import json
import struct
import time

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .config import Config
from .dist import LabelVector, log_coefficient
from .encoder import pack_batch
from .metrics import ScoredLabels, mean_ap_detail
from .model import Model
from .optim import NadamState, clip_by_global_norm, nadam_step
from .params import ParamStore
from .rng import RngStream

__all__ = [
    "nll_batch",
    "train",
    "evaluate",
    "bucket_scores",
    "TrainingDiverged",
    "VocabMismatch",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]

CHECKPOINT_MAGIC = b"ZIMMCKPT"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


class VocabMismatch(ValueError):
    pass


def penalty_node(store) -> Tensor | None:
    """Sum of 0.5 * decay * ||w||^2 over decayed parameters, on the graph."""
    terms = [
        ad.scale(ad.sum_all(ad.mul(w, w)), 0.5 * d)
        for _, w, d in store.decayed()
    ]
    if not terms:
        return None
    return terms[0] if len(terms) == 1 else ad.add_n(terms)


def nll_batch(model: Model, batch, training: bool = False, rng=None) -> Tensor:
    """Mean negative log-likelihood over (sequence, label) pairs plus L2 terms.

    Returns the scalar loss node; record it under a Tape to differentiate.
    """
    if len(batch) == 0:
        raise ValueError("nll_batch: empty batch")
    B = model.config.preprocessing.buckets
    seqs = [s for s, _ in batch]
    labels = []
    for _, y in batch:
        y = y if isinstance(y, LabelVector) else LabelVector(y)
        if len(y) != B or y.n > B:
            raise ValueError(f"nll_batch: label incompatible with B={B}: {y}")
        labels.append(y)

    log_pi, log_P = model.forward_packed(pack_batch(seqs, model.config), rng, training)

    P = len(batch)
    pi_mask = np.zeros((P, B + 1))
    row_mask = np.zeros((P, B, B))
    coef = 0.0
    for p, y in enumerate(labels):
        pi_mask[p, y.n] = 1.0
        if y.n > 0:
            row_mask[p, y.n - 1, :] = y.y
            coef += log_coefficient(y)

    ll = ad.add(
        ad.add(ad.sum_all(ad.mask_apply(log_pi, pi_mask)),
               ad.sum_all(ad.mask_apply(log_P, row_mask))),
        Tensor(np.asarray(coef)),
    )
    loss = ad.scale(ll, -1.0 / P)
    pen = penalty_node(model.store)
    return loss if pen is None else ad.add(loss, pen)


def _epoch_batches(n: int, batch_size: int, rng: RngStream):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo: lo + batch_size]


def bucket_scores(model: Model, entries, chunk: int = 512):
    """Eval-mode scores for a list of cohort entries.

    Returns (binary_scores (N,), bucket_score_matrix (N, B)) where the binary
    score is P(n > 0) = 1 - pi_0 and bucket b's score is
    P(y_b >= 1) = 1 - pi_0 - sum_k pi_k (1 - p_{k,b})^k.
    """
    B = model.config.preprocessing.buckets
    pi, rows = model.predict([e.seq for e in entries], chunk)
    binary = 1.0 - pi[:, 0]
    powers = np.arange(1, B + 1)[None, :, None]
    miss = (1.0 - rows) ** powers
    buckets = 1.0 - pi[:, :1] - np.einsum("nk,nkb->nb", pi[:, 1:], miss)
    return binary, buckets


def _label_arrays(entries):
    y = np.array([e.y.y for e in entries], dtype=np.int64)
    return (y.sum(axis=1) > 0).astype(np.int64), (y > 0).astype(np.int64)


def evaluate(model: Model, entries, vocab_hashes: dict | None = None):
    """MetricsReport for a dataset split (eval mode, side-effect free)."""
    from .metrics import MetricsReport, auc_roc, average_precision

    if (vocab_hashes is not None and model.vocab_hashes is not None
            and vocab_hashes != model.vocab_hashes):
        raise VocabMismatch("vocabulary hash mismatch between model and dataset")
    if len(entries) == 0:
        raise ValueError("evaluate: empty dataset")
    B = model.config.preprocessing.buckets
    binary_scores, bucket_mat = bucket_scores(model, entries)
    binary_labels, bucket_labels = _label_arrays(entries)

    per_bucket = [
        ScoredLabels(bucket_mat[:, b], bucket_labels[:, b]) for b in range(B)
    ]
    map_value, per_bucket_ap, skipped = mean_ap_detail(per_bucket)
    sl = ScoredLabels(binary_scores, binary_labels)
    report = MetricsReport(
        mean_ap=map_value,
        auc_roc=auc_roc(sl),
        auc_pr=average_precision(sl),
        per_bucket_ap=per_bucket_ap,
        skipped_buckets=skipped,
        n=len(entries),
        param_count=model.param_count(),
    )
    return report


def train(config: Config, train_set, val_set, vocab, log=print):
    """Nadam training with early stopping on validation mean-AP.

    train_set/val_set: lists of cohort entries (with .seq and .y). vocab:
    the VocabMap the entries were tokenized with (sizes drive the embedding
    tables; its hash is stored in checkpoints). Returns a Checkpoint dict;
    see ``save_checkpoint`` for the file form.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train: empty dataset")
    tc = config.training
    model = Model.build(config, vocab.sizes(), tc.seed)
    model.vocab_hashes = vocab.hashes()
    opt = NadamState(model.store, lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps)
    root = RngStream(tc.seed)

    history = []
    best = {"val_mean_ap": -np.inf, "epoch": -1, "params": None, "opt": None}
    train_pairs = [(e.seq, e.y) for e in train_set]

    for epoch in range(tc.epochs):
        t0 = time.monotonic()
        shuffle_rng = root.split(f"shuffle.epoch{epoch}")
        noise_rng = root.split(f"noise.epoch{epoch}")
        total, seen = 0.0, 0
        for idx in _epoch_batches(len(train_pairs), tc.batch_size, shuffle_rng):
            batch = [train_pairs[i] for i in idx]
            with Tape() as tape:
                tape.watch(model.store)
                loss = nll_batch(model, batch, training=True, rng=noise_rng)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDiverged(
                        f"non-finite loss {value} at epoch {epoch} after {seen} patients"
                    )
                grads = ad.backward(tape, loss)
            clip_by_global_norm(grads, tc.clip_norm)
            nadam_step(opt, model.store, grads)
            total += value * len(batch)
            seen += len(batch)
        train_loss = total / seen

        val_report = evaluate(model, val_set)
        wall = time.monotonic() - t0
        history.append({
            "epoch": epoch,
            "train_loss": train_loss,
            "val_mean_ap": val_report.mean_ap,
            "wall_time_s": wall,
        })
        log(f"epoch {epoch}  train_loss {train_loss:.6f}  "
            f"val_mean_ap {val_report.mean_ap:.6f}  wall {wall:.1f}s")

        if val_report.mean_ap > best["val_mean_ap"]:
            best.update(
                val_mean_ap=val_report.mean_ap,
                epoch=epoch,
                params={n: t.data.copy() for n, t in model.store.items()},
                opt={
                    "step": opt.step,
                    "m": {n: v.copy() for n, v in opt.m.items()},
                    "v": {n: v.copy() for n, v in opt.v.items()},
                },
            )
        elif epoch - best["epoch"] >= tc.patience:
            log(f"early stop at epoch {epoch} (best epoch {best['epoch']})")
            break

    model.store.load_values(best["params"])
    return {
        "config": config,
        "vocab_sizes": model.vocab_sizes,
        "vocab_hashes": model.vocab_hashes,
        "params": best["params"],
        "optimizer": {
            "step": best["opt"]["step"],
            "lr": tc.lr, "beta1": tc.beta1, "beta2": tc.beta2, "eps": tc.eps,
            "m": best["opt"]["m"],
            "v": best["opt"]["v"],
        },
        "history": history,
        "best_epoch": best["epoch"],
        "model": model,
    }


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------


def save_checkpoint(path, ckpt: dict) -> None:
    """Single-file container: magic, version byte, length-prefixed JSON
    header, little-endian float64 payload. Bit-exact round trip."""
    tensors = []
    blobs = []
    offset = 0

    def push(name, arr):
        nonlocal offset
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        tensors.append([name, list(arr.shape), offset])
        blobs.append(arr)
        offset += arr.size

    for name in sorted(ckpt["params"]):
        push("p." + name, ckpt["params"][name])
    for name in sorted(ckpt["optimizer"]["m"]):
        push("m." + name, ckpt["optimizer"]["m"][name])
    for name in sorted(ckpt["optimizer"]["v"]):
        push("v." + name, ckpt["optimizer"]["v"][name])

    header = {
        "config": ckpt["config"].to_dict(),
        "vocab_sizes": ckpt["vocab_sizes"],
        "vocab_hashes": ckpt["vocab_hashes"],
        "tensors": tensors,
        "optimizer": {k: ckpt["optimizer"][k] for k in ("step", "lr", "beta1", "beta2", "eps")},
        "history": ckpt["history"],
        "best_epoch": ckpt["best_epoch"],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(bytes([CHECKPOINT_VERSION]))
        f.write(struct.pack("<Q", len(hbytes)))
        f.write(hbytes)
        for arr in blobs:
            f.write(arr.astype("<f8", copy=False).tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        version = f.read(1)[0]
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        payload = f.read()

    data = np.frombuffer(payload, dtype="<f8")
    groups = {"p": {}, "m": {}, "v": {}}
    for name, shape, off in header["tensors"]:
        size = int(np.prod(shape)) if shape else 1
        kind, bare = name.split(".", 1)
        groups[kind][bare] = data[off: off + size].reshape(shape).copy()

    config = Config.from_dict(header["config"])
    model = Model(config, header["vocab_sizes"], _store_from(groups["p"]))
    model.vocab_hashes = header["vocab_hashes"]
    opt = header["optimizer"]
    return {
        "config": config,
        "vocab_sizes": header["vocab_sizes"],
        "vocab_hashes": header["vocab_hashes"],
        "params": groups["p"],
        "optimizer": {**opt, "m": groups["m"], "v": groups["v"]},
        "history": header["history"],
        "best_epoch": header["best_epoch"],
        "model": model,
    }


def _store_from(values: dict) -> ParamStore:
    store = ParamStore()
    for name in values:
        store.add(name, values[name])
    return store
