"""Model bundle: parameter store + configuration + vocabulary sizes."""

from __future__ import annotations

import numpy as np

from .config import Config
from .decoder import decode_batch, init_decoder
from .encoder import encode_batch, init_encoder, pack_batch
from .params import ParamStore
from .rng import RngStream

__all__ = ["Model"]


class Model:
    """All trainable state for one encoder-decoder instance.

    Parameters are initialized purely from (config, vocab_sizes, seed); two
    builds with identical inputs are bit-identical.
    """

    def __init__(self, config: Config, vocab_sizes: dict, store: ParamStore):
        self.config = config
        self.vocab_sizes = dict(vocab_sizes)
        self.store = store
        self.vocab_hashes = None  # set when trained/loaded against a vocabulary

    @classmethod
    def build(cls, config: Config, vocab_sizes: dict | None = None, seed: int | None = None) -> "Model":
        if vocab_sizes is None:
            vocab_sizes = config.vocab_sizes()
        if seed is None:
            seed = config.training.seed
        store = ParamStore(RngStream(seed).split("init"))
        init_encoder(store, config, vocab_sizes)
        x_dim = config.encoder.units + config.embedding.age_dim
        init_decoder(store, config, x_dim)
        return cls(config, vocab_sizes, store)

    def param_count(self) -> int:
        return self.store.total_size()

    def forward_packed(self, packed, rng=None, training: bool = False):
        """packed batch -> (log_pi (P, B+1), log_P (P, B, B)) nodes."""
        x = encode_batch(self.store, packed, self.config, rng, training)
        return decode_batch(self.store, x, self.config, rng, training)

    def forward(self, seqs, rng=None, training: bool = False):
        return self.forward_packed(pack_batch(seqs, self.config), rng, training)

    def predict(self, seqs, chunk: int = 512):
        """Eval-mode probabilities: (pi (N, B+1), P (N, B, B)) numpy arrays."""
        pis, rows = [], []
        for lo in range(0, len(seqs), chunk):
            log_pi, log_P = self.forward(seqs[lo: lo + chunk])
            pis.append(np.exp(log_pi.data))
            rows.append(np.exp(log_P.data))
        return np.concatenate(pis), np.concatenate(rows)
