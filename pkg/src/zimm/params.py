"""Named parameter store with seeded initialization and per-name weight decay."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .rng import RngStream

__all__ = ["ParamStore"]


class ParamStore:
    """Flat name -> Tensor mapping for all trainable weights of a model.

    Names are unique and insertion-ordered. Each entry carries an optional
    L2 decay coefficient that the loss builder picks up. Initialization is
    driven by a named RngStream split per parameter, so the full init is a
    pure function of the seed and the creation order is irrelevant to the
    values (only name strings matter).
    """

    def __init__(self, rng: RngStream | None = None):
        self._params: dict[str, Tensor] = {}
        self._decay: dict[str, float] = {}
        self._rng = rng

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def decay(self, name: str) -> float:
        return self._decay[name]

    def decayed(self):
        """(name, tensor, coefficient) for entries with nonzero decay."""
        for name, d in self._decay.items():
            if d != 0.0:
                yield name, self._params[name], d

    def add(self, name: str, value: np.ndarray, decay: float = 0.0) -> Tensor:
        if name in self._params:
            raise ValueError(f"ParamStore: duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64))
        self._params[name] = t
        self._decay[name] = float(decay)
        return t

    def _stream(self, name: str) -> RngStream:
        if self._rng is None:
            raise RuntimeError("ParamStore: no rng supplied for random initialization")
        return self._rng.split(name)

    def glorot(self, name: str, shape, decay: float = 0.0) -> Tensor:
        """Glorot-uniform matrix: U(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
        fan_in, fan_out = shape[0], shape[-1]
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, self._stream(name).uniform(-a, a, shape), decay)

    def glorot_stack(self, name: str, shape, decay: float = 0.0) -> Tensor:
        """Stack of independent Glorot matrices; fans taken from the last two dims."""
        fan_in, fan_out = shape[-2], shape[-1]
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, self._stream(name).uniform(-a, a, shape), decay)

    def glorot_vector(self, name: str, shape, decay: float = 0.0) -> Tensor:
        """Weight vector (or stack of them) projecting to a scalar: fan_out 1."""
        fan_in = shape[-1]
        a = np.sqrt(6.0 / (fan_in + 1))
        return self.add(name, self._stream(name).uniform(-a, a, shape), decay)

    def zeros(self, name: str, shape, decay: float = 0.0) -> Tensor:
        return self.add(name, np.zeros(shape), decay)

    def embedding(self, name: str, shape, decay: float = 0.0) -> Tensor:
        """Embedding table: U(-0.05, 0.05), row 0 kept trainable like the rest."""
        return self.add(name, self._stream(name).uniform(-0.05, 0.05, shape), decay)

    def total_size(self) -> int:
        return sum(t.size for t in self._params.values())

    def flatten(self) -> np.ndarray:
        """All values concatenated in name-sorted order (for checkpoint digests)."""
        return np.concatenate(
            [self._params[n].data.reshape(-1) for n in sorted(self._params)]
        ) if self._params else np.zeros(0)

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        """Overwrite entries in place, keeping Tensor identity."""
        for name, arr in values.items():
            if name not in self._params:
                raise KeyError(f"ParamStore: unknown parameter {name!r}")
            t = self._params[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"ParamStore: shape mismatch for {name!r}: "
                    f"{arr.shape} vs {t.data.shape}"
                )
            t.data[...] = arr
