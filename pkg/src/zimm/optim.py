"""Nadam optimizer (Adam with Nesterov momentum) and gradient clipping.

The update follows Dozat's constant-momentum-schedule variant. With step
counter t starting at 1 and gradient g_t:

    m_t = beta1 * m_{t-1} + (1 - beta1) * g_t
    v_t = beta2 * v_{t-1} + (1 - beta2) * g_t^2
    m_hat = m_t / (1 - beta1^(t+1))       # look-ahead bias correction
    g_hat = g_t / (1 - beta1^t)
    v_hat = v_t / (1 - beta2^t)
    w_t = w_{t-1} - lr * (beta1 * m_hat + (1 - beta1) * g_hat)
                       / (sqrt(v_hat) + eps)

The Nesterov flavor shows up in the numerator, which mixes the bias-corrected
first moment with the bias-corrected current gradient instead of using the
momentum term alone.
"""

from __future__ import annotations

import numpy as np

__all__ = ["NadamState", "nadam_step", "clip_by_global_norm", "global_norm"]


class NadamState:
    """Per-parameter first/second moment buffers plus the shared step count."""

    def __init__(self, store, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ValueError("NadamState: betas must be in [0, 1)")
        if lr < 0.0:
            raise ValueError("NadamState: lr must be nonnegative")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step = 0
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}


def nadam_step(state: NadamState, store, grads: dict, apply_decay: bool = False) -> None:
    """Apply one update in place over every parameter in the store.

    ``grads`` must supply a gradient for every parameter name. When
    ``apply_decay`` is set, each parameter's store-registered L2 coefficient
    is added to its gradient as ``decay * w`` before the moment updates; the
    default leaves decay to the loss builder, which puts the penalty on the
    tape instead (adding it here too would double-count it).
    """
    missing = [n for n in store.names() if n not in grads]
    if missing:
        raise KeyError(f"nadam_step: missing gradients for {missing}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c_m = 1.0 - b1 ** (t + 1)
    c_g = 1.0 - b1 ** t
    c_v = 1.0 - b2 ** t
    for name, tensor in store.items():
        g = grads[name]
        g = g.data if hasattr(g, "data") else np.asarray(g, dtype=np.float64)
        if apply_decay:
            d = store.decay(name)
            if d != 0.0:
                g = g + d * tensor.data
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        num = b1 * (m / c_m) + (1.0 - b1) * (g / c_g)
        tensor.data -= state.lr * num / (np.sqrt(v / c_v) + state.eps)


def global_norm(grads: dict) -> float:
    """Euclidean norm of all gradients stacked into one vector."""
    total = 0.0
    for g in grads.values():
        d = g.data if hasattr(g, "data") else g
        total += float((d * d).sum())
    return float(np.sqrt(total))


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients in place so their global norm is at most max_norm.

    Returns the pre-clip norm.
    """
    norm = global_norm(grads)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for g in grads.values():
            d = g.data if hasattr(g, "data") else g
            d *= factor
    return norm
