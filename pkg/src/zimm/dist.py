"""Zero-inflated mixture of multinomials over B-bucket count vectors.

A label vector y holds B nonnegative integer counts with total n = sum(y).
The distribution draws n from a categorical over {0..B} with weights pi;
n = 0 forces the all-zero vector (the zero-inflation atom), and n = b > 0
draws y from a multinomial with b trials over the B buckets using row b of
the row-stochastic matrix P.

log-pmf:
    n = 0:  log pi_0
    n > 0:  log pi_n + log(n! / prod_b y_b!) + sum_b y_b * log p_{n,b}

The multinomial coefficient is parameter-free; it is included so pmf values
are exact probabilities, and it contributes nothing to gradients.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, add, mask_apply, sum_all

__all__ = [
    "NEG_INF",
    "ZimmParams",
    "LabelVector",
    "log_pmf",
    "pmf",
    "sample",
    "enumerate_support",
    "prob_relapse",
    "prob_bucket_nonzero",
    "log_pmf_node",
]

# Sentinel for log(0): large-magnitude finite value so losses stay finite
# even for pmf-zero corner cases (softmax-produced parameters never hit it).
NEG_INF = -1e30

_PROB_TOL = 1e-9


class ZimmParams:
    """Validated parameter pair (pi, P).

    pi: length B+1 probability vector over the mixture index n.
    P: B x B matrix; row b is the bucket distribution given n = b.
    """

    __slots__ = ("pi", "P", "B")

    def __init__(self, pi, P):
        pi = np.asarray(pi, dtype=np.float64)
        P = np.asarray(P, dtype=np.float64)
        if pi.ndim != 1 or P.ndim != 2:
            raise ValueError("ZimmParams: pi must be a vector and P a matrix")
        B = pi.shape[0] - 1
        if B < 1 or P.shape != (B, B):
            raise ValueError(
                f"ZimmParams: P must be ({B},{B}) for pi of length {B + 1}, got {P.shape}"
            )
        if pi.min() < 0 or abs(pi.sum() - 1.0) > _PROB_TOL:
            raise ValueError("ZimmParams: pi must be a probability vector")
        if P.min() < 0 or np.abs(P.sum(axis=1) - 1.0).max() > _PROB_TOL:
            raise ValueError("ZimmParams: every row of P must be a probability vector")
        self.pi = pi
        self.P = P
        self.B = B

    def __repr__(self):
        return f"ZimmParams(B={self.B})"


class LabelVector:
    """B nonnegative integer bucket counts with derived total n."""

    __slots__ = ("y", "n")

    def __init__(self, y):
        y = tuple(int(v) for v in y)
        if any(v < 0 for v in y):
            raise ValueError("LabelVector: counts must be nonnegative")
        self.y = y
        self.n = sum(y)

    def __len__(self):
        return len(self.y)

    def __eq__(self, other):
        return isinstance(other, LabelVector) and self.y == other.y

    def __hash__(self):
        return hash(self.y)

    def __repr__(self):
        return f"LabelVector({list(self.y)})"


def _check_label(params: ZimmParams, y: LabelVector) -> LabelVector:
    if not isinstance(y, LabelVector):
        y = LabelVector(y)
    if len(y) != params.B:
        raise ValueError(f"label has {len(y)} buckets, params have B={params.B}")
    if y.n > params.B:
        raise ValueError(f"label total n={y.n} exceeds B={params.B}")
    return y


def log_coefficient(y: LabelVector) -> float:
    """log(n! / prod_b y_b!) via exact integer factorials."""
    num = math.factorial(y.n)
    den = 1
    for v in y.y:
        den *= math.factorial(v)
    return math.log(num // den)


def log_pmf(params: ZimmParams, y) -> float:
    y = _check_label(params, y)
    n = y.n
    if n == 0:
        p0 = params.pi[0]
        return float(np.log(p0)) if p0 > 0.0 else NEG_INF
    pin = params.pi[n]
    if pin == 0.0:
        return NEG_INF
    total = math.log(pin) + log_coefficient(y)
    row = params.P[n - 1]
    for b, v in enumerate(y.y):
        if v == 0:
            continue
        if row[b] == 0.0:
            return NEG_INF
        total += v * math.log(row[b])
    return float(total)


def pmf(params: ZimmParams, y) -> float:
    lp = log_pmf(params, y)
    return 0.0 if lp <= NEG_INF else float(math.exp(lp))


def sample(params: ZimmParams, rng) -> LabelVector:
    n = int(rng.categorical(params.pi))
    if n == 0:
        return LabelVector([0] * params.B)
    return LabelVector(rng.multinomial(n, params.P[n - 1]))


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_support(params: ZimmParams):
    """All (LabelVector, pmf) with sum(y) <= B, exhaustively.

    Guarded to B <= 6; the support has C(2B, B)-scale growth.
    """
    if params.B > 6:
        raise ValueError(f"enumerate_support: B={params.B} exceeds the guard (6)")
    out = []
    for n in range(params.B + 1):
        for comp in _compositions(n, params.B):
            y = LabelVector(comp)
            out.append((y, pmf(params, y)))
    return out


def prob_relapse(params: ZimmParams) -> float:
    """P(n > 0), the binary relapse score."""
    return float(1.0 - params.pi[0])


def prob_bucket_nonzero(params: ZimmParams, b: int) -> float:
    """P(y_b >= 1) for bucket b in 1..B.

    1 - pi_0 - sum_k pi_k (1 - p_{k,b})^k: remove the zero atom and, for each
    mixture index k, the multinomials that put all k trials outside bucket b.
    """
    if not 1 <= b <= params.B:
        raise ValueError(f"bucket index {b} outside 1..{params.B}")
    miss = (1.0 - params.P[:, b - 1]) ** np.arange(1, params.B + 1)
    return float(1.0 - params.pi[0] - (params.pi[1:] * miss).sum())


def log_pmf_node(log_pi: Tensor, log_P: Tensor, y) -> Tensor:
    """Differentiable log-pmf given log-probability nodes.

    log_pi: (B+1,) node; log_P: (B, B) node with rows indexed by n-1. The
    multinomial coefficient enters as a constant.
    """
    y = LabelVector(y) if not isinstance(y, LabelVector) else y
    B = log_pi.data.shape[0] - 1
    if len(y) != B or y.n > B:
        raise ValueError("log_pmf_node: label incompatible with parameter shapes")
    n = y.n
    pi_mask = np.zeros(B + 1)
    pi_mask[n] = 1.0
    term = sum_all(mask_apply(log_pi, pi_mask))
    if n == 0:
        return term
    row_mask = np.zeros((B, B))
    row_mask[n - 1, :] = np.asarray(y.y, dtype=np.float64)
    term = add(term, sum_all(mask_apply(log_P, row_mask)))
    return add(term, Tensor(np.asarray(log_coefficient(y))))
