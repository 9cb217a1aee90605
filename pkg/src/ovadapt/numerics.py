"""Deterministic dense numerical primitives shared by every other module.

Everything here is pure float64 numpy: stable softmax/sigmoid, probability
clamping for log-safety, a central finite-difference gradient oracle, and
named reproducible random substreams derived from a single root seed.
"""

from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np

# Probabilities entering a logarithm are clamped to this range. Keeps losses
# finite on saturated logits; gradients are zeroed outside the range so the
# analytic gradient stays the exact derivative of the clamped value.
PROB_FLOOR = 1e-7
PROB_CEIL = 1.0 - 1e-7

_U64_MASK = (1 << 64) - 1


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Stable softmax along ``axis`` (max-subtraction before exponentiation).

    Accepts a vector or a batch of rows; raises ValueError on empty input or
    non-finite entries.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax: empty input")
    if not np.all(np.isfinite(v)):
        raise ValueError("softmax: non-finite input")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """log(softmax(v)) computed without forming small intermediate probabilities."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_softmax: empty input")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Stable logistic function, safe for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def clamp_prob(p: np.ndarray) -> np.ndarray:
    """Clamp probabilities into [PROB_FLOOR, PROB_CEIL]."""
    return np.clip(p, PROB_FLOOR, PROB_CEIL)


def binary_entropy(p: np.ndarray) -> np.ndarray:
    """Elementwise -p*log(p) - (1-p)*log(1-p) on pre-clamped probabilities."""
    pc = clamp_prob(np.asarray(p, dtype=np.float64))
    return -pc * np.log(pc) - (1.0 - pc) * np.log(1.0 - pc)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], params: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    Returns (f(p + eps*e_i) - f(p - eps*e_i)) / (2*eps) per coordinate. This
    is the independent oracle every analytic gradient in the package is
    checked against; it treats ``f`` as a black box.
    """
    if eps <= 0:
        raise ValueError("finite_diff_grad: eps must be positive")
    params = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(params)
    for i in range(params.size):
        bumped = params.copy()
        bumped[i] += eps
        hi = float(f(bumped))
        bumped[i] = params[i] - eps
        lo = float(f(bumped))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(
                f"finite_diff_grad: non-finite objective at coordinate {i}"
            )
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad


def check_finite(arr: np.ndarray, what: str) -> None:
    """Raise ValueError naming ``what`` if any entry is NaN or infinite."""
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what}: non-finite values")


def root_rng(seed: int) -> np.random.Generator:
    """PCG64 generator seeded directly from a 64-bit root seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed & _U64_MASK)))


def substream(seed: int, label: str) -> np.random.Generator:
    """Independent, reproducible generator for the (root seed, label) pair.

    The label is hashed with SHA-256 so substreams are stable across runs,
    platforms and Python processes. Data generation, initialization and
    batching each draw from their own labeled substream of one root seed.
    """
    tag = int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")
    seq = np.random.SeedSequence([seed & _U64_MASK, tag])
    return np.random.Generator(np.random.PCG64(seq))
