"""Dense float64 numerics used by the connector.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. Only the
pieces needed for a forward pass and a small analytic backward pass exist
here: multi-head attention, a scale-only layer norm, and a two-layer GELU MLP.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

LN_EPS = 1e-6
_GELU_C = np.sqrt(2.0 / np.pi)


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def frozen(a) -> np.ndarray:
    """Return a read-only float64 copy of ``a``."""
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    m = as_matrix(m)
    if m.shape[1] == 0:
        return m.copy()
    z = m - m.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_last(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass(frozen=True)
class AttentionParams:
    """Projection weights of one multi-head attention block (no biases).

    Projections act on row vectors: ``x @ w_q`` etc.
    """

    width: int
    heads: int
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.heads < 1 or self.width % self.heads:
            raise ShapeError(f"width {self.width} is not divisible by heads {self.heads}")
        for name in ("w_q", "w_k", "w_v", "w_o"):
            w = frozen(getattr(self, name))
            if w.shape != (self.width, self.width):
                raise ShapeError(f"{name} has shape {w.shape}, expected {(self.width, self.width)}")
            object.__setattr__(self, name, w)

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @classmethod
    def init(cls, width: int, heads: int, rng: np.random.Generator | int) -> "AttentionParams":
        rng = np.random.default_rng(rng)
        ws = [uniform_init(rng, (width, width), width) for _ in range(4)]
        return cls(width, heads, *ws)

    @classmethod
    def identity(cls, width: int, heads: int) -> "AttentionParams":
        eye = np.eye(width)
        return cls(width, heads, eye, eye, eye, eye)


@dataclass(frozen=True)
class AttentionResult:
    output: np.ndarray
    weights: np.ndarray  # head-averaged, (n_queries, n_keys)
    # cached intermediates for the backward pass
    queries: np.ndarray
    keys_values: np.ndarray
    q: np.ndarray  # (heads, n_queries, head_dim)
    k: np.ndarray
    v: np.ndarray
    head_weights: np.ndarray  # (heads, n_queries, n_keys)
    mixed: np.ndarray  # concatenated head outputs before w_o


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def multi_head_attention(params: AttentionParams, queries, keys_values) -> AttentionResult:
    """Scaled dot-product attention of ``queries`` over ``keys_values``.

    No positional terms are applied, so the result does not depend on the
    order of the key/value rows.
    """
    xq = as_matrix(queries, "queries")
    xkv = as_matrix(keys_values, "keys_values")
    if xq.shape[1] != params.width or xkv.shape[1] != params.width:
        raise ShapeError(
            f"expected width {params.width}, got queries {xq.shape} and keys_values {xkv.shape}"
        )
    if xkv.shape[0] == 0:
        raise ShapeError("attention needs at least one key/value token")
    q = _split_heads(xq @ params.w_q, params.heads)
    k = _split_heads(xkv @ params.w_k, params.heads)
    v = _split_heads(xkv @ params.w_v, params.heads)
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(params.head_dim)
    a = _softmax_last(scores)
    mixed = _merge_heads(a @ v)
    out = mixed @ params.w_o
    return AttentionResult(out, a.mean(axis=0), xq, xkv, q, k, v, a, mixed)


def attention_backward(
    params: AttentionParams, res: AttentionResult, d_out
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of a scalar loss w.r.t. the query and key/value inputs."""
    d_out = as_matrix(d_out, "d_out")
    if d_out.shape != res.output.shape:
        raise ShapeError(f"d_out shape {d_out.shape} != output shape {res.output.shape}")
    scale = 1.0 / np.sqrt(params.head_dim)
    d_heads = _split_heads(d_out @ params.w_o.T, params.heads)
    a = res.head_weights
    d_a = d_heads @ res.v.transpose(0, 2, 1)
    d_v = a.transpose(0, 2, 1) @ d_heads
    d_s = a * (d_a - np.sum(d_a * a, axis=-1, keepdims=True))
    d_q = d_s @ res.k * scale
    d_k = d_s.transpose(0, 2, 1) @ res.q * scale
    d_xq = _merge_heads(d_q) @ params.w_q.T
    d_xkv = _merge_heads(d_k) @ params.w_k.T + _merge_heads(d_v) @ params.w_v.T
    return d_xq, d_xkv


def layer_norm(x: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Per-token zero-mean/unit-variance normalization with a learned scale."""
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return scale * (x - mu) / np.sqrt(var + LN_EPS)


def layer_norm_backward(x: np.ndarray, scale: np.ndarray, d_y: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(x.var(axis=1, keepdims=True) + LN_EPS)
    xhat = (x - mu) * inv
    d_xhat = d_y * scale
    return inv * (
        d_xhat
        - d_xhat.mean(axis=1, keepdims=True)
        - xhat * np.mean(d_xhat * xhat, axis=1, keepdims=True)
    )


def gelu(x: np.ndarray) -> np.ndarray:
    # tanh approximation
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], at, step: float = 1e-4
) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``at``, entry by entry."""
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    x = np.array(at, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + step
        f_plus = float(f(x.copy()))
        x.flat[i] = orig - step
        f_minus = float(f(x.copy()))
        x.flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError(f"f is not finite near entry {np.unravel_index(i, x.shape)}")
        grad.flat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)
