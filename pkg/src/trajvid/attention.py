"""Temporal self-attention with a parallel trajectory-conditioned branch.

At every spatial position, frames attend to frames. The adapter branch
computes its own attention map A' from the encoded trajectory features;
thresholding A' yields an additive logit mask that suppresses the original
branch on the entries the adapter claims. The block output is
(A + A') V through the output projection.

Masked logits use a finite fill (-1e9 in training, the knob tau at
inference) instead of a literal -inf so gradients stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import kaiming_uniform

NEG_FILL = -1e9


@dataclass
class SuppressionConfig:
    """Thresholding and fill policy for the attention mask."""

    alpha: float = 0.35
    tau: float = 0.0
    mode: str = "training"  # "training" | "inference"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.mode not in ("training", "inference"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.tau > 0.0:
            raise ValueError(f"tau must be <= 0, got {self.tau}")

    @property
    def fill(self) -> float:
        return NEG_FILL if self.mode == "training" else self.tau


def init_attention_params(prefix: str, d_model: int, c_f: int, d: int = 32,
                          seed: int = 0, dtype=np.float32) -> dict[str, T.Tensor]:
    """Original-branch projections plus the adapter pair.

    The adapter's query/key weights start as copies of the original ones,
    routed through the identity restriction/padding map from c_f to d_model
    input channels.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA77]))
    params: dict[str, T.Tensor] = {}
    for name in ("w_q", "w_k", "w_v"):
        params[f"{prefix}.{name}"] = T.parameter(
            kaiming_uniform(rng, (d_model, d), d_model, dtype), f"{prefix}.{name}")
    params[f"{prefix}.w_o"] = T.parameter(
        0.1 * kaiming_uniform(rng, (d, d_model), d, dtype), f"{prefix}.w_o")

    # Restriction (c_f <= d_model) or zero padding (c_f > d_model).
    restrict = np.zeros((c_f, d_model), dtype=dtype)
    k = min(c_f, d_model)
    restrict[:k, :k] = np.eye(k, dtype=dtype)
    for name in ("w_q", "w_k"):
        init = restrict @ params[f"{prefix}.{name}"].data
        params[f"{prefix}.adapter_{name}"] = T.parameter(init.astype(dtype), f"{prefix}.adapter_{name}")
    return params


def _project(x_seq: T.Tensor, weight: T.Tensor) -> T.Tensor:
    n, length, channels = x_seq.shape
    flat = T.reshape(x_seq, (n * length, channels))
    return T.reshape(T.matmul(flat, weight), (n, length, weight.shape[1]))


def adapter_map(f_seq: T.Tensor, params: dict[str, T.Tensor], prefix: str) -> T.Tensor:
    """A' = softmax(Q' K'^T / sqrt(d)) per position, from trajectory features."""
    w_q = params[f"{prefix}.adapter_w_q"]
    w_k = params[f"{prefix}.adapter_w_k"]
    q = _project(f_seq, w_q)
    k = _project(f_seq, w_k)
    d = w_q.shape[1]
    logits = T.scale(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(d))
    return T.softmax_rows(logits, 1.0)


def build_mask(a_prime: T.Tensor, cfg: SuppressionConfig) -> np.ndarray:
    """Additive logit mask: fill where A' >= alpha (inclusive), else 0.

    If every entry of a row crosses the threshold, the row's largest-A'
    entry is left unmasked so the downstream softmax stays conditioned.
    Thresholding is piecewise constant, so the mask carries no gradient.
    """
    a = a_prime.data if isinstance(a_prime, T.Tensor) else np.asarray(a_prime)
    hit = a >= cfg.alpha
    full_rows = hit.all(axis=-1)
    if full_rows.any():
        hit = hit.copy()
        top = a.argmax(axis=-1)
        idx = np.nonzero(full_rows)
        hit[(*idx, top[idx])] = False
    mask = np.zeros(a.shape, dtype=a.dtype)
    mask[hit] = cfg.fill
    return mask


def masked_original_attention(x_seq: T.Tensor, params: dict[str, T.Tensor], prefix: str,
                              mask: np.ndarray | None) -> T.Tensor:
    """A = softmax(Q K^T / sqrt(d) + A_M) for the original branch."""
    q = _project(x_seq, params[f"{prefix}.w_q"])
    k = _project(x_seq, params[f"{prefix}.w_k"])
    d = params[f"{prefix}.w_q"].shape[1]
    logits = T.scale(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(d))
    if mask is not None and np.any(mask):
        logits = T.add(logits, T.constant(mask, dtype=logits.dtype))
    return T.softmax_rows(logits, 1.0)


def fused_block(x_seq: T.Tensor, f_seq: T.Tensor | None, params: dict[str, T.Tensor],
                prefix: str, cfg: SuppressionConfig,
                adapter_enabled: bool = True) -> tuple[T.Tensor, T.Tensor, T.Tensor | None]:
    """Dual-branch block output: ((A + A') V) W_o.

    Returns (output, A, A'); A' is None when the adapter is disabled, in
    which case the block reduces to plain temporal self-attention.
    """
    if adapter_enabled:
        if f_seq is None:
            raise ValueError("adapter enabled but no trajectory features supplied")
        if f_seq.shape[0] != x_seq.shape[0]:
            raise ValueError(
                f"position count mismatch: features {f_seq.shape[0]} vs input {x_seq.shape[0]}")
        a_prime = adapter_map(f_seq, params, prefix)
        mask = build_mask(a_prime, cfg)
        a = masked_original_attention(x_seq, params, prefix, mask)
        combined = T.add(a, a_prime)
    else:
        a_prime = None
        a = masked_original_attention(x_seq, params, prefix, None)
        combined = a
    v = _project(x_seq, params[f"{prefix}.w_v"])
    out = T.matmul(combined, v)
    out = _project(out, params[f"{prefix}.w_o"])
    return out, a, a_prime


class MapCollection:
    """Ordered per-block attention maps captured during one forward pass."""

    def __init__(self):
        self._original: list[T.Tensor] = []
        self._adapter: list[T.Tensor | None] = []
        self._complete = False

    def append(self, original: T.Tensor, adapter: T.Tensor | None):
        self._original.append(original)
        self._adapter.append(adapter)

    def finish(self):
        self._complete = True

    @property
    def original(self) -> list[T.Tensor]:
        if not self._complete:
            raise RuntimeError("attention maps accessed before the forward pass completed")
        return self._original

    @property
    def adapter(self) -> list[T.Tensor | None]:
        if not self._complete:
            raise RuntimeError("attention maps accessed before the forward pass completed")
        return self._adapter

    def __len__(self):
        if not self._complete:
            raise RuntimeError("attention maps accessed before the forward pass completed")
        return len(self._original)
