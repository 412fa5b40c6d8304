"""Trainable condition encoder: trajectory tensor P to feature maps f.

Six 3x3 convolutions with SiLU, two 2x2 mean-pool stages (after conv 2 and
conv 4), and a final per-position linear layer. Frames are processed
independently; temporal mixing is left to the attention blocks.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T

CONV_WIDTHS = (16, 16, 32, 32)  # widths of convs 1-4; convs 5-6 use c_f
POOL_AFTER = (2, 4)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_encoder_params(c_f: int = 32, seed: int = 0, dtype=np.float32) -> dict[str, T.Tensor]:
    """Kaiming-uniform convs, zero biases, identity final linear."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE4C]))
    widths = list(CONV_WIDTHS) + [c_f, c_f]
    params: dict[str, T.Tensor] = {}
    c_in = 3
    for i, c_out in enumerate(widths, start=1):
        fan_in = c_in * 9
        params[f"enc.conv{i}.kernel"] = T.parameter(
            kaiming_uniform(rng, (c_out, c_in, 3, 3), fan_in, dtype), f"enc.conv{i}.kernel")
        params[f"enc.conv{i}.bias"] = T.parameter(
            np.zeros(c_out, dtype=dtype), f"enc.conv{i}.bias")
        c_in = c_out
    params["enc.linear.weight"] = T.parameter(np.eye(c_f, dtype=dtype), "enc.linear.weight")
    params["enc.linear.bias"] = T.parameter(np.zeros(c_f, dtype=dtype), "enc.linear.bias")
    return params


def encode(p_tensor, params: dict[str, T.Tensor]) -> T.Tensor:
    """Per-frame feature maps f with shape (..., L, c_f, H/4, W/4).

    ``p_tensor`` is an (L, H, W, 3) or (B, L, H, W, 3) array in [0, 1].
    """
    arr = p_tensor.data if isinstance(p_tensor, T.Tensor) else np.asarray(p_tensor)
    batched = arr.ndim == 5
    if not batched:
        arr = arr[None]
    b, length, h, w, _ = arr.shape
    if h % 4 or w % 4:
        raise ValueError(f"encoder input resolution {h}x{w} must be divisible by 4")
    dtype = params["enc.conv1.kernel"].dtype
    x = T.constant(np.ascontiguousarray(arr.transpose(0, 1, 4, 2, 3)).reshape(b * length, 3, h, w), dtype=dtype)

    n_convs = 6
    for i in range(1, n_convs + 1):
        x = T.conv2d(x, params[f"enc.conv{i}.kernel"], stride=1, padding=1)
        x = T.bias_add(x, params[f"enc.conv{i}.bias"], axis=1)
        x = T.silu(x)
        if i in POOL_AFTER:
            x = T.avgpool2d(x, 2, 2)

    c_f = params["enc.linear.weight"].shape[0]
    hh, ww = h // 4, w // 4
    # Per-position linear over channels: move channels last, one matmul.
    x = T.transpose(x, (0, 2, 3, 1))
    x = T.reshape(x, (b * length * hh * ww, c_f))
    x = T.matmul(x, params["enc.linear.weight"])
    x = T.bias_add(x, params["enc.linear.bias"], axis=1)
    x = T.reshape(x, (b * length, hh, ww, c_f))
    x = T.transpose(x, (0, 3, 1, 2))
    shape = (b, length, c_f, hh, ww) if batched else (length, c_f, hh, ww)
    return T.reshape(x, shape)


def downsample_features(f: T.Tensor, target_h: int, target_w: int) -> T.Tensor:
    """Pool f to a block's grid and rearrange to per-position sequences.

    Returns (positions, L, c_f) or (B, positions, L, c_f): at each spatial
    position of the target grid, the L-frame sequence of channel vectors.
    """
    batched = f.ndim == 5
    shape = f.shape
    b = shape[0] if batched else 1
    length, c_f, h, w = shape[-4:]
    if h % target_h or w % target_w or h // target_h != w // target_w:
        raise ValueError(f"target {target_h}x{target_w} does not divide feature extents {h}x{w}")
    x = T.reshape(f, (b * length, c_f, h, w))
    if (target_h, target_w) != (h, w):
        x = T.avgpool2d(x, h // target_h, h // target_h)
    x = T.reshape(x, (b, length, c_f, target_h * target_w))
    x = T.transpose(x, (0, 3, 1, 2))  # (B, positions, L, c_f)
    if not batched:
        x = T.reshape(x, (target_h * target_w, length, c_f))
    return x
