"""Candidate operations. Each maps C channels to C channels."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# separable convs: tag -> (depthwise kernel, size, dilation)
_KERNELS = {
    "sep_conv_3x3": ("dw", 3, 1),
    "sep_conv_5x5": ("dw", 5, 1),
    "dil_conv_3x3": ("dw", 3, 2),
    "dil_conv_5x5": ("dw", 5, 2),
}
_FACTORIZED = {"conv_1x3_3x1": 3, "conv_1x5_5x1": 5, "conv_1x7_7x1": 7}


def he_normal(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def init_weights(tag: str, channels: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    c = channels
    if tag in _KERNELS:
        _, k, _ = _KERNELS[tag]
        return {"dw": he_normal((c, 1, k, k), k * k, rng), "pw": he_normal((c, c, 1, 1), c, rng)}
    if tag == "conv_1x1":
        return {"w": he_normal((c, c, 1, 1), c, rng)}
    if tag == "conv_3x3":
        return {"w": he_normal((c, c, 3, 3), 9 * c, rng)}
    if tag in _FACTORIZED:
        k = _FACTORIZED[tag]
        return {"w1": he_normal((c, c, 1, k), k * c, rng), "w2": he_normal((c, c, k, 1), k * c, rng)}
    return {}


def apply(tag: str, x: Tensor, weights: dict[str, Tensor], stride: int) -> Tensor | None:
    """Run one candidate op; ``None`` stands for the zero op's all-zero output."""
    if tag == "zero":
        return None
    if tag == "identity":
        return x if stride == 1 else ad.index(x, (slice(None), slice(None), slice(None, None, 2), slice(None, None, 2)))
    if tag == "max_pool_3x3":
        return ad.normalize(ad.max_pool2d(x, 3, stride, 1))
    if tag == "avg_pool_3x3":
        return ad.normalize(ad.avg_pool2d(x, 3, stride, 1))
    return ad.normalize(_conv_op(tag, ad.relu(x), weights, stride))


def _conv_op(tag: str, h: Tensor, weights: dict[str, Tensor], stride: int) -> Tensor:
    if tag in _KERNELS:
        _, k, dilation = _KERNELS[tag]
        c = h.shape[1]
        h = ad.conv2d(h, weights["dw"], stride=stride, padding=dilation * (k // 2), dilation=dilation, groups=c)
        return ad.conv2d(h, weights["pw"])
    if tag == "conv_1x1":
        return ad.conv2d(h, weights["w"], stride=stride)
    if tag == "conv_3x3":
        return ad.conv2d(h, weights["w"], stride=stride, padding=1)
    if tag in _FACTORIZED:
        k = _FACTORIZED[tag]
        h = ad.conv2d(h, weights["w1"], stride=(1, stride), padding=(0, k // 2))
        return ad.conv2d(h, weights["w2"], stride=(stride, 1), padding=(k // 2, 0))
    raise ValueError(f"unknown operation {tag!r}")


def zeros_like_output(x: Tensor, stride: int) -> Tensor:
    n, c, h, w = x.shape
    return Tensor(np.zeros((n, c, (h - 1) // stride + 1, (w - 1) // stride + 1)))
