import math
from typing import Optional

import numpy as np

from bellbox.errors import ConfigError, ShapeError, StaleTraceError
from bellbox.kernelsim.nibble_codec import Encoding
from bellbox.kernelsim.quantized_tensor import QuantizedTensor, decode_codes, encode_codes
from bellbox.quantizers.config import (
    Granularity,
    LsqConfig,
    Method,
    QuantizeTrace,
    ScaleParam,
    rows_view,
)
from bellbox.tensorio import Tensor


def lsq_init_step(x: np.ndarray, b: int, granularity: Granularity = Granularity.PER_TENSOR):
    """
    Step size initialisation s = 2·mean|x| / √Q_p.

    :returns: one step per row for per-channel, a length-1 array otherwise.
    """
    if b < 2:
        raise ConfigError("LSQ does not support 1-bit quantization")
    q_pos = (1 << (b - 1)) - 1
    x = np.asarray(x, dtype=np.float64)
    rows, cols = rows_view(x.shape)
    x2d = np.abs(x.reshape(rows, cols))
    mean_abs = x2d.mean(axis=1) if granularity == Granularity.PER_CHANNEL else x2d.mean()
    # an all-zero tensor still needs a usable step
    return np.maximum(np.atleast_1d(2.0 * mean_abs / math.sqrt(q_pos)), 1e-8)


def _step_column(s: np.ndarray, rows: int, granularity: Granularity) -> np.ndarray:
    expected = rows if granularity == Granularity.PER_CHANNEL else 1
    if s.size != expected:
        raise ShapeError(f"{s.size} step sizes for {expected} groups")
    return s.reshape(-1, 1)


def lsq_forward(
    x: np.ndarray, cfg: LsqConfig, scale: Optional[ScaleParam] = None
) -> tuple[np.ndarray, QuantizeTrace]:
    """
    x̂ = s·⌊clip(x/s, -2^(b-1), 2^(b-1) - 1)⌉ with ties rounded to even.

    :param scale: trainable step; overrides ``cfg.s`` when given.
    """
    x = np.asarray(x, dtype=np.float64)
    rows, cols = rows_view(x.shape)
    s = _step_column(scale.gamma if scale is not None else cfg.s, rows, cfg.granularity)

    v = x.reshape(rows, cols) / s
    codes = np.rint(np.clip(v, cfg.q_neg, cfg.q_pos))
    trace = QuantizeTrace(
        x_shape=x.shape,
        v=v,
        sigma=s,
        codes=codes,
        gamma=s,
        scale_version=scale.version if scale is not None else None,
        degenerate=np.zeros_like(s, dtype=bool),
    )
    return (s * codes).reshape(x.shape), trace


def lsq_backward_array(
    grad_out: np.ndarray,
    trace: QuantizeTrace,
    cfg: LsqConfig,
    scale: Optional[ScaleParam] = None,
    step_grad_scaling: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """
    STE for the rounding; the input gradient passes only inside the clip range.

    The step gradient is -v + ⌊v⌉ inside the range and the clip bound outside it, scaled by
    1/√(N·Q_p) where N is the number of elements sharing the step.
    """
    if trace.consumed:
        raise StaleTraceError(f"trace {trace.trace_id} was already used by a backward pass")
    if scale is not None and trace.scale_version != scale.version:
        raise StaleTraceError(f"trace {trace.trace_id} predates the current step size")
    trace.consumed = True

    rows, cols = trace.v.shape
    g = np.asarray(grad_out, dtype=np.float64).reshape(rows, cols)
    v = trace.v
    inside = (v >= cfg.q_neg) & (v <= cfg.q_pos)

    grad_x = np.where(inside, g, 0.0).reshape(trace.x_shape)
    ds = np.where(inside, trace.codes - v, trace.codes)
    if cfg.granularity == Granularity.PER_CHANNEL:
        grad_s = (g * ds).sum(axis=1)
        n = cols
    else:
        grad_s = np.atleast_1d((g * ds).sum())
        n = rows * cols
    if step_grad_scaling:
        grad_s = grad_s / math.sqrt(n * cfg.q_pos)
    return grad_x, grad_s


def lsq_quantize(
    x: Tensor, cfg: LsqConfig, encoding: Optional[Encoding] = None
) -> QuantizedTensor:
    """
    :param x: input tensor.
    :param cfg: precision and step size; b must be at least 2.
    """
    _, trace = lsq_forward(x.to_numpy(np.float64), cfg)
    return encode_codes(
        trace.codes.reshape(x.shape),
        b=cfg.b,
        z=0.0,
        encoding=encoding,
        scales=cfg.s,
        method=Method.LSQ,
    )


def lsq_dequantize(qt: QuantizedTensor) -> Tensor:
    """x̂ = s·q."""
    rows, cols = rows_view(qt.shape)
    codes = decode_codes(qt).reshape(rows, cols)
    return Tensor.from_numpy((qt.scale_column() * codes).reshape(qt.shape))
