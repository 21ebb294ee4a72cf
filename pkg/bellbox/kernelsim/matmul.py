import numpy as np
from attr import frozen

from bellbox.errors import ConfigError, EncodingError, ShapeError
from bellbox.kernelsim.nibble_codec import Encoding
from bellbox.kernelsim.quantized_tensor import QuantizedTensor, decode_codes
from bellbox.quantizers.config import Method
from bellbox.tensorio import Tensor

# 4-bit operands stay exact in a 32-bit accumulator up to this many products
MAX_INT4_DEPTH = 1 << 23

# codes whose product with a scale is the dequantized value
_LINEAR_METHODS = (Method.BBQ, Method.BBQ_FAST, Method.LSQ)


@frozen
class MacCounts:
    """
    Work of one (M, K) x (N, K)ᵀ product. The MAC count is the same at any precision; what 4-bit
    operands save is operand traffic.

    :param macs: multiply-accumulates in the inner loop.
    :param epilogue: scale multiplications applied to the accumulators.
    """

    m: int
    k: int
    n: int

    @property
    def macs(self) -> int:
        return self.m * self.k * self.n

    @property
    def epilogue(self) -> int:
        return 2 * self.m * self.n

    def operand_bytes(self, bits: int) -> int:
        """Bytes of both operands at ``bits`` per element, rows padded to whole bytes."""
        return (self.m + self.n) * ((self.k * bits + 7) // 8)


def _check_operands(a: QuantizedTensor, w: QuantizedTensor) -> None:
    for name, qt in (("activation", a), ("weight", w)):
        if len(qt.shape) != 2:
            raise ShapeError(f"{name} must be 2-D, got shape {list(qt.shape)}")
        if qt.method not in _LINEAR_METHODS:
            raise ConfigError(
                f"{qt.method.value} codes are not linear in the stored value and cannot be "
                "multiplied directly"
            )
    if a.shape[1] != w.shape[1]:
        raise ShapeError(f"inner dimensions differ: {a.shape[1]} vs {w.shape[1]}")
    if a.encoding != w.encoding:
        raise EncodingError(f"encoding mismatch: {a.encoding.value} vs {w.encoding.value}")
    if a.encoding == Encoding.RAW_CODES:
        raise EncodingError("raw bin indices have no hardware matmul path")


def lowprec_matmul(a: QuantizedTensor, w: QuantizedTensor) -> Tensor:
    """
    (M, K) activations times (N, K) weights, transposed, returning (M, N) reals.

    INT4 codes are accumulated in 32-bit integers, which is exact; MXFP4 codes are accumulated in
    32-bit reals. The accumulators are then multiplied by the activation scale and the per-row
    weight scale.

    :param a: quantized activations, per-tensor or per-row scales.
    :param w: quantized weights, one scale per output row or one overall.
    """
    _check_operands(a, w)
    if a.encoding == Encoding.INT4:
        if a.shape[1] > MAX_INT4_DEPTH:
            raise ShapeError(f"inner dimension {a.shape[1]} overflows a 32-bit accumulator")
        qa = decode_codes(a).astype(np.int32)
        qw = decode_codes(w).astype(np.int32)
        acc = np.matmul(qa, qw.T, dtype=np.int32).astype(np.float64)
    else:
        qa32 = decode_codes(a).astype(np.float32)
        qw32 = decode_codes(w).astype(np.float32)
        acc = np.matmul(qa32, qw32.T, dtype=np.float32).astype(np.float64)

    out = acc * a.scales.reshape(-1, 1) * w.scales.reshape(1, -1)
    return Tensor.from_numpy(out)


def dense_reference(a: QuantizedTensor, w: QuantizedTensor) -> np.ndarray:
    """Float64 product of the dequantized operands, used to check `lowprec_matmul`."""
    _check_operands(a, w)
    a_hat = a.scales.reshape(-1, 1) * decode_codes(a)
    w_hat = w.scales.reshape(-1, 1) * decode_codes(w)
    return a_hat @ w_hat.T
