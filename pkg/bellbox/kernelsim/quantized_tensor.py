import json
import logging
import math
from typing import Optional

import numpy as np
from attr import field, frozen

from bellbox.errors import EncodingError, ShapeError, TensorFormatError
from bellbox.kernelsim.nibble_codec import (
    Encoding,
    codec_for,
    default_encoding,
    pack_nibbles,
    supports,
    unpack_nibbles,
)
from bellbox.quantizers.config import Granularity, Method, code_values
from bellbox.tensorio.tensor_file import FilePath, read_packed, write_packed

logger = logging.getLogger(__name__)


def _as_scales(values) -> np.ndarray:
    scales = np.atleast_1d(np.asarray(values, dtype=np.float64)).reshape(-1)
    scales.setflags(write=False)
    return scales


@frozen(eq=False)
class QuantizedTensor:
    """
    Codes in their stored, nibble-packed form plus what is needed to dequantize them.

    :param shape: logical shape of the quantized tensor.
    :param encoding: 4-bit element type of the packed nibbles.
    :param packed: two nibbles per byte, even elements in the low nibble.
    :param scales: per-row (one per leading-dims row) or per-tensor multiplier applied by the
        method's dequantizer: γ/2^(b-1) for BBQ, s for LSQ, Δσ for QuEST, σ for codebooks.
    :param b: precision in bits.
    :param z: zero point of the code set.
    :param method: quantizer that produced the codes.
    :param block_size: Hadamard block size to undo on dequantization (QuEST only).
    :param codebook: sorted value table for codebook quantization.
    """

    shape: tuple[int, ...] = field(converter=lambda s: tuple(int(d) for d in s))
    encoding: Encoding = field(converter=Encoding)
    packed: bytes = field(converter=bytes)
    scales: np.ndarray = field(converter=_as_scales)
    b: int
    z: float
    method: Method = field(default=Method.BBQ, converter=Method)
    block_size: Optional[int] = None
    codebook: Optional[tuple[float, ...]] = None

    def __attrs_post_init__(self) -> None:
        if len(self.packed) != (self.numel + 1) // 2:
            raise ShapeError(f"{len(self.packed)} packed bytes do not cover shape {list(self.shape)}")
        if self.scales.size not in (1, self.rows):
            raise ShapeError(f"{self.scales.size} scales for {self.rows} rows")

    @property
    def numel(self) -> int:
        return int(math.prod(self.shape))

    @property
    def rows(self) -> int:
        return int(math.prod(self.shape[:-1]))

    @property
    def granularity(self) -> Granularity:
        if self.scales.size == 1 and self.rows != 1:
            return Granularity.PER_TENSOR
        return Granularity.PER_CHANNEL

    def patterns(self) -> np.ndarray:
        return unpack_nibbles(self.packed, self.numel)

    def indices(self) -> np.ndarray:
        """Unsigned bin index i of every element, shaped like the tensor."""
        return (decode_codes(self) + (1 << (self.b - 1)) + self.z).astype(np.int64)

    def scale_column(self) -> np.ndarray:
        """Scales shaped (rows, 1) or (1, 1) for broadcasting against the (rows, cols) view."""
        return self.scales.reshape(-1, 1)


def encode_codes(
    codes,
    b: int,
    z: float,
    encoding: Optional[Encoding] = None,
    scales=1.0,
    method: Method = Method.BBQ,
    block_size: Optional[int] = None,
    codebook: Optional[tuple[float, ...]] = None,
) -> QuantizedTensor:
    """
    Maps each code to the 4-bit pattern with the same numeric value and packs the result.

    :param codes: code values drawn from ``code_values(b, z)``; the array shape is kept.
    :param encoding: target element type; defaults to INT4 where it fits, then MXFP4, then raw
        bin indices.
    :raises EncodingError: the (b, z) code set does not fit the encoding, or a code lies outside
        it.

    Example:
    ```python

    qt = encode_codes(np.array([[3.0, -2.0]]), b=3, z=0.0, encoding=Encoding.MXFP4)
    qt.packed  # b'\\xc5'
    ```
    """
    codes = np.asarray(codes, dtype=np.float64)
    shape = codes.shape if codes.ndim else (1,)
    encoding = default_encoding(b, z) if encoding is None else Encoding(encoding)
    if not supports(encoding, b, z):
        raise EncodingError(f"{b}-bit codes with z={z} are not representable as {encoding.value}")

    allowed = np.asarray(code_values(b, z))
    if not np.all(np.isin(codes, allowed)):
        raise EncodingError(f"codes outside the {b}-bit code set {allowed.tolist()}")

    values = codes + (1 << (b - 1)) + z if encoding == Encoding.RAW_CODES else codes
    patterns = codec_for(encoding).encode(values)
    return QuantizedTensor(
        shape=shape,
        encoding=encoding,
        packed=pack_nibbles(patterns),
        scales=scales,
        b=b,
        z=z,
        method=method,
        block_size=block_size,
        codebook=codebook,
    )


def decode_codes(qt: QuantizedTensor) -> np.ndarray:
    """Code values of every element as float64, shaped like the tensor."""
    values = codec_for(qt.encoding).decode(qt.patterns())
    if qt.encoding == Encoding.RAW_CODES:
        values = values - (1 << (qt.b - 1)) - qt.z
    return values.reshape(qt.shape)


def _sidecar_path(path: FilePath) -> str:
    return f"{path}.json"


def save_quantized(qt: QuantizedTensor, path: FilePath) -> None:
    """
    Writes the packed nibbles as a packed TensorFile and everything else to ``<path>.json``.
    """
    write_packed(qt.shape, qt.packed, path)
    metadata = {
        "method": qt.method.value,
        "encoding": qt.encoding.value,
        "b": qt.b,
        "z": qt.z,
        "scales": qt.scales.tolist(),
        "block_size": qt.block_size,
        "codebook": list(qt.codebook) if qt.codebook is not None else None,
    }
    with open(_sidecar_path(path), "w") as fh:
        json.dump(metadata, fh, indent=2)
    logger.debug(json.dumps({"event": "save_quantized", "path": str(path), "shape": qt.shape}))


def load_quantized(path: FilePath) -> QuantizedTensor:
    dims, packed = read_packed(path)
    try:
        with open(_sidecar_path(path)) as fh:
            metadata = json.load(fh)
    except FileNotFoundError:
        raise TensorFormatError(f"{path}: missing sidecar {_sidecar_path(path)}") from None

    try:
        codebook = metadata["codebook"]
        return QuantizedTensor(
            shape=dims,
            encoding=metadata["encoding"],
            packed=packed,
            scales=metadata["scales"],
            b=int(metadata["b"]),
            z=float(metadata["z"]),
            method=metadata["method"],
            block_size=metadata["block_size"],
            codebook=tuple(codebook) if codebook is not None else None,
        )
    except (KeyError, ValueError) as e:
        raise TensorFormatError(f"{path}: malformed sidecar ({e})") from None
