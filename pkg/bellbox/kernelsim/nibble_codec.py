from enum import Enum
from typing import Optional

import numpy as np
from attr import field, frozen

from bellbox.errors import EncodingError, ShapeError
from bellbox.quantizers.config import code_values


class Encoding(Enum):
    INT4 = "int4"
    MXFP4 = "mxfp4"
    # unsigned bin index i, for codebook indices and code sets no numeric 4-bit type holds
    RAW_CODES = "raw"


# two's complement, pattern 0b0000 .. 0b1111
INT4_VALUES = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, -8.0, -7.0, -6.0, -5.0, -4.0, -3.0, -2.0, -1.0)
# E2M1; 0b1000 is negative zero and decodes to 0
MXFP4_VALUES = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 0.0, -0.5, -1.0, -1.5, -2.0, -3.0, -4.0, -6.0)
RAW_VALUES = tuple(float(i) for i in range(16))


def _check_table(_instance, _attribute, value: tuple[float, ...]) -> None:
    if len(value) != 16:
        raise EncodingError(f"a nibble value table has 16 entries, got {len(value)}")


@frozen
class NibbleCodec:
    """
    Maps 4-bit patterns to reals and back.

    When two patterns share a value (MXFP4's two zeros) encoding picks the lower pattern, so
    0b1000 is never emitted.

    :param encoding: the 4-bit element type.
    :param values: value of each pattern, indexed by the pattern.
    """

    encoding: Encoding
    values: tuple[float, ...] = field(validator=_check_table)

    def pattern_of(self, value: float) -> int:
        for pattern, v in enumerate(self.values):
            if v == value:
                return pattern
        raise EncodingError(f"{value} is not representable as {self.encoding.value}")

    def represents(self, values) -> bool:
        return set(float(v) for v in values) <= set(self.values)

    def encode(self, values: np.ndarray) -> np.ndarray:
        """Value array to uint8 patterns, one per element."""
        flat = np.asarray(values, dtype=np.float64).reshape(-1)
        if flat.size == 0:
            return np.zeros(0, dtype=np.uint8)
        uniq, inverse = np.unique(flat, return_inverse=True)
        patterns = np.array([self.pattern_of(float(u)) for u in uniq], dtype=np.uint8)
        return patterns[inverse.reshape(-1)]

    def decode(self, patterns: np.ndarray) -> np.ndarray:
        table = np.asarray(self.values, dtype=np.float64)
        return table[np.asarray(patterns, dtype=np.uint8) & 0x0F]


_CODECS = {
    Encoding.INT4: NibbleCodec(Encoding.INT4, INT4_VALUES),
    Encoding.MXFP4: NibbleCodec(Encoding.MXFP4, MXFP4_VALUES),
    Encoding.RAW_CODES: NibbleCodec(Encoding.RAW_CODES, RAW_VALUES),
}


def codec_for(encoding: Encoding) -> NibbleCodec:
    return _CODECS[Encoding(encoding)]


def supports(encoding: Encoding, b: int, z: float) -> bool:
    """
    Whether every code of the (b, z) row is exactly representable in ``encoding``.

    INT4 holds b in {3, 4}; MXFP4 holds b in {1, 2, 3}; raw bin indices hold everything.
    """
    if Encoding(encoding) == Encoding.RAW_CODES:
        return True
    return codec_for(encoding).represents(code_values(b, z))


def default_encoding(b: int, z: float) -> Encoding:
    for encoding in (Encoding.INT4, Encoding.MXFP4):
        if supports(encoding, b, z):
            return encoding
    return Encoding.RAW_CODES


def pack_nibbles(patterns: np.ndarray) -> bytes:
    """
    Packs 4-bit patterns two per byte: element 2k in the low nibble, 2k+1 in the high nibble.
    An odd trailing element leaves the final high nibble zero.
    """
    flat = np.asarray(patterns, dtype=np.uint8).reshape(-1)
    if np.any(flat > 0x0F):
        raise EncodingError("nibble patterns must fit in 4 bits")
    if flat.size % 2:
        flat = np.append(flat, np.uint8(0))
    pairs = flat.reshape(-1, 2)
    return ((pairs[:, 0] | (pairs[:, 1] << 4)).astype(np.uint8)).tobytes()


def unpack_nibbles(packed: bytes, count: Optional[int] = None) -> np.ndarray:
    raw = np.frombuffer(bytes(packed), dtype=np.uint8)
    if count is None:
        count = 2 * raw.size
    if (count + 1) // 2 != raw.size:
        raise ShapeError(f"{raw.size} packed bytes cannot hold {count} nibbles")
    nibbles = np.stack([raw & 0x0F, raw >> 4], axis=-1).reshape(-1)
    return nibbles[:count].astype(np.uint8)
