import struct
from enum import IntEnum
from os import PathLike
from typing import Union

import numpy as np
from attr import frozen

from bellbox.errors import (
    BadMagicError,
    DtypeMismatchError,
    TruncatedPayloadError,
    UnknownDtypeError,
    UnsupportedVersionError,
)
from bellbox.tensorio.tensor import Tensor

MAGIC = b"BBQT"
VERSION = 1

# magic, version (u32), dtype (u8), ndim (u32); dims follow as ndim x u64
_HEADER = struct.Struct("<4sIBI")

FilePath = Union[str, PathLike]


class TensorDtype(IntEnum):
    REAL32 = 0
    PACKED_NIBBLES = 1


@frozen
class TensorFile:
    """
    Decoded view of a file in the BBQT layout.

    :param dtype: payload element type.
    :param dims: dimension sizes, in elements (nibbles for packed payloads).
    :param payload: raw little-endian payload bytes.
    """

    dtype: TensorDtype
    dims: tuple[int, ...]
    payload: bytes

    @property
    def numel(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))


def payload_offset(ndim: int) -> int:
    return _HEADER.size + 8 * ndim


def expected_payload_size(dtype: TensorDtype, dims: tuple[int, ...]) -> int:
    numel = int(np.prod(dims, dtype=np.int64))
    if dtype == TensorDtype.REAL32:
        return 4 * numel
    return (numel + 1) // 2


def _encode(dtype: TensorDtype, dims: tuple[int, ...], payload: bytes) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, int(dtype), len(dims))
    return header + struct.pack(f"<{len(dims)}Q", *dims) + payload


def write_tensor(t: Tensor, path: FilePath) -> None:
    """
    Writes a real32 tensor in the BBQT layout.

    Non-finite values cannot reach this point: `Tensor` rejects them at construction.

    :param t: the tensor to store.
    :param path: destination file, overwritten if present.
    """
    payload = t.data.astype("<f4", copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(_encode(TensorDtype.REAL32, t.shape, payload))


def write_packed(dims: tuple[int, ...], packed: bytes, path: FilePath) -> None:
    """
    Writes packed 4-bit fields; `dims` counts nibbles, not bytes.
    """
    dims = tuple(int(d) for d in dims)
    if len(packed) != expected_payload_size(TensorDtype.PACKED_NIBBLES, dims):
        raise TruncatedPayloadError(
            f"{len(packed)} packed bytes do not cover dims {list(dims)}"
        )
    with open(path, "wb") as fh:
        fh.write(_encode(TensorDtype.PACKED_NIBBLES, dims, bytes(packed)))


def read_tensor_file(path: FilePath) -> TensorFile:
    with open(path, "rb") as fh:
        raw = fh.read()

    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: missing BBQT magic")
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: header truncated")

    _, version, dtype_id, ndim = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: version {version}, expected {VERSION}")
    try:
        dtype = TensorDtype(dtype_id)
    except ValueError:
        raise UnknownDtypeError(f"{path}: unknown dtype {dtype_id}") from None

    offset = payload_offset(ndim)
    if len(raw) < offset:
        raise TruncatedPayloadError(f"{path}: dims truncated")
    dims = struct.unpack_from(f"<{ndim}Q", raw, _HEADER.size)

    payload = raw[offset:]
    expected = expected_payload_size(dtype, dims)
    if len(payload) != expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, dims {list(dims)} need {expected}"
        )
    return TensorFile(dtype=dtype, dims=tuple(dims), payload=payload)


def read_tensor(path: FilePath) -> Tensor:
    """
    Reads a real32 BBQT file back into a `Tensor`, bit-exactly.

    :param path: source file.
    :raises BadMagicError: the file does not start with ``BBQT``.
    :raises TruncatedPayloadError: payload length disagrees with the header.
    :raises UnknownDtypeError: dtype byte is not a known element type.
    """
    tf = read_tensor_file(path)
    if tf.dtype != TensorDtype.REAL32:
        raise DtypeMismatchError(f"{path}: holds packed nibbles, not real32 values")
    data = np.frombuffer(tf.payload, dtype="<f4")
    return Tensor(shape=tf.dims, data=data)


def read_packed(path: FilePath) -> tuple[tuple[int, ...], bytes]:
    tf = read_tensor_file(path)
    if tf.dtype != TensorDtype.PACKED_NIBBLES:
        raise DtypeMismatchError(f"{path}: holds real32 values, not packed nibbles")
    return tf.dims, tf.payload
