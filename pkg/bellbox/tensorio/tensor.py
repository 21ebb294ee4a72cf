import numpy as np
from attr import field, frozen

from bellbox.errors import NonFiniteTensorError, ShapeError


def _frozen_float32(values) -> np.ndarray:
    data = np.ascontiguousarray(np.asarray(values, dtype=np.float32).reshape(-1))
    if not np.all(np.isfinite(data)):
        raise NonFiniteTensorError("tensor values must be finite (NaN/Inf rejected)")
    data.setflags(write=False)
    return data


def _positive_dims(shape) -> tuple[int, ...]:
    dims = tuple(int(d) for d in shape)
    if any(d <= 0 for d in dims):
        raise ShapeError(f"dimension sizes must be positive, got {list(dims)}")
    return dims


@frozen(eq=False)
class Tensor:
    """
    Dense, immutable, row-major tensor of 32-bit reals.

    Carries raw values x, transformed values v and dequantized values x̂ between modules.
    Construction rejects NaN/Inf and checks that the shape covers the data exactly.

    :param shape: positive dimension sizes.
    :param data: flat row-major values, stored as a read-only float32 array.

    Example:
    ```python

    t = Tensor.from_numpy(np.eye(2))
    t.shape  # (2, 2)
    t.to_numpy(np.float64)
    ```
    """

    shape: tuple[int, ...] = field(converter=_positive_dims)
    data: np.ndarray = field(converter=_frozen_float32)

    def __attrs_post_init__(self) -> None:
        if int(np.prod(self.shape, dtype=np.int64)) != self.data.size:
            raise ShapeError(
                f"shape {list(self.shape)} covers {int(np.prod(self.shape))} values, "
                f"got {self.data.size}"
            )

    @classmethod
    def from_numpy(cls, array) -> "Tensor":
        array = np.asarray(array)
        shape = array.shape if array.ndim else (1,)
        return cls(shape=shape, data=array)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def numel(self) -> int:
        return self.data.size

    def to_numpy(self, dtype=np.float32) -> np.ndarray:
        """Returns a writable copy shaped like the tensor."""
        return self.data.reshape(self.shape).astype(dtype, copy=True)

    def __eq__(self, other: object) -> bool:
        # bit-exact: distinguishes -0.0 from 0.0
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and self.data.tobytes() == other.data.tobytes()

    def __hash__(self) -> int:
        return hash((self.shape, self.data.tobytes()))
