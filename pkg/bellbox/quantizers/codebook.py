import numpy as np
from attr import field, frozen

from bellbox.errors import ConfigError, DomainError
from bellbox.gaussian import phi_inv
from bellbox.hadamard import is_power_of_two
from bellbox.kernelsim.nibble_codec import Encoding
from bellbox.kernelsim.quantized_tensor import QuantizedTensor, encode_codes
from bellbox.quantizers.bbq import bin_index
from bellbox.quantizers.config import Method, code_values, rows_view
from bellbox.tensorio import Tensor


def _check_values(_instance, _attribute, values: tuple[float, ...]) -> None:
    if not (2 <= len(values) <= 16 and is_power_of_two(len(values))):
        raise ConfigError(f"a codebook holds 2^b values for b in 1..4, got {len(values)}")
    if any(hi <= lo for lo, hi in zip(values, values[1:])):
        raise ConfigError("codebook values must be strictly increasing")


@frozen
class Codebook:
    """
    The ordered set of 2^b representable values; ``values[i]`` is the i-th smallest.

    Example:
    ```python

    cb = build_nf_codebook(2)
    cb.b  # 2
    cb.lookup(np.array([0, 3]))
    ```
    """

    values: tuple[float, ...] = field(
        converter=lambda vs: tuple(float(v) for v in vs), validator=_check_values
    )

    @property
    def b(self) -> int:
        return len(self.values).bit_length() - 1

    def lookup(self, indices: np.ndarray) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)[np.asarray(indices, dtype=np.int64)]


def build_nf_codebook(b: int) -> Codebook:
    """Mid-bin Gaussian quantiles Φ⁻¹((i + ½)/2^b), abs-max normalised to [-1, 1]."""
    if not 1 <= b <= 4:
        raise ConfigError(f"precision must be between 1 and 4 bits, got {b}")
    n = 1 << b
    quantiles = np.asarray(phi_inv((np.arange(n) + 0.5) / n))
    # mirror the upper half so the table is exactly symmetric
    upper = quantiles[n // 2 :] / np.max(np.abs(quantiles))
    return Codebook(np.concatenate([-upper[::-1], upper]))


def identity_codebook(b: int, z: float) -> Codebook:
    """The BBQ code set itself, so codebook quantization reproduces BBQ codes."""
    return Codebook(code_values(b, z))


def codebook_quantize(x: Tensor, cb: Codebook, sigma) -> QuantizedTensor:
    """
    Bin index i = clamp(⌊2^b Φ(x/σ)⌋, 0, 2^b - 1), stored as raw 4-bit indices.

    :param x: input, no Hadamard transform applied.
    :param cb: the value table.
    :param sigma: positive scale, a scalar or one per row.
    """
    sigma = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    if not np.all(sigma > 0):
        raise DomainError("codebook sigma must be positive")
    rows, cols = rows_view(x.shape)
    if sigma.size not in (1, rows):
        raise DomainError(f"{sigma.size} sigma values for {rows} rows")

    v = x.to_numpy(np.float64).reshape(rows, cols) * (1.0 / sigma.reshape(-1, 1))
    indices = bin_index(v, cb.b)
    half = 1 << (cb.b - 1)
    return encode_codes(
        (indices - half).reshape(x.shape),
        b=cb.b,
        z=0.0,
        encoding=Encoding.RAW_CODES,
        scales=sigma,
        method=Method.CODEBOOK,
        codebook=cb.values,
    )


def codebook_dequantize(qt: QuantizedTensor) -> Tensor:
    """x̂ = σ·T[i]."""
    if qt.codebook is None:
        raise ConfigError("quantized tensor carries no codebook")
    rows, cols = rows_view(qt.shape)
    values = Codebook(qt.codebook).lookup(qt.indices().reshape(rows, cols))
    return Tensor.from_numpy((qt.scale_column() * values).reshape(qt.shape))
