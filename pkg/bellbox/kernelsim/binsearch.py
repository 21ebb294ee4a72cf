import numpy as np

from bellbox.errors import ConfigError
from bellbox.gaussian import InvCdfTable
from bellbox.quantizers.config import QuantConfig
from bellbox.tensorio import Tensor


def binsearch_indices(v: np.ndarray, table: InvCdfTable) -> np.ndarray:
    """
    Bin index of every element by b branch-free comparisons against the table.

    Membership is left-closed: v >= Φ⁻¹(i/2^b) puts v in bin i or above.
    """
    boundaries = np.asarray(table.boundaries, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    idx = np.zeros(v.shape, dtype=np.int64)
    step = table.num_bins // 2
    while step:
        candidate = idx + step
        idx = np.where(v >= boundaries[candidate], candidate, idx)
        step //= 2
    return idx


def binsearch_quantize(v: Tensor, table: InvCdfTable, cfg: QuantConfig) -> np.ndarray:
    """
    Codes i - 2^(b-1) - z for already-normalised values, shaped like ``v``.

    :param v: values after the Hadamard transform and the 1/σ scaling.
    :param table: boundaries built for ``cfg.b``.
    :param cfg: supplies b and z.

    Example:
    ```python

    table = build_inv_cdf_table(3)
    binsearch_quantize(Tensor.from_numpy(np.array([0.7, -5.0])), table, QuantConfig(b=3))
    # array([ 2., -4.])
    ```
    """
    if table.b != cfg.b:
        raise ConfigError(f"table built for {table.b} bits, config asks for {cfg.b}")
    indices = binsearch_indices(v.to_numpy(np.float64), table)
    return indices - cfg.half - cfg.z
