# ruff: noqa: F401
from bellbox.entropy import entropy, entropy_report
from bellbox.errors import BellboxError
from bellbox.gaussian import build_inv_cdf_table, estimate_zeta_star
from bellbox.hadamard import HadamardPlan, fwht_blocked
from bellbox.kernelsim.quantized_tensor import QuantizedTensor, load_quantized, save_quantized
from bellbox.quantizers.bbq import bbq_backward, bbq_dequantize, bbq_quantize
from bellbox.quantizers.config import QuantConfig, ScaleParam
from bellbox.quantizers.dispatch import dequantize
from bellbox.tensorio import Tensor, read_tensor, write_tensor
