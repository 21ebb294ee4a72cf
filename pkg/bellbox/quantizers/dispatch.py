from bellbox.kernelsim.quantized_tensor import QuantizedTensor
from bellbox.quantizers.bbq import bbq_dequantize
from bellbox.quantizers.codebook import codebook_dequantize
from bellbox.quantizers.config import Method, QuantConfig
from bellbox.quantizers.lsq import lsq_dequantize
from bellbox.quantizers.quest import quest_dequantize
from bellbox.tensorio import Tensor


def dequantize(qt: QuantizedTensor) -> Tensor:
    """Dequantizes with the method recorded on the tensor."""
    if qt.method.is_bbq:
        return bbq_dequantize(qt, QuantConfig(b=qt.b, method=qt.method))
    if qt.method == Method.LSQ:
        return lsq_dequantize(qt)
    if qt.method == Method.QUEST:
        return quest_dequantize(qt)
    return codebook_dequantize(qt)
