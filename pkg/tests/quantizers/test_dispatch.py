import numpy as np
import pytest

from bellbox.quantizers.bbq import bbq_dequantize, bbq_quantize
from bellbox.quantizers.codebook import build_nf_codebook, codebook_dequantize, codebook_quantize
from bellbox.quantizers.config import LsqConfig, QuantConfig, QuestConfig, ScaleParam
from bellbox.quantizers.dispatch import dequantize
from bellbox.quantizers.lsq import lsq_dequantize, lsq_quantize
from bellbox.quantizers.quest import quest_dequantize, quest_quantize
from bellbox.tensorio import Tensor


@pytest.fixture(scope="function")
def tensor():
    yield Tensor.from_numpy(np.random.default_rng(8).standard_normal((4, 128)))


def test_dispatch_matches_method_dequantizers(tensor):
    cfg = QuantConfig(b=3)
    bbq_qt, _ = bbq_quantize(tensor, cfg, ScaleParam.from_sigma0(1.0, d=512))
    lsq_qt = lsq_quantize(tensor, LsqConfig(b=4, s=0.3))
    quest_qt = quest_quantize(tensor, QuestConfig(b=2))
    cb_qt = codebook_quantize(tensor, build_nf_codebook(3), 1.0)

    assert dequantize(bbq_qt) == bbq_dequantize(bbq_qt, cfg)
    assert dequantize(lsq_qt) == lsq_dequantize(lsq_qt)
    assert dequantize(quest_qt) == quest_dequantize(quest_qt)
    assert dequantize(cb_qt) == codebook_dequantize(cb_qt)
