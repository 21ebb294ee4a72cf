import os
import tempfile
import time

import numpy as np
from attr import frozen

from bellbox.entropy import entropy
from bellbox.gaussian import build_inv_cdf_table, estimate_zeta_star, phi, phi_inv
from bellbox.hadamard import blocked_transform, hadamard_matrix_array
from bellbox.kernelsim.binsearch import binsearch_indices
from bellbox.kernelsim.nibble_codec import (
    Encoding,
    codec_for,
    pack_nibbles,
    supports,
    unpack_nibbles,
)
from bellbox.kernelsim.matmul import dense_reference, lowprec_matmul
from bellbox.kernelsim.quantized_tensor import decode_codes, encode_codes
from bellbox.quantizers.bbq import (
    bbq_backward_array,
    bbq_forward,
    bbq_quantize,
    bin_index,
    group_rms,
    transform,
)
from bellbox.quantizers.bbq_fast import (
    bbq_fast_quantize,
    bbq_fast_update,
    ema_code_agreement,
    measure_sigma,
)
from bellbox.quantizers.codebook import build_nf_codebook, codebook_quantize
from bellbox.quantizers.config import (
    EmaState,
    Granularity,
    Method,
    QuantConfig,
    QuestConfig,
    ScaleParam,
    code_values,
    zero_point_for,
)
from bellbox.quantizers.quest import quest_forward
from bellbox.tensorio import Tensor, read_tensor, write_tensor
from bellbox.tensorio.tensor_file import payload_offset
from bellbox.training.dataset import synth_dataset
from bellbox.training.model import ModelConfig, ToyModel
from bellbox.training.trainer import (
    TrainConfig,
    backward_and_step,
    forward,
    gamma_init,
    init_state,
    train,
)

#######################################################
# A COLLECTION OF HELPER FUNCTIONS FOR SELFTEST CHECKS #
#######################################################

# Note for developers: these checks are registered by the selftest builder. If you add a
# property here, add it to `default_suite` in the builder module as well.


@frozen
class CheckResult:
    passed: bool
    detail: str
    seconds: float = 0.0


def _result(passed, detail: str) -> CheckResult:
    return CheckResult(passed=bool(passed), detail=detail)


def gaussian_block(n: int, seed: int) -> np.ndarray:
    """n i.i.d. N(0, 1) values laid out as rows of 128 so the Hadamard transform keeps them so."""
    return np.random.default_rng(seed).standard_normal((n // 128, 128))


def zeta_reproduction(samples: int = 10**7, seed: int = 0) -> CheckResult:
    """ζ* lands within 0.01 of 1.694."""
    est = estimate_zeta_star(samples, seed)
    return _result(abs(est.zeta_star - 1.694) <= 0.01, f"zeta_star={est.zeta_star:.4f}")


def inv_cdf_table() -> CheckResult:
    """The 3-bit Φ⁻¹ boundaries match the published constants to 1e-9."""
    expected = (-1.1503493803760079, -0.6744897501960817, -0.3186393639643752, 0.0)
    table = build_inv_cdf_table(3)
    got = table.boundaries[1:5]
    worst = max(abs(a - b) for a, b in zip(got, expected))
    upper = table.boundaries[5:]
    mirrored = all(u == -lo for u, lo in zip(upper, reversed(table.boundaries[1:4])))
    return _result(worst <= 1e-9 and mirrored, f"max abs error {worst:.2e}")


def ito_frequencies(b: int, n: int = 1 << 20, seed: int = 0) -> CheckResult:
    """BBQ uses every code with frequency 2^-b ± 0.005 and reaches b - 0.01 bits."""
    x = gaussian_block(n, seed)
    cfg = QuantConfig(b=b)
    _, trace = bbq_forward(x, cfg, scale=ScaleParam.from_sigma0(1.0, d=x.size))
    _, counts = np.unique(trace.codes, return_counts=True)
    freqs = counts / trace.codes.size
    bits = entropy(trace.codes)
    ok = counts.size == cfg.num_bins and np.all(np.abs(freqs - 2.0**-b) <= 0.005)
    return _result(ok and bits >= b - 0.01, f"b={b} entropy={bits:.4f}")


def entropy_ordering(n: int = 1 << 20, seed: int = 0) -> CheckResult:
    """At 2 bits BBQ's code entropy exceeds QuEST's on the same Gaussian input."""
    x = gaussian_block(n, seed)
    _, bbq = bbq_forward(x, QuantConfig(b=2), scale=ScaleParam.from_sigma0(1.0, d=x.size))
    _, quest = quest_forward(x, QuestConfig(b=2))
    h_bbq, h_quest = entropy(bbq.codes), entropy(quest.codes)
    return _result(h_bbq > h_quest, f"bbq={h_bbq:.4f} quest={h_quest:.4f}")


def binsearch_equivalence(n: int = 10**6, seed: int = 0) -> CheckResult:
    """Binary search and ⌊2^bΦ(v)⌋ disagree on < 1e-5 of inputs, only next to a boundary."""
    v = np.random.default_rng(seed).uniform(-4.0, 4.0, n)
    worst_fraction = 0.0
    for b in range(1, 5):
        table = build_inv_cdf_table(b)
        fast = binsearch_indices(v, table)
        ref = bin_index(v, b)
        mismatch = fast != ref
        finite = np.asarray(table.boundaries[1:])
        if np.any(mismatch):
            gap = np.min(np.abs(v[mismatch][:, None] - finite[None, :]), axis=1)
            if np.any(gap > 1e-9):
                return _result(False, f"b={b} mismatch away from a boundary")
        worst_fraction = max(worst_fraction, float(mismatch.mean()))
    return _result(worst_fraction < 1e-5, f"worst mismatch fraction {worst_fraction:.2e}")


def nibble_bijection() -> CheckResult:
    """All 16 patterns round-trip and every ticked (b, z) code set is representable."""
    patterns = np.arange(16, dtype=np.uint8)
    for encoding in (Encoding.INT4, Encoding.MXFP4):
        codec = codec_for(encoding)
        decoded = codec.decode(unpack_nibbles(pack_nibbles(patterns), 16))
        if not np.array_equal(codec.decode(codec.encode(decoded)), decoded):
            return _result(False, f"{encoding.value} does not round-trip")
    ticks = {4: (True, False), 3: (True, True), 2: (False, True), 1: (False, True)}
    for b, (int4, mxfp4) in ticks.items():
        z = zero_point_for(b)
        if supports(Encoding.INT4, b, z) != int4 or supports(Encoding.MXFP4, b, z) != mxfp4:
            return _result(False, f"representability of b={b} is off")
        codes = np.asarray(code_values(b, z))
        if not np.array_equal(decode_codes(encode_codes(codes, b, z)).reshape(-1), codes):
            return _result(False, f"b={b} codes do not round-trip")
    return _result(True, "16 patterns x 2 encodings")


def matmul_exactness(cases: int = 100, seed: int = 0) -> CheckResult:
    """INT4 low-precision matmul equals the dequantized dense product within 1 ulp."""
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        qa = rng.integers(-8, 8, size=(64, 128)).astype(np.float64)
        qw = rng.integers(-8, 8, size=(64, 128)).astype(np.float64)
        a = encode_codes(qa, 4, 0.0, Encoding.INT4, scales=rng.uniform(0.01, 1.0))
        w = encode_codes(qw, 4, 0.0, Encoding.INT4, scales=rng.uniform(0.01, 1.0, 64))
        got = lowprec_matmul(a, w).to_numpy(np.float64)
        want = dense_reference(a, w)
        # one float32 ulp relative; exact-zero accumulators leave float64 residue in `want`
        if not np.allclose(got, want, rtol=2.0**-23, atol=1e-12):
            worst = float(np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-12)))
            return _result(False, f"relative error {worst:.2e}")
    return _result(True, f"{cases} cases within 1 ulp")


def bbq_gradient(seed: int = 0) -> CheckResult:
    """The smoothed BBQ backward matches central finite differences within 1e-4 relative."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 128))
    g = rng.standard_normal((1, 128))
    cfg = QuantConfig(b=3)
    scale = ScaleParam.from_sigma0(1.0, d=128)

    def loss(values: np.ndarray) -> float:
        out, _ = bbq_forward(values, cfg, scale=scale, smooth=True)
        return float(np.sum(out * g))

    _, trace = bbq_forward(x, cfg, scale=scale, smooth=True)
    analytic, _ = bbq_backward_array(g, trace, cfg, scale)
    eps = 1e-6
    numeric = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step.flat[i] = eps
        numeric.flat[i] = (loss(x + step) - loss(x - step)) / (2 * eps)
    rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
    return _result(rel <= 1e-4, f"relative error {rel:.2e}")


def bbq_fast_agreement(updates: int = 1000, seed: int = 0) -> CheckResult:
    """After 1000 EMA updates on a stationary stream, ≥ 99% of codes match exact-σ codes."""
    rng = np.random.default_rng(seed)
    cfg = QuantConfig(b=3)
    ema = EmaState()
    for _ in range(updates):
        ema = bbq_fast_update(ema, measure_sigma(2.0 * rng.standard_normal((8, 128)), cfg))
    agreement = ema_code_agreement(2.0 * rng.standard_normal((64, 128)), cfg, ema)
    return _result(agreement >= 0.99, f"agreement {agreement:.4f}")


def magnitude_preservation(n: int = 1 << 18, seed: int = 0) -> CheckResult:
    """With γ = ζ*σ₀, mean |x̂| is within 10% of mean |x|."""
    x = 0.3 * gaussian_block(n, seed)
    cfg = QuantConfig(b=4)
    scale = ScaleParam.from_sigma0(measure_sigma(x, cfg), d=x.size)
    x_hat, _ = bbq_forward(x, cfg, scale=scale)
    ratio = float(np.mean(np.abs(x_hat)) / np.mean(np.abs(x)))
    return _result(abs(ratio - 1.0) <= 0.1, f"ratio {ratio:.4f}")


def quest_contraction(seed: int = 0) -> CheckResult:
    """QuEST's round-trip error is at most half a step on unclipped transformed coordinates."""
    x = gaussian_block(1 << 14, seed)
    cfg = QuestConfig(b=3)
    x_hat, trace = quest_forward(x, cfg)
    err = np.abs(blocked_transform(x_hat - x, 128)) / trace.sigma
    unclipped = np.abs(trace.v) <= cfg.resolved_alpha()
    worst = float(err[unclipped].max())
    return _result(worst <= cfg.step / 2 + 1e-9, f"max error {worst:.4f} step {cfg.step:.4f}")


def codebook_ito(b: int = 3, n: int = 1 << 20, seed: int = 0) -> CheckResult:
    """A Gaussian-quantile codebook uses each value with frequency 2^-b ± 0.005."""
    x = gaussian_block(n, seed)
    qt = codebook_quantize(Tensor.from_numpy(x), build_nf_codebook(b), 1.0)
    _, counts = np.unique(qt.indices(), return_counts=True)
    freqs = counts / qt.numel
    ok = counts.size == 1 << b and np.all(np.abs(freqs - 2.0**-b) <= 0.005)
    return _result(ok, f"max deviation {float(np.max(np.abs(freqs - 2.0**-b))):.4f}")


def entropy_ceiling(seed: int = 0) -> CheckResult:
    """0 ≤ H ≤ b for every quantizer at every precision."""
    x = gaussian_block(1 << 14, seed)
    for b in range(1, 5):
        cfg = QuantConfig(b=b, granularity=Granularity.PER_CHANNEL)
        scale = ScaleParam.from_sigma0(np.ones(x.shape[0]), d=128)
        _, t = bbq_forward(x, cfg, scale=scale)
        _, q = quest_forward(x, QuestConfig(b=b))
        for codes in (t.codes, q.codes):
            h = entropy(codes)
            if not 0.0 <= h <= b + 1e-12:
                return _result(False, f"b={b} entropy {h}")
    return _result(True, "all within [0, b]")


def tensor_file_round_trip(seed: int = 0) -> CheckResult:
    """Real32 files read back bit-for-bit with the payload at 13 + 8·ndim bytes."""
    rng = np.random.default_rng(seed)
    with tempfile.TemporaryDirectory() as tmp:
        for shape in ((7,), (3, 128), (2, 3, 5)):
            t = Tensor.from_numpy(rng.standard_normal(shape))
            path = os.path.join(tmp, "t.bbqt")
            write_tensor(t, path)
            offset = payload_offset(len(shape))
            if offset != 13 + 8 * len(shape) or os.path.getsize(path) != offset + 4 * t.numel:
                return _result(False, f"shape {shape} has a misplaced payload")
            if read_tensor(path) != t:
                return _result(False, f"shape {shape} does not round-trip")
    return _result(True, "3 shapes")


def hadamard_properties(seed: int = 0) -> CheckResult:
    """
    The blocked transform keeps per-block energy, is its own inverse, agrees with the explicit
    matrix product and turns uniform input into excess kurtosis within ±0.1.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((64, 512))
    hx = blocked_transform(x, 128)
    blocks, hblocks = x.reshape(-1, 128), hx.reshape(-1, 128)
    if not np.allclose(np.sum(hblocks**2, axis=1), np.sum(blocks**2, axis=1), rtol=1e-10):
        return _result(False, "energy is not preserved")
    if not np.allclose(blocked_transform(hx, 128), x, atol=1e-10):
        return _result(False, "not an involution")
    if not np.allclose(hblocks, blocks @ hadamard_matrix_array(128), atol=1e-10):
        return _result(False, "fast path disagrees with the matrix product")

    u = blocked_transform(rng.uniform(-1.0, 1.0, size=(4096, 128)), 128).reshape(-1)
    u = u - u.mean()
    excess = float(np.mean(u**4) / np.mean(u**2) ** 2 - 3.0)
    return _result(abs(excess) <= 0.1, f"excess kurtosis {excess:+.4f}")


def phi_properties(seed: int = 0) -> CheckResult:
    """Φ is monotone, Φ(Φ⁻¹(p)) = p within 1e-9 and every table is antisymmetric."""
    grid = np.sort(np.random.default_rng(seed).uniform(-8.0, 8.0, size=100_000))
    if np.any(np.diff(phi(grid)) < 0.0):
        return _result(False, "phi decreases")
    p = np.linspace(1e-6, 1.0 - 1e-6, 100_001)
    worst = float(np.max(np.abs(phi(phi_inv(p)) - p)))
    for b in range(1, 5):
        finite = build_inv_cdf_table(b).boundaries[1:]
        if any(lo != -hi for lo, hi in zip(finite, reversed(finite))):
            return _result(False, f"b={b} table is not antisymmetric")
    return _result(worst <= 1e-9, f"inverse error {worst:.2e}")


def zeta_methods_agree(samples: int = 10**6, seed: int = 0) -> CheckResult:
    """Gradient descent lands on the closed-form ζ* of the same draw within 1e-6."""
    closed = estimate_zeta_star(samples, seed).zeta_star
    walked = estimate_zeta_star(samples, seed, method="gradient-descent").zeta_star
    return _result(abs(closed - walked) <= 1e-6, f"closed {closed:.6f} walked {walked:.6f}")


def code_range(seed: int = 0) -> CheckResult:
    """Every BBQ code lies on the signed grid of its precision, even for heavy-tailed input."""
    x = np.random.default_rng(seed).standard_t(2, size=(64, 128))
    for b in range(1, 5):
        cfg = QuantConfig(b=b)
        _, trace = bbq_forward(x, cfg, scale=ScaleParam.from_sigma0(1.0, d=x.size))
        if not np.all(np.isin(trace.codes, code_values(b, cfg.z))):
            return _result(False, f"b={b} code off the grid")
    return _result(True, "b=1..4 on the grid")


def bbq_fast_exact_seed(seed: int = 0) -> CheckResult:
    """A running average seeded with the exact 1/σ packs the same bytes as BBQ."""
    x = gaussian_block(1 << 14, seed) * 0.7
    for b in range(1, 5):
        cfg = QuantConfig(b=b, method=Method.BBQ_FAST)
        sigma = measure_sigma(x, cfg)
        scale = ScaleParam.from_sigma0(sigma, d=x.size)
        fast = bbq_fast_quantize(
            Tensor.from_numpy(x), cfg, bbq_fast_update(EmaState(), sigma), scale=scale
        )
        exact, _ = bbq_quantize(Tensor.from_numpy(x), QuantConfig(b=b), scale)
        if fast.packed != exact.packed:
            return _result(False, f"b={b} bytes differ")
    return _result(True, "b=1..4 identical")


def entropy_properties(seed: int = 0) -> CheckResult:
    """Entropy ignores code order and a mixture never has less entropy than both of its parts."""
    rng = np.random.default_rng(seed)
    codes = rng.integers(-4, 4, size=10_000).astype(np.float64)
    if abs(entropy(rng.permutation(codes)) - entropy(codes)) > 1e-12:
        return _result(False, "entropy depends on order")
    for _ in range(20):
        left = rng.integers(0, rng.integers(1, 9), size=500).astype(np.float64)
        right = rng.integers(0, rng.integers(1, 9), size=300).astype(np.float64)
        mixed = entropy(np.concatenate([left, right]))
        if mixed < min(entropy(left), entropy(right)) - 1e-12:
            return _result(False, f"mixture entropy {mixed:.4f} below both parts")
    return _result(True, "20 mixtures")


def _small_train_config(**kwargs) -> TrainConfig:
    model = ModelConfig(input_dim=16, hidden_dim=32, num_classes=4, block_size=16)
    defaults = dict(b=2, iterations=20, batch_size=32, num_samples=256, model=model)
    return TrainConfig(**{**defaults, **kwargs})


def training_determinism(seed: int = 0) -> CheckResult:
    """Two runs with the same configuration log identical loss and entropy."""
    cfg = _small_train_config(seed=seed)
    first, second = train(cfg).history, train(cfg).history
    return _result(first == second, f"{len(first)} iterations compared")


def vision_gamma(seed: int = 0) -> CheckResult:
    """In vision mode every weight γ equals ζσ of the weights at that step."""
    cfg = _small_train_config(seed=seed, vision_mode=True, iterations=5)
    task = synth_dataset(
        cfg.seed, cfg.num_samples, cfg.model.num_classes, dim=cfg.model.input_dim
    )
    state = init_state(cfg, task)
    batches = task.batches(cfg.batch_size, np.random.default_rng(seed))
    worst = 0.0
    for _ in range(cfg.iterations):
        _, _, cache = forward(state.model, next(batches), cfg)
        for layer, layer_cache in zip(state.model.layers, (cache.layer1, cache.layer2)):
            qcfg = layer.weight_site.quant_config()
            want = cfg.zeta * group_rms(transform(layer.weight.data, qcfg), qcfg.granularity)
            worst = max(worst, float(np.max(np.abs(layer_cache.weight_trace.gamma - want))))
        backward_and_step(state, cache, cfg)
    return _result(worst <= 1e-12, f"max deviation {worst:.2e}")


def packed_layer_forward(seed: int = 0) -> CheckResult:
    """A quantized layer gives the same output through packed codes within 1e-4 relative."""
    model_cfg = ModelConfig(input_dim=128, hidden_dim=128, num_classes=4)
    worst = 0.0
    for b in range(1, 5):
        layer = ToyModel.create(model_cfg, Method.BBQ, b=b, seed=seed).ql1
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((32, 128)).astype(np.float32).astype(np.float64)
        layer.weight.assign(layer.weight.data.astype(np.float32).astype(np.float64))
        layer.act_site.init_scale(x, 1.694)
        layer.weight_site.init_scale(layer.weight.data, 1.694)
        y, _ = layer.forward(x)
        packed = layer.lowprec_forward(x)
        worst = max(worst, float(np.max(np.abs(packed - y) / np.maximum(np.abs(y), 1.0))))
    return _result(worst <= 1e-4, f"max relative error {worst:.2e}")


def timed(check, *args, **kwargs) -> CheckResult:
    start = time.perf_counter()
    result = check(*args, **kwargs)
    return CheckResult(result.passed, result.detail, time.perf_counter() - start)


def _nudge(param, index: int, delta: float) -> None:
    values = np.array(param.value, dtype=np.float64)
    values.flat[index] += delta
    if param.scale is not None:
        param.scale.update(values)
    else:
        param.data[...] = values


def model_gradient(seed: int = 0, coords: int = 8, eps: float = 1e-6) -> CheckResult:
    """
    Every parameter gradient of a width-reduced smoothed BBQ model matches central finite
    differences within 1e-3 relative, checked at a few random coordinates per parameter.
    """
    rng = np.random.default_rng(seed)
    model_cfg = ModelConfig(
        input_dim=8, hidden_dim=16, num_classes=3, block_size=8, readout_std=0.5
    )
    model = ToyModel.create(model_cfg, Method.BBQ, b=3, seed=seed)
    inputs = rng.standard_normal((4, 8))
    labels = rng.integers(0, 3, size=4)
    gamma_init(model, inputs, TrainConfig(b=3, model=model_cfg, iterations=1))

    def loss() -> float:
        return model.forward(inputs, labels, smooth=True)[1]

    _, _, cache = model.forward(inputs, labels, smooth=True)
    grads = model.backward(cache, gamma_grad_scaling=False)
    worst = 0.0
    for param in model.parameters():
        picks = rng.choice(param.value.size, size=min(coords, param.value.size), replace=False)
        analytic = grads[param.name].reshape(-1)[picks]
        numeric = np.empty_like(analytic)
        for j, index in enumerate(picks):
            _nudge(param, index, eps)
            up = loss()
            _nudge(param, index, -2 * eps)
            down = loss()
            _nudge(param, index, eps)
            numeric[j] = (up - down) / (2 * eps)
        rel = np.linalg.norm(analytic - numeric) / max(float(np.linalg.norm(numeric)), 1e-6)
        if rel > 1e-3:
            return _result(False, f"{param.name} relative error {rel:.2e}")
        worst = max(worst, float(rel))
    return _result(True, f"worst relative error {worst:.2e}")


def training_entropy(iterations: int = 2000, seed: int = 0) -> CheckResult:
    """
    A 2-bit BBQ run starts at ≥ 1.98 bits of pooled weight entropy, never drops below 1.90 and at
    least halves its loss.
    """
    state = train(TrainConfig(b=2, iterations=iterations, seed=seed))
    entropies = [row["pooled_entropy"] for row in state.history]
    first_loss = state.history[0]["loss"]
    tail = np.mean([row["loss"] for row in state.history[-50:]])
    ok = entropies[0] >= 1.98 and min(entropies) >= 1.90 and tail <= 0.5 * first_loss
    return _result(
        ok,
        f"entropy start {entropies[0]:.4f} min {min(entropies):.4f} "
        f"loss {first_loss:.4f} -> {tail:.4f}",
    )
