"""
Command-line entry point. Every subcommand prints its resolved configuration as one JSON line on
stderr, writes reports as CSV on stdout (or ``--out``), and exits 0 on success, 1 on a domain or
I/O error and 2 on a usage error.
"""

import argparse
import json
import logging
import sys
import time
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
from attr import asdict, has

from bellbox.cli.selftest import default_suite
from bellbox.entropy import entropy_report
from bellbox.errors import BellboxError, ConfigError
from bellbox.gaussian import ZETA_STAR, build_inv_cdf_table, estimate_zeta_star
from bellbox.hadamard import HadamardPlan
from bellbox.kernelsim.kernel import quantize_kernel_sim
from bellbox.kernelsim.matmul import MacCounts, lowprec_matmul
from bellbox.kernelsim.nibble_codec import Encoding
from bellbox.kernelsim.quantized_tensor import decode_codes, load_quantized, save_quantized
from bellbox.quantizers.bbq import bbq_forward, bbq_quantize
from bellbox.quantizers.bbq_fast import bbq_fast_quantize, bbq_fast_update, measure_sigma
from bellbox.quantizers.codebook import build_nf_codebook, codebook_quantize
from bellbox.quantizers.config import (
    GAMMA_FLOOR,
    EmaState,
    Granularity,
    LsqConfig,
    Method,
    QuantConfig,
    QuestConfig,
    ScaleParam,
    rows_view,
)
from bellbox.quantizers.dispatch import dequantize
from bellbox.quantizers.lsq import lsq_init_step, lsq_quantize
from bellbox.quantizers.quest import alpha_star, gaussian_clip_mse, quest_quantize
from bellbox.tensorio import Tensor, emit_csv, format_csv, read_tensor, write_tensor
from bellbox.training.checkpoint import checkpoint_entropy, save_checkpoint
from bellbox.training.dataset import synth_dataset
from bellbox.training.model import ModelConfig
from bellbox.training.optimizer import OptimizerConfig
from bellbox.training.trainer import TrainConfig, evaluate, train

logger = logging.getLogger(__name__)

# flags forwarded to the nested training records
_OPTIMIZER_FLAGS = ("kind", "lr", "weight_decay", "momentum", "warmup_fraction")
_MODEL_FLAGS = ("input_dim", "hidden_dim", "num_classes", "block_size")


def _jsonable(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if has(type(value)):
        return asdict(value)
    return str(value)


def _announce(subcommand: str, resolved: dict) -> None:
    print(
        json.dumps({"subcommand": subcommand, "config": resolved}, default=_jsonable),
        file=sys.stderr,
    )


def _report(rows: list[dict], out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(format_csv(rows))
    else:
        emit_csv(rows, out)


def _rms(x: np.ndarray, granularity: Granularity) -> np.ndarray:
    rows, cols = rows_view(x.shape)
    sq = np.square(x.reshape(rows, cols))
    if granularity == Granularity.PER_CHANNEL:
        return np.sqrt(sq.mean(axis=1))
    return np.atleast_1d(np.sqrt(sq.mean()))


def _quantize(args: argparse.Namespace) -> int:
    x = read_tensor(args.input)
    x64 = x.to_numpy(np.float64)
    method = Method(args.method)
    granularity = Granularity(args.granularity)
    encoding = Encoding(args.encoding) if args.encoding else None

    if method == Method.LSQ:
        step = args.step if args.step is not None else lsq_init_step(x64, args.bits, granularity)
        lsq_cfg = LsqConfig(b=args.bits, s=step, granularity=granularity)
        _announce("quantize", {"method": method, "b": lsq_cfg.b, "s": lsq_cfg.s})
        qt = lsq_quantize(x, lsq_cfg, encoding)
    elif method == Method.QUEST:
        quest_cfg = QuestConfig(
            b=args.bits,
            alpha_star=args.alpha_star,
            granularity=granularity,
            block_size=args.block,
            use_hadamard=args.use_hadamard,
        )
        _announce("quantize", {"method": method, **asdict(quest_cfg)})
        qt = quest_quantize(x, quest_cfg)
    elif method == Method.CODEBOOK:
        sigma = _rms(x64, granularity)
        _announce("quantize", {"method": method, "b": args.bits, "granularity": granularity})
        qt = codebook_quantize(x, build_nf_codebook(args.bits), np.maximum(sigma, 1e-12))
    else:
        cfg = QuantConfig(
            b=args.bits,
            method=method,
            granularity=granularity,
            block_size=args.block,
            use_hadamard=args.use_hadamard,
            use_rms=args.use_rms,
        )
        _announce("quantize", {**asdict(cfg), "zeta_star": args.zeta_star})
        rows, cols = rows_view(x.shape)
        d = cols if granularity == Granularity.PER_CHANNEL else rows * cols
        _, trace = bbq_forward(x64, cfg, zeta=args.zeta_star)
        gamma = trace.gamma.reshape(-1)
        if np.any(gamma < GAMMA_FLOOR):
            logger.warning(
                json.dumps(
                    {
                        "event": "gamma_floor",
                        "input": str(args.input),
                        "channels": int(np.sum(gamma < GAMMA_FLOOR)),
                        "gamma": GAMMA_FLOOR,
                    }
                )
            )
        scale = ScaleParam(
            gamma=np.maximum(gamma, GAMMA_FLOOR), sigma0=trace.sigma.reshape(-1), d=d
        )
        if method == Method.BBQ:
            qt, _ = bbq_quantize(x, cfg, scale, encoding=encoding)
        else:
            if granularity != Granularity.PER_TENSOR:
                raise ConfigError("bbq-fast keeps one running sigma per tensor")
            ema = bbq_fast_update(EmaState(), measure_sigma(x64, cfg))
            if args.kernel:
                plan = HadamardPlan(cfg.block_size)
                table = build_inv_cdf_table(cfg.b)
                qt = quantize_kernel_sim(x, plan, table, ema, cfg, scale, encoding)
            else:
                qt = bbq_fast_quantize(x, cfg, ema, scale=scale, encoding=encoding)

    save_quantized(qt, args.out)
    return 0


def _dequantize(args: argparse.Namespace) -> int:
    qt = load_quantized(args.input)
    _announce("dequantize", {"method": qt.method, "b": qt.b, "encoding": qt.encoding})
    write_tensor(dequantize(qt), args.out)
    return 0


def _entropy(args: argparse.Namespace) -> int:
    _announce("entropy", {"path": args.path})
    if args.path.is_dir():
        report = checkpoint_entropy(args.path)
    else:
        report = entropy_report({args.path.stem: decode_codes(load_quantized(args.path))})
    _report(report.as_rows(), args.out)
    return 0


def _zeta(args: argparse.Namespace) -> int:
    _announce("zeta", {"samples": args.samples, "seed": args.seed, "method": args.method})
    estimate = estimate_zeta_star(args.samples, args.seed, args.method)
    _report([estimate.as_row()], args.out)
    return 0


def _alpha_star(args: argparse.Namespace) -> int:
    _announce("alpha-star", {"bits": args.bits})
    rows = []
    for b in args.bits:
        cfg = QuestConfig(b=b)
        alpha = alpha_star(b)
        rows.append(
            {
                "b": b,
                "alpha_star": alpha,
                "step": cfg.step,
                "trust_factor": cfg.trust_factor,
                "mse": float(gaussian_clip_mse(np.array([alpha]), b)[0]),
            }
        )
    _report(rows, args.out)
    return 0


def _matmul(args: argparse.Namespace) -> int:
    a = load_quantized(args.activations)
    w = load_quantized(args.weights)
    _announce("matmul", {"activations": a.shape, "weights": w.shape, "encoding": a.encoding})
    write_tensor(lowprec_matmul(a, w), args.out)
    return 0


def _bench(args: argparse.Namespace) -> int:
    _announce("bench", {"sizes": args.sizes, "bits": args.bits, "seed": args.seed})
    rng = np.random.default_rng(args.seed)
    cfg = QuantConfig(b=args.bits, method=Method.BBQ_FAST)
    plan = HadamardPlan(cfg.block_size)
    table = build_inv_cdf_table(cfg.b)
    rows = []
    for size in args.sizes:
        x = Tensor.from_numpy(rng.standard_normal((size, size)))
        w = Tensor.from_numpy(rng.standard_normal((size, size)))
        ema = bbq_fast_update(EmaState(), measure_sigma(x.to_numpy(np.float64), cfg))

        start = time.perf_counter()
        qa = quantize_kernel_sim(x, plan, table, ema, cfg)
        quantize_seconds = time.perf_counter() - start
        qw = quantize_kernel_sim(w, plan, table, ema, cfg)

        start = time.perf_counter()
        lowprec_matmul(qa, qw)
        matmul_seconds = time.perf_counter() - start

        macs = MacCounts(m=size, k=size, n=size)
        rows.append(
            {
                "m": size,
                "k": size,
                "n": size,
                "b": cfg.b,
                "macs": macs.macs,
                "epilogue_macs": macs.epilogue,
                "packed_operand_bytes": macs.operand_bytes(4),
                "real32_operand_bytes": macs.operand_bytes(32),
                "quantize_seconds": quantize_seconds,
                "matmul_seconds": matmul_seconds,
            }
        )
    _report(rows, args.out)
    return 0


def train_config_from_args(args: argparse.Namespace) -> TrainConfig:
    """Builds a `TrainConfig` from the flags that were given; the rest keep the record defaults."""
    given = {k: v for k, v in vars(args).items() if k not in ("func", "log_level", "out")}
    optimizer = {k: given.pop(k) for k in _OPTIMIZER_FLAGS if k in given}
    model = {k: given.pop(k) for k in _MODEL_FLAGS if k in given}
    given.pop("subcommand", None)
    return TrainConfig(optimizer=OptimizerConfig(**optimizer), model=ModelConfig(**model), **given)


def _train(args: argparse.Namespace) -> int:
    cfg = train_config_from_args(args)
    _announce("train", cfg.as_dict())
    task = synth_dataset(cfg.seed, cfg.num_samples, cfg.model.num_classes, dim=cfg.model.input_dim)
    state = train(cfg, task)

    metrics = {"iterations": state.iteration, "final_loss": state.history[-1]["loss"]}
    for mode, inference in (("train", False), ("inference", True)):
        result = evaluate(state.model, task, cfg, inference=inference)
        metrics[f"{mode}_loss"] = result["loss"]
        metrics[f"{mode}_accuracy"] = result["accuracy"]
    metrics["pooled_entropy"] = state.history[-1]["pooled_entropy"]

    save_checkpoint(state, args.out, metrics)
    sys.stdout.write(format_csv([metrics]))
    return 0


def _selftest(args: argparse.Namespace) -> int:
    _announce("selftest", {"skip_slow": args.skip_slow, "only": args.only})
    report = default_suite(skip_slow=args.skip_slow, only=args.only).build()
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    keep = argparse.SUPPRESS
    methods = [m.value for m in (Method.BBQ, Method.BBQ_FAST, Method.LSQ, Method.QUEST)] + ["fp"]
    p.add_argument("--method", choices=methods, default=keep, help="default: bbq")
    p.add_argument("--bits", dest="b", type=int, default=keep, help="default: 2")
    p.add_argument("--iterations", type=int, default=keep, help="default: 2000")
    p.add_argument("--batch-size", type=int, default=keep, help="default: 64")
    p.add_argument("--seed", type=int, default=keep, help="default: 0")
    p.add_argument("--num-samples", type=int, default=keep, help="default: 4096")
    p.add_argument("--optimizer", dest="kind", choices=["adam", "sgd"], default=keep)
    p.add_argument("--lr", type=float, default=keep, help="default: 1e-3")
    p.add_argument("--weight-decay", type=float, default=keep, help="default: 0")
    p.add_argument("--momentum", type=float, default=keep, help="SGD only; default: 0.9")
    p.add_argument("--warmup-fraction", type=float, default=keep, help="default: 0.1")
    p.add_argument("--input-dim", type=int, default=keep, help="default: 128")
    p.add_argument("--hidden-dim", type=int, default=keep, help="default: 256")
    p.add_argument("--num-classes", type=int, default=keep, help="default: 10")
    p.add_argument("--block", dest="block_size", type=int, default=keep, help="default: 128")
    p.add_argument("--vision-mode", action="store_true", default=keep)
    p.add_argument("--zeta", type=float, default=keep, help="vision-mode zeta; default: 2.45")
    p.add_argument("--zeta-star", type=float, default=keep, help="default: 1.694")
    p.add_argument("--no-learn-gamma", dest="learn_gamma", action="store_false", default=keep)
    p.add_argument("--no-init-gamma", dest="init_gamma", action="store_false", default=keep)
    p.add_argument(
        "--no-gamma-grad-scaling", dest="gamma_grad_scaling", action="store_false", default=keep
    )
    p.add_argument("--no-hadamard", dest="use_hadamard", action="store_false", default=keep)
    p.add_argument("--no-rms", dest="use_rms", action="store_false", default=keep)
    p.add_argument("--divergence-factor", type=float, default=keep, help="default: 10")
    p.add_argument("--divergence-patience", type=int, default=keep, help="default: 100")
    p.add_argument("--log-every", type=int, default=keep, help="default: 100")
    p.add_argument("--progress", action="store_true", default=keep)
    p.add_argument("--out", type=Path, required=True, help="checkpoint directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bellbox",
        description="Bell Box Quantization toolkit",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument(
        "--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"]
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("quantize", help="quantize a tensor file", formatter_class=fmt)
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--method", choices=[m.value for m in Method], default=Method.BBQ.value)
    p.add_argument("--bits", type=int, default=4)
    p.add_argument("--block", type=int, default=128)
    p.add_argument(
        "--granularity", choices=[g.value for g in Granularity], default="per-tensor"
    )
    p.add_argument("--encoding", choices=[e.value for e in Encoding], default=None)
    p.add_argument("--zeta-star", type=float, default=ZETA_STAR, help="gamma = zeta* sigma")
    p.add_argument("--step", type=float, default=None, help="LSQ step; default from the data")
    p.add_argument("--alpha-star", type=float, default=None, help="QuEST clip scale")
    p.add_argument("--kernel", action="store_true", help="bbq-fast through the kernel path")
    p.add_argument("--no-hadamard", dest="use_hadamard", action="store_false")
    p.add_argument("--no-rms", dest="use_rms", action="store_false")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_quantize)

    p = sub.add_parser("dequantize", help="dequantize a packed tensor file", formatter_class=fmt)
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_dequantize)

    p = sub.add_parser("entropy", help="code entropy of a packed tensor or a checkpoint")
    p.add_argument("path", type=Path)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_entropy)

    p = sub.add_parser("zeta", help="Monte-Carlo estimate of zeta*", formatter_class=fmt)
    p.add_argument("--samples", type=int, default=10**7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=["closed-form", "gradient-descent"], default="closed-form")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=_zeta)

    p = sub.add_parser("alpha-star", help="MSE-optimal QuEST clip scales", formatter_class=fmt)
    p.add_argument("--bits", type=_csv_ints, default=[1, 2, 3, 4])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=_alpha_star)

    p = sub.add_parser("matmul", help="low-precision matmul of two packed tensors")
    p.add_argument("activations", type=Path)
    p.add_argument("weights", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_matmul)

    p = sub.add_parser("bench", help="MAC counts and wall time", formatter_class=fmt)
    p.add_argument("--sizes", type=_csv_ints, default=[128, 256, 512])
    p.add_argument("--bits", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=_bench)

    p = sub.add_parser("train", help="train the toy model and write a checkpoint")
    _add_train_flags(p)
    p.set_defaults(func=_train)

    p = sub.add_parser("selftest", help="run every property check", formatter_class=fmt)
    p.add_argument("--skip-slow", action="store_true")
    p.add_argument("--only", nargs="+", default=None, help="check names to run")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_selftest)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=args.log_level, format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )
    try:
        return args.func(args)
    except BellboxError as e:
        print(f"error: {e.code}: {' '.join(str(e).split())}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: io: {' '.join(str(e).split())}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())
