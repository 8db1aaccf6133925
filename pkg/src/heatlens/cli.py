"""``heatlens`` command-line driver.

Data goes to stdout or files; diagnostics go to stderr.  Exit status is 0 when
every internal check held, 1 when a check failed, 2 on bad input.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from . import bench, gradcheck, imageio, serialize
from . import tensor as T
from .config import ConfigError, load_config, split_sections
from .data import synth_pair
from .heat import ContractError, hco_apply
from .masking import sample_mask, split_array
from .spectral import make_plan
from .tensor import Tensor

log = logging.getLogger("heatlens")


class CliError(Exception):
    """Bad user input; reported on stderr with exit status 2."""


def _int_list(text: str) -> List[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _config_sections(args):
    values = load_config(args.config) if args.config else {}
    model, schedule, train = split_sections(values)
    if args.dtype:
        model["dtype"] = args.dtype
    return model, schedule, train


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    for i in range(args.count):
        opt, sar = synth_pair(args.seed + i, args.size, dtype=args.dtype or "f64")
        for name, img in ((f"pair_{i}_opt.ppm", opt), (f"pair_{i}_sar.pgm", sar)):
            path = os.path.join(args.out_dir, name)
            imageio.write_image(path, img.data)
            print(path)
    return 0


def cmd_mask(args) -> int:
    img = imageio.read_image(args.input)
    c, h, w = img.shape
    plan = make_plan(h, w)
    spec = sample_mask(h, w, args.seed, rate=args.rate)
    low, high = split_array(plan, img, spec)
    recombination = float(np.max(np.abs(low + high - img)))
    ext = os.path.splitext(args.input)[1] or (".pgm" if c == 1 else ".ppm")
    stem = _stem(args.input)
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = {"low": low, "high": high}
    lines = [spec.to_text()]
    for level, comp in outputs.items():
        path = os.path.join(args.out_dir, f"{stem}_{level}{ext}")
        imageio.write_image(path, comp)
        clamped = int(np.count_nonzero((comp < 0) | (comp > 1)))
        lines.append(f"{level}_file = {os.path.basename(path)}\n")
        lines.append(f"{level}_clamped_values = {clamped}\n")
        print(path)
        if args.dump_tensors:
            tpath = os.path.join(args.out_dir, f"{stem}_{level}.rsvh")
            serialize.dump(tpath, comp)
            lines.append(f"{level}_tensor = {os.path.basename(tpath)}\n")
            print(tpath)
    ok = recombination <= 1e-10
    lines.append(f"recombination_max_abs_error = {recombination!r}\n")
    lines.append(f"recombination_ok = {'true' if ok else 'false'}\n")
    side = os.path.join(args.out_dir, f"{stem}_mask.txt")
    with open(side, "w", encoding="utf-8") as fh:
        fh.write("".join(lines))
    print(side)
    if not ok:
        log.error("low + high differs from the input by %.3g", recombination)
    return 0 if ok else 1


def cmd_hco(args) -> int:
    if args.k < 0 or args.t < 0:
        raise CliError("k and t must be non-negative")
    img = imageio.read_image(args.input)
    _, h, w = img.shape
    out = hco_apply(make_plan(h, w), Tensor(img, dtype="f64"), args.k, args.t).data
    drift = float(np.max(np.abs(out.mean(axis=(1, 2)) - img.mean(axis=(1, 2)))))
    log.info("channel mean drift %.3g", drift)
    imageio.write_image(args.output, out)
    print(args.output)
    return 0 if drift < 1e-9 else 1


def cmd_gradcheck(args) -> int:
    if args.inject_fault:
        with T.inject_gradient_fault(args.inject_fault):
            results = gradcheck.run(args.scope, args.seed)
    else:
        results = gradcheck.run(args.scope, args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        log.error("gradient check failed for: %s", ", ".join(failed))
        return 1
    return 0


def cmd_pretrain(args) -> int:
    from .model import ModelConfig
    from .train import ScheduleConfig, TrainConfig, load_checkpoint, pretrain

    model_kw, sched_kw, train_kw = _config_sections(args)
    if args.toggles is not None:
        chosen = {t.strip() for t in args.toggles.split(",") if t.strip()}
        unknown = chosen - {"sdr", "fdr", "cl"}
        if unknown:
            raise CliError(f"unknown loss toggles {sorted(unknown)}")
        model_kw.update(sdr="sdr" in chosen, fdr="fdr" in chosen, cl="cl" in chosen)
    if args.resume:
        cfg, state, seed, steps, tcfg = load_checkpoint(args.resume)
        if args.steps != steps:
            log.warning("resuming with the checkpoint's step budget %d", steps)
    else:
        cfg = ModelConfig(**model_kw)
        cfg.validate()
        state, seed, steps = None, args.seed, args.steps
        tcfg = TrainConfig(**train_kw)
    schedule = ScheduleConfig(**sched_kw) if not args.resume else state.schedule
    final = pretrain(cfg, schedule, steps=steps, seed=seed, tcfg=tcfg, out_dir=args.out_dir,
                     resume=state, stop_at=args.stop_at)
    hist = final.loss_history
    if hist:
        print(f"steps_run = {final.step}")
        print(f"initial_l_total = {hist[0][2]!r}")
        print(f"final_l_total = {hist[-1][2]!r}")
    print(os.path.join(args.out_dir, "metrics.csv"))
    return 0


def cmd_bench(args) -> int:
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        if args.mode == "flops":
            sides = args.sides or [32, 64, 128, 256, 512, 1024]
            rows = bench.flops_table(sides, args.channels, args.depth)
            h_exp = bench.fit_exponent([r["tokens"] for r in rows], [r["hco_flops"] for r in rows])
            a_exp = bench.fit_exponent([r["tokens"] for r in rows], [r["attention_flops"] for r in rows])
            cross = bench.crossover_side(args.channels, args.depth)
            out.write(f"# flop convention: {bench.FLOP_CONVENTION}\n")
            out.write(f"# channels={args.channels} depth={args.depth}\n")
            out.write(f"# hco_exponent={h_exp:.4f} attention_exponent={a_exp:.4f} crossover_side={cross}\n")
            bench.rows_to_csv(rows, out)
        elif args.mode == "throughput":
            from .model import ModelConfig

            model_kw, _, _ = _config_sections(args)
            model_kw.pop("image_size", None)
            sides = args.sides or [64, 128, 256]
            rows = bench.throughput_scan(sides, ModelConfig(**model_kw), batch=args.batch,
                                         runs=args.runs, seed=args.seed)
            ratios = bench.throughput_ratios(rows)
            out.write(f"# flop convention: {bench.FLOP_CONVENTION}\n")
            out.write("# single-threaded forward pass of the encoder trunk\n")
            bench.rows_to_csv([r.__dict__ | {"hco_over_attention": ratios[r.side]} for r in rows], out,
                              missing="unmeasurable")
        else:
            size = args.sides[0] if args.sides else 16
            gen = np.random.default_rng(args.seed)
            u0 = gen.uniform(-1, 1, (size, size))
            rows = []
            for dt in (args.dt, args.dt / 2):
                rows.append({"size": size, "k": args.k, "t": args.t, "dt": dt,
                             "rel_l2_error": bench.oracle_discrepancy(u0, args.k, args.t, dt)})
            rows[1]["halving_ratio"] = rows[0]["rel_l2_error"] / rows[1]["rel_l2_error"]
            rows[0]["halving_ratio"] = None
            bench.rows_to_csv(rows, out)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_dump(args) -> int:
    src = args.input
    if args.tensor:
        _, tensors = serialize.read_checkpoint(src)
        if args.tensor not in tensors:
            raise CliError(f"{src}: no tensor named {args.tensor!r}")
        arr = tensors[args.tensor]
    else:
        arr = imageio.read_image(src)
    arr = arr.astype(T.resolve_dtype(args.dtype or "f64"))
    serialize.dump(args.output, arr)
    print(args.output)
    return 0


def cmd_load(args) -> int:
    if args.list:
        header, tensors = serialize.read_checkpoint(args.input)
        for k, v in header.items():
            print(f"{k} = {v}")
        for name, arr in tensors.items():
            print(f"tensor {name} shape={list(arr.shape)} dtype={arr.dtype.name}")
        return 0
    arr = serialize.load(args.input)
    print(f"shape = {list(arr.shape)}")
    print(f"dtype = {arr.dtype.name}")
    if arr.size:
        print(f"min = {float(arr.min())!r}")
        print(f"max = {float(arr.max())!r}")
        print(f"mean = {float(arr.mean())!r}")
    if args.output:
        imageio.write_image(args.output, arr)
        print(args.output)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def global_flags(defaults: bool) -> argparse.ArgumentParser:
        # Subcommands repeat the global flags but must not reset values given before them.
        d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--seed", type=int, default=d(0), help="seed for every random draw (default 0)")
        g.add_argument("--dtype", choices=("f32", "f64"), default=d(None), help="floating-point precision")
        g.add_argument("--config", default=d(None), help="key = value configuration file")
        g.add_argument("-v", "--verbose", action="store_true", default=d(False), help="log progress to stderr")
        return g

    common = global_flags(False)
    p = argparse.ArgumentParser(prog="heatlens", parents=[global_flags(True)],
                                description="Heat-conduction encoders for optical/SAR imagery at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write synthetic optical/SAR pairs")
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--out-dir", "--out", dest="out_dir", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("mask", parents=[common], help="split an image into low/high frequency parts")
    s.add_argument("input")
    s.add_argument("--rate", type=float, default=None, help="fixed high-frequency rate instead of a random draw")
    s.add_argument("--out-dir", "--out", dest="out_dir", required=True)
    s.add_argument("--dump-tensors", action="store_true", help="also write unclamped components as RSVH dumps")
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("hco", parents=[common], help="diffuse an image with a scalar diffusivity")
    s.add_argument("input")
    s.add_argument("--k", type=float, required=True)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_hco)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    s.add_argument("--scope", choices=gradcheck.SCOPES, default="ops")
    s.add_argument("--inject-fault", metavar="OP", default=None, help="corrupt the backward pass of OP (self-test)")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("pretrain", parents=[common], help="self-supervised pretraining on synthetic pairs")
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--out-dir", "--out", dest="out_dir", required=True)
    s.add_argument("--toggles", default=None, help="comma-separated subset of sdr,fdr,cl")
    s.add_argument("--resume", default=None, help="checkpoint to continue from")
    s.add_argument("--stop-at", type=int, default=None, help="halt after this many total steps")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("bench", parents=[common], help="flop model, throughput scan, heat oracle")
    s.add_argument("--mode", choices=("flops", "throughput", "oracle"), default="flops")
    s.add_argument("--sides", type=_int_list, default=None)
    s.add_argument("--channels", type=int, default=8)
    s.add_argument("--depth", type=int, default=1)
    s.add_argument("--batch", type=int, default=8)
    s.add_argument("--runs", type=int, default=5)
    s.add_argument("--k", type=float, default=0.5)
    s.add_argument("--t", type=float, default=0.1)
    s.add_argument("--dt", type=float, default=1e-4)
    s.add_argument("--output", default=None, help="CSV path (default stdout)")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("dump", parents=[common], help="write an image or checkpoint tensor as an RSVH dump")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--tensor", default=None, help="tensor name inside a checkpoint")
    s.set_defaults(func=cmd_dump)

    s = sub.add_parser("load", parents=[common], help="describe an RSVH dump or checkpoint")
    s.add_argument("input")
    s.add_argument("--output", default=None, help="also write the tensor as a PGM/PPM image")
    s.add_argument("--list", action="store_true", help="input is a checkpoint; list its header and tensors")
    s.set_defaults(func=cmd_load)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CliError, ConfigError, ContractError, imageio.ImageFormatError, serialize.FormatError,
            ValueError) as exc:
        print(f"heatlens {args.command}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"heatlens {args.command}: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
