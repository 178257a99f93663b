"""``gatecnn`` command line.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 invariant failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import dataflow, model, quant, synth, train
from .fixed import FixedPointSpec

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _need_file(path):
    if not os.path.isfile(path):
        raise UsageError(f"no such file: {path}")


def _need_out(path):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise UsageError(f"output directory does not exist: {parent}")


def _write(path, data: bytes | str):
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(path, mode) as fh:
        fh.write(data)


def cmd_gen_data(args):
    if args.spec not in ("defaults", "three-class"):
        _need_file(args.spec)
    _need_out(args.out)
    spec = synth.load_spec(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    frames = synth.generate(spec)
    _write(args.out, synth.frames_to_bytes(frames))
    print(f"wrote {len(frames)} frames of shape {frames[0].data.shape} "
          f"({len(spec.classes)} classes, seed {spec.seed}) to {args.out}")
    return EXIT_OK


def _config_for(frames, num_classes):
    C, H, W = frames[0].data.shape
    n = num_classes if num_classes else max(2, max(f.label for f in frames) + 1)
    return model.GateCNNConfig(in_channels=C, doppler_bins=H, time_steps=W, num_classes=n)


def cmd_train(args):
    _need_file(args.data)
    _need_out(args.out)
    frames = synth.load_frames(args.data)
    cfg = _config_for(frames, args.classes)
    tc = train.TrainConfig(learning_rate=args.lr, epochs=args.epochs,
                           batch_size=args.batch_size, seed=args.seed)
    w, history = train.train(cfg, frames, tc, log=print)
    model.save_weights(args.out, cfg, w)
    print(f"final train accuracy {history[-1].accuracy:.4f}; weights written to {args.out}")
    return EXIT_OK


def cmd_infer(args):
    _need_file(args.weights)
    _need_file(args.data)
    cfg, w = model.load_weights(args.weights)
    frames = synth.load_frames(args.data)
    qm = quant.quantize_model(cfg, w, FixedPointSpec(frac_bits=args.frac_bits)) if args.fixed else None
    correct = agree = 0
    for i, fr in enumerate(frames):
        pred_float = model.predict(cfg, w, fr)
        pred = quant.predict_fixed(qm, fr) if qm else pred_float
        agree += int(pred == pred_float)
        correct += int(pred == fr.label)
        print(f"{i} label={fr.label} pred={pred}")
    n = len(frames)
    print(f"accuracy {correct / n:.4f} ({correct}/{n})")
    if qm:
        print(f"fixed/float argmax agreement {agree / n:.4f} ({agree}/{n})")
    return EXIT_OK


def cmd_quantize(args):
    _need_file(args.weights)
    if args.data:
        _need_file(args.data)
    _need_out(args.out)
    cfg, w = model.load_weights(args.weights)
    spec = FixedPointSpec(frac_bits=args.frac_bits)
    qm = quant.quantize_model(cfg, w, spec)
    if args.data:
        calib = synth.load_frames(args.data)
    else:
        calib = synth.generate(synth.default_spec(cfg.doppler_bins, cfg.time_steps, samples_per_class=10))
        if cfg.in_channels != 1:
            calib = [synth.MicroDopplerFrame(np.repeat(f.data, cfg.in_channels, axis=0), f.label)
                     for f in calib]
    audit = quant.audit_ranges(cfg, w, calib)
    quant.save_quantized(args.out, qm)
    audit_path = args.out + ".audit.jsonl"
    _write(audit_path, "\n".join(audit.lines()) + "\n")
    print(f"quantized {qm.param_count()} parameters to {spec.describe()}, "
          f"{qm.saturations} saturated; wrote {args.out}")
    for line in audit.lines():
        print(line)
    print(f"range audit over {audit.frames} frames: max integer bits {audit.max_int_bits}, "
          f"{spec.describe()} {'fits' if audit.fits(spec) else 'DOES NOT FIT'}; wrote {audit_path}")
    return EXIT_OK


def cmd_bench(args):
    if args.weights:
        _need_file(args.weights)
        cfg, _ = model.load_weights(args.weights)
    else:
        cfg = model.GateCNNConfig()
    report = dataflow.estimate(cfg, args.parallelism, args.clock_hz, args.fill_cycles)
    print(report.to_text())
    print(dataflow.compare_to_reference(report))
    print(f"params {model.param_count(cfg)} flops {model.flop_count(cfg)}")
    return EXIT_OK


def cmd_export_rom(args):
    _need_file(args.quantized)
    _need_out(args.out)
    qm = quant.load_quantized(args.quantized)
    text = quant.export_rom(qm)
    if not quant.parse_rom(text).same_as(qm):
        print("ROM table does not round-trip", file=sys.stderr)
        return EXIT_INVARIANT
    _write(args.out, text)
    print(f"wrote {qm.param_count()} constants ({qm.rom_bytes()} bytes) to {args.out}")
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run_all

    return EXIT_OK if run_all() else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gatecnn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", help="write a synthetic MDFR dataset")
    s.add_argument("--spec", default="defaults",
                   help="'defaults' (6 classes), 'three-class', or a JSON spec file")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None, help="override the spec's seed (presets use 0)")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train float weights with SGD")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--batch-size", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--classes", type=int, default=None, help="default: max label + 1")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="classify frames")
    s.add_argument("--weights", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--fixed", action="store_true", help="run the fixed-point path")
    s.add_argument("--frac-bits", type=int, default=16)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("quantize", help="write a fixed-point model and range audit")
    s.add_argument("--weights", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--frac-bits", type=int, default=16)
    s.add_argument("--data", default=None, help="calibration frames (default: synthetic, seed 0)")
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("bench", help="print the dataflow latency model")
    s.add_argument("--weights", default=None, help="take the config from a weight file")
    s.add_argument("--parallelism", type=int, default=1, help="MAC units per stage")
    s.add_argument("--clock-hz", type=float, default=dataflow.DEFAULT_CLOCK_HZ)
    s.add_argument("--fill-cycles", type=int, default=dataflow.DEFAULT_FILL_CYCLES)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("export-rom", help="write the constant weight tables")
    s.add_argument("--quantized", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_rom)

    s = sub.add_parser("selftest", help="run built-in oracle and invariant checks")
    s.set_defaults(func=cmd_selftest)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gatecnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (model.FormatError, OSError) as exc:
        print(f"gatecnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"gatecnn: invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
