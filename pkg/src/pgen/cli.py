"""``pgen`` command-line front end.

Subcommands: synth, encode, decode, extract, eval, sweep.  Every subcommand
accepts ``--config FILE`` holding ``key=value`` lines named after its long
options; flags given on the command line override the file.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import base_layer as bl
from . import corpus
from . import enhancement as el
from .codec import CodecConfig, cumulative_rates, decode_sequence, encode_sequence
from .container import extract_substream, layer_bits, read_stream, select_layers
from .evaluation import (RDCurve, bd_rate, bitrate_kbps, emit_report, mse, psnr, rd_cost,
                         rd_file, ssim)
from .media import (SyntheticSpec, generate_synthetic_sequence, read_raw_video, read_track,
                    write_raw_video, write_track)

PROG = "pgen"
DEFAULT_LAYER_SETS = "base;8;8,16;8,16,32"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument helpers


def parse_layers(text: str) -> tuple[int, ...]:
    """``"base"``, ``"all"`` or a comma list of feature sides such as ``"8,16"``."""
    levels = set()
    for token in (t.strip() for t in text.split(",")):
        if token == "base":
            continue
        if token == "all":
            levels.update(el.LEVEL_SIDES)
            continue
        try:
            side = int(token)
        except ValueError:
            raise argparse.ArgumentTypeError(f"unknown layer {token!r}") from None
        if side not in el.SIDE_LEVELS:
            raise argparse.ArgumentTypeError(f"layer {side} not in {sorted(el.SIDE_LEVELS)}")
        levels.add(el.SIDE_LEVELS[side])
    return tuple(sorted(levels))


def parse_layer_sets(text: str) -> list[tuple[int, ...]]:
    sets = [parse_layers(part) for part in text.split(";") if part.strip()]
    if not sets:
        raise argparse.ArgumentTypeError("no layer sets given")
    return sets


def parse_int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def parse_qf(text: str) -> tuple[float, float, float]:
    try:
        values = [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --qf {text!r}") from None
    if len(values) == 1:
        values *= 3
    if len(values) != 3 or any(not v > 0 for v in values):
        raise argparse.ArgumentTypeError("--qf takes one or three positive numbers")
    return tuple(values)


def layer_tag(levels) -> str:
    return "+".join(["base"] + [str(el.LEVEL_SIDES[l]) for l in sorted(levels)])


def config_tag(config: CodecConfig) -> str:
    qf = ",".join(f"{q:g}" for q in config.q_f)
    return (f"qp={config.qp};qstep={config.qstep:g};tau={config.tau:g};qf={qf};"
            f"block={config.block};search={config.search}")


def load_config_file(path: str) -> dict[str, str]:
    values = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _codec_options(p: argparse.ArgumentParser):
    p.add_argument("--qp", type=int, default=bl.DEFAULT_QP, help="key-frame QP (default 22)")
    p.add_argument("--qstep", type=float, default=bl.DEFAULT_QSTEP, help="keypoint lattice step")
    p.add_argument("--tau", type=float, default=bl.DEFAULT_TAU, help="motion kernel bandwidth in pixels")
    p.add_argument("--qf", type=parse_qf, default=(1.0, 1.0, 1.0), help="feature quantiser scale, one or three values")
    p.add_argument("--block", type=int, default=el.DEFAULT_BLOCK, help="refinement block size")
    p.add_argument("--search", type=int, default=el.DEFAULT_SEARCH, help="refinement search radius")


def _config_from_args(args, levels) -> CodecConfig:
    return CodecConfig(qp=args.qp, qstep=args.qstep, tau=args.tau, levels=tuple(levels),
                       q_f=tuple(args.qf), block=args.block, search=args.search)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description="Layered generative face video codec toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value file with defaults for this command")
        return p

    p = command("synth", "generate a synthetic sequence and its keypoint track")
    p.add_argument("--size", type=int, default=corpus.CORPUS_SIZE, help="square frame size")
    p.add_argument("--width", type=int, help="overrides --size")
    p.add_argument("--height", type=int, help="overrides --size")
    p.add_argument("--frames", type=int, default=250)
    p.add_argument("--fps", type=int, default=corpus.CORPUS_FPS)
    p.add_argument("--keypoints", type=int, default=corpus.CORPUS_KEYPOINTS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--amplitude", type=float, default=corpus.CORPUS_AMPLITUDE,
                   help="keypoint motion amplitude in pixels")
    p.add_argument("--bandwidth", type=float, default=corpus.CORPUS_BANDWIDTH,
                   help="motion kernel bandwidth in pixels (defaults match the evaluation corpus)")
    p.add_argument("-o", "--output", required=True, help="PGRV output path")
    p.add_argument("--track", help="track output path (default: OUTPUT.track.json)")

    p = command("encode", "encode a PGRV sequence with its keypoint track")
    p.add_argument("input")
    p.add_argument("--track", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--layers", type=parse_layers, default="all", help="base, all, or sides such as 8,16")
    p.add_argument("--budget", type=float, help="keep the largest layer prefix that fits this many kbps")
    _codec_options(p)

    p = command("decode", "decode a .pgen stream to PGRV")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--layers", type=parse_layers, help="subset of the stream's layers (default: all present)")

    p = command("extract", "drop enhancement layers from a stream")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--layers", type=parse_layers)
    group.add_argument("--budget", type=float, help="kbps budget")

    p = command("eval", "compare a decoded sequence with its reference")
    p.add_argument("reference")
    p.add_argument("decoded")
    p.add_argument("--stream", help="stream whose size gives the rate")

    p = command("sweep", "rate-distortion sweep over QPs and layer sets")
    p.add_argument("input")
    p.add_argument("--track", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--name", help="sequence label (default: input file stem)")
    p.add_argument("--qps", type=parse_int_list, default=",".join(map(str, bl.QP_SET)))
    p.add_argument("--layer-sets", type=parse_layer_sets, default=DEFAULT_LAYER_SETS,
                   help="semicolon-separated layer sets")
    p.add_argument("--anchor", type=parse_layers, default="base", help="layer set used as BD-rate anchor")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="weight of kbps in the RD cost (MSE + lambda*kbps)")
    p.add_argument("--jobs", type=int, default=int(os.environ.get("PGEN_JOBS", "1")))
    _codec_options(p)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        dests = {o.lstrip("-").replace("-", "_"): a.dest
                 for a in sub._actions for o in a.option_strings if o.startswith("--")}
        dests.pop("config", None)
        dests.pop("help", None)
        try:
            values = load_config_file(args.config)
        except (OSError, UsageError) as exc:
            parser.error(str(exc))
        unknown = sorted(set(values) - set(dests))
        if unknown:
            parser.error(f"unknown keys in {args.config}: {', '.join(unknown)}")
        sub.set_defaults(**{dests[k]: v for k, v in values.items()})
        args = parser.parse_args(argv)
    if args.command == "synth" and args.frames < 2:
        parser.error("--frames must be at least 2 (a key frame and one inter frame)")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    return args


# ---------------------------------------------------------------------------
# commands


def _say(text: str = ""):
    print(text, file=sys.stdout)


def cmd_synth(args) -> int:
    spec = SyntheticSpec(width=args.width or args.size, height=args.height or args.size,
                         frame_count=args.frames, fps=args.fps, keypoint_count=args.keypoints,
                         seed=args.seed, motion_amplitude=args.amplitude,
                         kernel_bandwidth=args.bandwidth)
    seq, track = generate_synthetic_sequence(spec)
    track_path = args.track or args.output + ".track.json"
    Path(args.output).write_bytes(write_raw_video(seq))
    Path(track_path).write_bytes(write_track(track))
    _say(f"wrote {len(seq)} frames {seq.width}x{seq.height} to {args.output}, track to {track_path}")
    return 0


def _print_layer_summary(data: bytes):
    header = read_stream(data).header
    bits = layer_bits(data)
    rates = cumulative_rates(data)
    _say(f"key frame      {bits['key']:>10d} bits")
    _say(f"parameters     {bits['params']:>10d} bits")
    _say(f"base total     {bits['base']:>10d} bits  {rates['base']:.3f} kbps")
    for level in header.levels:
        _say(f"level {el.LEVEL_SIDES[level]:<2d}       {bits[level]:>10d} bits  "
             f"{rates[level]:.3f} kbps cumulative")


def cmd_encode(args) -> int:
    seq = read_raw_video(Path(args.input).read_bytes())
    track = read_track(Path(args.track).read_bytes())
    data = encode_sequence(seq, track, _config_from_args(args, args.layers))
    if args.budget is not None:
        kept, fits = select_layers(cumulative_rates(data), args.budget)
        if not fits:
            print(f"{PROG}: error: base layer alone exceeds {args.budget} kbps", file=sys.stderr)
            return 1
        data = extract_substream(data, kept)
    Path(args.output).write_bytes(data)
    _print_layer_summary(data)
    return 0


def cmd_decode(args) -> int:
    seq = decode_sequence(Path(args.input).read_bytes(), args.layers)
    Path(args.output).write_bytes(write_raw_video(seq))
    _say(f"decoded {len(seq)} frames to {args.output}")
    return 0


def cmd_extract(args) -> int:
    data = Path(args.input).read_bytes()
    if args.budget is not None:
        kept, fits = select_layers(cumulative_rates(data), args.budget)
        if not fits:
            print(f"{PROG}: error: base layer alone exceeds {args.budget} kbps", file=sys.stderr)
            return 1
    else:
        kept = args.layers
    out = extract_substream(data, kept)
    Path(args.output).write_bytes(out)
    _say(f"kept {layer_tag(kept)}: {len(out)} of {len(data)} bytes")
    return 0


def cmd_eval(args) -> int:
    ref = read_raw_video(Path(args.reference).read_bytes())
    dec = read_raw_video(Path(args.decoded).read_bytes())
    _say(f"psnr_db={psnr(ref, dec):.4f}")
    _say(f"ssim={ssim(ref, dec):.6f}")
    if args.stream:
        size = len(Path(args.stream).read_bytes())
        _say(f"rate_kbps={bitrate_kbps(8 * size, len(ref), ref.fps):.4f}")
    return 0


def sweep_point(seq, track, config: CodecConfig, layer_sets, lam: float, name: str):
    """Encode once at ``config`` and evaluate every layer set by extraction."""
    data = encode_sequence(seq, track, config)
    rows = []
    for levels in layer_sets:
        sub = extract_substream(data, levels)
        dec = decode_sequence(sub)
        rate = bitrate_kbps(8 * len(sub), len(seq), seq.fps)
        distortion = float(np.mean([mse(a, b) for a, b in zip(seq.frames, dec.frames)]))
        rows.append({"sequence": name, "config": config_tag(config), "layer_set": layer_tag(levels),
                     "rate_kbps": rate, "psnr_db": psnr(seq, dec), "ssim": ssim(seq, dec),
                     "rd_cost": rd_cost(distortion, rate, lam)})
    return data, rows


def run_sweep(seq, track, qps, layer_sets, base_args: dict, lam: float, name: str, jobs: int = 1):
    """Returns ``[(qp, stream bytes)]`` and the report rows, both in QP order."""
    union = sorted(set().union(*map(set, layer_sets)))
    configs = [CodecConfig(qp=qp, levels=tuple(union), **base_args) for qp in qps]
    for c in configs:
        c.validate()
    jobs_args = [(seq, track, c, layer_sets, lam, name) for c in configs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(sweep_point, *zip(*jobs_args)))
    else:
        results = [sweep_point(*a) for a in jobs_args]
    streams = [(c.qp, data) for c, (data, _) in zip(configs, results)]
    rows = [row for _, point_rows in results for row in point_rows]
    return streams, rows


def bd_table(rows, layer_sets, anchor) -> list[tuple[str, str, str, float]]:
    """BD-rate of every non-anchor layer set against the anchor, per metric."""
    out = []
    for metric, key in (("psnr", "psnr_db"), ("ssim", "ssim")):
        def curve(levels):
            tag = layer_tag(levels)
            pts = [(r["rate_kbps"], r[key]) for r in rows if r["layer_set"] == tag]
            return RDCurve.from_arrays(*zip(*pts), metric=metric)
        for levels in layer_sets:
            if tuple(levels) == tuple(anchor):
                continue
            try:
                value = bd_rate(curve(levels), curve(anchor))
            except ValueError as exc:
                print(f"{PROG}: warning: no BD-rate for {layer_tag(levels)} ({metric}): {exc}", file=sys.stderr)
                value = float("nan")
            out.append((layer_tag(levels), layer_tag(anchor), metric, value))
    return out


def cmd_sweep(args) -> int:
    seq = read_raw_video(Path(args.input).read_bytes())
    track = read_track(Path(args.track).read_bytes())
    name = args.name or Path(args.input).stem
    layer_sets = [tuple(s) for s in args.layer_sets]
    if tuple(args.anchor) not in layer_sets:
        layer_sets.append(tuple(args.anchor))
    base_args = dict(qstep=args.qstep, tau=args.tau, q_f=tuple(args.qf), block=args.block, search=args.search)
    streams, rows = run_sweep(seq, track, args.qps, layer_sets, base_args, args.lam, name, args.jobs)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for qp, data in streams:
        (out / f"{name}_qp{qp}.pgen").write_bytes(data)
    (out / "report.csv").write_bytes(emit_report(rows))
    for levels in layer_sets:
        tag = layer_tag(levels)
        mine = [r for r in rows if r["layer_set"] == tag]
        for metric, key in (("psnr", "psnr_db"), ("ssim", "ssim")):
            (out / f"rd_{tag}_{metric}.dat").write_bytes(rd_file([(r["rate_kbps"], r[key]) for r in mine]))
    lines = ["test,anchor,metric,bd_rate_percent"]
    if len(args.qps) >= 4:
        lines += [f"{t},{a},{m},{v:.4f}" for t, a, m, v in bd_table(rows, layer_sets, args.anchor)]
    else:
        print(f"{PROG}: warning: BD-rate needs at least 4 QPs, skipping", file=sys.stderr)
    (out / "bd_rate.csv").write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    for r in rows:
        _say(f"{r['layer_set']:<14s} {r['config'].split(';')[0]:<7s} {r['rate_kbps']:9.3f} kbps "
             f"{r['psnr_db']:7.3f} dB  ssim {r['ssim']:.4f}")
    return 0


COMMANDS = {"synth": cmd_synth, "encode": cmd_encode, "decode": cmd_decode,
            "extract": cmd_extract, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
