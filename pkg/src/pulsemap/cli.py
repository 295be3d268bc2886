"""Command-line entry point: ``pulsemap <subcommand> ...``.

Every failure ends with one JSON line on stderr::

    {"error": "ParameterError", "message": "...", "exit_code": 5}

Exit codes: 0 success, 2 usage, 3 input/output, 4 numeric failure,
5 invalid parameter or malformed data, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from pulsemap import __version__
from pulsemap.bandpass import (REALIZATIONS, design_butterworth_bandpass, frequency_response,
                               write_coefficients_csv)
from pulsemap.errors import (DimensionMismatchError, FrameFormatError, NumericError,
                             ParameterError)
from pulsemap.frames import (FORMAT_ALIASES, Frame, FrameStream, frame_filename, read_frame_sequence,
                             write_frame_sequence, write_image)
from pulsemap.metrics import energy_concentration, measure_latency, synthetic_stream
from pulsemap.phantom import (DEFAULTS, default_phantom, generate_phantom, load_ground_truth,
                              load_spec, save_spec, write_ground_truth)
from pulsemap.pipeline import (PipelineConfig, PulsationExtractor, check_rate, load_config,
                               save_config)
from pulsemap.render import PRESETS, load_lut, render_heatmap, write_heatmap
from pulsemap.temporal import build_kernel

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_INVALID = 5

RESPONSE_FREQS = (0.0, 0.3, 0.9, 1.2, 1.5, 2.0, 3.0, 4.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit_json(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------- config

def _add_config_flags(p):
    p.add_argument("--config", type=Path, help="JSON pipeline config")
    p.add_argument("--preset", choices=sorted(PRESETS), help="normalization preset")
    p.add_argument("--kernel", choices=("dog", "deriv1"), help="temporal kernel")
    p.add_argument("--realization", choices=REALIZATIONS, help="bandpass realization")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")


def resolve_config(args) -> PipelineConfig:
    """Defaults, then the config file, then explicit flags."""
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    changes = {}
    if getattr(args, "preset", None):
        changes["preset"] = args.preset
    if getattr(args, "kernel", None):
        changes["kernel_kind"] = args.kernel
    if getattr(args, "realization", None):
        changes["realization"] = args.realization
    if getattr(args, "emit_heatmap", False):
        changes["emit_heatmap"] = True
    if getattr(args, "lut", None):
        changes["lut_path"] = str(args.lut)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        raise ParameterError("--threads must be at least 1")
    return cfg.replace(**changes) if changes else cfg


def _open_input(path: Path, fmt: Optional[str]):
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    return read_frame_sequence(path, fmt)


# --------------------------------------------------------------------------- extract

def cmd_extract(args) -> int:
    cfg = resolve_config(args)
    stream = _open_input(args.input, args.format)
    check_rate(stream, cfg)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    lut = load_lut(cfg.lut_path) if cfg.emit_heatmap else None
    ex = PulsationExtractor(cfg, stream.header.shape, threads=args.threads)
    suffix = "." + args.out_format
    frames_in = maps_out = settling = 0
    index_rows = ["source_frame_index,settling"]
    for frame in stream:
        frames_in += 1
        pm = ex.push(frame)
        if pm is None:
            continue
        maps_out += 1
        settling += pm.settling
        idx = pm.source_frame_index
        write_image(out / frame_filename(idx, suffix, "map_"), pm.to_uint8())
        if lut is not None:
            write_heatmap(out / frame_filename(idx, ".png", "heat_"), render_heatmap(pm, lut))
        index_rows.append(f"{idx},{int(pm.settling)}")
    (out / "maps.csv").write_text("\n".join(index_rows) + "\n")
    summary = {"frames_in": frames_in, "maps_out": maps_out, "settling_maps": settling,
               **ex.summary()}
    _write_json(out / "summary.json", summary)
    _emit_json(summary)
    return EXIT_OK


# --------------------------------------------------------------------------- phantom

def _phantom_spec(source: str, seed: Optional[int]):
    path = Path(source)
    if source in DEFAULTS:
        spec = default_phantom(source)
    elif path.suffix == ".json" or path.exists():
        if not path.is_file():
            raise FileNotFoundError(f"phantom spec not found: {path}")
        spec = load_spec(path)
    else:
        raise ParameterError(
            f"unknown phantom {source!r}; expected one of {', '.join(sorted(DEFAULTS))} "
            f"or a spec file"
        )
    if seed is not None:
        spec = spec.replace(seed=seed)
    return spec.validate()


def cmd_phantom(args) -> int:
    spec = _phantom_spec(args.spec, args.seed)
    if args.duration is not None:
        spec = spec.replace(duration=args.duration).validate()
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    stream, gt = generate_phantom(spec)

    def clipped():
        for f in stream:
            yield Frame(np.clip(f.data, 0, 255), f.index, f.timestamp)

    clip_stream = FrameStream(stream.header, clipped)
    fmt = FORMAT_ALIASES.get(args.format, args.format)
    dest = out / ("frames.raw" if fmt == "raw-planar" else "frames")
    n = write_frame_sequence(clip_stream, dest, fmt, 8)
    write_ground_truth(gt, out / "gt")
    save_spec(spec, out / "spec.json")
    summary = {"phantom": spec.name, "frames": n, "width": spec.width, "height": spec.height,
               "seed": spec.seed, "frames_path": str(dest), "ground_truth": str(out / "gt")}
    _emit_json(summary)
    return EXIT_OK


# --------------------------------------------------------------------------- bench

def _parse_size(text: str):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ParameterError(f"size must look like WIDTHxHEIGHT, got {text!r}") from None
    if w < 1 or h < 1:
        raise ParameterError(f"size must be positive, got {text!r}")
    return w, h


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    if args.input is not None:
        stream = _open_input(args.input, args.format)
    else:
        w, h = _parse_size(args.synthetic)
        stream = synthetic_stream(w, h, fps=cfg.fs_hz)
    stats = measure_latency(stream, cfg, args.groups, args.frames, backend=args.backend,
                            threads=args.threads)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "durations.csv", "w") as fh:
        stats.write_csv(fh)
    summary = stats.summary()
    summary["frames_per_group"] = args.frames
    _write_json(out / "summary.json", summary)
    save_config(cfg, out / "config.json")
    _emit_json(summary)
    return EXIT_OK


# --------------------------------------------------------------------------- design-filter

def cmd_design_filter(args) -> int:
    cfg = resolve_config(args)
    lo = args.band_lo if args.band_lo is not None else cfg.band_lo_hz
    hi = args.band_hi if args.band_hi is not None else cfg.band_hi_hz
    fs = args.fs if args.fs is not None else cfg.fs_hz
    design = design_butterworth_bandpass(lo, hi, fs)
    freqs = sorted({f for f in RESPONSE_FREQS if f <= fs / 2} | {lo, hi, fs / 2})
    mag, phase = frequency_response(design, freqs)
    out = sys.stdout
    write_coefficients_csv(design, out)
    out.write("\nfreq_hz,magnitude,magnitude_db,phase_rad\n")
    for f, m, ph in zip(freqs, mag.tolist(), phase.tolist()):
        f = float(f)
        db = 20 * math.log10(m) if m > 0 else float("-inf")
        out.write(f"{f!r},{m!r},{db!r},{ph!r}\n")
    if args.taps:
        kernel = build_kernel(cfg.kernel_kind, cfg.fd_hz, fs, cfg.match_linear_gain)
        Path(args.taps).write_text(kernel.to_csv())
    return EXIT_OK


# --------------------------------------------------------------------------- compare

def cmd_compare(args) -> int:
    cfg = resolve_config(args)
    if not args.input.exists():
        raise FileNotFoundError(f"input not found: {args.input}")
    gt = load_ground_truth(args.gt)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for label, kind in (("dog", "dog"), ("deriv1", "gaussian-derivative-1")):
        run_cfg = cfg.replace(kernel_kind=kind)
        stream = read_frame_sequence(args.input, args.format)
        check_rate(stream, run_cfg)
        ex = PulsationExtractor(run_cfg, stream.header.shape, threads=args.threads)
        maps = (pm for pm in map(ex.push, stream) if pm is not None)
        rep = energy_concentration(maps, gt, skip_settling=True)
        save_config(run_cfg, out / f"config_{label}.json")
        (out / f"report_{label}.json").write_text(rep.to_json())
        reports[label] = rep.to_dict()
    _emit_json(reports)
    return EXIT_OK


# --------------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pulsemap", description="Streaming pulsation-map extraction.")
    p.add_argument("--version", action="version", version=f"pulsemap {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    e = sub.add_parser("extract", help="turn a frame sequence into pulsation maps")
    e.add_argument("input", type=Path)
    e.add_argument("output", type=Path)
    _add_config_flags(e)
    e.add_argument("--emit-heatmap", action="store_true", help="also write RGB heat maps")
    e.add_argument("--lut", type=Path, help="heat-map LUT CSV (index,r,g,b)")
    e.add_argument("--format", choices=("pgm", "png", "raw"), help="input format")
    e.add_argument("--out-format", choices=("pgm", "png"), default="pgm")
    e.set_defaults(func=cmd_extract)

    ph = sub.add_parser("phantom", help="generate a synthetic sequence with ground truth")
    ph.add_argument("spec", help=f"one of {', '.join(sorted(DEFAULTS))} or a spec JSON file")
    ph.add_argument("output", type=Path)
    ph.add_argument("--seed", type=int)
    ph.add_argument("--duration", type=float, help="override the duration in seconds")
    ph.add_argument("--format", choices=("pgm", "png", "raw"), default="pgm")
    ph.set_defaults(func=cmd_phantom)

    b = sub.add_parser("bench", help="per-frame latency of the full chain")
    src = b.add_mutually_exclusive_group()
    src.add_argument("--input", type=Path)
    src.add_argument("--synthetic", default="837x657", metavar="WxH",
                     help="synthetic frame size (default 837x657)")
    b.add_argument("--output", type=Path, default=Path("bench_out"))
    b.add_argument("--groups", type=int, default=9)
    b.add_argument("--frames", type=int, default=500)
    b.add_argument("--backend", choices=("cython", "python"))
    b.add_argument("--format", choices=("pgm", "png", "raw"), help="input format")
    _add_config_flags(b)
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("design-filter", help="print bandpass coefficients and response")
    _add_config_flags(d)
    d.add_argument("--band-lo", type=float)
    d.add_argument("--band-hi", type=float)
    d.add_argument("--fs", type=float)
    d.add_argument("--taps", type=Path, help="also write the temporal kernel taps as CSV")
    d.set_defaults(func=cmd_design_filter)

    c = sub.add_parser("compare", help="energy reports for the dog and deriv1 kernels")
    c.add_argument("input", type=Path)
    c.add_argument("gt", type=Path)
    c.add_argument("output", type=Path)
    _add_config_flags(c)
    c.add_argument("--format", choices=("pgm", "png", "raw"), help="input format")
    c.set_defaults(func=cmd_compare)
    return p


def _classify(exc: BaseException) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (ParameterError, FrameFormatError, DimensionMismatchError, ValueError)):
        return EXIT_INVALID
    if isinstance(exc, OSError):
        return EXIT_IO
    return 1


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        # --help and --version exit through argparse
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one JSON line
        code = _classify(exc)
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        if isinstance(exc, NumericError):
            err["frame_index"] = exc.frame_index
            err["pixel"] = list(exc.pixel) if exc.pixel else None
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return code


if __name__ == "__main__":
    sys.exit(main())
