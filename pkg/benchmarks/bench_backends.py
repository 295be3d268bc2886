"""Compare the compiled kernels with the numpy fallback, stage by stage.

Usage::

    python benchmarks/bench_backends.py [--size 837x657] [--frames 60] [--dtype float32]

Each backend runs the full extraction on the same synthetic noise stream.
Per-stage medians are printed as a table; ``--json`` writes them to a file.
"""

import argparse
import json
import sys

import numpy as np

from pulsemap import _backend
from pulsemap.metrics import synthetic_stream
from pulsemap.pipeline import PipelineConfig, PulsationExtractor

STAGES = ("temporal", "bandpass", "normalize", "total")


def run(backend: str, width: int, height: int, frames: int, dtype, realization: str,
        threads: int) -> dict:
    cfg = PipelineConfig(realization=realization)
    ex = PulsationExtractor(cfg, (height, width), dtype, backend, threads)
    src = iter(synthetic_stream(width, height, seed=1))
    for _ in range(ex.warmup_frames):
        ex.push(next(src))
    timings = [ex.push(next(src)).timings for _ in range(frames)]
    return {k: float(np.median([t[k] for t in timings])) for k in STAGES}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", default="837x657", help="WIDTHxHEIGHT")
    ap.add_argument("--frames", type=int, default=60, help="timed frames per backend")
    ap.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    ap.add_argument("--realization", choices=("sos", "direct"), default="sos")
    ap.add_argument("--threads", type=int, default=_backend.default_threads())
    ap.add_argument("--json", help="write the results to this file")
    args = ap.parse_args(argv)
    w, h = (int(v) for v in args.size.lower().split("x"))

    results = {}
    for name in sorted(_backend.BACKENDS):
        results[name] = run(name, w, h, args.frames, np.dtype(args.dtype),
                            args.realization, args.threads)

    print(f"{w}x{h} {args.dtype} {args.realization}, {args.threads} thread(s), "
          f"median of {args.frames} frames, milliseconds")
    print(f"{'backend':<10}" + "".join(f"{s:>11}" for s in STAGES) + f"{'fps':>9}")
    for name, r in results.items():
        print(f"{name:<10}" + "".join(f"{r[s] * 1e3:11.2f}" for s in STAGES)
              + f"{1 / r['total']:9.1f}")
    if "cython" in results and "python" in results:
        print(f"speed-up  " + "".join(
            f"{results['python'][s] / results['cython'][s]:10.1f}x" for s in STAGES))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"width": w, "height": h, "dtype": args.dtype, "threads": args.threads,
                       "realization": args.realization, "frames": args.frames,
                       "median_s": results}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
