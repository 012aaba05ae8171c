"""Command line front end: ``fcgs encode|decode|inspect|estimate|gen-test-weights``.

Exit codes: 0 ok, 2 format error, 3 weights mismatch, 4 corruption, 1 anything else.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import pipeline
from .container import DEFAULT_CHUNK
from .errors import FcgsError
from .model_io import parse_ply, write_ply
from .neural import gen_test_weights, load_weights


def _weights(path):
    return load_weights(Path(path).read_bytes())


def _cmd_encode(args) -> int:
    cloud = parse_ply(Path(args.input).read_bytes())
    weights = _weights(args.weights)
    t0 = time.perf_counter()
    data = pipeline.encode_scene(cloud, weights, seed=args.seed, chunk_size=args.chunk_size, workers=args.workers)
    Path(args.output).write_bytes(data)
    raw = 59 * 4 * cloud.count
    print(
        f"encoded {cloud.count} Gaussians into {len(data)} bytes "
        f"({len(data) / raw:.4f} of raw float32) in {time.perf_counter() - t0:.2f} s",
        file=sys.stderr,
    )
    return 0


def _cmd_decode(args) -> int:
    weights = _weights(args.weights)
    cloud = pipeline.decode_scene(Path(args.input).read_bytes(), weights, workers=args.workers)
    Path(args.output).write_bytes(write_ply(cloud))
    return 0


def _print_report(rep, as_json):
    print(rep.to_json() if as_json else rep.to_text())


def _cmd_inspect(args) -> int:
    _print_report(pipeline.inspect(Path(args.input).read_bytes()), args.json)
    return 0


def _cmd_estimate(args) -> int:
    cloud = parse_ply(Path(args.input).read_bytes())
    rep = pipeline.estimate(cloud, _weights(args.weights), seed=args.seed, chunk_size=args.chunk_size, workers=args.workers)
    _print_report(rep, args.json)
    return 0


def _cmd_gen_weights(args) -> int:
    Path(args.output).write_bytes(gen_test_weights(args.seed).to_bytes())
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fcgs", description="Feed-forward codec for 3D Gaussian Splatting scenes.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True, chunk=True):
        p.add_argument("--weights", required=True, help="weights container (.fcgsw)")
        if seed:
            p.add_argument("--seed", type=int, default=0, help="batch-split seed (default 0)")
        if chunk:
            p.add_argument("--chunk-size", type=int, default=DEFAULT_CHUNK, help="Gaussians per chunk")
        p.add_argument("--workers", type=int, default=1, help="chunks coded in parallel")

    p = sub.add_parser("encode", help="PLY -> .fcgs")
    p.add_argument("input")
    p.add_argument("output")
    common(p)
    p.set_defaults(fn=_cmd_encode)

    p = sub.add_parser("decode", help=".fcgs -> PLY")
    p.add_argument("input")
    p.add_argument("output")
    common(p, seed=False, chunk=False)
    p.set_defaults(fn=_cmd_decode)

    p = sub.add_parser("inspect", help="component sizes of a .fcgs file")
    p.add_argument("input")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=_cmd_inspect)

    p = sub.add_parser("estimate", help="model-based size estimate of a PLY scene")
    p.add_argument("input")
    common(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=_cmd_estimate)

    p = sub.add_parser("gen-test-weights", help="write the deterministic test weights")
    p.add_argument("output")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(fn=_cmd_gen_weights)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        print("fcgs: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except FcgsError as exc:
        print(f"fcgs: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"fcgs: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
