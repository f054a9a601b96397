"""Command-line front end: ``rffmmd {detect,thresholds,calibrate,bench}``.

Exit codes: 0 ok, 2 input error, 3 detection with --halt-on-first, 4 config error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import bench, streams
from .detector import CLEAR, DROP_PRECHANGE, KNOWN_PRECHANGE, TWO_SAMPLE, WITH_HISTORY, DetectorConfig, new_detector
from .engine import replication_seed
from .kernel_features import KernelSpec, median_heuristic
from .thresholds import (
    Constant, FixedARL, ScaleARL, ScaleFA, UniformFA, calibrate_monte_carlo,
    estimate_sigma_tilde, read_calibration, write_calibration,
)

log = logging.getLogger("rffmmd")

EXIT_OK, EXIT_INPUT, EXIT_DETECTED, EXIT_CONFIG = 0, 2, 3, 4
DEFAULT_MEDIAN_POINTS = 256
DEFAULT_HORIZON = 20000
PILOT_SALT = 0x9E3779B97F4A7C15


class ConfigError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ parsing

FAMILY_ALIASES = {"gaussian": "gaussian", "normal": "gaussian", "laplace": "laplace",
                  "uniform": "uniform", "mixture": "gaussian-mixture",
                  "gaussian-mixture": "gaussian-mixture"}


def _family(name, dim, shift, scale, sigma):
    fam = FAMILY_ALIASES.get(name)
    if fam is None:
        raise ConfigError(f"unknown distribution family {name!r}")
    if fam == "gaussian-mixture":
        return streams.mixed_normal(dim, sigma=sigma, shift=shift)
    return streams.DistributionSpec(fam, dim, (shift,), scale)


def parse_generator(text, default_seed=0):
    """``gen:d=20,eta=64,pre=gaussian,post=laplace,shift=0.5,scale=1,sigma=2,length=N,seed=S``.

    ``shift``/``scale`` apply to the post-change law; the pre-change law is
    standard (``pre_scale`` overrides its scale). Returns ``(spec, length)``.
    """
    body = text[4:] if text.startswith("gen:") else text
    opts = {}
    for item in filter(None, body.split(",")):
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"generator option {item!r} is not key=value")
        opts[key.strip()] = val.strip()
    known = {"d", "eta", "pre", "post", "shift", "scale", "pre_scale", "sigma", "length", "seed"}
    unknown = set(opts) - known
    if unknown:
        raise ConfigError(f"unknown generator option(s): {', '.join(sorted(unknown))}")
    try:
        dim = int(opts.get("d", 1))
        eta = float(opts.get("eta", "inf"))
        shift = float(opts.get("shift", 0.0))
        scale = float(opts.get("scale", 1.0))
        pre_scale = float(opts.get("pre_scale", 1.0))
        sigma = float(opts.get("sigma", 2.0))
        length = int(opts["length"]) if "length" in opts else None
        seed = int(opts.get("seed", default_seed))
        pre = _family(opts.get("pre", "gaussian"), dim, 0.0, pre_scale, sigma)
        post = _family(opts.get("post", opts.get("pre", "gaussian")), dim, shift, scale, sigma)
        spec = streams.ChangeStreamSpec(pre=pre, post=post, eta=eta, seed=seed)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad generator spec {text!r}: {exc}") from None
    return spec, length


def parse_policy(text, sigma_tilde=None):
    kind, _, arg = text.partition(":")
    try:
        if kind == "arl":
            return FixedARL(float(arg))
        if kind == "fa":
            return UniformFA(float(arg))
        if kind in ("scale-arl", "scale-fa"):
            if sigma_tilde is None:
                raise ConfigError(f"policy {kind} needs --sigma-tilde or --median to estimate it")
            cls = ScaleARL if kind == "scale-arl" else ScaleFA
            return cls(float(arg), float(sigma_tilde))
        if kind == "mc":
            return read_calibration(arg)
        if kind == "const":
            return Constant(float(arg))
    except (ValueError, OSError) as exc:
        raise ConfigError(f"bad policy {text!r}: {exc}") from None
    raise ConfigError(f"unknown policy {text!r}; use arl:G, fa:A, scale-arl:G, scale-fa:A, mc:PATH")


def _needs_sigma(policy_text):
    return policy_text.startswith("scale-")


def _load_points(path):
    try:
        X = streams.read_points(path)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from None
    if X.size == 0:
        raise InputError(f"{path}: no observations")
    return X


def _kernel(args, pilot):
    """Kernel from --gamma, or the median heuristic on ``pilot``."""
    if args.gamma is not None:
        try:
            return KernelSpec(args.gamma, pilot.shape[1])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    try:
        return median_heuristic(pilot)
    except ValueError as exc:
        raise InputError(f"median heuristic failed: {exc}") from None


def _sigma_tilde(args, pilot, kernel):
    if args.sigma_tilde is not None:
        return args.sigma_tilde
    if _needs_sigma(args.policy) and pilot is not None and pilot.shape[0] >= 2:
        return estimate_sigma_tilde(pilot, kernel)
    return None


# ------------------------------------------------------------------ detect

def _iter_input(source, gen_seed):
    """Yield observations one at a time from a file, stdin, or a generator."""
    if source == "-":
        yield from streams.iter_csv(sys.stdin)
    elif source.startswith("gen:"):
        spec, length = parse_generator(source, gen_seed)
        if length is None:
            raise ConfigError("generator input needs length=N")
        yield from streams.draw_stream(spec, length)
    else:
        try:
            p = Path(source)
            if not p.exists():
                raise InputError(f"{source}: no such file")
            if p.name.endswith(("ubyte", ".idx")):
                yield from streams.read_idx(p)
            else:
                with open(p, encoding="utf-8", newline="") as fh:
                    yield from streams.iter_csv(fh)
        except (OSError, ValueError) as exc:
            raise InputError(str(exc)) from None


def cmd_detect(args, out):
    rows = _iter_input(args.input, args.seed)
    k = args.median if args.median is not None else DEFAULT_MEDIAN_POINTS
    pilot_rows = []
    try:
        if args.gamma is None or _needs_sigma(args.policy):
            for x in rows:
                pilot_rows.append(x)
                if len(pilot_rows) >= k:
                    break
        else:
            first = next(rows, None)
            if first is not None:
                pilot_rows.append(first)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if not pilot_rows:
        log.info("processed 0 observations")
        return EXIT_OK
    pilot = np.vstack(pilot_rows)
    kernel = _kernel(args, pilot)
    policy = parse_policy(args.policy, _sigma_tilde(args, pilot, kernel))

    mode, history, prechange = TWO_SAMPLE, None, None
    if args.mode != "twosample":
        kind, _, path = args.mode.partition(":")
        if kind not in ("history", "known") or not path:
            raise ConfigError(f"bad mode {args.mode!r}; use twosample, history:PATH or known:PATH")
        ref = _load_points(path)
        if ref.shape[1] != kernel.dim:
            raise InputError(f"{path}: dimension {ref.shape[1]} does not match stream dimension {kernel.dim}")
        if kind == "history":
            mode, history = WITH_HISTORY, ref
        else:
            mode, prechange = KNOWN_PRECHANGE, ref
    try:
        det = new_detector(kernel, args.features, args.seed, policy, mode, history, prechange,
                           reset=CLEAR if args.reset == "clear" else DROP_PRECHANGE)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    out.write("t,change_at,stat,lambda\n")
    n_seen = n_alarms = 0

    def observations():
        yield from pilot_rows
        yield from rows

    try:
        for x in observations():
            if x.shape[0] != kernel.dim:
                raise InputError(f"observation {n_seen + 1}: expected {kernel.dim} values, got {x.shape[0]}")
            v = det.insert(x)
            n_seen += 1
            if v.detected:
                n_alarms += 1
                out.write(f"{v.detection_time},{v.estimated_change},{v.stat:.6g},{v.threshold_used:.6g}\n")
                out.flush()
                if args.halt_on_first:
                    log.info("processed %d observations, change detected", n_seen)
                    return EXIT_DETECTED
    except ValueError as exc:
        raise InputError(str(exc)) from None
    log.info("processed %d observations, %d detection(s)", n_seen, n_alarms)
    return EXIT_OK


# ------------------------------------------------------------------ thresholds

def cmd_thresholds(args, out):
    policy = parse_policy(args.policy, args.sigma_tilde)
    try:
        grid = [int(v) for v in args.n.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad --n grid {args.n!r}") from None
    if not grid or any(n < 1 for n in grid):
        raise ConfigError("--n needs positive integers")
    side = args.min_side
    out.write("n,lambda\n")
    for n in grid:
        c = float(side if side is not None else max(n // 2, 1))
        lam = policy(n, c, c)
        out.write(f"{n},{lam:.6g}\n")
    return EXIT_OK


# ------------------------------------------------------------------ calibrate / bench

def _stream_and_config(args, default_gen="gen:d=1"):
    spec, _ = parse_generator(args.stream or default_gen, args.seed)
    k = args.median if args.median is not None else DEFAULT_MEDIAN_POINTS
    pilot = streams.StreamReader(
        streams.ChangeStreamSpec(pre=spec.pre), replication_seed(args.seed, PILOT_SALT)
    ).take(max(k, 2))
    kernel = _kernel(args, pilot)
    return spec, kernel, pilot


def cmd_calibrate(args, out):
    spec, kernel, _ = _stream_and_config(args)
    null = streams.ChangeStreamSpec(pre=spec.pre, seed=spec.seed)
    config = DetectorConfig(kernel, args.features, args.seed, Constant(math.inf))
    try:
        policy = calibrate_monte_carlo(null, args.target_arl, args.reps, config, args.seed,
                                       stream_length=args.stream_length, workers=args.workers)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.out:
        write_calibration(policy, args.out)
    out.write(f"lambda,{policy.lambda_!r}\n")
    return EXIT_OK


def _horizon(args, policy):
    """Explicit --horizon, else 20 x the policy's target run length (20000 without one)."""
    if args.horizon is not None:
        return args.horizon
    target = getattr(policy, "gamma_run", None) or getattr(policy, "target_arl", None)
    return int(math.ceil(20 * target)) if target else DEFAULT_HORIZON


def cmd_bench(args, out):
    if args.experiment == "compare":
        spec, _ = parse_generator(args.stream or "gen:d=1", args.seed)
        report = bench.run_threshold_comparison(spec.pre, n=args.n, r=args.features,
                                                rounds=args.rounds, alpha=args.alpha,
                                                master_seed=args.seed)
    else:
        spec, kernel, pilot = _stream_and_config(args)
        policy = parse_policy(args.policy, _sigma_tilde(args, pilot, kernel))
        config = DetectorConfig(kernel, args.features, args.seed, policy)
        if args.experiment == "arl":
            null = streams.ChangeStreamSpec(pre=spec.pre, seed=spec.seed)
            report = bench.run_arl(config, null, args.reps, _horizon(args, policy), args.seed,
                                   workers=args.workers)
        else:
            if not math.isfinite(spec.eta):
                spec = streams.ChangeStreamSpec(spec.pre, spec.post, 64, spec.seed)
            report = bench.run_edd(config, spec, args.reps, args.seed,
                                   max_delay=args.max_delay, workers=args.workers)
    report.config["command"] = {"experiment": args.experiment, "stream": args.stream,
                                "policy": args.policy, "seed": args.seed}
    text = report.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        out.write(text)
    return EXIT_OK


# ------------------------------------------------------------------ main

def _add_kernel_flags(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--gamma", type=float, help="Gaussian kernel parameter")
    g.add_argument("--median", type=int, metavar="K",
                   help=f"fit gamma by the median heuristic on K points (default {DEFAULT_MEDIAN_POINTS})")
    p.add_argument("--features", type=int, default=100, metavar="R", help="random Fourier features")
    p.add_argument("--seed", type=int, default=0, metavar="S")
    p.add_argument("--sigma-tilde", type=float, help="sigma-tilde for scale-dependent policies")


def build_parser():
    parser = _Parser(prog="rffmmd", description="Online RFF-MMD change point detection")
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress progress messages")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("detect", help="run the detector over a stream")
    p.add_argument("--input", required=True, help="CSV/IDX path, '-' for CSV on stdin, or gen:...")
    _add_kernel_flags(p)
    p.add_argument("--policy", default="fa:0.01")
    p.add_argument("--mode", default="twosample", help="twosample | history:PATH | known:PATH")
    p.add_argument("--reset", choices=("drop", "clear"), default="drop",
                   help="after a detection drop pre-change windows (default) or everything")
    p.add_argument("--halt-on-first", action="store_true")
    p.add_argument("--out", help="write event lines here instead of stdout")

    p = sub.add_parser("thresholds", help="print threshold values on a grid of n")
    p.add_argument("--policy", required=True)
    p.add_argument("--n", default="2,4,8,16,32,64,128,256,512,1024")
    p.add_argument("--min-side", type=int, help="split size for scale-dependent policies (default n/2)")
    p.add_argument("--sigma-tilde", type=float)

    p = sub.add_parser("calibrate", help="Monte-Carlo threshold for a target ARL")
    p.add_argument("--stream", help="null generator spec, e.g. gen:d=20")
    p.add_argument("--target-arl", type=float, required=True)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--stream-length", type=int, help="default 10 x target ARL")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="calibration table path")
    _add_kernel_flags(p)

    p = sub.add_parser("bench", help="ARL / EDD / threshold comparison experiments")
    p.add_argument("experiment", choices=("arl", "edd", "compare"))
    p.add_argument("--stream", help="generator spec, e.g. gen:d=20,eta=64,shift=0.5")
    p.add_argument("--policy", default="arl:1000")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--horizon", type=int,
                   help="ARL censoring horizon (default 20 x target run length)")
    p.add_argument("--max-delay", type=int, default=1024)
    p.add_argument("--n", type=int, default=1000, help="sample size (compare)")
    p.add_argument("--rounds", type=int, default=1000, help="rounds (compare)")
    p.add_argument("--alpha", type=float, default=0.01, help="level (compare)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    _add_kernel_flags(p)
    return parser


COMMANDS = {"detect": cmd_detect, "thresholds": cmd_thresholds,
            "calibrate": cmd_calibrate, "bench": cmd_bench}


def _setup_logging(quiet):
    # a fresh handler per call so it always targets the current stderr
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("rffmmd: %(message)s"))
    log.handlers[:] = [handler]
    log.propagate = False
    log.setLevel(logging.WARNING if quiet else logging.INFO)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.quiet)
    out_path = getattr(args, "out", None) if args.command == "detect" else None
    try:
        if out_path:
            with open(out_path, "w", encoding="utf-8") as out:
                return COMMANDS[args.command](args, out)
        return COMMANDS[args.command](args, sys.stdout)
    except ConfigError as exc:
        print(f"rffmmd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"rffmmd: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
