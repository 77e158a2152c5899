"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import io, prox, sampling
from .sampling import NOISE_FAMILIES, NoiseModel
from .solvers import SolverConfig, solve
from .tensor import canonical_unfold, circular_specs, default_s
from .tr import random_tr, tr_reconstruct, trnn, unfolding_rank

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

# CLI flag -> SolverConfig field
CONFIG_FLAGS = {
    "lam": "lam", "alpha": "alpha", "delta": "delta", "s": "s", "penalty0": "penalty0",
    "growth": "growth", "penalty_max": "penalty_max", "tol": "tol", "max_iter": "max_iter",
    "fantrc_rank": "fantrc_rank", "tr_rank": "tr_rank", "threads": "threads",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("solver")
    g.add_argument("--solver", choices=("ntrc", "fantrc"), default=None)
    g.add_argument("--lam", type=float, help="regularization weight (overrides --lam-mult)")
    g.add_argument("--lam-mult", type=float, help="multiplier on the base lambda from sigma")
    g.add_argument("--sigma", type=float, help="noise scale used for the base lambda")
    g.add_argument("--alpha", type=_floats)
    g.add_argument("--delta", type=float)
    g.add_argument("--s", type=int)
    g.add_argument("--penalty0", type=float)
    g.add_argument("--growth", type=float)
    g.add_argument("--penalty-max", type=float)
    g.add_argument("--tol", type=float)
    g.add_argument("--max-iter", type=int)
    g.add_argument("--fantrc-rank", type=_ints)
    g.add_argument("--tr-rank", type=_ints, help="known ring rank (FaNTRC default ranks)")
    g.add_argument("--threads", type=int)
    g.add_argument("--config", type=Path, help="JSON file with solver settings")


def _solver_settings(args, obs) -> tuple[SolverConfig, str]:
    """Merge CLI flags over the config file over built-in defaults."""
    conf = {}
    if args.config is not None:
        try:
            conf = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
        if not isinstance(conf, dict):
            raise UsageError("config file must hold a JSON object")
    for flag in list(CONFIG_FLAGS) + ["lam_mult", "sigma", "solver"]:
        val = getattr(args, flag, None)
        if val is not None:
            conf[flag] = val
    solver = conf.pop("solver", "ntrc")
    lam_mult = conf.pop("lam_mult", 1.0)
    sigma = conf.pop("sigma", None)
    unknown = set(conf) - set(CONFIG_FLAGS.values())
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    if "lam" not in conf:
        if sigma is None:
            raise UsageError("give --lam, or --sigma (optionally with --lam-mult)")
        conf["lam"] = lam_mult * sampling.lambda0(sigma, obs.N, obs.dims, conf.get("s"))
    conf.setdefault("track_objective", False)
    try:
        return SolverConfig(**conf), solver
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc))


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, list):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    return x


def cmd_synth(args) -> int:
    if len(args.dims) != len(args.rank):
        raise UsageError("--dims and --rank need the same length")
    rng = np.random.default_rng(args.seed)
    star = tr_reconstruct(random_tr(args.dims, args.rank, rng))
    if args.normalize:
        star = star / np.linalg.norm(star.ravel())
    D = star.size
    N = int(round(args.sr * D))
    if not 1 <= N <= D:
        raise UsageError(f"--sr {args.sr} gives {N} samples for {D} entries")
    idx = sampling.sample_uniform(star.shape, N, replace=args.replace, rng=rng)
    sigma = sampling.noise_sigma(args.c, star) if args.noise != "none" else 0.0
    obs = sampling.observe(star, idx, NoiseModel(args.noise, sigma), rng=rng)
    out = Path(args.output)
    io.write_tensor(out.with_suffix(".tensor"), star)
    io.write_mask(out.with_suffix(".mask"), obs)
    config = {"sigma": sigma, "tr_rank": list(args.rank)}
    out.with_suffix(".json").write_text(json.dumps(config, indent=2) + "\n")
    print(f"wrote {out.with_suffix('.tensor')}, {out.with_suffix('.mask')}, "
          f"{out.with_suffix('.json')} (N={N}, sigma={sigma:.6g})")
    return EXIT_OK


def _default_paths(args):
    mask = Path(args.mask)
    truth = args.truth
    if truth is None and mask.with_suffix(".tensor").exists() and not args.no_truth:
        truth = mask.with_suffix(".tensor")
    if args.config is None and mask.with_suffix(".json").exists():
        args.config = mask.with_suffix(".json")
    return mask, truth


def cmd_complete(args) -> int:
    mask, truth = _default_paths(args)
    obs = io.read_mask(mask)
    cfg, solver = _solver_settings(args, obs)
    hat, report = solve(obs, cfg, solver)
    if not np.all(np.isfinite(hat)):
        print("solver produced non-finite values", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(args.output) if args.output else mask.with_suffix(".completed.tensor")
    io.write_tensor(out, hat)
    rep = report.to_dict()
    metrics = {}
    if truth is not None:
        star = io.read_tensor(truth)
        metrics = {"re": ex.relative_error(hat, star), "psnr": ex.psnr(hat, star)}
        print(f"RE {metrics['re']:.6g}  PSNR {metrics['psnr']:.4f} dB")
    rep["metrics"] = metrics
    rep["lam"] = cfg.lam
    report_path = Path(args.report) if args.report else out.with_suffix(".report.json")
    report_path.write_text(json.dumps(_jsonable(rep), indent=2) + "\n")
    print(f"{solver}: {report.iterations} iterations, converged={report.converged}; wrote {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    overrides = {"seed": args.seed}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.solver is not None:
        overrides["solver"] = args.solver
    if args.lambda_mults is not None:
        overrides["lambda_multipliers"] = tuple(args.lambda_mults)
    if args.dims is not None:
        overrides["dims_grid"] = tuple(args.dims)
    if args.ranks is not None:
        overrides["rank_grid"] = tuple(args.ranks)
    if args.sr is not None:
        overrides["sr_grid"] = tuple(args.sr)
        overrides["n0_grid"] = None
    if args.max_iter is not None:
        overrides["max_iter"] = args.max_iter
    if args.threads is not None:
        overrides["threads"] = args.threads
    try:
        spec = ex.protocol_spec(args.protocol, full=args.full, **overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc))
    try:
        records = ex.run_protocol(spec)
    except ValueError as exc:
        raise UsageError(str(exc))
    text = ex.records_to_csv(records, timing=args.timing)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if args.summary:
        Path(args.summary).write_text(ex.summary_to_csv(ex.summarize(records)))
    return EXIT_OK


def cmd_inpaint(args) -> int:
    img = io.read_ppm(args.image)
    rows, cols = tuple(args.rows), tuple(args.cols)
    if args.no_vdt:
        star = img
    else:
        try:
            star = io.vdt_tensorize(img, rows, cols)
        except ValueError as exc:
            raise UsageError(str(exc))
    rng = np.random.default_rng(args.seed)
    N = int(round(args.sr * star.size))
    idx = sampling.sample_uniform(star.shape, N, rng=rng)
    sigma = sampling.noise_sigma(args.c, star) if args.noise != "none" else 0.0
    obs = sampling.observe(star, idx, NoiseModel(args.noise, sigma), rng=rng)
    if args.sigma is None:
        args.sigma = sigma if sigma > 0 else None
    if args.lam is None and args.sigma is None:
        args.lam = 1e-6
    if args.delta is None:
        args.delta = 1.0
    cfg, solver = _solver_settings(args, obs)
    hat, report = solve(obs, cfg, solver)
    if not np.all(np.isfinite(hat)):
        return EXIT_NUMERIC
    out_img = hat if args.no_vdt else io.vdt_detensorize(hat)
    io.write_ppm(args.output, out_img)
    re = ex.relative_error(out_img, img)
    print(f"RE {re:.6g}  PSNR {ex.psnr(out_img, img):.4f} dB  "
          f"(conventional {ex.psnr(out_img, img, squared=True):.4f} dB)  "
          f"{solver}: {report.iterations} iterations")
    return EXIT_OK


def cmd_inspect(args) -> int:
    t = io.read_tensor(args.tensor)
    K = t.ndim
    s = default_s(K) if args.s is None else args.s
    print(f"dims {list(t.shape)}  D={t.size}  fro={np.linalg.norm(t.ravel()):.6g}  "
          f"inf={np.max(np.abs(t)):.6g}")
    print(f"trnn(s={s}) {trnn(t, s):.6g}")
    for sp in circular_specs(t.shape, s):
        print(f"  circular k={sp.k}: {sp.d1}x{sp.d2} rank {unfolding_rank(t, sp.k, s, args.rank_tol)}")
    for k in range(1, K + 1):
        r = prox.numerical_rank(canonical_unfold(t, k), args.rank_tol)
        print(f"  canonical k={k}: rank {r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="noisytr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("synth", help="random tensor ring plus noisy observations")
    s.add_argument("--dims", type=_ints, required=True)
    s.add_argument("--rank", type=_ints, required=True)
    s.add_argument("--sr", type=float, default=0.4)
    s.add_argument("--noise", choices=NOISE_FAMILIES, default="gaussian")
    s.add_argument("--c", type=float, default=0.01, help="noise level")
    s.add_argument("--normalize", action="store_true", help="scale to unit Frobenius norm")
    s.add_argument("--replace", action="store_true", help="sample with replacement")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", default="synth", help="output prefix")
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("complete", help="complete an observation file")
    c.add_argument("--mask", required=True)
    c.add_argument("--truth", help="ground-truth tensor file for metrics")
    c.add_argument("--no-truth", action="store_true", help="ignore a sibling .tensor file")
    c.add_argument("--output")
    c.add_argument("--report")
    _add_solver_flags(c)
    c.set_defaults(func=cmd_complete)

    b = sub.add_parser("bench", help="run a synthetic protocol to CSV")
    b.add_argument("protocol", choices=ex.PROTOCOLS)
    b.add_argument("--trials", type=int)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--solver", choices=("ntrc", "fantrc"))
    b.add_argument("--lambda-mults", type=_floats)
    b.add_argument("--dims", type=_ints, help="grid of cubical extents")
    b.add_argument("--ranks", type=_ints)
    b.add_argument("--sr", type=_floats)
    b.add_argument("--max-iter", type=int)
    b.add_argument("--full", action="store_true", help="use the large published grids")
    b.add_argument("--timing", action="store_true", help="add a wall-time column")
    b.add_argument("--output")
    b.add_argument("--summary", help="also write per-grid-point means/stds here")
    b.add_argument("--threads", type=int)
    b.set_defaults(func=cmd_bench)

    i = sub.add_parser("inpaint", help="complete a noisy subsampled PPM image")
    i.add_argument("--image", required=True)
    i.add_argument("--sr", type=float, default=0.4)
    i.add_argument("--noise", choices=NOISE_FAMILIES, default="gaussian")
    i.add_argument("--c", type=float, default=0.25)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--rows", type=_ints, default=[16, 32], help="h1,h2 with H = h1*h2")
    i.add_argument("--cols", type=_ints, default=[16, 32], help="w1,w2 with W = w1*w2")
    i.add_argument("--no-vdt", action="store_true", help="complete the raw H x W x 3 tensor")
    i.add_argument("--output", required=True)
    _add_solver_flags(i)
    i.set_defaults(func=cmd_inpaint)

    n = sub.add_parser("inspect", help="print shape, TRNN and unfolding ranks")
    n.add_argument("tensor")
    n.add_argument("--s", type=int)
    n.add_argument("--rank-tol", type=float, default=1e-8)
    n.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"noisytr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.FormatError, OSError) as exc:
        print(f"noisytr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"noisytr: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
