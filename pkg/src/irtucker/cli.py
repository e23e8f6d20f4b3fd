"""Command line front end.

Exit codes: 0 success, 2 usage / invalid input, 3 file format or IO error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import ExperimentSpec, gen_cp, gen_tucker, nmse, random_mask, add_noise_snr
from .errors import FormatError, NumericalFailure
from .experiments import (
    benchmark_config,
    benchmark_csv,
    benchmark_table,
    default_inpaint_lambda1,
    inpaint,
    inpaint_core_dims,
    inpaint_error,
    load_experiments,
    run_benchmark,
)
from .formats import (
    apply_mask_file,
    derive_mask_from_sentinel,
    read_image_ppm,
    read_tensor,
    write_image_ppm,
    write_mask,
    write_tensor,
)
from .solver import SolverConfig, solve

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("irtucker")


class UsageError(Exception):
    pass


def _dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(v) for v in text.replace("x", ",").split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"dimensions must be positive, got {text!r}")
    return dims


def _add_solver_flags(p: argparse.ArgumentParser, lambda1_default: float | None = 0.5):
    g = p.add_argument_group("solver")
    g.add_argument("--lambda1", type=float, default=lambda1_default,
                   help="data-fit weight (default: %(default)s)")
    g.add_argument("--lambda2", type=float, default=1.0, help="factor ridge weight")
    g.add_argument("--delta", type=float, default=0.1, help="MFISTA over-relaxation in (0, 2)")
    g.add_argument("--tmax", type=int, default=2, help="inner MFISTA steps per outer iteration")
    g.add_argument("--epsilon", type=float, default=None, help="log-sum offset (default: scale aware)")
    g.add_argument("--prune-tol", type=float, default=1e-4)
    g.add_argument("--outer-tol", type=float, default=1e-4)
    g.add_argument("--max-iters", type=int, default=1000)
    g.add_argument("--init-core-dims", type=_dims, default=None)
    g.add_argument("--seed", type=int, default=0)


def _solver_config(args, **extra) -> SolverConfig:
    try:
        return SolverConfig(lambda1=args.lambda1, lambda2=args.lambda2, delta=args.delta,
                            t_max=args.tmax, logsum_epsilon=args.epsilon,
                            prune_tol=args.prune_tol, outer_tol=args.outer_tol,
                            max_outer_iters=args.max_iters, init_core_dims=args.init_core_dims,
                            rng_seed=args.seed, **extra)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def write_manifest(path: Path, args, argv, cfg: SolverConfig | None, extra: dict | None = None):
    """Plain key=value record of a run; ``argv`` allows :func:`cmd_rerun`."""
    items = {
        "command": args.command,
        "argv": json.dumps(list(argv)),
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "seed": getattr(args, "seed", ""),
    }
    if cfg is not None:
        for key, value in asdict(cfg).items():
            items[f"config.{key}"] = value
    items.update(extra or {})
    text = "".join(f"{k}={v}\n" for k, v in items.items())
    path.write_text(text)


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            out[key] = value
    return out


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_complete(args, argv) -> int:
    y = read_tensor(args.input)
    if args.mask:
        mask = apply_mask_file(y, args.mask)
    else:
        mask = derive_mask_from_sentinel(y, float(args.sentinel))
    truth = read_tensor(args.truth) if args.truth else None
    if truth is not None and truth.shape != y.shape:
        raise FormatError(f"truth dims {truth.shape} differ from input dims {y.shape}")
    cfg = _solver_config(args, normalize=args.normalize)

    model, report = solve(y, mask, cfg)
    recon = model.reconstruct()

    out = _out_dir(args.output_dir)
    write_tensor(recon, out / "reconstruction.dtf")
    write_tensor(model.core, out / "core.dtf")
    for n, a in enumerate(model.factors):
        write_tensor(a, out / f"factor_{n + 1}.dtf")
    lines = [
        f"rank={','.join(str(r) for r in model.rank)}",
        f"iterations={report.iterations}",
        f"converged={str(report.converged).lower()}",
        f"observed={int(mask.sum())}",
        f"logsum_epsilon={report.logsum_epsilon!r}",
        f"data_scale={report.data_scale!r}",
    ]
    if truth is not None:
        lines.append(f"nmse={nmse(truth, recon)!r}")
    lines.append("objective_trace=" + ",".join(repr(v) for v in report.objective_trace))
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    write_manifest(out / "manifest.txt", args, argv, cfg,
                   {"input": args.input, "mask": args.mask or f"sentinel:{args.sentinel}",
                    "truth": args.truth or "", "output_dir": args.output_dir})
    print(f"rank {model.rank}  iterations {report.iterations}"
          + (f"  nmse {nmse(truth, recon):.4f}" if truth is not None else ""))
    return EXIT_OK


def cmd_inpaint(args, argv) -> int:
    image = read_image_ppm(args.image)
    if args.mask_image:
        mimg = read_image_ppm(args.mask_image)
        if mimg.shape != image.shape:
            raise FormatError(f"mask image {mimg.shape[:2]} differs from image {image.shape[:2]}")
        mask = mimg >= 0.5
        if not mask.any():
            raise UsageError("mask image marks every entry as missing")
        missing = 1.0 - float(mask.mean())
    else:
        missing = args.missing
        try:
            mask = random_mask(image.shape, missing, args.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    if args.lambda1 is None:
        args.lambda1 = default_inpaint_lambda1(missing)
    if args.init_core_dims is None:
        args.init_core_dims = inpaint_core_dims(image.shape, args.core_cap)
    cfg = _solver_config(args)
    reference = None if args.reference_size <= 0 else args.reference_size

    filled, model, report = inpaint(image, mask, cfg, reference)
    err = inpaint_error(image, filled, mask)

    out = _out_dir(args.output_dir)
    write_image_ppm(np.where(mask, image, 0.0), out / "observed.ppm")
    write_image_ppm(filled, out / "inpainted.ppm")
    write_mask(mask, out / "mask.dmf")
    lines = [
        f"rank={','.join(str(r) for r in model.rank)}",
        f"iterations={report.iterations}",
        f"missing_fraction={missing!r}",
        f"lambda1={cfg.lambda1!r}",
        f"mse_missing={'NA' if err is None else repr(err)}",
    ]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    write_manifest(out / "manifest.txt", args, argv, cfg,
                   {"image": args.image, "mask_image": args.mask_image or "",
                    "missing": missing, "reference_size": args.reference_size,
                    "output_dir": args.output_dir})
    print(f"rank {model.rank}  mse_missing {'NA' if err is None else f'{err:.5f}'}")
    return EXIT_OK


def cmd_benchmark(args, argv) -> int:
    try:
        specs, overrides = load_experiments(args.spec)
        cfg = benchmark_config(overrides)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"{args.spec}: {exc}") from exc

    def progress(r):
        log.info("%s trial %d: nmse %.4f rank %s (%.1fs)", r.spec, r.trial, r.nmse, r.rank,
                 r.runtime_s)

    rows = run_benchmark(specs, cfg, progress)
    timing = not args.no_timing
    table = benchmark_table(rows, timing)
    out = _out_dir(args.output_dir)
    (out / "benchmark.csv").write_text(benchmark_csv(rows, timing))
    (out / "benchmark.txt").write_text(table)
    write_manifest(out / "manifest.txt", args, argv, cfg,
                   {"spec": args.spec, "output_dir": args.output_dir})
    print(table, end="")
    return EXIT_OK


def cmd_generate(args, argv) -> int:
    rng = np.random.default_rng(args.seed)
    if args.cp_rank is not None:
        truth = gen_cp(args.dims, args.cp_rank, rng)
    else:
        core = args.core_dims or args.dims
        if len(core) != len(args.dims):
            raise UsageError("--core-dims must have one entry per mode")
        truth = gen_tucker(args.dims, core, rng)
    mask = random_mask(args.dims, args.missing, rng)
    observed = add_noise_snr(truth, args.snr_db, mask, rng)
    out = _out_dir(args.output_dir)
    write_tensor(truth, out / "truth.dtf")
    write_tensor(np.where(mask, observed, np.nan), out / "observed.dtf")
    write_mask(mask, out / "mask.dmf")
    write_manifest(out / "manifest.txt", args, argv, None,
                   {"dims": ",".join(map(str, args.dims)), "missing": args.missing,
                    "snr_db": args.snr_db, "output_dir": args.output_dir})
    print(f"wrote {out}/truth.dtf, observed.dtf, mask.dmf")
    return EXIT_OK


def cmd_rerun(args, argv) -> int:
    manifest = read_manifest(args.manifest)
    if "argv" not in manifest:
        raise FormatError(f"{args.manifest} has no argv entry")
    replay = json.loads(manifest["argv"])
    log.info("replaying: irtucker %s", shlex.join(replay))
    return main(replay)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irtucker",
        description="Tucker decomposition of incomplete tensors with automatic rank selection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("complete", help="decompose / complete a DTF1 tensor")
    p.add_argument("input", help="DTF1 tensor")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--mask", help="DMF1 mask (default: derive from --sentinel)")
    src.add_argument("--sentinel", default="nan", help="value marking missing entries (default: nan)")
    p.add_argument("--truth", help="ground-truth DTF1 tensor for NMSE")
    p.add_argument("-o", "--output-dir", required=True)
    p.add_argument("--no-normalize", dest="normalize", action="store_false",
                   help="solve on the raw data scale instead of normalizing")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("inpaint", help="inpaint a P6 PPM image")
    p.add_argument("image")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--missing", type=float, default=0.5, help="random missing fraction")
    src.add_argument("--mask-image", help="PPM; entries below mid-grey are missing")
    p.add_argument("--core-cap", type=int, default=64, help="initial spatial core size cap")
    p.add_argument("--reference-size", type=int, default=512,
                   help="rescale intensities to the slice energy of this image size (0: off)")
    p.add_argument("-o", "--output-dir", required=True)
    _add_solver_flags(p, lambda1_default=None)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("benchmark", help="run synthetic completion experiments")
    p.add_argument("spec", help="JSON experiment list")
    p.add_argument("-o", "--output-dir", required=True)
    p.add_argument("--no-timing", action="store_true",
                   help="write NA instead of wall times so outputs are byte reproducible")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("generate", help="write a synthetic incomplete tensor")
    p.add_argument("--dims", type=_dims, required=True)
    kind = p.add_mutually_exclusive_group()
    kind.add_argument("--core-dims", type=_dims)
    kind.add_argument("--cp-rank", type=int)
    p.add_argument("--missing", type=float, default=0.5)
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output-dir", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("rerun", help="replay the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args, argv)
    except UsageError as exc:
        print(f"irtucker: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"irtucker: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericalFailure as exc:
        print(f"irtucker: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"irtucker: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
