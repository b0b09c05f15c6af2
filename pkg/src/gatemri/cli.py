"""Command line entry point.

Commands: gen-data, train, eval, compare, selftest.  Every command accepts
``--seed`` and ``--out``.  Exit codes: 0 success, 1 validation failure,
2 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import degrade, reporting, training

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gatemri",
                                     description="Desk-scale gated-CNN MRI restoration testbed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic task dataset")
    p.add_argument("--task", choices=degrade.TASKS, required=True)
    p.add_argument("--n-train", type=int, default=48)
    p.add_argument("--n-val", type=int, default=64)
    p.add_argument("--n-test", type=int, default=0)
    p.add_argument("--size", type=int, default=64, help="square image side")
    p.add_argument("--n-ellipses", type=int, default=8)
    p.add_argument("--accel", type=int, default=4, help="recon: acceleration factor")
    p.add_argument("--center-frac", type=float, default=0.08,
                   help="recon: fully sampled center fraction")
    p.add_argument("--noise-sigma", type=float, default=0.0,
                   help="recon: k-space noise std per component")
    p.add_argument("--coils", type=int, default=1, help="recon: coil count")
    p.add_argument("--keep-frac", type=float, default=0.0625,
                   help="sr: k-space area fraction retained")
    p.add_argument("--sigma0", type=float, default=0.05, help="denoise: base noise scale")
    p.add_argument("--alpha", type=float, default=3.0, help="denoise: noise growth factor")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output dir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="dataset root directory")

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", required=True, help="run directory for checkpoints and logs")
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint (or a model-free baseline)")
    p.add_argument("--checkpoint", help="checkpoint to evaluate")
    p.add_argument("--baseline", action="store_true",
                   help="evaluate the degraded input / zero-filled baseline instead")
    p.add_argument("--config", help="config file (required with --baseline)")
    p.add_argument("--split", default="val", choices=("train", "val", "test"))
    p.add_argument("--data", help="override the config data root")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="metrics CSV path")

    p = sub.add_parser("compare", help="merge eval CSVs and render a comparison chart")
    p.add_argument("--runs", nargs="+", required=True, help="evaluation CSV files")
    p.add_argument("--labels", nargs="*", help="method labels (default: file stems)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("selftest", help="run the built-in invariant suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="optional report file")
    return parser


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    task_dir = out / args.task
    if task_dir.exists() and any(task_dir.iterdir()) and not args.force:
        print(f"error: output directory {task_dir} is not empty (use --force)", file=sys.stderr)
        return EXIT_IO
    params = degrade.DatasetParams(
        task=args.task, size=args.size, seed=args.seed, n_ellipses=args.n_ellipses,
        acceleration=args.accel, center_fraction=args.center_frac,
        noise_sigma=args.noise_sigma, coils=args.coils, keep_fraction=args.keep_frac,
        sigma0=args.sigma0, alpha=args.alpha)
    task_dir = degrade.generate_dataset(out, params, args.n_train, args.n_val, args.n_test)
    print(task_dir)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg_path = Path(args.config)
    if not cfg_path.exists():
        print(f"error: missing config file {cfg_path}", file=sys.stderr)
        return EXIT_IO
    cfg = training.ExperimentConfig.load(cfg_path)
    if args.seed is not None:
        cfg.seed = args.seed
    try:
        result = training.train(cfg, args.out, resume=args.resume)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(result.best_path)
    print(f"best_val_psnr={result.best_val_psnr:.4f} input_val_psnr={result.input_val_psnr:.4f}")
    if result.flagged_failed:
        print("error: validation PSNR did not beat the degraded input; run flagged failed",
              file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        if args.baseline:
            if not args.config:
                print("error: --baseline requires --config", file=sys.stderr)
                return EXIT_IO
            if not Path(args.config).exists():
                print(f"error: missing config file {args.config}", file=sys.stderr)
                return EXIT_IO
            cfg = training.ExperimentConfig.load(args.config)
            if args.data:
                cfg.data_root = args.data
            report = training.evaluate_split(None, cfg, args.split, method="baseline")
        else:
            if not args.checkpoint:
                print("error: provide --checkpoint or --baseline", file=sys.stderr)
                return EXIT_IO
            if not Path(args.checkpoint).exists():
                print(f"error: missing checkpoint {args.checkpoint}", file=sys.stderr)
                return EXIT_IO
            model, cfg = training.load_model(args.checkpoint)
            if args.data:
                cfg.data_root = args.data
            report = training.evaluate_split(model, cfg, args.split,
                                             method=f"{cfg.task}-{cfg.model}")
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(out)
    print(f"ssim_windows={report.ssim_windows} volumes={len(report.volumes)} "
          f"skipped_slices={report.skipped_slices}", file=sys.stderr)
    print(out)
    return EXIT_OK


def cmd_compare(args) -> int:
    for path in args.runs:
        if not Path(path).exists():
            print(f"error: missing evaluation CSV {path}", file=sys.stderr)
            return EXIT_IO
    try:
        merged, svg = reporting.compare_runs(args.runs, args.out, args.labels or None)
    except reporting.ComparisonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(merged)
    print(svg)
    return EXIT_OK


def cmd_selftest(args) -> int:
    from . import selftest

    checks = selftest.run_all(args.seed)
    lines = []
    failed = 0
    for name, passed, detail in checks:
        status = "PASS" if passed else "FAIL"
        failed += not passed
        lines.append(f"[{status}] {name} ({detail})")
    text = "\n".join(lines)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VALIDATION


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "gen-data": cmd_gen_data,
        "train": cmd_train,
        "eval": cmd_eval,
        "compare": cmd_compare,
        "selftest": cmd_selftest,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
