"""Command line entry point.

Exit codes: 0 ran and matched the expected outcome, 1 runtime/config failure,
2 an expected detection was missed, 3 a false alarm was raised.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .config import full_rate, load_config
from .errors import ConfigError

log = logging.getLogger("kan_koopman")


def _scenario(args):
    sc = load_config(args.config)
    if args.paper_scale:
        sc = full_rate(sc)
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    return sc


def cmd_generate_data(args) -> int:
    sc = _scenario(args)
    paths = pipeline.generate_training_data(sc, args.out, seed=args.seed)
    for p in paths:
        print(p)
    return pipeline.EXIT_OK


def cmd_train_kan(args) -> int:
    sc = load_config(args.config)
    if args.paper_scale:
        sc = full_rate(sc)
    changes = {k: v for k, v in (("epochs", args.epochs), ("learning_rate", args.learning_rate),
                                 ("seed", args.seed)) if v is not None}
    if changes:
        # KanSettings re-validates, so epochs=0 fails here before any data is read
        sc = replace(sc, kan=replace(sc.kan, **changes))
    files = pipeline.dataset_files(args.data)
    x, y = pipeline.read_dataset(files)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "kan_model.json"
    res = pipeline.train_estimator(sc, x, y)
    pipeline.save_training(res, sc, model_path, out / "loss_history.csv", files)
    print(f"architecture {res.net.widths} grid {res.net.grid} kappa {res.net.kappa} "
          f"edges {res.net.n_edges}")
    print(f"loss {res.history[0]:.6g} -> {res.history[-1]:.6g} over {len(res.history) - 1} epochs")
    print(f"train rmse {res.train_rmse:.4f} K, held-out rmse {res.holdout_rmse:.4f} K")
    print(f"model written to {model_path}")
    return pipeline.EXIT_OK


def cmd_run(args) -> int:
    sc = _scenario(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    result = pipeline.run_scenario(sc, variants, model_path=args.model)
    pipeline.write_outputs(result, args.out)
    for rep in result.reports.values():
        print(rep.summary())
    return pipeline.exit_code(sc, result.reports)


def cmd_calibrate(args) -> int:
    sc = _scenario(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    net = pipeline.resolve_model(sc, variants, args.model)
    seed = args.seed if args.seed is not None else sc.calibration_seed
    thr = pipeline.calibrate(sc, net, variants, seed=seed)
    for v, t in thr.items():
        print(f"{v}: threshold {t:.6f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "thresholds.json", "w") as fh:
            json.dump({"scenario": sc.name, "seed": seed,
                       "safety_factor": sc.detector.safety_factor, "thresholds": thr},
                      fh, indent=1, sort_keys=True)
            fh.write("\n")
    return pipeline.EXIT_OK


def cmd_compare(args) -> int:
    proposed = pipeline.read_report_json(args.proposed)
    baseline = pipeline.read_report_json(args.baseline)
    text, rows = pipeline.comparison_table(proposed, baseline)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "comparison.csv", "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        (out / "comparison.txt").write_text(text)
    return pipeline.EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kan-koopman", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", default="nominal", help="config path or shipped name")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--paper-scale", action="store_true", help="full-rate stream, no downsampling")
        sp.add_argument("--out", required=out_required)

    sp = sub.add_parser("generate-data", help="nominal training runs over the C-rate/ambient grid")
    common(sp)
    sp.set_defaults(func=cmd_generate_data)

    sp = sub.add_parser("train-kan", help="fit the core-temperature estimator")
    common(sp)
    sp.add_argument("--data", required=True, help="dataset CSV or directory of CSVs")
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--learning-rate", type=float, default=None)
    sp.set_defaults(func=cmd_train_kan)

    sp = sub.add_parser("run", help="simulate a scenario and run the detectors")
    common(sp)
    sp.add_argument("--model", default=None, help="estimator model file (default from config)")
    sp.add_argument("--variants", default="proposed,baseline")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("calibrate", help="nominal-run thresholds per variant")
    common(sp, out_required=False)
    sp.add_argument("--model", default=None)
    sp.add_argument("--variants", default="proposed,baseline")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("compare", help="detection / recovery speed-up between two reports")
    sp.add_argument("proposed")
    sp.add_argument("baseline")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
