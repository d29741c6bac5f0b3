"""Command-line entry point.

Subcommands::

    synth      generate a synthetic corpus (plots.csv, labels.csv, rasters)
    fit-gamma  fit the ground/non-ground elevation mixture, write JSON
    train      train the segmentation network, write a checkpoint
    predict    predict one plot: occupancy triple + per-stratum rasters
    eval       score a predictions CSV against a labels CSV
    cv         k-fold cross-validation, write the fold report
    baseline   handcrafted or regression baseline predictions

Numeric defaults match the reference training recipe.  A ``--config`` file
with ``key=value`` lines provides defaults that explicit flags override.
The ``STRATA_LOG`` environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from . import harness, pointcloud, raster, synth
from .baselines import fit_prototypes, handcrafted_predict, regression_train_predict
from .errors import VegstrataError
from .gammamix import GammaMixture
from .losses import LossWeights
from .segnet import SegNet

log = logging.getLogger("vegstrata")

CONFIG_KEYS = {
    "epochs": int,
    "batch": int,
    "m_points": int,
    "raster_k": int,
    "lam": float,
    "mu": float,
    "lr": float,
    "seed": int,
    "jobs": int,
}


def _read_config_file(path):
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise VegstrataError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise VegstrataError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = CONFIG_KEYS[key](value)
    return out


def _add_train_flags(p):
    p.add_argument("--config", help="key=value config file (flags override)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--m-points", type=int, default=None)
    p.add_argument("--raster-k", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="elevation loss weight")
    p.add_argument("--mu", type=float, default=None, help="entropy loss weight")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel folds for cv")


def _train_config(args) -> tuple[harness.TrainConfig, int]:
    base = {
        "epochs": 100, "batch": 20, "m_points": 4096, "raster_k": 32,
        "lam": 1.0, "mu": 0.2, "lr": 1e-3, "seed": 0, "jobs": 1,
    }
    if getattr(args, "config", None):
        base.update(_read_config_file(args.config))
    for key in base:
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    config = harness.TrainConfig(
        epochs=base["epochs"],
        batch_size=base["batch"],
        m_points=base["m_points"],
        raster_k=base["raster_k"],
        weights=LossWeights(elevation=base["lam"], entropy=base["mu"]),
        lr=base["lr"],
        seed=base["seed"],
    )
    return config, base["jobs"]


def load_dataset(data_dir) -> list[pointcloud.NormalizedPlot]:
    """Read plots.csv + labels.csv from a directory and normalize every plot."""
    data_dir = Path(data_dir)
    labels = pointcloud.load_labels(data_dir / "labels.csv")
    plots = pointcloud.load_plots(data_dir / "plots.csv", labels=labels)
    return [pointcloud.normalize(p) for p in plots]


def _write_report(path, fold_reports, pooled):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "e_low", "e_medium", "e_high", "e_avg"])
        for i, rep in enumerate(fold_reports):
            writer.writerow([i, f"{rep.e_low:.6f}", f"{rep.e_medium:.6f}",
                             f"{rep.e_high:.6f}", f"{rep.e_avg:.6f}"])
        writer.writerow(["pooled", f"{pooled.e_low:.6f}", f"{pooled.e_medium:.6f}",
                         f"{pooled.e_high:.6f}", f"{pooled.e_avg:.6f}"])


def _export_rasters(out_dir, plot_id, rasters):
    mask = raster.disk_mask(rasters.k)
    for s, name in enumerate(raster.STRATA):
        raster.export_raster_csv(out_dir / f"{plot_id}_{name}.csv",
                                 rasters.maps[s], mask)
        raster.export_raster_pgm(out_dir / f"{plot_id}_{name}.pgm",
                                 rasters.maps[s], mask)


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = synth.generate_corpus(
        args.plots, args.seed, density=args.density, k=args.raster_k or 32,
        challenging=args.challenging,
    )
    pointcloud.save_plots(out / "plots.csv", [s.plot for s in samples])
    pointcloud.save_labels(out / "labels.csv",
                           {s.plot.id: s.labels for s in samples})
    if args.write_rasters:
        rdir = out / "ref_rasters"
        rdir.mkdir(exist_ok=True)
        mask = raster.disk_mask(samples[0].spec.k)
        for s in samples:
            for row, name in enumerate(raster.STRATA):
                raster.export_raster_csv(
                    rdir / f"{s.plot.id}_{name}.csv",
                    s.reference_rasters[row].astype(float), mask,
                )
    log.info("wrote %d plots to %s", len(samples), out)
    return 0


def cmd_fit_gamma(args):
    plots = load_dataset(args.data)
    init = None
    if args.init:
        init = GammaMixture.from_json(Path(args.init).read_text())
    mixture = harness.fit_elevation_mixture(plots, init=init)
    Path(args.out).write_text(mixture.to_json() + "\n")
    log.info("fitted mixture written to %s", args.out)
    return 0


def cmd_train(args):
    config, _ = _train_config(args)
    plots = load_dataset(args.data)
    if args.gamma:
        mixture = GammaMixture.from_json(Path(args.gamma).read_text())
    else:
        mixture = harness.fit_elevation_mixture(plots)
    log_rows = []
    net = harness.train(plots, config, mixture, log_rows=log_rows)
    net.save(args.out)
    log_path = Path(args.out).with_suffix(".log.csv")
    with open(log_path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["epoch", "data", "elevation", "entropy", "total", "lr"]
        )
        writer.writeheader()
        writer.writerows(log_rows)
    log.info("checkpoint written to %s, training log to %s", args.out, log_path)
    return 0


def cmd_predict(args):
    config, _ = _train_config(args)
    net = SegNet()
    net.load_state(args.model)
    plot = pointcloud.normalize(pointcloud.load_plot(args.plot))
    occupancies, rasters = harness.predict(net, plot, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pointcloud.save_labels(out / "predictions.csv", {plot.id: occupancies})
    _export_rasters(out, plot.id, rasters)
    print(f"{plot.id}: o_low={occupancies[0]:.4f} "
          f"o_medium={occupancies[1]:.4f} o_high={occupancies[2]:.4f}")
    return 0


def cmd_eval(args):
    preds = pointcloud.load_labels(args.pred)
    truths = pointcloud.load_labels(args.truth)
    report = harness.evaluate(preds, truths)
    print(f"e_low={report.e_low:.4f} e_medium={report.e_medium:.4f} "
          f"e_high={report.e_high:.4f} e_avg={report.e_avg:.4f}")
    if args.out:
        _write_report(args.out, [], report)
    return 0


def cmd_cv(args):
    config, _ = _train_config(args)
    plots = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    callbacks = {
        "fold_done": lambda f, net: net.save(out / f"fold{f}.npz")
    }
    fold_reports, pooled = harness.cross_validate(
        plots, config, method=args.method, callbacks=callbacks
    )
    _write_report(out / "report.csv", fold_reports, pooled)
    print(f"pooled e_avg={pooled.e_avg:.4f} (report in {out / 'report.csv'})")
    return 0


def cmd_baseline(args):
    config, _ = _train_config(args)
    plots = load_dataset(args.data)
    if args.method == "handcrafted":
        protos = fit_prototypes(plots)
        preds = {}
        for plot in plots:
            o_l, o_m, o_h, _ = handcrafted_predict(plot, protos, k=config.raster_k)
            preds[plot.id] = (o_l, o_m, o_h)
    else:
        preds = regression_train_predict(
            plots, epochs=config.epochs, batch_size=config.batch_size,
            seed=config.seed, lr=config.lr,
        )
    pointcloud.save_labels(args.out, preds)
    log.info("baseline predictions written to %s", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vegstrata",
        description="Weakly-supervised vegetation stratum occupancy prediction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--plots", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--density", type=float, default=10.0)
    p.add_argument("--raster-k", type=int, default=None)
    p.add_argument("--challenging", action="store_true",
                   help="ambiguous radiometry and leaky height bands")
    p.add_argument("--write-rasters", action="store_true",
                   help="also export the reference rasters")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit-gamma", help="fit the elevation mixture")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="JSON mixture to start from")
    p.set_defaults(func=cmd_fit_gamma)

    p = sub.add_parser("train", help="train the segmentation network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gamma", help="pre-fitted mixture JSON")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict one plot")
    p.add_argument("--model", required=True)
    p.add_argument("--plot", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="k-fold cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["segnet", "handcrafted", "regression"],
                   default="segnet")
    _add_train_flags(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("baseline", help="baseline predictions")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["handcrafted", "regression"],
                   default="handcrafted")
    _add_train_flags(p)
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("STRATA_LOG", "INFO").upper(),
        format="%(levelname)s %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (VegstrataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
