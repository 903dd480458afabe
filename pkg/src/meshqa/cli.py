"""``meshqa`` command line: score, train, eval, crossval, render, verify.

Exit codes: 0 success, 1 verification failure, 2 I/O or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import CONFIG_ENV, Config

EXIT_OK, EXIT_VERIFY, EXIT_IO = 0, 1, 2

log = logging.getLogger("meshqa")


class UsageError(Exception):
    pass


def _config(args) -> Config:
    path = args.config or os.environ.get(CONFIG_ENV)
    text = Path(path).read_text() if path else ""
    extra = []
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        extra.append(item)
    if extra:
        text = text + "\n" + "\n".join(extra) + "\n"
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.deterministic:
        overrides["deterministic"] = True
    return Config.loads(text, **overrides)


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory is not writable: {out}")
    return out


def _load_model(weights, config: Config):
    from .model import QualityModel

    return QualityModel.from_file(_require_file(weights, "weights file"), config)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def cmd_score(args, config: Config) -> int:
    from .autodiff import no_grad
    from .model import load_prepared

    model = _load_model(args.weights, config)
    ref = load_prepared(_require_file(args.ref, "reference mesh"), config)
    dis = load_prepared(_require_file(args.dis, "distorted mesh"), config)
    with no_grad():
        r = model.represent(ref)
        d = model.represent(dis)
        q = float(model.fr_score(r.f_mesh, d.f_mesh).data[0])
    if args.json:
        print(json.dumps({"score": q, "patches_per_view": {
            "reference": [r.patches_per_view.get(i, 0) for i in range(6)],
            "distorted": [d.patches_per_view.get(i, 0) for i in range(6)]}}))
    else:
        print(repr(q))
    return EXIT_OK


def cmd_train(args, config: Config) -> int:
    from .dataset import DatasetManifest
    from .report import plot_loss_curves
    from .train import train

    manifest = DatasetManifest.load(_require_file(args.manifest, "manifest"))
    out = _out_dir(args.out)
    model, rows = train(manifest, config, log_path=out / "train_log.csv")
    model.save(out / "weights.mqaw")
    config.save(out / "config.txt")
    plot_loss_curves(rows, out / "loss_curve.png")
    for row in rows:
        print(f"{row['epoch']},{row['l_mae']:.6f},{row['l_rank']:.6f},{row['l']:.6f},{row['lr']:.3e}")
    print(f"weights: {out / 'weights.mqaw'}")
    return EXIT_OK


def cmd_eval(args, config: Config) -> int:
    from .dataset import DatasetManifest
    from .report import plot_scatter
    from .train import evaluate

    manifest = DatasetManifest.load(_require_file(args.manifest, "manifest"))
    model = _load_model(args.weights, config)
    res = evaluate(manifest, model)
    out = _out_dir(args.out)
    with (out / "predictions.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["reference", "distorted", "content", "mos", "prediction"])
        for rec, pred in res.predictions:
            w.writerow([rec.reference, rec.distorted, rec.content, repr(rec.mos), repr(pred)])
    plot_scatter(res.pred, res.mos, out / "scatter.png", res.logistic,
                 title=f"SRCC {res.srcc:.3f}  PLCC {res.plcc:.3f}")
    print(f"srcc,{res.srcc:.6f}")
    print(f"plcc,{res.plcc:.6f}")
    if res.skipped:
        print(f"skipped,{len(res.skipped)}")
    return EXIT_OK


def cmd_crossval(args, config: Config) -> int:
    from .dataset import DatasetManifest
    from .report import plot_folds
    from .train import cross_validate

    manifest = DatasetManifest.load(_require_file(args.manifest, "manifest"))
    out = _out_dir(args.out)
    res = cross_validate(manifest, config, k=args.folds)
    with (out / "folds.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fold", "test_contents", "srcc", "plcc"])
        for f in res.folds:
            w.writerow([f.fold, ";".join(f.test_contents), repr(f.srcc), repr(f.plcc)])
    plot_folds([f.srcc for f in res.folds], [f.plcc for f in res.folds], out / "folds.png")
    for f in res.folds:
        print(f"{f.fold},{';'.join(f.test_contents)},{f.srcc:.6f},{f.plcc:.6f}")
    print(f"median,,{res.median_srcc:.6f},{res.median_plcc:.6f}")
    return EXIT_OK


def cmd_render(args, config: Config) -> int:
    from .autodiff import no_grad
    from .model import load_prepared
    from .render import make_camera_rig, render_color, render_features, save_projection

    if args.features and not args.weights:
        raise UsageError("--features requires --weights")
    prep = load_prepared(_require_file(args.mesh, "mesh"), config)
    out = _out_dir(args.out)
    rig = make_camera_rig(config.camera_distance, config.camera_fov, config.color_resolution)
    lighting = config.lighting()
    for cam in rig:
        proj = render_color(prep.mesh, cam, lighting, normals=prep.normals)
        save_projection(proj, out / f"view{cam.index}.png", out / f"mask{cam.index}.png")
    if args.features:
        model = _load_model(args.weights, config)
        with no_grad():
            feats = model.graph_features(prep)
            for cam in rig:
                proj = render_features(prep.mesh, cam.with_resolution(config.feature_resolution), feats)
                save_projection(proj, out / f"feature{cam.index}.png")
    print(f"wrote {len(rig)} views to {out}")
    return EXIT_OK


def cmd_verify(args, config: Config) -> int:
    from .verify import run_suite

    ok = True
    for report in run_suite(args.suite):
        print("\n".join(report.lines()))
        ok &= report.passed
    return EXIT_OK if ok else EXIT_VERIFY


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"key = value config file (default: ${CONFIG_ENV})")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config entry")
    common.add_argument("--seed", type=int, help="random seed (overrides config)")
    common.add_argument("--deterministic", action="store_true", help="single-threaded, bit-reproducible run")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="meshqa", description="full-reference quality assessment of colored meshes")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", parents=[common], help="score a distorted mesh against its reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--dis", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--json", action="store_true", help="print {score, patches_per_view} as JSON")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", parents=[common], help="train on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="directory for weights, log CSV and loss curve")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="SRCC / PLCC of trained weights on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True, help="directory for predictions CSV and scatter plot")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("crossval", parents=[common], help="content-disjoint k-fold cross-validation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("render", parents=[common], help="write the six colour views (and feature views)")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--features", action="store_true", help="also write feature projections (needs --weights)")
    p.add_argument("--weights")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("verify", parents=[common], help="run oracle suites")
    p.add_argument("--suite", choices=("grad", "raster", "loss", "all"), default="all")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config(args)
        if config.deterministic:
            with threadpool_limits(limits=1):
                return args.func(args, config)
        return args.func(args, config)
    except (OSError, ValueError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
