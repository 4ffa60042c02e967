"""``repliscope`` command-line front end.

Exit codes: 0 success, 1 computation error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .decay_models import (CompositeModel, DecayFit, GrowthFit, compose, eval_f1,
                           eval_f2, invert_f2)
from .experiment import load_manifest, measure_all
from .intrinsic_dim import DuplicatePolicy, IdConfig, estimate_id, write_per_point_csv
from .predictor import ComboRecord, loocv, one_shot_b, pool_shared_params, write_loocv_csv
from .replication import (DEFAULT_ALPHA, ReplicationPoint, check_alphas, default_alpha_allowed,
                          id_view, report_from_distances, sweep_from_distances,
                          write_montage_manifest, write_report_csv, write_summary_json,
                          write_sweep_csv)
from . import knn
from .vecstore import (PreprocessConfig, SpaceTag, load_image_dir, load_vectors, read_vds,
                       subsample, write_vds)

logger = logging.getLogger("repliscope")

CURVE_SAMPLES = 101


class UsageError(Exception):
    """Bad flag combination; maps to exit code 2."""


@dataclass
class RunResult:
    exit_code: int = 0
    artifacts: list = field(default_factory=list)
    log: list = field(default_factory=list)


def _g6(x) -> str:
    return f"{x:.6g}"


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _write_json(path: Path, payload) -> Path:
    path.write_text(json.dumps(_json_safe(payload), indent=2, allow_nan=False) + "\n")
    return path


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- preprocess -----------------------------------------------------------

def cmd_preprocess(args) -> RunResult:
    res = RunResult()
    src = Path(args.input)
    if src.is_file() and src.suffix == ".npy":
        ds = load_vectors(src, SpaceTag.parse(args.space))
        skipped = []
    elif src.is_dir():
        cfg = PreprocessConfig(args.resolution, min(args.id_resolution, args.resolution),
                               args.zscore, args.channels)
        loaded = load_image_dir(src, cfg, workers=args.threads)
        ds, skipped = loaded.dataset, loaded.skipped
        res.log.extend(loaded.warnings)
        if loaded.stats is not None and args.stats_out:
            res.artifacts.append(_write_json(Path(args.stats_out), loaded.stats.to_dict()))
    else:
        raise FileNotFoundError(f"cannot read input {src}: not a directory or .npy file")
    if args.subsample:
        ds = subsample(ds, args.subsample, args.seed)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    res.artifacts.append(write_vds(ds, out))
    print(f"count: {ds.count}")
    print(f"dim: {ds.dim}")
    print(f"space: {ds.space_tag.label}")
    print(f"skipped: {len(skipped)}")
    return res


# --- id -------------------------------------------------------------------

def cmd_id(args) -> RunResult:
    res = RunResult()
    if args.k1 > args.k2 or args.k1 < 2:
        raise UsageError(f"need 2 <= --k1 <= --k2, got {args.k1} and {args.k2}")
    cfg = IdConfig(args.k1, args.k2, DuplicatePolicy(args.duplicates))
    ds = read_vds(args.vds)
    view = ds if args.full_res else id_view(ds, args.id_resolution)
    est = estimate_id(view, cfg, workers=args.threads)
    res.log.extend(est.warnings)
    print(f"intrinsic_dimension: {est.value!r}")
    print(f"n_used: {est.n_used}")
    print(f"k1: {cfg.k1}  k2: {cfg.k2}  dim: {view.dim}")
    if args.per_point:
        path = Path(args.per_point)
        write_per_point_csv(est, view, path)
        res.artifacts.append(path)
    return res


# --- replication ----------------------------------------------------------

def _parse_sweep(text: str):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
        return check_alphas(values)
    except ValueError as exc:
        raise UsageError(f"--sweep: {exc}") from None


def cmd_replication(args) -> RunResult:
    res = RunResult()
    sweep = _parse_sweep(args.sweep) if args.sweep else None
    if args.alpha is not None and args.alpha < 0:
        raise UsageError("--alpha must be >= 0")
    training = read_vds(args.training)
    generated = read_vds(args.generated)
    alpha = args.alpha
    if alpha is None:
        if not default_alpha_allowed(training):
            raise UsageError(
                f"the default alpha={DEFAULT_ALPHA:g} is calibrated for raw 128x128x3 pixels; "
                f"this data is {training.space_tag.label} with dim {training.dim}, pass --alpha"
            )
        alpha = DEFAULT_ALPHA
    if training.space_tag != generated.space_tag:
        raise ValueError(
            f"training is {training.space_tag.label} but generated is {generated.space_tag.label}; "
            "replication distances must be measured in one space (raw pixels by default)"
        )
    nearest = knn.min_distances(generated, training, workers=args.threads)
    report = report_from_distances(nearest, generated, training, alpha)
    out = _out_dir(args)
    write_summary_json(report, out / "replication_summary.json")
    write_report_csv(report, out / "replication_samples.csv")
    res.artifacts += [out / "replication_summary.json", out / "replication_samples.csv"]
    if args.montage:
        write_montage_manifest(report, out / "montage.json")
        res.artifacts.append(out / "montage.json")
    print(f"alpha: {report.alpha:g}")
    print(f"n_generated: {report.n_generated}")
    print(f"percentage: {report.percentage!r}")
    if sweep is not None:
        result = sweep_from_distances(nearest.distances, sweep)
        write_sweep_csv(result, out / "alpha_sweep.csv")
        res.artifacts.append(out / "alpha_sweep.csv")
        for a, p in result.points:
            print(f"  alpha={a:g}: {p:g}%")
    return res


# --- analyze --------------------------------------------------------------

def _write_points_csv(records, path: Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["combo", "level_size", "mu1", "mu2", "replication_pct"])
        for rec in records:
            for p in rec.points:
                w.writerow([rec.name, p.mu2, _g6(p.mu1), p.mu2, _g6(p.percentage)])


def read_points_csv(path) -> list:
    groups = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            groups.setdefault(row["combo"], []).append(
                ReplicationPoint(float(row["mu1"]), int(row["mu2"]), float(row["replication_pct"]))
            )
    return [ComboRecord(name, pts) for name, pts in groups.items()]


def _write_curve(path: Path, x, y):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y"])
        for a, b in zip(np.asarray(x).tolist(), np.asarray(y).tolist()):
            w.writerow([_g6(a), _g6(b)])


def _measure(args, res: RunResult):
    manifest = load_manifest(args.manifest)
    warnings = []
    records = measure_all(manifest, workers=args.threads, warnings=warnings)
    res.log.extend(warnings)
    return manifest, records


def cmd_analyze(args) -> RunResult:
    res = RunResult()
    manifest, records = _measure(args, res)
    out = _out_dir(args)
    points_path = out / "points.csv"
    _write_points_csv(records, points_path)
    res.artifacts.append(points_path)

    fitted = []
    for rec in records:
        if len(rec.points) < 2:
            res.log.append(f"combo {rec.name!r} has a single level; not fitted")
            fitted.append({"name": rec.name, "fits": []})
            continue
        rec.fitted()
        model = compose(rec.decay, rec.growth, rec.mu2, rec.percent)
        fitted.append({"name": rec.name,
                       "fits": [rec.decay.to_dict(), rec.growth.to_dict(), model.to_dict()]})
        mu = np.linspace(rec.mu1.min(), rec.mu1.max(), CURVE_SAMPLES)
        sizes = np.geomspace(rec.mu2.min(), rec.mu2.max(), CURVE_SAMPLES)
        f1_path = out / f"curve_f1_{_slug(rec.name)}.csv"
        f2_path = out / f"curve_f2_{_slug(rec.name)}.csv"
        _write_curve(f1_path, mu, eval_f1(rec.decay, mu))
        _write_curve(f2_path, sizes, eval_f2(model, sizes))
        res.artifacts += [f1_path, f2_path]
        print(f"{rec.name}: a={rec.decay.a:.6g} b={rec.decay.b:.6g} c={rec.decay.c:.6g} "
              f"R2_f1={rec.decay.r_squared:.4f} R2_g={rec.growth.r_squared:.4f} "
              f"R2_f2={model.r_squared:.4f}")

    payload = {"alpha": manifest.alpha, "k1": manifest.k1, "k2": manifest.k2,
               "id_resolution": manifest.id_resolution, "combos": fitted}
    decays = [r.decay for r in records if r.decay is not None]
    if decays:
        a_bar, c_bar = pool_shared_params(decays)
        payload["shared"] = {"a": a_bar, "c": c_bar}
    res.artifacts.append(_write_json(out / "fits.json", payload))
    return res


# --- predict --------------------------------------------------------------

def _load_fits(path):
    data = json.loads(Path(path).read_text())
    return {c["name"]: {f["model"]: f for f in c["fits"]} for c in data["combos"]}


def _parse_point(text: str):
    try:
        mu1, pct = text.split(":")
        return float(mu1), float(pct)
    except ValueError:
        raise UsageError(f"--point expects MU1:PCT, got {text!r}") from None


def cmd_predict(args) -> RunResult:
    res = RunResult()
    if args.pool_from and (args.shared_a is not None or args.shared_c is not None):
        raise UsageError("--pool-from conflicts with --shared-a/--shared-c")
    if args.pool_from:
        fits = _load_fits(args.pool_from)
        decays = [DecayFit(f["f1"]["a"], f["f1"]["b"], f["f1"]["c"])
                  for name, f in fits.items() if "f1" in f and name not in (args.exclude or [])]
        a, c = pool_shared_params(decays)
    elif args.shared_a is not None and args.shared_c is not None:
        a, c = args.shared_a, args.shared_c
    else:
        raise UsageError("give --shared-a and --shared-c, or --pool-from FITS_JSON")

    if (args.growth_s is None) != (args.growth_beta is None):
        raise UsageError("--growth-s and --growth-beta go together")
    if args.growth_s is not None and args.fits:
        raise UsageError("--fits conflicts with --growth-s/--growth-beta")
    growth = None
    if args.growth_s is not None:
        growth = GrowthFit(args.growth_s, args.growth_beta)
    elif args.fits:
        if not args.combo:
            raise UsageError("--fits needs --combo NAME")
        g = _load_fits(args.fits)[args.combo]["g"]
        growth = GrowthFit(g["s"], g["beta"])
    if growth is None and args.pct_for_id is None:
        raise UsageError("size queries need a growth model (--growth-s/--growth-beta or --fits)")

    mu1, pct = _parse_point(args.point)
    b = one_shot_b(a, c, (mu1, pct))
    decay = DecayFit(a, b, c, n_points=1)
    out = {"a": a, "c": c, "b": b, "point": {"mu1": mu1, "percentage": pct}}
    if growth is not None:
        out.update(s=growth.s, beta=growth.beta)
    if args.pct_for_id is not None:
        out["query"] = {"pct_for_id": args.pct_for_id}
        out["value"] = eval_f1(decay, args.pct_for_id)
    elif args.pct_for_size is not None:
        out["query"] = {"pct_for_size": args.pct_for_size}
        out["value"] = eval_f2(CompositeModel(decay, growth), args.pct_for_size)
    else:
        out["query"] = {"size_for_pct": args.size_for_pct}
        out["value"] = invert_f2(CompositeModel(decay, growth), args.size_for_pct)
    print(f"a: {a!r}  c: {c!r}  b: {b!r}")
    print(f"value: {out['value']!r}")
    res.artifacts.append(_write_json(_out_dir(args) / "prediction.json", out))
    return res


# --- loocv ----------------------------------------------------------------

def cmd_loocv(args) -> RunResult:
    res = RunResult()
    if args.points:
        records = read_points_csv(args.points)
    elif args.manifest:
        _, records = _measure(args, res)
    else:
        raise UsageError("give a manifest or --points CSV")
    reports = loocv(records, args.mode)
    for r in reports:
        res.log.extend(r.warnings)
        print(f"{r.held_out}: R2={r.r_squared:.4f} MAE_f1={r.mae_f1:.4g} "
              f"MAE_f2={r.mae_f2:.4g} MAE_f2inv={r.mae_f2_inv:.4g}")
    path = _out_dir(args) / f"loocv_{reports[0].mode.value}.csv"
    write_loocv_csv(reports, path)
    res.artifacts.append(path)
    return res


# --- parser ---------------------------------------------------------------

def _global_options(parser, suppress: bool):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--threads", type=int, default=default(0),
                        help="worker threads for distance computation (0 = auto)")
    parser.add_argument("--out-dir", default=default("."), help="directory for outputs")
    parser.add_argument("--seed", type=int, default=default(0), help="random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="repliscope",
        description="Measure and predict GAN training-data replication.")
    _global_options(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="images or .npy -> VDS file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--id-resolution", type=int, default=32)
    p.add_argument("--channels", type=int, choices=(1, 3), default=3)
    p.add_argument("--zscore", action="store_true",
                   help="z-score channels (for export; replication uses raw pixels)")
    p.add_argument("--stats-out", help="write channel statistics JSON here")
    p.add_argument("--subsample", type=int, help="keep N randomly chosen rows (uses --seed)")
    p.add_argument("--space", default="external_embedding",
                   choices=[t.label for t in SpaceTag], help="space tag for .npy input")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("id", parents=[common], help="intrinsic dimensionality of a VDS file")
    p.add_argument("vds")
    p.add_argument("--k1", type=int, default=10)
    p.add_argument("--k2", type=int, default=20)
    p.add_argument("--id-resolution", type=int, default=32)
    p.add_argument("--full-res", action="store_true", help="estimate at native resolution")
    p.add_argument("--duplicates", choices=[d.value for d in DuplicatePolicy],
                   default=DuplicatePolicy.DEDUPLICATE_WARN.value)
    p.add_argument("--per-point", help="write per-point m_hat averages to this CSV")
    p.set_defaults(func=cmd_id)

    p = sub.add_parser("replication", parents=[common], help="replication percentage")
    p.add_argument("training")
    p.add_argument("generated")
    p.add_argument("--alpha", type=float)
    p.add_argument("--sweep", help="comma-separated ascending thresholds")
    p.add_argument("--montage", action="store_true", help="write replicated pairs to montage.json")
    p.set_defaults(func=cmd_replication)

    p = sub.add_parser("analyze", parents=[common], help="measure and fit every combo of a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("predict", parents=[common], help="one-shot prediction from a single level")
    p.add_argument("--shared-a", type=float)
    p.add_argument("--shared-c", type=float)
    p.add_argument("--pool-from", help="fits.json from analyze; pools a and c over its combos")
    p.add_argument("--exclude", action="append", help="combo to leave out of --pool-from")
    p.add_argument("--point", required=True, help="MU1:PCT of the smallest measured level")
    p.add_argument("--growth-s", type=float)
    p.add_argument("--growth-beta", type=float)
    p.add_argument("--fits", help="fits.json holding the growth model of --combo")
    p.add_argument("--combo")
    q = p.add_mutually_exclusive_group(required=True)
    q.add_argument("--pct-for-id", type=float, metavar="MU1")
    q.add_argument("--pct-for-size", type=float, metavar="N")
    q.add_argument("--size-for-pct", type=float, metavar="P")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("loocv", parents=[common], help="leave-one-combo-out cross-validation")
    p.add_argument("manifest", nargs="?")
    p.add_argument("--points", help="reuse a points.csv written by analyze")
    p.add_argument("--mode", choices=["one-shot", "two-shot", "full"], default="one-shot")
    p.set_defaults(func=cmd_loocv)

    p = sub.add_parser("version", parents=[common], help="print the version")
    p.set_defaults(func=lambda args: print(__version__) or RunResult())
    return parser


def run(argv=None) -> RunResult:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return RunResult(exit_code=int(exc.code or 0))
    try:
        result = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"repliscope: error: {exc}", file=sys.stderr)
        return RunResult(exit_code=2)
    except (ValueError, OSError, KeyError) as exc:
        print(f"repliscope: error: {exc}", file=sys.stderr)
        return RunResult(exit_code=1)
    for msg in result.log:
        print(f"warning: {msg}", file=sys.stderr)
    return result


def main(argv=None) -> int:
    logging.basicConfig(level=logging.ERROR, format="%(levelname)s: %(message)s")
    return run(argv).exit_code


if __name__ == "__main__":
    sys.exit(main())
