"""skelterp command line: a reproducible experiment driver.

Subcommands mirror the pipeline: gen -> train / train-refiner ->
finetune -> eval / baseline / sweep / retrieve / plot. Every command
reads one config document (flags override file values), writes
fixed-name outputs under --out, and appends a provenance line per
emitted file to manifest.txt. With --single-thread and a fixed seed,
repeated runs produce byte-identical CSVs.

Exit codes: 0 success, 2 bad config, 3 missing input, 4 training
divergence.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import fit_baseline
from .camera import DepthDomainError, reproject, rodrigues
from .config import ConfigError, load_config, resolve_ranges, resolve_spec
from .datasets import (
    DatasetIntegrityError,
    generate_dataset,
    load_dataset,
    save_dataset,
    to_2d_view,
)
from .interpreter import SkeletonInterpreter, interpreter_from_model
from .metrics import (
    CurveSeries,
    average_error,
    average_recall,
    azimuth_error,
    azimuth_recall_curve,
    geodesic_rotation_angle,
    pck_curve,
    pcp,
    retrieve_nearest,
    rmse_recall_curve,
    rmse_structure,
)
from .mlp import ModelIntegrityError, TrainingError, load_model, save_model
from .refiner import HeatmapRefiner, refiner_from_model

EXIT_OK = 0
EXIT_BAD_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_DIVERGED = 4

DATASET_FILE = "dataset.skelds"
DATASET_TEST_FILE = "dataset-test.skelds"
STAGE2_FILE = "model-stage2.skelmlp"
STAGE3_FILE = "model-stage3.skelmlp"
REFINER_FILE = "model-refiner.skelmlp"
SWEEP_CSV = "sweep.csv"
SWEEP_STRUCTURE_SVG = "sweep-structure.svg"
SWEEP_AZIMUTH_SVG = "sweep-azimuth.svg"
MANIFEST_FILE = "manifest.txt"


def _out_dir(cfg) -> Path:
    path = Path(cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _note_outputs(out: Path, cfg, command: str, names) -> None:
    """One manifest line per emitted file; content is run-deterministic."""
    with open(out / MANIFEST_FILE, "a", encoding="utf-8", newline="\n") as fh:
        for name in names:
            fh.write(
                f"{name}\tcommand={command} config={cfg.digest()} "
                f"seed={cfg.seed} version={__version__}\n"
            )


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; {hint}")
    return path


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _g(value: float) -> str:
    return f"{float(value):.10g}"


def _load_predictor(cfg, out: Path):
    """The stage-III model when present, otherwise stage II."""
    spec = resolve_spec(cfg)
    path = out / STAGE3_FILE
    if not path.exists():
        path = _require(out / STAGE2_FILE, "run `skelterp train` first")
    return interpreter_from_model(load_model(path), spec), path.name


def _test_count(cfg, ds) -> int:
    return min(len(ds), cfg.dataset.test_count)


def cmd_gen(cfg, args) -> int:
    spec = resolve_spec(cfg)
    ranges = resolve_ranges(cfg, spec)
    out = _out_dir(cfg)
    train = generate_dataset(
        spec, ranges, cfg.dataset.train_count, seed=cfg.seed, sigma=cfg.dataset.sigma
    )
    test = generate_dataset(
        spec, ranges, cfg.dataset.test_count, seed=cfg.seed + 1, sigma=cfg.dataset.sigma
    )
    save_dataset(train, out / DATASET_FILE, store_heatmaps=cfg.dataset.store_heatmaps)
    save_dataset(test, out / DATASET_TEST_FILE, store_heatmaps=cfg.dataset.store_heatmaps)
    _note_outputs(out, cfg, "gen", [DATASET_FILE, DATASET_TEST_FILE])
    print(f"wrote {len(train)} train + {len(test)} test records under {out}")
    return EXIT_OK


def cmd_train(cfg, args) -> int:
    out = _out_dir(cfg)
    ds = load_dataset(_require(out / DATASET_FILE, "run `skelterp gen` first"))
    tr = cfg.train
    est = SkeletonInterpreter(
        hidden_widths=tr.hidden_widths,
        epochs=tr.epochs,
        batch_size=tr.batch_size,
        lr=tr.lr,
        noise_levels=tr.noise_levels,
        val_fraction=tr.val_fraction,
        seed=cfg.seed,
    )
    est.fit(ds)
    save_model(est.model_, out / STAGE2_FILE)
    _write_csv(
        out / "train-trace.csv",
        ["epoch", "train_loss", "val_loss"],
        [[r["epoch"], _g(r["train_loss"]), _g(r["val_loss"])] for r in est.loss_trace_],
    )
    _note_outputs(out, cfg, "train", [STAGE2_FILE, "train-trace.csv"])
    print(f"stage-II best val loss {est.model_.meta['val_loss']:.6f} -> {STAGE2_FILE}")
    return EXIT_OK


def cmd_finetune(cfg, args) -> int:
    out = _out_dir(cfg)
    spec = resolve_spec(cfg)
    ranges = resolve_ranges(cfg, spec)
    model = load_model(_require(out / STAGE2_FILE, "run `skelterp train` first"))
    est = interpreter_from_model(model, spec)
    est.set_params(finetune_epochs=cfg.finetune.epochs, finetune_lr=cfg.finetune.lr)
    shifted = generate_dataset(
        spec,
        ranges,
        cfg.finetune.count,
        seed=cfg.seed + 2,
        sigma=cfg.dataset.sigma,
        perturbation=cfg.finetune.perturbation,
    )
    report = est.finetune(to_2d_view(shifted))
    save_model(est.model_, out / STAGE3_FILE)
    _write_csv(
        out / "finetune-trace.csv",
        ["epoch", "train_loss", "val_error"],
        [[r["epoch"], _g(r["train_loss"]), _g(r["val_error"])] for r in report["trace"]],
    )
    _note_outputs(out, cfg, "finetune", [STAGE3_FILE, "finetune-trace.csv"])
    print(
        "held-out mean reprojection error: "
        f"before {report['before']['mean_error']:.6f} "
        f"after {report['after']['mean_error']:.6f} "
        f"({report['val_size']} samples) -> {STAGE3_FILE}"
    )
    return EXIT_OK


def cmd_train_refiner(cfg, args) -> int:
    out = _out_dir(cfg)
    ds = load_dataset(_require(out / DATASET_FILE, "run `skelterp gen` first"))
    rf = cfg.refiner
    ref = HeatmapRefiner(
        hidden_widths=rf.hidden_widths,
        noise_levels=rf.noise_levels,
        epochs=rf.epochs,
        batch_size=rf.batch_size,
        lr=rf.lr,
        seed=cfg.seed,
    )
    ref.fit(ds)
    save_model(ref.model_, out / REFINER_FILE)
    _write_csv(
        out / "refiner-trace.csv",
        ["epoch", "train_loss", "val_loss"],
        [[r["epoch"], _g(r["train_loss"]), _g(r["val_loss"])] for r in ref.loss_trace_],
    )
    _note_outputs(out, cfg, "train-refiner", [REFINER_FILE, "refiner-trace.csv"])
    print(f"refiner best val loss {ref.model_.meta['val_loss']:.6f} -> {REFINER_FILE}")
    return EXIT_OK


def cmd_eval(cfg, args) -> int:
    out = _out_dir(cfg)
    ds = load_dataset(_require(out / DATASET_TEST_FILE, "run `skelterp gen` first"))
    est, model_name = _load_predictor(cfg, out)
    geom = ds.geometry
    n = _test_count(cfg, ds)

    preds2d, gts2d, masks, normalizers = [], [], [], []
    rmses, az_errors = [], []
    violations = 0
    for i in range(n):
        rec = ds.records[i]
        hm = ds.heatmaps_for(i)
        alpha, pose = est.predict_params(hm)
        rmses.append(rmse_structure(ds.spec, alpha, rec.alpha))
        az_errors.append(azimuth_error(pose, rec.pose))
        try:
            x_pred = reproject(ds.spec, alpha, pose)
        except DepthDomainError:
            violations += 1
            continue
        preds2d.append(x_pred)
        gts2d.append(rec.x)
        masks.append(rec.visible)
        span = rec.x[:, rec.visible].max(axis=1) - rec.x[:, rec.visible].min(axis=1)
        normalizers.append(float(np.hypot(*span)))

    pck_grid = tuple(
        round(float(v), 4) for v in np.linspace(0.02, cfg.metrics.pck_radius, 10)
    )
    curves = [
        pck_curve(preds2d, gts2d, normalizers, pck_grid, mask=masks),
        rmse_recall_curve(rmses, cfg.metrics.rmse_thresholds),
        azimuth_recall_curve(az_errors, cfg.metrics.azimuth_deltas),
    ]
    curves[0] = CurveSeries(curves[0].thresholds, curves[0].values, "pck")
    curves[1] = CurveSeries(curves[1].thresholds, curves[1].values, "rmse_recall")
    curves[2] = CurveSeries(curves[2].thresholds, curves[2].values, "azimuth_recall")
    tol = ds.sigma * geom.cell_size
    pcp_vals = [
        pcp(p, g, np.full(ds.spec.n_keypoints, tol), mask=m)
        for p, g, m in zip(preds2d, gts2d, masks)
    ]
    ae_vals = [
        average_error(p, g, bound=cfg.metrics.ae_bound, cell_size=geom.cell_size, mask=m)
        for p, g, m in zip(preds2d, gts2d, masks)
    ]
    rows = []
    for c in curves:
        for t, v in zip(c.thresholds, c.values):
            rows.append([_g(t), _g(v), c.label])
    _write_csv(out / "eval.csv", ["threshold", "value", "label"], rows)

    summary = [
        f"model: {model_name}",
        f"instances: {n}",
        f"mean PCP (tol {tol:.4g}): {float(np.mean(pcp_vals)):.6f}",
        f"mean AE (bound {cfg.metrics.ae_bound:g} cells): {float(np.mean(ae_vals)):.6f}",
        f"structure average recall: {average_recall(curves[1]):.6f}",
        f"azimuth average recall: {average_recall(curves[2]):.6f}",
        f"domain violations: {violations}/{n}",
    ]
    (out / "eval.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    _note_outputs(out, cfg, "eval", ["eval.csv", "eval.txt"])
    print("\n".join(summary))
    return EXIT_OK


def cmd_baseline(cfg, args) -> int:
    out = _out_dir(cfg)
    ds = load_dataset(_require(out / DATASET_TEST_FILE, "run `skelterp gen` first"))
    n = _test_count(cfg, ds)
    rows = []
    errs = []
    for i in range(n):
        rec = ds.records[i]
        fit = fit_baseline(ds.heatmaps_for(i), ds.spec, visibility=rec.visible)
        err = rmse_structure(ds.spec, fit.alpha, rec.alpha)
        errs.append(err)
        rows.append(
            [i, _g(err), _g(fit.residual), fit.iterations, int(fit.converged)]
        )
    _write_csv(
        out / "baseline.csv",
        ["index", "rmse", "residual", "iterations", "converged"],
        rows,
    )
    _note_outputs(out, cfg, "baseline", ["baseline.csv"])
    # decode quantization bounds accuracy here; exact-keypoint fits are
    # far tighter (see refine_perspective)
    print(
        f"baseline on {n} clean decoded instances: median RMSE "
        f"{float(np.median(errs)):.4f}, p90 {float(np.percentile(errs, 90)):.4f} "
        "-> baseline.csv"
    )
    return EXIT_OK


def _sweep_rng(seed: int, level_index: int, record_index: int):
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(7, level_index, record_index))
    )


def cmd_sweep(cfg, args) -> int:
    out = _out_dir(cfg)
    ds = load_dataset(_require(out / DATASET_TEST_FILE, "run `skelterp gen` first"))
    est, model_name = _load_predictor(cfg, out)
    n = _test_count(cfg, ds)
    rows = []
    print(f"sweep of {n} instances with {model_name}")
    for li, level in enumerate(cfg.sweep.noise_levels):
        level = float(level)
        results = {"interpreter": ([], []), "baseline": ([], [])}
        for i in range(n):
            rec = ds.records[i]
            hm = ds.heatmaps_for(i, noise_level=level, rng=_sweep_rng(cfg.seed, li, i))
            alpha, pose = est.predict_params(hm)
            results["interpreter"][0].append(rmse_structure(ds.spec, alpha, rec.alpha))
            results["interpreter"][1].append(azimuth_error(pose, rec.pose))
            fit = fit_baseline(hm, ds.spec, visibility=rec.visible)
            results["baseline"][0].append(rmse_structure(ds.spec, fit.alpha, rec.alpha))
            results["baseline"][1].append(azimuth_error(fit.pose, rec.pose))
        for method in ("interpreter", "baseline"):
            rmses, az = results[method]
            structure = rmse_recall_curve(rmses, cfg.metrics.rmse_thresholds)
            azimuth = azimuth_recall_curve(az, cfg.metrics.azimuth_deltas)
            for curve, metric in ((structure, "structure_recall"), (azimuth, "azimuth_recall")):
                for t, v in zip(curve.thresholds, curve.values):
                    rows.append([_g(level), method, metric, _g(t), _g(v)])
            print(
                f"  level {level:g} {method}: structure AR "
                f"{average_recall(structure):.4f}, azimuth AR {average_recall(azimuth):.4f}"
            )
    _write_csv(
        out / SWEEP_CSV, ["noise_level", "method", "metric", "threshold", "value"], rows
    )
    _plot_sweep(out)
    _note_outputs(out, cfg, "sweep", [SWEEP_CSV, SWEEP_STRUCTURE_SVG, SWEEP_AZIMUTH_SVG])
    return EXIT_OK


def _plot_sweep(out: Path) -> None:
    """Render the two sweep charts purely from sweep.csv."""
    from .svgplot import line_chart

    per_metric: dict = {}
    with open(out / SWEEP_CSV, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["metric"], row["method"])
            per_metric.setdefault(key, {}).setdefault(
                float(row["noise_level"]), []
            ).append(float(row["value"]))
    charts = [
        ("structure_recall", SWEEP_STRUCTURE_SVG, "3D structure accuracy vs noise",
         "average structure recall"),
        ("azimuth_recall", SWEEP_AZIMUTH_SVG, "Viewpoint accuracy vs noise",
         "average azimuth recall"),
    ]
    for metric, name, title, y_label in charts:
        series = []
        for method in ("interpreter", "baseline"):
            levels = per_metric.get((metric, method), {})
            if not levels:
                continue
            xs = sorted(levels)
            ys = [float(np.mean(levels[x])) for x in xs]
            series.append((method, xs, ys))
        if series:
            line_chart(out / name, series, title, "salt-and-pepper noise level", y_label)


def cmd_plot(cfg, args) -> int:
    out = _out_dir(cfg)
    _require(out / SWEEP_CSV, "run `skelterp sweep` first")
    _plot_sweep(out)
    _note_outputs(out, cfg, "plot", [SWEEP_STRUCTURE_SVG, SWEEP_AZIMUTH_SVG])
    print(f"re-plotted {SWEEP_STRUCTURE_SVG} and {SWEEP_AZIMUTH_SVG} from {SWEEP_CSV}")
    return EXIT_OK


def cmd_retrieve(cfg, args) -> int:
    out = _out_dir(cfg)
    ds = load_dataset(_require(out / DATASET_TEST_FILE, "run `skelterp gen` first"))
    est, model_name = _load_predictor(cfg, out)
    n = _test_count(cfg, ds)
    alphas, rotations = [], []
    for i in range(n):
        alpha, pose = est.predict_params(ds.heatmaps_for(i))
        alphas.append(alpha)
        rotations.append(rodrigues(pose.omega))
    alphas = np.stack(alphas)
    k = min(5, n)
    n_queries = min(10, n)
    rows = []
    for q in range(n_queries):
        ranked = retrieve_nearest(alphas[q], alphas, "by-structure", k=k)
        for rank, j in enumerate(ranked, start=1):
            dist = float(np.linalg.norm(alphas[q] - alphas[j]))
            rows.append(["by-structure", q, rank, int(j), _g(dist)])
        ranked = retrieve_nearest(rotations[q], rotations, "by-viewpoint", k=k)
        for rank, j in enumerate(ranked, start=1):
            dist = geodesic_rotation_angle(rotations[q], rotations[j])
            rows.append(["by-viewpoint", q, rank, int(j), _g(dist)])
    _write_csv(
        out / "retrieve.csv", ["mode", "query", "rank", "index", "distance"], rows
    )
    _note_outputs(out, cfg, "retrieve", ["retrieve.csv"])
    print(f"top-{k} neighbors for {n_queries} queries ({model_name}) -> retrieve.csv")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "train-refiner": cmd_train_refiner,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "sweep": cmd_sweep,
    "retrieve": cmd_retrieve,
    "plot": cmd_plot,
}


def _parse_levels(text: str):
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad noise level list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skelterp",
        description="Synthetic 3D-skeleton interpretation experiments.",
    )
    parser.add_argument("--version", action="version", version=f"skelterp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "generate the train/test corpora",
        "train": "stage-II training of the interpreter",
        "finetune": "stage-III fine-tuning through the projection layer",
        "train-refiner": "train the heatmap-denoising autoencoder",
        "eval": "metric report for the trained model on the clean test set",
        "baseline": "analytic fit on the clean test set",
        "sweep": "noise sweep comparing interpreter vs baseline",
        "retrieve": "nearest-neighbor retrieval demo",
        "plot": "re-render sweep charts from sweep.csv",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", metavar="PATH", help="experiment TOML document")
        p.add_argument("--seed", type=int, metavar="N", help="master seed override")
        p.add_argument("--out", metavar="DIR", help="output directory override")
        p.add_argument(
            "--single-thread",
            action="store_true",
            help="force serial BLAS execution for bit-exact reruns",
        )
        p.add_argument(
            "--count", type=int, metavar="N",
            help="smoke-scale override: N train samples, N//10 test samples",
        )
        p.add_argument(
            "--noise-levels", type=_parse_levels, metavar="a,b,c",
            help="sweep noise levels override",
        )
    return parser


@contextlib.contextmanager
def _thread_limit(single: bool):
    if not single:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(
            args.config,
            overrides={
                "seed": args.seed,
                "out": args.out,
                "count": args.count,
                "noise_levels": args.noise_levels,
            },
        )
        with _thread_limit(args.single_thread):
            return COMMANDS[args.command](cfg, args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (DatasetIntegrityError, ModelIntegrityError) as exc:
        print(f"error: corrupt input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG


if __name__ == "__main__":
    sys.exit(main())
