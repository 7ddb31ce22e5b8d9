"""churnforge command line: generate, featurize, select, train, score,
evaluate, or run the whole pipeline.

Every stage writes a manifest (config hash, seed, input hashes, output
hashes) next to its artifacts; reruns with identical config and inputs
produce byte-identical manifests at any worker count.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import cdr as cdr_mod
from . import features as feat_mod
from . import labeling as label_mod
from . import matrix as matrix_mod
from . import metrics as metrics_mod
from . import models as models_mod
from . import selection as select_mod
from . import simgen as simgen_mod
from .config import PipelineConfig
from .features import ConfigError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

STAGES = ("generate", "featurize", "select", "train", "score", "evaluate")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            block = fh.read(1 << 20)
            if not block:
                break
            h.update(block)
    return h.hexdigest()


def _write_manifest(stage: str, cfg: PipelineConfig, out: Path,
                    inputs: list[Path], outputs: list[Path]) -> None:
    manifest = {
        "stage": stage,
        "config_sha256": hashlib.sha256(cfg.canonical().encode()).hexdigest(),
        "seed": cfg.seed,
        "inputs": {p.name: _sha256(p) for p in inputs},
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    path = out / f"manifest_{stage}.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing {path.name}: run `{hint}` first "
                                f"or point the config at existing data")
    return path


def _cdr_paths(cfg: PipelineConfig, out: Path) -> tuple[Path, Path]:
    cdr = Path(cfg._get("data.cdr")) if cfg._get("data.cdr") else out / "cdr.csv"
    header = Path(cfg._get("data.header")) if cfg._get("data.header") \
        else out / "cdr.header"
    return cdr, header


def stage_generate(cfg: PipelineConfig, out: Path) -> None:
    window = cfg.window()
    sim = simgen_mod.SimConfig(
        n_subscribers=cfg._get("simgen.n_subscribers"),
        window=window,
        target_churn_fraction=cfg._get("simgen.target_churn_fraction"),
        daily_call_rate=cfg._get("simgen.daily_call_rate"),
        daily_sms_rate=cfg._get("simgen.daily_sms_rate"),
        alter_pool_size=cfg._get("simgen.alter_pool_size"),
        churn_decay_days=cfg._get("simgen.churn_decay_days"),
        competitor_signal_strength=cfg._get("simgen.competitor_signal_strength"),
        seed=cfg.seed)
    cdr_path = out / "cdr.csv"
    truth_path = out / "ground_truth.csv"
    header_path = out / "cdr.header"
    stats = simgen_mod.generate(sim, str(cdr_path), str(truth_path))
    cdr_mod.write_header_sidecar(window, str(header_path))
    print(f"generate: {stats['rows']} rows, {stats['subscribers']} subscribers, "
          f"churn fraction {stats['churn_fraction']:.4f}")
    _write_manifest("generate", cfg, out, [],
                    [cdr_path, header_path, truth_path])


def stage_featurize(cfg: PipelineConfig, out: Path) -> None:
    cdr_path, header_path = _cdr_paths(cfg, out)
    _require(cdr_path, "churnforge generate")
    _require(header_path, "churnforge generate")
    window = cdr_mod.read_header_sidecar(str(header_path))
    store = cdr_mod.ingest(str(cdr_path), window)
    if store.rejected:
        print(f"featurize: rejected {len(store.rejected)} malformed rows "
              f"(first: line {store.rejected[0].line_no}, "
              f"{store.rejected[0].reason})")
    axes = cfg.axes()
    specs = feat_mod.enumerate_features(axes, cfg.denominators())
    mat = feat_mod.compute_matrix(store, specs, axes, workers=cfg.workers)
    mat.check_finite()

    fmt = cfg._get("features.matrix_format")
    matrix_path = out / ("matrix.cfm" if fmt == "binary" else "matrix.csv")
    matrix_mod.save(mat, str(matrix_path), fmt)
    features_path = out / "features.txt"
    features_path.write_text("".join(n + "\n" for n in mat.feature_names),
                             encoding="utf-8")
    train_range, eval_range = label_mod.split_windows(window)
    labels = label_mod.compute_labels(store, eval_range)
    labels_path = out / "labels.csv"
    label_mod.write_labels(labels, str(labels_path))
    print(f"featurize: {mat.shape[0]} subscribers x {mat.shape[1]} features "
          f"(train days {train_range}, eval days {eval_range})")
    _write_manifest("featurize", cfg, out, [cdr_path, header_path],
                    [matrix_path, features_path, labels_path])


def _load_matrix(cfg: PipelineConfig, out: Path) -> matrix_mod.FeatureMatrix:
    fmt = cfg._get("features.matrix_format")
    path = out / ("matrix.cfm" if fmt == "binary" else "matrix.csv")
    _require(path, "churnforge featurize")
    return matrix_mod.load(str(path))


def stage_select(cfg: PipelineConfig, out: Path) -> None:
    mat = _load_matrix(cfg, out)
    labels = label_mod.read_labels(str(_require(out / "labels.csv",
                                                "churnforge featurize")))
    tt = select_mod.univariate_ttest(mat, labels)
    r2 = select_mod.univariate_r2(mat, labels)
    k = cfg._get("selection.k")
    tree = select_mod.tree_select(
        mat, labels, n_trees=cfg._get("selection.n_trees"), k=k,
        seed=cfg.seed, max_depth=cfg._get("selection.max_depth"))
    outputs = []
    for name, ranking in (("rank_ttest.csv", tt), ("rank_r2.csv", r2),
                          ("rank_tree.csv", tree)):
        select_mod.write_ranking(ranking, str(out / name))
        outputs.append(out / name)
    selected_path = out / "selected_features.txt"
    selected_path.write_text("".join(n + "\n" for n in tree.names()),
                             encoding="utf-8")
    outputs.append(selected_path)
    fmt = cfg._get("features.matrix_format")
    matrix_path = out / ("matrix.cfm" if fmt == "binary" else "matrix.csv")
    print(f"select: top {k} of {len(mat.feature_names)} features by "
          f"tree importance; best univariate r2 = "
          f"{r2.entries[0].name} ({r2.entries[0].score:.3f})")
    _write_manifest("select", cfg, out, [matrix_path, out / "labels.csv"],
                    outputs)


def _selected_matrix(cfg: PipelineConfig, out: Path):
    mat = _load_matrix(cfg, out)
    selected = _require(out / "selected_features.txt", "churnforge select")
    names = [line for line in
             selected.read_text(encoding="utf-8").splitlines() if line]
    return mat.select(names), selected


def stage_train(cfg: PipelineConfig, out: Path) -> None:
    sub, selected_path = _selected_matrix(cfg, out)
    labels = label_mod.read_labels(str(_require(out / "labels.csv",
                                                "churnforge featurize")))
    folds = cfg._get("cv.folds")
    threshold = cfg._get("evaluate.threshold")
    outputs = []
    for family in cfg.roster():
        spec = models_mod.ModelSpec(family=family,
                                    params=cfg.model_params(family),
                                    seed=cfg.seed)
        report = models_mod.kfold_cv(spec, sub, labels, k=folds,
                                     seed=cfg.seed, threshold=threshold)
        cv_path = out / f"cv_{family}.json"
        with open(cv_path, "w", encoding="utf-8") as fh:
            json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        model = models_mod.train(spec, sub, labels, target="binary")
        model_path = out / f"model_{family}.cfmd"
        models_mod.save_model(model, str(model_path))
        outputs.extend([cv_path, model_path])
        print(f"train: {family} cv accuracy {report.mean_accuracy:.4f} "
              f"auc {report.mean_auc:.4f}")
    _write_manifest("train", cfg, out, [selected_path, out / "labels.csv"],
                    outputs)


def stage_score(cfg: PipelineConfig, out: Path) -> None:
    sub, selected_path = _selected_matrix(cfg, out)
    inputs = [selected_path]
    outputs = []
    for family in cfg.roster():
        model_path = _require(out / f"model_{family}.cfmd", "churnforge train")
        model = models_mod.load_model(str(model_path))
        scores = models_mod.predict_scores(model, sub)
        scores_path = out / f"scores_{family}.csv"
        models_mod.write_scores(sub.ego_ids, scores, str(scores_path))
        inputs.append(model_path)
        outputs.append(scores_path)
    print(f"score: wrote churn scores for {len(outputs)} models")
    _write_manifest("score", cfg, out, inputs, outputs)


def stage_evaluate(cfg: PipelineConfig, out: Path) -> None:
    labels = label_mod.read_labels(str(_require(out / "labels.csv",
                                                "churnforge featurize")))
    mat = _load_matrix(cfg, out)
    threshold = cfg._get("evaluate.threshold")
    bins = cfg._get("evaluate.bins")

    churn_rate = float(np.mean(labels.churned))
    majority_accuracy = max(churn_rate, 1.0 - churn_rate)
    baseline = models_mod.threshold_baseline(mat.column("inactivity.full"),
                                             labels)
    report = {
        "majority_accuracy": majority_accuracy,
        "churn_rate": churn_rate,
        "baseline": {"model": "baseline", "threshold": baseline.threshold,
                     "accuracy": baseline.accuracy},
        "models": [],
    }
    inputs = [out / "labels.csv"]
    outputs = []
    for family in cfg.roster():
        scores_path = _require(out / f"scores_{family}.csv", "churnforge score")
        egos, scores = models_mod.read_scores(str(scores_path))
        if egos != labels.ego_ids:
            raise ValueError(f"{scores_path.name} egos do not match labels")
        rep = metrics_mod.classification_metrics(scores, labels, threshold)
        curve, auc = metrics_mod.roc_auc(scores, labels)
        roc_path = out / f"roc_{family}.csv"
        metrics_mod.write_roc_csv(curve, str(roc_path))
        # score read as predicted inactive-day fraction vs the realized one
        err_hist, _ = metrics_mod.error_distribution(
            scores, labels.pct_inactive_eval, bins)
        err_path = out / f"error_hist_{family}.csv"
        metrics_mod.write_histogram_csv(err_hist, str(err_path))
        outputs.append(err_path)
        row = {"model": family, "auc": auc, **rep.as_dict()}
        cv_path = out / f"cv_{family}.json"
        if cv_path.exists():
            with open(cv_path, "r", encoding="utf-8") as fh:
                row["cv_mean"] = json.load(fh)["mean"]
            inputs.append(cv_path)
        report["models"].append(row)
        inputs.append(scores_path)
        outputs.append(roc_path)
    hist = metrics_mod.inactivity_distribution(labels, bins)
    hist_path = out / "inactivity_hist.csv"
    metrics_mod.write_histogram_csv(hist, str(hist_path))
    outputs.append(hist_path)
    report_path = out / "report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs.append(report_path)
    print(f"evaluate: majority {majority_accuracy:.4f}, "
          f"baseline {baseline.accuracy:.4f} @ {baseline.threshold:.4f}, "
          f"{len(report['models'])} model rows")
    _write_manifest("evaluate", cfg, out, inputs, outputs)


_STAGE_FN = {
    "generate": stage_generate,
    "featurize": stage_featurize,
    "select": stage_select,
    "train": stage_train,
    "score": stage_score,
    "evaluate": stage_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="churnforge",
        description="churn scoring pipeline over call detail records")
    parser.add_argument("subcommand", choices=STAGES + ("pipeline",))
    parser.add_argument("--config", required=True, help="key=value config file")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK

    try:
        cfg = PipelineConfig.from_file(args.config)
        if args.seed is not None:
            cfg.override("seed", args.seed)
        workers = args.workers
        if workers is None and os.environ.get("CHURNFORGE_WORKERS"):
            workers = int(os.environ["CHURNFORGE_WORKERS"])
        if workers is not None:
            cfg.override("workers", workers)
        out = Path(args.out) if args.out else Path(cfg.raw.get("out_dir", "out"))
        out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    stages = list(STAGES) if args.subcommand == "pipeline" else [args.subcommand]
    try:
        for stage in stages:
            _STAGE_FN[stage](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (cdr_mod.CdrFormatError, FileNotFoundError, KeyError,
            ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - invariant violations
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
