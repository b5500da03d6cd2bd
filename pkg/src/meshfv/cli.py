"""Command line entry point: ``meshfv <subcommand> --config CONFIG.json ...``.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import _io
from .analysis import (
    block_ablation,
    compare_baselines,
    export_codewords,
    fit_raw_dictionary,
    gaussian_energy,
    raw_energy_ranking,
    read_atlas,
)
from .classify import StageError, cross_validate, fold_features, grid_search, train_svm
from .clustering import load_gmm, load_kmeans
from .config import PipelineConfig, derive_seed, parse_override
from .dataio import SynthConfig, generate_synthetic, load_dataset, make_folds, write_dataset
from .errors import ArtifactError, MeshFVError, ValidationError
from .mesh import NeighborhoodSpec, compute_mads, load_madset, save_madset

logger = logging.getLogger("meshfv")


def _version() -> str:
    try:
        return metadata.version("meshfv")
    except metadata.PackageNotFoundError:
        return "unknown"


def provenance(config: PipelineConfig, stage: str) -> dict:
    import scipy
    import sklearn

    return {
        "tool": "meshfv",
        "version": _version(),
        "stage": stage,
        "config_sha256": config.sha256(),
        "seed": config.seed,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "sklearn": sklearn.__version__,
    }


# --------------------------------------------------------------------------
# inputs


def _dataset(args, config: PipelineConfig):
    path = getattr(args, "dataset", None) or config.dataset
    if path:
        return load_dataset(path)
    if config.synth:
        return generate_synthetic(SynthConfig.from_dict(config.synth), seed=derive_seed(config.seed, "synth"))
    raise ValidationError("no dataset: pass --dataset, or set 'dataset' or 'synth' in the config")


def _load_mads(directory) -> list:
    directory = Path(directory)
    index = _io.read_json(directory / "index.json")
    return [load_madset(directory / entry["stem"]) for entry in index["samples"]]


def _spec(config: PipelineConfig) -> NeighborhoodSpec:
    return NeighborhoodSpec(config.p, config.ridge_lambda, config.standardize, config.absolute_correlation)


def _folds(config: PipelineConfig, items):
    return make_folds([s.subject_id for s in items], config.folds, derive_seed(config.seed, "folds"))


def _write_report(out: Path, name: str, report, prov: dict):
    doc = report.to_dict()
    doc["provenance"] = prov
    _io.write_json(out / f"{name}.json", doc)
    hp = report.hyperparameters
    header = _io.csv_json_header(prov)
    row = ",".join(
        str(v)
        for v in (hp.get("p"), hp.get("encoder"), "none" if hp.get("d") is None else hp.get("d"), hp.get("k"),
                  hp.get("svm_C"), f"{report.mean_accuracy:.10g}")
    )
    _io.atomic_write_text(out / f"{name}.csv", f"{header}\np,encoder,d,k,svm_C,mean_accuracy\n{row}\n")
    _io.atomic_write_text(out / f"{name}_confusion.csv", header + "\n" + report.confusion_csv())


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args, config):
    manifest = _dataset(argparse.Namespace(dataset=None), config.replace(dataset=None))
    write_dataset(manifest, args.out, provenance(config, "synth"))
    logger.info("wrote %d samples to %s", len(manifest), args.out)


def cmd_mads(args, config):
    manifest = _dataset(args, config)
    spec = _spec(config)
    out = Path(args.out)
    prov = provenance(config, "mads")
    entries = []
    for s in manifest.samples:
        stem = f"mad_sub-{s.subject_id}_task-{s.task_label}"
        save_madset(compute_mads(s, spec), out / stem, prov)
        entries.append({"subject_id": s.subject_id, "task_label": s.task_label, "stem": stem})
    _io.write_json(
        out / "index.json",
        {"R": manifest.R, "region_names": list(manifest.region_names), "samples": entries, "provenance": prov},
    )
    logger.info("wrote %d MadSets to %s", len(entries), out)


def _features_csv(meta: dict, rows) -> str:
    buf = io.StringIO()
    buf.write(_io.csv_json_header(meta) + "\n")
    for subject_id, label, split, values in rows:
        buf.write(f"{subject_id},{label},{split}," + ",".join(_io.format_float(v) for v in values) + "\n")
    return buf.getvalue()


def _read_features_csv(path):
    meta = _io.read_csv_json_header(path)
    subjects, labels, splits, values = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        fh.readline()
        for row in csv.reader(fh):
            subjects.append(row[0])
            labels.append(int(row[1]))
            splits.append(row[2])
            values.append([float(v) for v in row[3:]])
    return meta, subjects, np.array(labels), np.array(splits), np.array(values)


def cmd_encode(args, config):
    mads = _load_mads(args.mads)
    plan = _folds(config, mads)
    subject_ids = [m.subject_id for m in mads]
    labels = np.array([m.task_label for m in mads])
    out = Path(args.out)
    prov = provenance(config, "encode")
    _io.write_json(out / "folds.json", dict(plan.to_dict(), provenance=prov))
    for fold in range(plan.n_folds):
        enc, tr, te, Xtr, Xte = fold_features(mads, labels, subject_ids, config, plan, fold)
        fold_dir = out / f"fold_{fold:02d}"
        hashes = enc.save(fold_dir, {"fold": fold, "provenance": prov})
        meta = {
            "encoder": config.encoder,
            "K": config.dictionary_k if config.dictionary_kind else None,
            "D": enc.pca.D if enc.pca is not None else mads[0].R,
            "normalized": bool(config.normalize and config.encoder in ("fv", "vlad")),
            "bow_frequencies": config.encoder == "bow",
            "fold": fold,
            "dictionary_file": "dictionary.json" if enc.dictionary is not None else None,
            "dictionary_sha256": hashes.get("dictionary"),
            "pca_file": "pca.json" if enc.pca is not None else None,
            "pca_sha256": hashes.get("pca"),
            "provenance": prov,
        }
        rows = [(subject_ids[i], labels[i], "train", x) for i, x in zip(tr, Xtr)]
        rows += [(subject_ids[i], labels[i], "test", x) for i, x in zip(te, Xte)]
        _io.atomic_write_text(fold_dir / "features.csv", _features_csv(meta, rows))


def _check_fold_models(fold_dir: Path, meta: dict):
    for key in ("dictionary", "pca"):
        name = meta.get(f"{key}_file")
        if not name:
            continue
        path = fold_dir / name
        if not path.exists():
            raise ArtifactError(f"missing {key} artifact: {path}")
        if _io.sha256_file(path) != meta[f"{key}_sha256"]:
            raise ArtifactError(f"{key} artifact {path} does not match the hash recorded in {fold_dir / 'features.csv'}")
    if meta.get("dictionary_file"):
        loader = load_gmm if meta["encoder"] == "fv" else load_kmeans
        loader(fold_dir / meta["dictionary_file"])


def _evaluate_encoded(directory: Path, config: PipelineConfig):
    from .classify import CvReport, _tally

    fold_dirs = sorted(p for p in directory.glob("fold_*") if p.is_dir())
    if not fold_dirs:
        raise ArtifactError(f"no fold_* directories under {directory}")
    accs, counts, classes, hp = [], None, None, None
    for fold_dir in fold_dirs:
        meta, _, labels, splits, X = _read_features_csv(fold_dir / "features.csv")
        _check_fold_models(fold_dir, meta)
        if classes is None:
            classes = sorted(np.unique(labels).tolist())
            counts = np.zeros((len(classes), len(classes)), dtype=int)
        tr, te = splits == "train", splits == "test"
        if not te.any():
            continue
        try:
            pred = train_svm(X[tr], labels[tr], config.svm_C).predict(X[te])
        except MeshFVError as exc:
            raise StageError(meta["fold"], "svm", exc) from exc
        accs.append(100.0 * float(np.mean(pred == labels[te])))
        counts += _tally(classes, labels[te], pred)
        hp = dict(config.hyperparameters(), encoder=meta["encoder"], k=meta["K"])
    plan = _io.read_json(directory / "folds.json")
    return CvReport(accs, counts, classes, hp, plan.get("seed"), len(fold_dirs))


def cmd_evaluate(args, config):
    if args.encoded:
        report = _evaluate_encoded(Path(args.encoded), config)
    else:
        if not args.mads:
            raise ValidationError("evaluate needs --mads or --encoded")
        mads = _load_mads(args.mads)
        report = cross_validate(mads, config, _folds(config, mads))
    _write_report(Path(args.out), "cv_report", report, provenance(config, "evaluate"))
    logger.info("mean accuracy %.2f%%", report.mean_accuracy)


def cmd_grid(args, config):
    manifest = _dataset(args, config)
    plan = _folds(config, manifest.samples)
    result = grid_search(manifest, config, plan)
    out = Path(args.out)
    prov = provenance(config, "grid")
    _io.atomic_write_text(out / "grid.csv", _io.csv_json_header(prov) + "\n" + result.to_csv())
    _io.write_json(out / "grid.json", {"cells": result.cells, "best": result.best(), "provenance": prov})


def cmd_energy(args, config):
    mads = _load_mads(args.mads)
    plan = _folds(config, mads)
    out = Path(args.out)
    prov = provenance(config, "energy")
    subject_ids = [m.subject_id for m in mads]
    labels = np.array([m.task_label for m in mads])
    header = _io.csv_json_header(prov) + "\n"
    for fold in range(plan.n_folds):
        _, _, _, Xtr, _ = fold_features(mads, labels, subject_ids, config, plan, fold)
        ranking = gaussian_energy(Xtr, config.dictionary_k)
        _io.atomic_write_text(out / f"energy_fold_{fold:02d}.csv", header + ranking.to_csv())
    ab = config.ablation or {}
    result = block_ablation(
        mads, config, plan, mode=ab.get("mode", "remove"), which=ab.get("which", "GHE"), m=int(ab.get("m", 1))
    )
    _io.write_json(
        out / "ablation.json",
        {
            "mode": result.mode,
            "which": result.which,
            "m": result.m,
            "chosen_per_fold": result.chosen,
            "baseline": result.baseline.to_dict(),
            "ablated": result.ablated.to_dict(),
            "provenance": prov,
        },
    )
    logger.info(
        "baseline %.2f%%, ablated %.2f%%", result.baseline.mean_accuracy, result.ablated.mean_accuracy
    )


def cmd_export_codewords(args, config):
    index = _io.read_json(Path(args.mads) / "index.json")
    mads = _load_mads(args.mads)
    atlas = args.atlas or config.atlas
    coords = read_atlas(atlas) if atlas else None
    gmm = fit_raw_dictionary(mads, config)
    ranking = raw_energy_ranking(gmm, mads)
    out = Path(args.out)
    prov = provenance(config, "export-codewords")
    export_codewords(gmm, index["region_names"], ranking, out, coords)
    _io.atomic_write_text(out / "energy.csv", _io.csv_json_header(prov) + "\n" + ranking.to_csv())
    _io.write_json(out / "provenance.json", prov)


def cmd_baseline(args, config):
    manifest = _dataset(args, config)
    plan = _folds(config, manifest.samples)
    reports = compare_baselines(manifest, config, plan)
    out = Path(args.out)
    prov = provenance(config, "baseline")
    lines = [_io.csv_json_header(prov), "descriptor,mean_accuracy"]
    lines += [f"{name},{rep.mean_accuracy:.10g}" for name, rep in reports.items()]
    _io.atomic_write_text(out / "baseline.csv", "\n".join(lines) + "\n")
    _io.write_json(out / "baseline.json", {k: v.to_dict() for k, v in reports.items()} | {"provenance": prov})


COMMANDS = {
    "synth": cmd_synth,
    "mads": cmd_mads,
    "encode": cmd_encode,
    "evaluate": cmd_evaluate,
    "grid": cmd_grid,
    "energy": cmd_energy,
    "export-codewords": cmd_export_codewords,
    "baseline": cmd_baseline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshfv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help, dataset=False, mads=False):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", required=True, help="output directory")
        if dataset:
            p.add_argument("--dataset", help="dataset directory (overrides config)")
        if mads:
            p.add_argument("--mads", required=name != "evaluate", help="MadSet directory from 'mads'")
        return p

    add("synth", "generate a synthetic dataset")
    add("mads", "compute and store MadSets", dataset=True)
    add("encode", "fit PCA + dictionary per fold and encode", mads=True)
    ev = add("evaluate", "cross-validated accuracy report", mads=True)
    ev.add_argument("--encoded", help="directory written by 'encode'")
    add("grid", "grid search over p / d / k / encoder", dataset=True)
    add("energy", "per-Gaussian FV energy and block ablation", mads=True)
    ex = add("export-codewords", "write codewords of a dictionary fitted on raw MADs", mads=True)
    ex.add_argument("--atlas", help="CSV with region_name,x,y,z")
    add("baseline", "BOLD vs Pearson vs MAD comparison", dataset=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(name)s: %(message)s")
    out = Path(args.out)
    marker = out / "INCOMPLETE"
    try:
        overrides = dict(parse_override(s) for s in args.set)
        config = PipelineConfig.from_json(args.config, overrides)
        out.mkdir(parents=True, exist_ok=True)
        if marker.exists():
            marker.unlink()
        COMMANDS[args.command](args, config)
    except MeshFVError as exc:
        stage = exc.stage if isinstance(exc, StageError) else args.command
        print(f"meshfv {args.command}: [{stage}] {exc}", file=sys.stderr)
        _mark_incomplete(marker, exc)
        return exc.exit_code
    except OSError as exc:
        print(f"meshfv {args.command}: [io] {exc}", file=sys.stderr)
        _mark_incomplete(marker, exc)
        return ArtifactError.exit_code
    return 0


def _mark_incomplete(marker: Path, exc):
    try:
        if marker.parent.exists():
            marker.write_text(f"{type(exc).__name__}: {exc}\n")
    except OSError:
        pass


if __name__ == "__main__":
    sys.exit(main())
