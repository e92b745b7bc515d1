"""Command-line interface.

Every subcommand reads one JSON configuration file (schema version 1) and
accepts a few flag overrides; flags win over the file. All randomness comes
from the single seed. Each output file starts with an echo of the effective
configuration.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from gicaps import __version__, gmr
from gicaps.baselines import BaselineConfig
from gicaps.dataset import (
    DatasetError,
    GaussianBlobSpec,
    drop_singletons,
    generate_gmm_data,
    generate_shell_data,
    load_csv,
    normalize_minmax,
    preset_specs,
    write_csv,
)
from gicaps.evaluate import (
    ClassifierSpec,
    margin_study,
    report_json,
    report_table,
    run_cv,
)
from gicaps.oversample import OversampleConfig
from gicaps.resample import METHODS, ResampleSpec, resample
from gicaps.undersample import UndersampleConfig

log = logging.getLogger("gicaps")

CONFIG_VERSION = 1

# which configuration blocks a method needs
REQUIRED_BLOCKS = {
    "gicaps": ("undersample", "oversample"),
    "gicaps-o": ("oversample",),
    "gicaps-u": ("undersample",),
    "smote": ("baseline",),
    "adasyn": ("baseline",),
    "ros": (),
    "rus": (),
    "none": (),
}

_UNDERSAMPLE_KEYS = {f.name for f in dataclasses.fields(UndersampleConfig)} - {"n_target"}
_OVERSAMPLE_KEYS = {f.name for f in dataclasses.fields(OversampleConfig)}
_BASELINE_KEYS = {f.name for f in dataclasses.fields(BaselineConfig)}
_GMR_KEYS = {f.name for f in dataclasses.fields(ClassifierSpec)}
_MARGIN_KEYS = {"minority", "other", "n_new", "n_pca", "methods"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config


def _check_keys(block: dict, allowed: set, where: str):
    unknown = set(block) - allowed
    if unknown:
        raise UsageError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def load_config(args, require_seed: bool = True) -> dict:
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
    version = cfg.setdefault("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise UsageError(f"unsupported config version {version!r}")
    for flag in ("seed", "method", "out", "jobs"):
        val = getattr(args, flag, None)
        if val is not None:
            cfg[flag] = val
    if "seed" not in cfg and not require_seed:
        cfg["seed"] = 0
    if "seed" not in cfg:
        raise UsageError("a seed is required (config key 'seed' or --seed)")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise UsageError("seed must be an integer")
    cfg.setdefault("out", "out")
    cfg.setdefault("jobs", 1)
    return cfg


def _echo(cfg: dict) -> str:
    return json.dumps({k: v for k, v in cfg.items() if k not in ("out", "jobs")}, sort_keys=True)


def _header_lines(cfg: dict, what: str):
    return [f"gicaps {__version__} {what}", f"config {_echo(cfg)}"]


def dataset_from_config(cfg: dict):
    block = cfg.get("dataset")
    if isinstance(block, str):
        block = cfg["dataset"] = {"csv": block}
    if not isinstance(block, dict):
        raise UsageError("config needs a 'dataset' object")
    if "csv" in block:
        ds = load_csv(block["csv"], str(block.get("label_column", "-1")), bool(block.get("has_header", True)))
    elif block.get("preset") == "shell":
        try:
            ds = generate_shell_data(derive_data_seed(cfg), **block.get("params", {}))
        except (DatasetError, TypeError) as exc:
            raise UsageError(str(exc)) from exc
    elif "preset" in block:
        try:
            specs = preset_specs(block["preset"], **block.get("params", {}))
        except (DatasetError, ValueError, TypeError) as exc:
            raise UsageError(str(exc)) from exc
        ds = generate_gmm_data(specs, derive_data_seed(cfg))
    elif "blobs" in block:
        try:
            specs = [GaussianBlobSpec.from_dict(b) for b in block["blobs"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"bad blob spec: {exc}") from exc
        ds = generate_gmm_data(specs, derive_data_seed(cfg))
    else:
        raise UsageError("dataset needs one of 'csv', 'preset' or 'blobs'")
    return ds


def derive_data_seed(cfg: dict) -> int:
    return int(cfg["dataset"].get("seed", cfg["seed"]))


def prepared_dataset(cfg: dict):
    ds = dataset_from_config(cfg)
    if cfg.get("drop_singletons", True):
        ds, _ = drop_singletons(ds)
    if cfg.get("normalize", True):
        ds, _ = normalize_minmax(ds)
    return ds


def spec_for(cfg: dict, method: str) -> ResampleSpec:
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    for block in REQUIRED_BLOCKS[method]:
        if not isinstance(cfg.get(block), dict):
            raise UsageError(f"method {method!r} needs a '{block}' configuration block")
    under = dict(cfg.get("undersample", {}))
    n_target = under.pop("n_target", None)
    if method in ("gicaps", "gicaps-u") and n_target is None:
        raise UsageError(f"method {method!r} needs undersample.n_target")
    _check_keys(under, _UNDERSAMPLE_KEYS, "undersample")
    try:
        UndersampleConfig(n_target=1, **under)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"undersample: {exc}") from exc
    over = dict(cfg.get("oversample", {}))
    _check_keys(over, _OVERSAMPLE_KEYS, "oversample")
    if "h_target" in over:
        over["h_target"] = {int(k): int(v) for k, v in over["h_target"].items()}
    base = dict(cfg.get("baseline", {}))
    _check_keys(base, _BASELINE_KEYS, "baseline")
    if method in ("ros", "rus"):
        n_target = cfg.get(method, {}).get("target")
    try:
        return ResampleSpec(method, n_target, under, OversampleConfig(**over), BaselineConfig(**base))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def classifier_for(cfg: dict) -> ClassifierSpec:
    block = dict(cfg.get("gmr", {}))
    _check_keys(block, _GMR_KEYS, "gmr")
    spec = ClassifierSpec(**block)
    if not isinstance(spec.K, int) or spec.K < 1:
        raise UsageError("gmr.K must be a positive integer")
    return spec


def validate(cfg: dict):
    """Reject a malformed configuration before any work starts, whatever the
    subcommand."""
    methods = cfg.get("methods", [])
    if not isinstance(methods, list):
        raise UsageError("'methods' must be a list")
    for m in ([cfg["method"]] if "method" in cfg else []) + methods:
        spec_for(cfg, m)
    classifier_for(cfg)
    if "margin" in cfg:
        block = cfg["margin"]
        if not isinstance(block, dict):
            raise UsageError("'margin' must be an object")
        _check_keys(block, _MARGIN_KEYS, "margin")
        if int(block.get("n_pca", 4)) < 1:
            raise UsageError("margin.n_pca must be positive")
    if "folds" in cfg and (not isinstance(cfg["folds"], int) or cfg["folds"] < 2):
        raise UsageError("folds must be an integer >= 2")


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_text(path: Path, cfg: dict, what: str, body: str):
    head = "".join(f"# {ln}\n" for ln in _header_lines(cfg, what))
    path.write_text(head + body)


def _write_json(path: Path, cfg: dict, payload: dict):
    doc = {"config": json.loads(_echo(cfg)), "gicaps_version": __version__, **payload}
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n")


def _record_dict(r) -> dict:
    return {"class": int(r.class_id), "m": int(r.m_index), "v": int(r.v_index), "param": float(r.param),
            "intervals": [list(iv) for iv in r.intervals], "point": [float(v) for v in r.point]}


def _plain(v):
    # numpy scalars to Python, NaN to null so files stay strict JSON
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


def _counts_text(ds) -> str:
    return "".join(f"{ds.label_name(c)}\t{int(n)}\n" for c, n in enumerate(ds.class_counts()))


# ---------------------------------------------------------------- commands


def cmd_generate(cfg: dict) -> int:
    ds = dataset_from_config(cfg)
    out = _out_dir(cfg)
    write_csv(ds, out / "data.csv", _header_lines(cfg, "generate"))
    _write_text(out / "counts.txt", cfg, "generate", _counts_text(ds))
    return 0


def cmd_resample(cfg: dict) -> int:
    method = cfg.get("method", "none")
    spec = spec_for(cfg, method)
    ds = prepared_dataset(cfg)
    res = resample(ds, spec, seed=cfg["seed"])
    out = _out_dir(cfg)
    head = _header_lines(cfg, "resample")
    write_csv(ds, out / "normalized.csv", head)
    write_csv(res.dataset, out / "resampled.csv", head)
    _write_text(out / "counts.txt", cfg, "resample", _counts_text(res.dataset))
    _write_json(out / "provenance.json", cfg, {"records": [_record_dict(r) for r in res.records]})
    audits = {str(c): [{k: _plain(v) for k, v in a.items()} for a in rows] for c, rows in res.audits.items()}
    _write_json(out / "audit.json", cfg, {"audits": audits, "rejected": [int(r) for r in res.rejected]})
    return 0


def cmd_train(cfg: dict) -> int:
    method = cfg.get("method", "none")
    spec = spec_for(cfg, method)
    clf = classifier_for(cfg)
    ds = prepared_dataset(cfg)
    res = resample(ds, spec, seed=cfg["seed"])
    model = gmr.fit(res.dataset, clf.K, seed=cfg["seed"], max_iter=clf.max_iter, tol=clf.tol,
                    n_classes=ds.n_classes)
    out = _out_dir(cfg)
    (out / "model.txt").write_text("".join(f"# {ln}\n" for ln in _header_lines(cfg, "train")) + gmr.dumps(model))
    acc = float(np.mean(gmr.predict_class(model, ds.features) == ds.labels))
    _write_json(out / "train.json", cfg, {"K": model.K, "converged": model.converged,
                                          "loglik": model.loglik_history, "train_accuracy": acc})
    return 0


def cmd_benchmark(cfg: dict) -> int:
    methods = cfg.get("methods") or [cfg.get("method", "none")]
    specs = [spec_for(cfg, m) for m in methods]
    clf = classifier_for(cfg)
    folds = int(cfg.get("folds", 10))
    ds = prepared_dataset(cfg)
    name = cfg["dataset"].get("name") or cfg["dataset"].get("preset") or Path(cfg["dataset"].get("csv", "data")).stem
    reports, failures = [], []
    for spec in specs:
        try:
            reports.append(run_cv(ds, spec, clf, folds, cfg["seed"], name=name, jobs=int(cfg["jobs"])))
        except Exception as exc:  # recorded, run continues
            log.error("method %s failed: %s", spec.method, exc)
            failures.append({"method": spec.method, "error": str(exc)})
    out = _out_dir(cfg)
    doc = json.loads(report_json(reports, json.loads(_echo(cfg))))
    doc["failures"] = failures
    (out / "report.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    _write_text(out / "report.txt", cfg, "benchmark", report_table(reports))
    return 1 if failures else 0


def cmd_margin(cfg: dict) -> int:
    block = cfg.get("margin")
    if not isinstance(block, dict):
        raise UsageError("config needs a 'margin' block")
    ds = prepared_dataset(cfg)
    counts = ds.class_counts()
    minority = int(block.get("minority", int(np.argmin(counts))))
    other = int(block.get("other", int(np.argmax(counts))))
    n_new = int(block.get("n_new", 3 * counts[minority]))
    methods = block.get("methods", ["gicaps-o", "smote", "adasyn"])
    n_pca = int(block.get("n_pca", 4))
    if n_pca > ds.n_features:
        raise UsageError(f"margin.n_pca={n_pca} exceeds the {ds.n_features} features")
    over = spec_for({**cfg, "oversample": cfg.get("oversample", {}), "baseline": cfg.get("baseline", {})}, "gicaps-o")
    res = margin_study(ds, minority, other, n_new, methods, n_pca, cfg["seed"],
                       over.oversample, over.baseline)
    out = _out_dir(cfg)
    _write_json(out / "margin.json", cfg, {"minority": minority, "other": other, "n_new": n_new, "margins": res})
    body = "".join(f"{m}\t{v!r}\n" for m, v in res.items())
    _write_text(out / "margin.txt", cfg, "margin", body)
    return 0


def cmd_dump_points(cfg: dict) -> int:
    method = cfg.get("method", "none")
    spec = spec_for(cfg, method)
    ds = prepared_dataset(cfg)
    res = resample(ds, spec, seed=cfg["seed"])
    out = _out_dir(cfg)
    d = ds.n_features
    lines = [",".join([f"x{j}" for j in range(d)] + ["label", "kind", "m", "v", "param"])]
    rejected = set(res.rejected.tolist())
    for i in range(ds.n_samples):
        kind = "rejected" if i in rejected else "original"
        lines.append(",".join([repr(float(v)) for v in ds.features[i]] + [str(int(ds.labels[i])), kind, "", "", ""]))
    for r in res.records:
        lines.append(",".join([repr(float(v)) for v in r.point]
                              + [str(r.class_id), "synthetic", str(r.m_index), str(r.v_index), repr(r.param)]))
    _write_text(out / "points.csv", cfg, "dump-points", "\n".join(lines) + "\n")
    return 0


def cmd_report(cfg: dict) -> int:
    path = Path(cfg["out"]) / "report.json"
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    cols = ("oa", "precision", "recall", "f_measure", "g_mean")
    for s in doc.get("summary", []):
        print(s["dataset"], s["method"], *(f"{s[c]:.2f}" for c in cols), sep="\t")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "resample": cmd_resample,
    "train": cmd_train,
    "benchmark": cmd_benchmark,
    "margin": cmd_margin,
    "dump-points": cmd_dump_points,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gicaps", description="Geometric resampling for imbalanced data.")
    p.add_argument("--version", action="version", version=f"gicaps {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--jobs", type=int, help="worker processes (results do not depend on it)")
        if name in ("resample", "train", "benchmark", "dump-points"):
            sp.add_argument("--method", choices=METHODS)
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args, require_seed=args.command != "report")
        if args.command == "benchmark" and getattr(args, "method", None):
            cfg["methods"] = [args.method]
        if not isinstance(cfg["jobs"], int) or cfg["jobs"] < 1:
            raise UsageError("jobs must be a positive integer")
        validate(cfg)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"gicaps: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"gicaps: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
