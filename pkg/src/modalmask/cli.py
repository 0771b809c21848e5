"""Command-line entry point: dataset generation, fold splitting, two-stage
training, evaluation, stress protocols, and report merging. Every command
takes --config/--seed, writes its outputs under --out, and records a run
manifest with content hashes. Partial outputs are removed on failure.

Exit codes: 0 success, 2 config error, 3 precondition violation,
4 numerical failure.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .baselines import ModelSelectionBundle
from .checkpoints import (
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
    schema_to_meta,
    vision_cfg_to_meta,
)
from .config import (
    ConfigError,
    config_to_dict,
    experiment_spec,
    generator_config,
    load_config,
    train_config,
)
from .data.clean import CleaningError
from .data.clinical import ClinicalSchemaError
from .data.generate import GeneratorError, generate_synthetic_dataset, load_dataset, save_dataset
from .data.inject import InjectError, inject_missingness
from .data.splits import SplitError, iterative_stratified_kfold, train_val_holdout
from .data.store import StoreError, read_json, sha256_file, write_json
from .encoders import SchemaError
from .engine.tensor import ShapeMismatch
from .evaluation import UndefinedMetric, modality_attribution, weighted_auc
from .masking import MaskError
from .model import AdmissibilityError, model_forward
from .stress import (
    TEST_PROTOCOL,
    TEST_RATES,
    TRAIN_PROTOCOL,
    TRAIN_RATES,
    STRATEGIES,
    Pipeline,
    run_stress_protocol,
    train_pipeline,
    validate_rates,
    write_delimited,
)
from .training import LossError, NumericalError, PreconditionError, finetune_multimodal

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3
EXIT_NUMERICAL = 4

_PRECONDITION_ERRORS = (
    PreconditionError, MaskError, AdmissibilityError, SchemaError, SplitError,
    InjectError, GeneratorError, CheckpointError, LossError, ClinicalSchemaError,
    StoreError, CleaningError, UndefinedMetric, ShapeMismatch, FileNotFoundError,
)


class _Outputs:
    """Tracks files a command creates so failures leave no partial output."""

    def __init__(self):
        self.paths = []

    def add(self, path):
        self.paths.append(path)
        return path

    def cleanup(self):
        for path in self.paths:
            if os.path.isfile(path):
                os.remove(path)

    def hashes(self):
        return {p: sha256_file(p) for p in self.paths if os.path.isfile(p)}


def _write_manifest(out_dir, command, cfg, inputs, outputs, started, status):
    manifest = {
        "command": command,
        "config": config_to_dict(cfg),
        "seed": cfg[("run", "seed")],
        "code_version": __version__,
        "inputs": {p: sha256_file(p) for p in inputs if os.path.isfile(p)},
        "outputs": outputs.hashes(),
        "wall_clock_s": time.time() - started,
        "status": status,
    }
    write_json(os.path.join(out_dir, "run_manifest.json"), manifest)


def _load_folds(path):
    blob = read_json(path)
    return np.asarray(blob["assignment"], dtype=np.int64), blob


def _structure(resolved, schema):
    return {
        "vision_cfg": vision_cfg_to_meta(experiment_spec(resolved).vision_cfg),
        "schema": schema_to_meta(schema),
        "n_classes": resolved[("data", "n_classes")],
        "d": resolved[("model", "d")],
        "tab_layers": resolved[("model", "tab_layers")],
        "fusion_layers": resolved[("model", "fusion_layers")],
        "n_heads": resolved[("model", "n_heads")],
        "ffn_mult": resolved[("model", "ffn_mult")],
        "mlp_width": resolved[("model", "mlp_width")],
        "mlp_depth": resolved[("model", "mlp_depth")],
    }


def _fold_splits(ds, assignment, fold, seed):
    test_idx = np.flatnonzero(assignment == fold)
    pool = np.flatnonzero(assignment != fold)
    if test_idx.size == 0:
        raise PreconditionError(f"fold {fold} is empty")
    train_idx, val_idx = train_val_holdout(ds.y, ds.m_y, pool, seed)
    return train_idx, val_idx, test_idx


def cmd_gen_data(args, cfg, outputs):
    gen = generator_config(cfg)
    ds = generate_synthetic_dataset(gen)
    manifest = save_dataset(ds, args.out, generator_cfg=config_to_dict(cfg)["data"])
    for name in ("images.bin", "tabular.bin", "labels.bin", "masks.bin", "manifest.json"):
        outputs.add(os.path.join(args.out, name))
    return {"n": manifest["counts"]["n"]}


def cmd_split(args, cfg, outputs):
    ds = load_dataset(args.data)
    k = cfg[("split", "k")]
    assignment = iterative_stratified_kfold(ds.y, ds.m_y, k, cfg[("run", "seed")])
    path = outputs.add(os.path.join(args.out, "folds.json"))
    write_json(path, {
        "k": k,
        "seed": cfg[("run", "seed")],
        "val_fraction": cfg[("split", "val_fraction")],
        "dataset_hash": sha256_file(os.path.join(args.data, "manifest.json")),
        "assignment": assignment.tolist(),
    })
    return {"k": k, "fold_sizes": np.bincount(assignment, minlength=k).tolist()}


def cmd_pretrain(args, cfg, outputs):
    from .model import init_tabular_model, init_vision_model
    from .training import train_unimodal

    ds = load_dataset(args.data)
    assignment, folds_meta = _load_folds(args.folds)
    tcfg = train_config(cfg)
    spec = experiment_spec(cfg)
    train_idx, val_idx, _ = _fold_splits(ds, assignment, args.fold, tcfg.seed)
    structure = _structure(cfg, ds.schema)
    if args.modality == "vision":
        model = init_vision_model(spec.vision_cfg, spec.n_classes, tcfg.seed)
    else:
        model = init_tabular_model(ds.schema, spec.vision_cfg.d, spec.n_classes, tcfg.seed,
                                   tab_layers=spec.tab_layers, n_heads=spec.n_heads,
                                   ffn_mult=spec.ffn_mult)
    log_path = outputs.add(os.path.join(args.out, f"{args.modality}-train.log"))
    with open(log_path, "w", encoding="utf-8") as sink:
        history = train_unimodal(tcfg, model, ds, train_idx, val_idx, args.modality, log_sink=sink)
    ckpt = outputs.add(os.path.join(args.out, f"{args.modality}.ckpt"))
    save_checkpoint(ckpt, model, args.modality, structure, tcfg.seed, meta={
        "fold": args.fold, "dataset_hash": folds_meta["dataset_hash"], "epochs": len(history),
    })
    return {"epochs": len(history), "best_val": min(h["val_loss"] for h in history)}


def _check_member(header, fold, dataset_hash, what):
    meta = header.get("meta", {})
    if meta.get("fold") != fold or meta.get("dataset_hash") != dataset_hash:
        raise PreconditionError(
            f"{what} checkpoint was trained on a different fold split "
            f"(fold {meta.get('fold')} vs {fold})")


def cmd_finetune(args, cfg, outputs):
    ds = load_dataset(args.data)
    assignment, folds_meta = _load_folds(args.folds)
    tcfg = train_config(cfg)
    spec = experiment_spec(cfg)
    train_idx, val_idx, _ = _fold_splits(ds, assignment, args.fold, tcfg.seed)
    structure = _structure(cfg, ds.schema)
    vision_model, vh = load_checkpoint(args.vision_ckpt)
    tabular_model, th = load_checkpoint(args.tabular_ckpt)
    _check_member(vh, args.fold, folds_meta["dataset_hash"], "vision")
    _check_member(th, args.fold, folds_meta["dataset_hash"], "tabular")
    meta = {"fold": args.fold, "dataset_hash": folds_meta["dataset_hash"],
            "strategy": args.strategy}

    if args.strategy == "late":
        path = outputs.add(os.path.join(args.out, "late-bundle.json"))
        write_json(path, {"strategy": "late", "members": {
            "vision": os.path.abspath(args.vision_ckpt),
            "tabular": os.path.abspath(args.tabular_ckpt)}, **meta})
        return {"strategy": "late"}

    pretrained = (vision_model, tabular_model, {})
    log_path = outputs.add(os.path.join(args.out, f"{args.strategy}-train.log"))
    with open(log_path, "w", encoding="utf-8") as sink:
        pipe = train_pipeline(args.strategy, spec, ds, train_idx, val_idx,
                              pretrained=pretrained, log_sinks={args.strategy: sink})
    history = pipe.histories[args.strategy]
    if args.strategy == "model-selection":
        member_path = outputs.add(os.path.join(args.out, "ms-member.ckpt"))
        save_checkpoint(member_path, pipe.core.multimodal, "zeros", structure, tcfg.seed, meta=meta)
        path = outputs.add(os.path.join(args.out, "model-selection-bundle.json"))
        write_json(path, {"strategy": "model-selection", "members": {
            "vision": os.path.abspath(args.vision_ckpt),
            "tabular": os.path.abspath(args.tabular_ckpt),
            "multimodal": os.path.abspath(member_path)}, **meta})
    else:
        kind = "multimodal" if args.strategy in ("masked", "early") else args.strategy
        ckpt = outputs.add(os.path.join(args.out, f"{args.strategy}.ckpt"))
        save_checkpoint(ckpt, pipe.core, kind, structure, tcfg.seed, meta=meta)
    return {"epochs": len(history), "best_val": min(h["val_loss"] for h in history)}


def _pipeline_from_artifact(path, spec):
    """Rebuild a Pipeline facade from a checkpoint or bundle file."""
    if path.endswith(".json"):
        bundle = read_json(path)
        vm, _ = load_checkpoint(bundle["members"]["vision"])
        tm, _ = load_checkpoint(bundle["members"]["tabular"])
        if bundle["strategy"] == "late":
            return Pipeline("late", vm, tm, None, {}), bundle
        member, _ = load_checkpoint(bundle["members"]["multimodal"])
        core = ModelSelectionBundle(vision_model=vm, tabular_model=tm, multimodal=member)
        return Pipeline("model-selection", vm, tm, core, {}), bundle
    model, header = load_checkpoint(path)
    kind = header["kind"]
    if kind == "multimodal":
        return Pipeline("masked", None, None, model, {}), header
    if kind in ("zeros", "maxpool"):
        return Pipeline(kind, None, None, model, {}), header
    raise PreconditionError(f"cannot evaluate a bare {kind} checkpoint; use its bundle")


def cmd_evaluate(args, cfg, outputs):
    ds = load_dataset(args.data)
    assignment, _ = _load_folds(args.folds)
    spec = experiment_spec(cfg)
    test_idx = np.flatnonzero(assignment == args.fold)
    if args.rate > 0:
        view = inject_missingness(ds.subset(test_idx), args.modality,
                                  args.rate, cfg[("run", "seed")])
        local = np.arange(view.n)
    else:
        view, local = ds.subset(test_idx), np.arange(test_idx.size)
    pipe, _ = _pipeline_from_artifact(args.checkpoint, spec)
    report = weighted_auc(pipe.predict(view, local), view.y[local], view.m_y[local])
    path = outputs.add(os.path.join(args.out, "eval.json"))
    write_json(path, {
        "weighted_auc": report.weighted_auc,
        "per_class": report.per_class,
        "weights": report.weights,
        "excluded": report.excluded,
        "fold": args.fold, "rate": args.rate, "modality": args.modality,
    })
    if pipe.strategy == "masked":
        rows = [{"rate": args.rate, "fold": args.fold, **r}
                for r in modality_attribution(pipe.core, view, local)]
        write_delimited(outputs.add(os.path.join(args.out, "attribution.csv")), rows,
                        ["rate", "fold", "layer", "vision_mass", "tabular_mass"])
    return {"weighted_auc": report.weighted_auc}


def cmd_stress(args, cfg, outputs):
    ds = load_dataset(args.data)
    assignment, _ = _load_folds(args.folds)
    spec = experiment_spec(cfg)
    default = TRAIN_RATES if args.protocol == TRAIN_PROTOCOL else TEST_RATES
    rates = tuple(float(r) for r in args.rates.split(",")) if args.rates else default
    rates = validate_rates(args.protocol, rates)
    folds = [int(f) for f in args.fold_subset.split(",")] if args.fold_subset else None
    curve = run_stress_protocol(args.protocol, args.modality, rates, ds, assignment, spec,
                                strategy=args.strategy, folds=folds,
                                attribution=args.attribution)
    write_delimited(outputs.add(os.path.join(args.out, "curve.csv")), curve.rows(),
                    ["protocol", "modality", "strategy", "rate", "fold", "auc"])
    write_delimited(outputs.add(os.path.join(args.out, "summary.csv")), curve.summary_rows(),
                    ["protocol", "modality", "strategy", "rate", "mean", "stderr",
                     "unimodal_ref_mean"])
    if curve.attribution:
        write_delimited(outputs.add(os.path.join(args.out, "attribution.csv")),
                        curve.attribution,
                        ["rate", "fold", "layer", "vision_mass", "tabular_mass"])
    return {"points": [(p["rate"], p["mean"]) for p in curve.points]}


def cmd_report(args, cfg, outputs):
    from .stress import read_delimited

    rows = []
    for path in args.curves:
        rows.extend(read_delimited(path))
    groups = {}
    for r in rows:
        key = (r["protocol"], r["modality"], r["strategy"], float(r["rate"]))
        groups.setdefault(key, []).append(float(r["auc"]))
    summary = []
    for (protocol, modality, strategy, rate), aucs in sorted(groups.items()):
        arr = np.asarray(aucs)
        stderr = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
        summary.append({
            "protocol": protocol, "modality": modality, "strategy": strategy,
            "rate": rate, "n": arr.size, "mean": float(arr.mean()), "stderr": stderr,
        })
    write_delimited(outputs.add(os.path.join(args.out, "summary.csv")), summary,
                    ["protocol", "modality", "strategy", "rate", "n", "mean", "stderr"])
    return {"groups": len(summary)}


def build_parser():
    p = argparse.ArgumentParser(prog="modalmask", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False, folds=False, fold=False):
        sp.add_argument("--config", default=None, help="key-value config file")
        sp.add_argument("--seed", type=int, default=None, help="override run.seed")
        sp.add_argument("--out", required=True, help="output directory")
        if data:
            sp.add_argument("--data", required=True, help="dataset directory")
        if folds:
            sp.add_argument("--folds", required=True, help="folds.json from `split`")
        if fold:
            sp.add_argument("--fold", type=int, required=True)

    common(sub.add_parser("gen-data", help="generate a synthetic dataset directory"))
    common(sub.add_parser("split", help="stratified k-fold assignment"), data=True)

    sp = sub.add_parser("pretrain", help="train one unimodal branch")
    common(sp, data=True, folds=True, fold=True)
    sp.add_argument("--modality", choices=("vision", "tabular"), required=True)

    sp = sub.add_parser("finetune", help="train a fusion strategy from unimodal checkpoints")
    common(sp, data=True, folds=True, fold=True)
    sp.add_argument("--strategy", choices=STRATEGIES, required=True)
    sp.add_argument("--vision-ckpt", required=True)
    sp.add_argument("--tabular-ckpt", required=True)

    sp = sub.add_parser("evaluate", help="weighted AUC of a checkpoint on a test fold")
    common(sp, data=True, folds=True, fold=True)
    sp.add_argument("--checkpoint", required=True, help="checkpoint or bundle json")
    sp.add_argument("--rate", type=float, default=0.0)
    sp.add_argument("--modality", choices=("imaging", "tabular"), default="imaging")

    sp = sub.add_parser("stress", help="run a full missingness stress protocol")
    common(sp, data=True, folds=True)
    sp.add_argument("--protocol", choices=(TRAIN_PROTOCOL, TEST_PROTOCOL), required=True)
    sp.add_argument("--modality", choices=("imaging", "tabular"), required=True)
    sp.add_argument("--strategy", choices=STRATEGIES, default="masked")
    sp.add_argument("--rates", default=None, help="comma list overriding the protocol grid")
    sp.add_argument("--fold-subset", default=None, help="comma list of folds to run")
    sp.add_argument("--attribution", action="store_true")

    sp = sub.add_parser("report", help="merge curve tables into a summary table")
    common(sp)
    sp.add_argument("curves", nargs="+", help="curve.csv files")
    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "split": cmd_split,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "stress": cmd_stress,
    "report": cmd_report,
}


def main(argv=None):
    started = time.time()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    outputs = _Outputs()
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        os.makedirs(args.out, exist_ok=True)
        result = COMMANDS[args.command](args, cfg, outputs)
        inputs = [p for p in (getattr(args, "data", None) and os.path.join(args.data, "manifest.json"),
                              getattr(args, "folds", None)) if p]
        _write_manifest(args.out, args.command, cfg, inputs, outputs, started, "ok")
        print(json.dumps({"status": "ok", "command": args.command, **(result or {})}, sort_keys=True))
        return EXIT_OK
    except ConfigError as e:
        outputs.cleanup()
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except _PRECONDITION_ERRORS as e:
        outputs.cleanup()
        print(f"precondition violation: {e}", file=sys.stderr)
        return EXIT_PRECONDITION
    except NumericalError as e:
        outputs.cleanup()
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
