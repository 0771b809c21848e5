"""The two missingness stress protocols.

Train protocol: one modality's mask is removed for a growing fraction of
the training patients (0-75%; the cap keeps enough samples to pre-train
the affected unimodal branch), the test fold stays fully paired, and the
whole two-stage pipeline retrains per rate. Test protocol: the pipeline
trains once on fully paired data and the removal is applied to the test
fold only, up to 100% (fully unimodal inference). Both yield one curve of
weighted AUC against the missing rate per masked modality, with the
paper-style unimodal reference value attached: the degraded modality's own
unimodal model for the train protocol, the remaining modality's unimodal
model for the test protocol.
"""

from dataclasses import dataclass, field

import numpy as np

from .baselines import (
    ModelSelectionBundle,
    init_baseline,
    late_fusion_batch,
    model_selection_predict,
)
from .data.inject import IMAGING, TABULAR, inject_missingness
from .data.splits import train_val_holdout
from .evaluation import modality_attribution, weighted_auc
from .model import (
    assemble_multimodal,
    init_tabular_model,
    init_vision_model,
    model_forward,
)
from .training import (
    PreconditionError,
    TrainConfig,
    finetune_multimodal,
    train_baseline,
    train_unimodal,
)

TRAIN_PROTOCOL = "train"
TEST_PROTOCOL = "test"
TRAIN_RATES = (0.0, 0.25, 0.5, 0.75)
TEST_RATES = (0.0, 0.25, 0.5, 0.75, 1.0)
TRAIN_RATE_CAP = 0.75
STRATEGIES = ("masked", "zeros", "maxpool", "model-selection", "early", "late")


@dataclass(frozen=True)
class ExperimentSpec:
    """Structural hyperparameters shared by every model in one experiment."""

    vision_cfg: object
    n_classes: int
    tab_layers: int = 2
    fusion_layers: int = 2
    n_heads: int = 2
    ffn_mult: int = 4
    mlp_width: int = 300
    mlp_depth: int = 3
    train_cfg: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class Pipeline:
    """Trained predictor plus the unimodal members it was built from."""

    strategy: str
    vision_model: object
    tabular_model: object
    core: object
    histories: dict

    def predict(self, ds, idx):
        idx = np.asarray(idx)
        args = (ds.images[idx], ds.x_tab[idx], ds.m_img[idx], ds.m_tab[idx])
        if self.strategy in ("masked", "early"):
            return model_forward(self.core, *args).data
        if self.strategy in ("zeros", "maxpool"):
            return self.core.forward(*args).data
        if self.strategy == "model-selection":
            return model_selection_predict(self.core, *args)
        if self.strategy == "late":
            return late_fusion_batch(self.vision_model, self.tabular_model, *args)
        raise PreconditionError(f"unknown strategy {self.strategy!r}")

    def predict_unimodal(self, ds, idx, modality):
        idx = np.asarray(idx)
        if modality == IMAGING:
            return self.vision_model.forward(ds.images[idx], ds.m_img[idx]).data
        return self.tabular_model.forward(ds.x_tab[idx], ds.m_tab[idx]).data


def pretrain_unimodal_pair(spec, ds, train_idx, val_idx, log_sinks=None):
    cfg = spec.train_cfg
    sinks = log_sinks or {}
    vm = init_vision_model(spec.vision_cfg, spec.n_classes, cfg.seed)
    hist_v = train_unimodal(cfg, vm, ds, train_idx, val_idx, "vision", log_sink=sinks.get("vision"))
    tm = init_tabular_model(ds.schema, spec.vision_cfg.d, spec.n_classes, cfg.seed,
                            tab_layers=spec.tab_layers, n_heads=spec.n_heads, ffn_mult=spec.ffn_mult)
    hist_t = train_unimodal(cfg, tm, ds, train_idx, val_idx, "tabular", log_sink=sinks.get("tabular"))
    return vm, tm, {"vision": hist_v, "tabular": hist_t}


def train_pipeline(strategy, spec, ds, train_idx, val_idx, pretrained=None, log_sinks=None):
    """Two-stage training for one strategy. `pretrained` optionally reuses
    an existing (vision, tabular, histories) triple so competitor runs
    share bit-identical unimodal encoders."""
    if strategy not in STRATEGIES:
        raise PreconditionError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    cfg = spec.train_cfg
    sinks = log_sinks or {}
    if pretrained is None:
        vm, tm, histories = pretrain_unimodal_pair(spec, ds, train_idx, val_idx, log_sinks)
    else:
        vm, tm, histories = pretrained
        histories = dict(histories)
    if strategy in ("masked", "early"):
        mm = assemble_multimodal(vm, tm, spec.n_classes, cfg.seed,
                                 fusion_layers=spec.fusion_layers, n_heads=spec.n_heads,
                                 ffn_mult=spec.ffn_mult)
        histories[strategy] = finetune_multimodal(
            cfg, mm, ds, train_idx, val_idx,
            freeze_unimodal=(strategy == "early"), log_sink=sinks.get(strategy))
        core = mm
    elif strategy in ("zeros", "maxpool"):
        bl = init_baseline(strategy, vm, tm, spec.n_classes, cfg.seed,
                           mlp_width=spec.mlp_width, mlp_depth=spec.mlp_depth)
        histories[strategy] = train_baseline(cfg, bl, ds, train_idx, val_idx,
                                             log_sink=sinks.get(strategy))
        core = bl
    elif strategy == "model-selection":
        member = init_baseline("zeros", vm, tm, spec.n_classes, cfg.seed,
                               mlp_width=spec.mlp_width, mlp_depth=spec.mlp_depth)
        histories[strategy] = train_baseline(cfg, member, ds, train_idx, val_idx,
                                             paired_only=True, log_sink=sinks.get(strategy))
        core = ModelSelectionBundle(vision_model=vm, tabular_model=tm, multimodal=member)
    else:  # late fusion: decision-level averaging of the unimodal heads
        core = None
    return Pipeline(strategy=strategy, vision_model=vm, tabular_model=tm,
                    core=core, histories=histories)


def validate_rates(protocol, rates):
    rates = tuple(float(r) for r in rates)
    if any(r < 0 or r > 1 for r in rates):
        raise PreconditionError(f"rates out of [0,1]: {rates}")
    if list(rates) != sorted(set(rates)):
        raise PreconditionError(f"rates must be strictly increasing: {rates}")
    if protocol == TRAIN_PROTOCOL and max(rates) > TRAIN_RATE_CAP:
        raise PreconditionError(
            f"train-protocol missing rate capped at {TRAIN_RATE_CAP:.0%}: got {max(rates)}")
    if protocol not in (TRAIN_PROTOCOL, TEST_PROTOCOL):
        raise PreconditionError(f"unknown protocol {protocol!r}")
    return rates


@dataclass
class StressCurve:
    protocol: str
    modality: str
    strategy: str
    points: list          # {rate, mean, stderr, folds: {fold: auc}, unimodal_ref: {fold: auc}}
    attribution: list = field(default_factory=list)

    def rows(self):
        out = []
        for pt in self.points:
            for fold, auc in sorted(pt["folds"].items()):
                out.append({
                    "protocol": self.protocol, "modality": self.modality,
                    "strategy": self.strategy, "rate": pt["rate"],
                    "fold": fold, "auc": auc,
                })
        return out

    def summary_rows(self):
        out = []
        for pt in self.points:
            out.append({
                "protocol": self.protocol, "modality": self.modality,
                "strategy": self.strategy, "rate": pt["rate"],
                "mean": pt["mean"], "stderr": pt["stderr"],
                "unimodal_ref_mean": pt["unimodal_ref_mean"],
            })
        return out


def _mean_stderr(values):
    v = np.asarray(values, dtype=np.float64)
    mean = float(v.mean())
    if v.size < 2:
        return mean, 0.0
    return mean, float(v.std(ddof=1) / np.sqrt(v.size))


def _fold_indices(fold_assignment, fold, y, m_y, seed):
    fold_assignment = np.asarray(fold_assignment)
    test_idx = np.flatnonzero(fold_assignment == fold)
    pool = np.flatnonzero(fold_assignment != fold)
    train_idx, val_idx = train_val_holdout(y, m_y, pool, seed)
    return train_idx, val_idx, test_idx


def run_stress_protocol(protocol, modality, rates, ds, fold_assignment, spec,
                        strategy="masked", folds=None, attribution=False):
    """Assemble one stress curve. `folds` restricts which folds run (all by
    default); each evaluated fold contributes one AUC per rate."""
    rates = validate_rates(protocol, rates)
    if modality not in (IMAGING, TABULAR):
        raise PreconditionError(f"unknown modality {modality!r}")
    cfg = spec.train_cfg
    fold_assignment = np.asarray(fold_assignment)
    fold_ids = sorted(set(fold_assignment.tolist())) if folds is None else list(folds)
    per_rate = {r: {} for r in rates}
    per_rate_ref = {r: {} for r in rates}
    attr_rows = []
    ref_modality = modality if protocol == TRAIN_PROTOCOL else (
        TABULAR if modality == IMAGING else IMAGING)

    for fold in fold_ids:
        train_idx, val_idx, test_idx = _fold_indices(fold_assignment, fold, ds.y, ds.m_y, cfg.seed)
        inject_seed = cfg.seed * 1009 + int(fold)
        if protocol == TEST_PROTOCOL:
            pipe = train_pipeline(strategy, spec, ds, train_idx, val_idx)
            for rate in rates:
                test_view = inject_missingness(ds.subset(test_idx), modality, rate, inject_seed)
                local = np.arange(test_view.n)
                report = weighted_auc(pipe.predict(test_view, local), test_view.y[local], test_view.m_y[local])
                per_rate[rate][fold] = report.weighted_auc
                ref = weighted_auc(pipe.predict_unimodal(test_view, local, ref_modality),
                                   test_view.y[local], test_view.m_y[local])
                per_rate_ref[rate][fold] = ref.weighted_auc
                if attribution and strategy in ("masked", "early"):
                    for row in modality_attribution(pipe.core, test_view, local):
                        attr_rows.append({"rate": rate, "fold": fold, **row})
        else:
            pool = np.concatenate([train_idx, val_idx])
            pos = {g: i for i, g in enumerate(pool.tolist())}
            for rate in rates:
                pool_view = inject_missingness(ds.subset(pool), modality, rate, inject_seed)
                lt = np.asarray([pos[i] for i in train_idx.tolist()])
                lv = np.asarray([pos[i] for i in val_idx.tolist()])
                pipe = train_pipeline(strategy, spec, pool_view, lt, lv)
                test_view = ds.subset(test_idx)
                local = np.arange(test_view.n)
                report = weighted_auc(pipe.predict(test_view, local), test_view.y[local], test_view.m_y[local])
                per_rate[rate][fold] = report.weighted_auc
                ref = weighted_auc(pipe.predict_unimodal(test_view, local, ref_modality),
                                   test_view.y[local], test_view.m_y[local])
                per_rate_ref[rate][fold] = ref.weighted_auc

    points = []
    for rate in rates:
        mean, stderr = _mean_stderr(list(per_rate[rate].values()))
        ref_mean, _ = _mean_stderr(list(per_rate_ref[rate].values()))
        points.append({
            "rate": rate, "mean": mean, "stderr": stderr,
            "folds": per_rate[rate], "unimodal_ref": per_rate_ref[rate],
            "unimodal_ref_mean": ref_mean,
        })
    return StressCurve(protocol=protocol, modality=modality, strategy=strategy,
                       points=points, attribution=attr_rows)


def write_delimited(path, rows, columns):
    """Plot-ready delimited table with deterministic float formatting."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def read_delimited(path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            rows.append(dict(zip(header, parts)))
    return rows
