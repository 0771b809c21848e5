"""Versioned checkpoint container.

One blob file holds every parameter array (tagged by name and group), the
structural config needed to rebuild the model skeleton, the global seed,
and free-form metadata (strategy, fold, training summary). Write/read
round-trips are bit-exact.
"""

import numpy as np

from .baselines import BaselineModel, init_baseline
from .data.store import StoreError, read_blob, write_blob
from .encoders import FeatureSpec, TabularSchema, VisionConfig
from .model import (
    ModelParameters,
    TabularModel,
    VisionModel,
    assemble_multimodal,
    init_model,
    init_tabular_model,
    init_vision_model,
    named_parameters,
)

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def schema_to_meta(schema):
    return [
        {"name": f.name, "kind": f.kind, "n_categories": f.n_categories}
        for f in schema.features
    ]


def schema_from_meta(meta):
    return TabularSchema(tuple(FeatureSpec(f["name"], f["kind"], f["n_categories"]) for f in meta))


def vision_cfg_to_meta(cfg):
    return {
        "height": cfg.height,
        "width": cfg.width,
        "stage_widths": list(cfg.stage_widths),
        "d_v": cfg.d_v,
        "d": cfg.d,
    }


def vision_cfg_from_meta(m):
    return VisionConfig(m["height"], m["width"], tuple(m["stage_widths"]), m["d_v"], m["d"])


def save_checkpoint(path, model, kind, structure, seed, meta=None):
    """`structure` holds the skeleton hyperparameters (layer counts, head
    counts, widths); `meta` anything else worth keeping with the weights."""
    params = named_parameters(model)
    arrays = {name: p.data for name, p in params.items()}
    header = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "kind": kind,
        "structure": structure,
        "seed": int(seed),
        "groups": {name: p.group for name, p in params.items()},
        "meta": meta or {},
    }
    write_blob(path, arrays, header)


def _rebuild(kind, structure, seed):
    if kind == "vision":
        return init_vision_model(vision_cfg_from_meta(structure["vision_cfg"]), structure["n_classes"], seed)
    if kind == "tabular":
        return init_tabular_model(
            schema_from_meta(structure["schema"]), structure["d"], structure["n_classes"], seed,
            tab_layers=structure["tab_layers"], n_heads=structure["n_heads"], ffn_mult=structure["ffn_mult"],
        )
    if kind == "multimodal":
        return init_model(
            vision_cfg_from_meta(structure["vision_cfg"]), schema_from_meta(structure["schema"]),
            structure["n_classes"], seed,
            tab_layers=structure["tab_layers"], fusion_layers=structure["fusion_layers"],
            n_heads=structure["n_heads"], ffn_mult=structure["ffn_mult"],
        )
    if kind in ("zeros", "maxpool"):
        vm = init_vision_model(vision_cfg_from_meta(structure["vision_cfg"]), structure["n_classes"], seed)
        tm = init_tabular_model(
            schema_from_meta(structure["schema"]), structure["d"], structure["n_classes"], seed,
            tab_layers=structure["tab_layers"], n_heads=structure["n_heads"], ffn_mult=structure["ffn_mult"],
        )
        return init_baseline(kind, vm, tm, structure["n_classes"], seed,
                             mlp_width=structure["mlp_width"], mlp_depth=structure["mlp_depth"])
    raise CheckpointError(f"unknown checkpoint kind {kind!r}")


def load_checkpoint(path):
    """Returns (model, header). The skeleton is rebuilt from the recorded
    structure and every parameter array is restored bit-exactly by name."""
    arrays, header = read_blob(path)
    if header.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version")
    model = _rebuild(header["kind"], header["structure"], header["seed"])
    params = named_parameters(model)
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise CheckpointError(f"{path}: parameter set mismatch (missing {sorted(missing)}, extra {sorted(extra)})")
    for name, p in params.items():
        if p.data.shape != arrays[name].shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        p.data = arrays[name]
    return model, header
