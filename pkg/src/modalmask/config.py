"""Flat sectioned key-value configuration.

An empty file resolves to the paper-scale protocol defaults (batch 512,
500 epochs, lr 1e-3, 50 warm-up epochs, plateau factor 10 / patience 25,
early stop 50, dropout 0.3, unimodal divisor 1000). `profile = desk` under
[run] applies the documented desk-scale size overrides (16x16 images,
d_v 16, d 8, batch 64, shrunken epoch counts and widths) before explicit
keys are read, so schedule semantics stay intact while sizes shrink.
Unknown sections or keys are rejected by name.
"""

import configparser
from dataclasses import dataclass

from .data.generate import GeneratorConfig
from .encoders import VisionConfig
from .stress import ExperimentSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _ints(s):
    return tuple(int(p) for p in str(s).split(",") if p != "")


def _floats(s):
    return tuple(float(p) for p in str(s).split(",") if p != "")


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s}")


# section -> key -> (parser, paper-scale default)
SCHEMA = {
    "run": {
        "profile": (str, ""),
        "seed": (int, 0),
    },
    "data": {
        "n_samples": (int, 62071),
        "height": (int, 224),
        "width": (int, 224),
        "n_classes": (int, 14),
        "n_numerical": (int, 8),
        "n_categorical": (int, 2),
        "n_categories": (int, 4),
        "redundancy": (float, 0.35),
        "feature_missing_rate": (float, 0.1),
        "label_missing_rate": (float, 0.35),
        "class_prevalence": (float, 0.35),
        "noise": (float, 0.06),
        "img_strength": (float, 0.45),
        "tab_strength": (float, 0.9),
    },
    "model": {
        "d_v": (int, 2048),
        "d": (int, 1024),
        "stage_widths": (_ints, (256, 1024, 2048)),
        "tab_layers": (int, 2),
        "fusion_layers": (int, 2),
        "n_heads": (int, 16),
        "ffn_mult": (int, 4),
        "mlp_width": (int, 300),
        "mlp_depth": (int, 3),
    },
    "train": {
        "batch_size": (int, 512),
        "max_epochs": (int, 500),
        "lr": (float, 1e-3),
        "warmup_epochs": (int, 50),
        "plateau_factor": (float, 10.0),
        "plateau_patience": (int, 25),
        "early_stop_patience": (int, 50),
        "dropout_r": (float, 0.3),
        "dropout_img_share": (float, 0.5),
        "unimodal_lr_divisor": (float, 1e3),
        "weight_decay": (float, 0.0),
        "grad_clip": (float, 0.0),
        "augment": (_bool, True),
    },
    "split": {
        "k": (int, 5),
        "val_fraction": (float, 0.2),
    },
}

# size overrides applied by `profile = desk`; schedule rules untouched
DESK_PROFILE = {
    ("data", "n_samples"): 2000,
    ("data", "height"): 16,
    ("data", "width"): 16,
    ("data", "n_classes"): 5,
    ("data", "n_numerical"): 9,
    ("data", "n_categorical"): 3,
    ("data", "label_missing_rate"): 0.15,
    ("model", "d_v"): 16,
    ("model", "d"): 8,
    ("model", "stage_widths"): (4, 8, 16),
    ("model", "n_heads"): 2,
    ("model", "mlp_width"): 32,
    ("model", "mlp_depth"): 2,
    ("train", "batch_size"): 64,
    ("train", "max_epochs"): 24,
    ("train", "warmup_epochs"): 2,
    ("train", "plateau_patience"): 3,
    ("train", "early_stop_patience"): 8,
}

VALIDATORS = {
    ("train", "dropout_r"): lambda v: 0.0 <= v <= 1.0 or "probability out of range",
    ("train", "dropout_img_share"): lambda v: 0.0 <= v <= 1.0 or "probability out of range",
    ("data", "redundancy"): lambda v: 0.0 <= v <= 1.0 or "redundancy out of range",
    ("data", "feature_missing_rate"): lambda v: 0.0 <= v <= 1.0 or "rate out of range",
    ("data", "label_missing_rate"): lambda v: 0.0 <= v <= 1.0 or "rate out of range",
    ("data", "class_prevalence"): lambda v: 0.0 < v < 1.0 or "prevalence out of range",
    ("split", "k"): lambda v: v >= 2 or "k must be >= 2",
    ("split", "val_fraction"): lambda v: 0.0 < v < 1.0 or "fraction out of range",
    ("train", "lr"): lambda v: v > 0 or "learning rate must be positive",
}


def load_config(path=None, seed_override=None):
    """Parse, validate, apply profile, and return the resolved flat dict
    {(section, key): value}."""
    parser = configparser.ConfigParser()
    if path is not None:
        read = parser.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path!r}")
    raw = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            raw[(section, key)] = value

    resolved = {(s, k): d for s, keys in SCHEMA.items() for k, (_, d) in keys.items()}
    profile = str(raw.get(("run", "profile"), resolved[("run", "profile")])).strip()
    if profile == "desk":
        resolved.update(DESK_PROFILE)
    elif profile not in ("", "paper"):
        raise ConfigError(f"run.profile: unknown profile {profile!r}")

    for (section, key), value in raw.items():
        parse, _ = SCHEMA[section][key]
        try:
            resolved[(section, key)] = parse(value)
        except ValueError:
            raise ConfigError(f"{section}.{key}: expected {parse.__name__}, got {value!r}")
    if seed_override is not None:
        resolved[("run", "seed")] = int(seed_override)

    for loc, check in VALIDATORS.items():
        verdict = check(resolved[loc])
        if verdict is not True:
            raise ConfigError(f"{loc[0]}.{loc[1]}: {verdict}")
    if resolved[("model", "d_v")] % resolved[("model", "d")]:
        raise ConfigError("model.d must divide model.d_v")
    if resolved[("model", "stage_widths")][-1] != resolved[("model", "d_v")]:
        raise ConfigError("model.stage_widths must end at model.d_v")
    return resolved


def config_to_dict(resolved):
    """JSON-able snapshot of a resolved config."""
    out = {}
    for (section, key), value in sorted(resolved.items()):
        out.setdefault(section, {})[key] = list(value) if isinstance(value, tuple) else value
    return out


def generator_config(resolved):
    c = {k: resolved[("data", k)] for k in SCHEMA["data"]}
    feats = [(f"num{i}", "numerical", 0) for i in range(c["n_numerical"])]
    feats += [(f"cat{i}", "categorical", c["n_categories"]) for i in range(c["n_categorical"])]
    n_f = len(feats)
    n_c = c["n_classes"]
    return GeneratorConfig(
        n_samples=c["n_samples"], height=c["height"], width=c["width"],
        features=tuple(feats), n_classes=n_c,
        img_strengths=(c["img_strength"],) * n_c,
        tab_strengths=(c["tab_strength"],) * n_c,
        redundancy=c["redundancy"],
        feature_missing_rates=(c["feature_missing_rate"],) * n_f,
        label_missing_rates=(c["label_missing_rate"],) * n_c,
        class_prevalence=(c["class_prevalence"],) * n_c,
        noise=c["noise"],
        seed=resolved[("run", "seed")],
    )


def vision_config(resolved):
    return VisionConfig(
        height=resolved[("data", "height")],
        width=resolved[("data", "width")],
        stage_widths=resolved[("model", "stage_widths")],
        d_v=resolved[("model", "d_v")],
        d=resolved[("model", "d")],
    )


def train_config(resolved):
    keys = [k for k in SCHEMA["train"]]
    kwargs = {k: resolved[("train", k)] for k in keys}
    return TrainConfig(seed=resolved[("run", "seed")], **kwargs)


def experiment_spec(resolved):
    return ExperimentSpec(
        vision_cfg=vision_config(resolved),
        n_classes=resolved[("data", "n_classes")],
        tab_layers=resolved[("model", "tab_layers")],
        fusion_layers=resolved[("model", "fusion_layers")],
        n_heads=resolved[("model", "n_heads")],
        ffn_mult=resolved[("model", "ffn_mult")],
        mlp_width=resolved[("model", "mlp_width")],
        mlp_depth=resolved[("model", "mlp_depth")],
        train_cfg=train_config(resolved),
    )
