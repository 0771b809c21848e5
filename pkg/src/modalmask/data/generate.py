"""Synthetic multimodal dataset generator and its on-disk layout.

Each sample couples a small grayscale image, a mixed categorical/numerical
feature vector, and a multilabel target with three availability masks.
Class signal is planted in both modalities: every positive class lights a
horizontal band in the image and shifts its associated tabular features.
The redundancy knob controls how the evidence for each (sample, class) is
routed: with redundancy 1 both modalities always carry it (identical
information), with redundancy 0 exactly one modality does (complementary),
in between it is a coin-weighted mixture. Feature and label missingness
are injected independently per configured rate. Everything is a pure
function of the config and seed.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from ..encoders import CATEGORICAL, NUMERICAL, FeatureSpec, TabularSchema
from ..seeding import substream
from .store import read_blob, read_json, sha256_file, write_blob, write_json


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    n_samples: int
    height: int
    width: int
    features: tuple          # (name, kind, n_categories) triples
    n_classes: int
    img_strengths: tuple     # per-class image signal amplitude
    tab_strengths: tuple     # per-class tabular signal amplitude
    redundancy: float        # 1 = modalities carry identical label info, 0 = complementary
    feature_missing_rates: tuple
    label_missing_rates: tuple
    class_prevalence: tuple
    noise: float
    seed: int

    def __post_init__(self):
        if self.n_classes < 1 or self.n_samples < 1:
            raise GeneratorError("n_samples and n_classes must be positive")
        if not 0.0 <= self.redundancy <= 1.0:
            raise GeneratorError(f"redundancy out of range: {self.redundancy}")
        for name, rates in (("feature_missing_rates", self.feature_missing_rates),
                            ("label_missing_rates", self.label_missing_rates)):
            if any(not 0.0 <= r <= 1.0 for r in rates):
                raise GeneratorError(f"{name} must lie in [0, 1]")
        if len(self.feature_missing_rates) != len(self.features):
            raise GeneratorError("one feature_missing_rate per feature required")
        for tup, what in ((self.img_strengths, "img_strengths"),
                          (self.tab_strengths, "tab_strengths"),
                          (self.label_missing_rates, "label_missing_rates"),
                          (self.class_prevalence, "class_prevalence")):
            if len(tup) != self.n_classes:
                raise GeneratorError(f"{what}: expected {self.n_classes} entries")

    def schema(self):
        return TabularSchema(tuple(FeatureSpec(n, k, c) for n, k, c in self.features))


@dataclass
class MultimodalDataset:
    images: np.ndarray   # (N, H, W) in [0, 1]
    x_tab: np.ndarray    # (N, F) raw values (categoricals as float indices)
    y: np.ndarray        # (N, C) binary
    m_img: np.ndarray    # (N,)
    m_tab: np.ndarray    # (N, F)
    m_y: np.ndarray      # (N, C)
    schema: TabularSchema
    ids: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.images.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx)
        return MultimodalDataset(
            images=self.images[idx], x_tab=self.x_tab[idx], y=self.y[idx],
            m_img=self.m_img[idx], m_tab=self.m_tab[idx], m_y=self.m_y[idx],
            schema=self.schema, ids=self.ids[idx], meta=dict(self.meta),
        )

    def copy(self):
        return self.subset(np.arange(self.n))


def _class_band(c, n_classes, height):
    rows = np.array_split(np.arange(height), n_classes)
    return rows[c % n_classes]


def generate_synthetic_dataset(cfg):
    """Build the dataset deterministically from (config, seed)."""
    n, h, w, c_n = cfg.n_samples, cfg.height, cfg.width, cfg.n_classes
    f_n = len(cfg.features)
    schema = cfg.schema()

    rng_y = substream(cfg.seed, "gen/labels")
    y = (rng_y.uniform(size=(n, c_n)) < np.asarray(cfg.class_prevalence)).astype(np.float64)

    # evidence routing: both modalities with prob=redundancy, else exactly one
    rng_route = substream(cfg.seed, "gen/route")
    both = rng_route.uniform(size=(n, c_n)) < cfg.redundancy
    img_side = rng_route.uniform(size=(n, c_n)) < 0.5
    g_img = (both | img_side).astype(np.float64)
    g_tab = (both | ~img_side).astype(np.float64)

    rng_img = substream(cfg.seed, "gen/images")
    images = 0.25 + cfg.noise * rng_img.normal(size=(n, h, w))
    for c in range(c_n):
        band = _class_band(c, c_n, h)
        amp = (y[:, c] * g_img[:, c] * cfg.img_strengths[c])[:, None, None]
        images[:, band, :] += amp
    images = np.clip(images, 0.0, 1.0)

    rng_tab = substream(cfg.seed, "gen/tabular")
    x_tab = np.zeros((n, f_n))
    for j, spec in enumerate(schema.features):
        c = j % c_n
        active = y[:, c] * g_tab[:, c] * cfg.tab_strengths[c]
        if spec.kind == NUMERICAL:
            vals = 0.35 + 0.4 * active + 0.08 * rng_tab.normal(size=n)
            x_tab[:, j] = np.clip(vals, 0.0, 1.0)
        else:
            k = spec.n_categories
            uniform = rng_tab.integers(0, k, size=n)
            preferred = (c + 1) % k
            biased = rng_tab.uniform(size=n) < np.clip(0.75 * active, 0.0, 0.95)
            x_tab[:, j] = np.where(biased, preferred, uniform).astype(np.float64)

    rng_missing = substream(cfg.seed, "gen/missing")
    m_tab = (rng_missing.uniform(size=(n, f_n)) >= np.asarray(cfg.feature_missing_rates)).astype(np.float64)
    m_y = (rng_missing.uniform(size=(n, c_n)) >= np.asarray(cfg.label_missing_rates)).astype(np.float64)
    m_img = np.ones(n)

    return MultimodalDataset(
        images=images, x_tab=x_tab, y=y, m_img=m_img, m_tab=m_tab, m_y=m_y,
        schema=schema, ids=np.arange(n, dtype=np.int64),
        meta={"generator_seed": cfg.seed},
    )


DATASET_FILES = ("images.bin", "tabular.bin", "labels.bin", "masks.bin")


def save_dataset(ds, out_dir, generator_cfg=None):
    """Dataset directory: a manifest plus four binary payload files, every
    payload hashed into the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    write_blob(os.path.join(out_dir, "images.bin"), {"images": ds.images})
    write_blob(os.path.join(out_dir, "tabular.bin"), {"x_tab": ds.x_tab})
    write_blob(os.path.join(out_dir, "labels.bin"), {"y": ds.y})
    write_blob(
        os.path.join(out_dir, "masks.bin"),
        {"m_img": ds.m_img, "m_tab": ds.m_tab, "m_y": ds.m_y, "ids": ds.ids.astype(np.int64)},
    )
    manifest = {
        "counts": {
            "n": int(ds.n),
            "height": int(ds.images.shape[1]),
            "width": int(ds.images.shape[2]),
            "n_features": int(ds.x_tab.shape[1]),
            "n_classes": int(ds.y.shape[1]),
        },
        "schema": [
            {"name": f.name, "kind": f.kind, "n_categories": f.n_categories}
            for f in ds.schema.features
        ],
        "seed": ds.meta.get("generator_seed"),
        "generator": generator_cfg,
        "hashes": {name: sha256_file(os.path.join(out_dir, name)) for name in DATASET_FILES},
    }
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def load_dataset(in_dir):
    manifest = read_json(os.path.join(in_dir, "manifest.json"))
    for name in DATASET_FILES:
        path = os.path.join(in_dir, name)
        actual = sha256_file(path)
        if actual != manifest["hashes"][name]:
            raise GeneratorError(f"{path}: content hash mismatch")
    images = read_blob(os.path.join(in_dir, "images.bin"))[0]["images"]
    x_tab = read_blob(os.path.join(in_dir, "tabular.bin"))[0]["x_tab"]
    y = read_blob(os.path.join(in_dir, "labels.bin"))[0]["y"]
    masks = read_blob(os.path.join(in_dir, "masks.bin"))[0]
    schema = TabularSchema(tuple(
        FeatureSpec(f["name"], f["kind"], f["n_categories"]) for f in manifest["schema"]
    ))
    return MultimodalDataset(
        images=images, x_tab=x_tab, y=y,
        m_img=masks["m_img"], m_tab=masks["m_tab"], m_y=masks["m_y"],
        schema=schema, ids=masks["ids"].astype(np.int64),
        meta={"generator_seed": manifest.get("seed")},
    )
