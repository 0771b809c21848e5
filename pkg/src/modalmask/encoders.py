"""Unimodal encoders: feature-tokenizing tabular transformer and a
residual CNN vision branch, both emitting modality-token-conditioned
latent sequences with missing positions exactly zeroed."""

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import init_encoder_layer, masked_encoder_stack
from .engine import tensor as T
from .engine.tensor import Parameter, ShapeMismatch, Tensor

CATEGORICAL = "categorical"
NUMERICAL = "numerical"


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    n_categories: int = 0

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, NUMERICAL):
            raise SchemaError(f"{self.name}: unknown feature kind {self.kind!r}")
        if self.kind == CATEGORICAL and self.n_categories < 1:
            raise SchemaError(f"{self.name}: categorical feature needs n_categories >= 1")


@dataclass(frozen=True)
class TabularSchema:
    features: tuple

    def __post_init__(self):
        if len(self.features) < 1:
            raise SchemaError("schema needs at least one feature")

    @property
    def n_features(self):
        return len(self.features)

    def feature_names(self):
        return [f.name for f in self.features]


@dataclass
class EmbeddingTables:
    """One lookup table per feature.

    Categorical feature with K categories: (K+1) x d, the last row is a
    frozen all-zero padding row used when the feature is missing.
    Numerical feature: 2 x d, row 0 a frozen all-zero absence row, row 1
    the trainable presence direction scaled by the feature value.
    """

    schema: TabularSchema
    tables: list

    def parameters(self):
        return list(self.tables)


def init_tables(schema, d, rng, group="tabular"):
    tables = []
    for spec in schema.features:
        rows = spec.n_categories + 1 if spec.kind == CATEGORICAL else 2
        data = rng.normal(0.0, 1.0 / math.sqrt(d), size=(rows, d))
        mask = np.ones((rows, d))
        frozen = rows - 1 if spec.kind == CATEGORICAL else 0
        data[frozen] = 0.0
        mask[frozen] = 0.0
        tables.append(Parameter(data, group, f"tables/{spec.name}", update_mask=mask))
    return EmbeddingTables(schema=schema, tables=tables)


def embed_tabular(x_tab, m_tab, tables):
    """Raw feature values (B x F or F) -> token rows (B x F x d or F x d).

    Present categorical values index their table; present numerical values
    scale the presence row so token magnitude tracks the (normalized)
    value. Missing entries land on the frozen zero rows and contribute
    nothing to values or gradients.
    """
    x = np.atleast_2d(np.asarray(x_tab, dtype=np.float64))
    m = np.atleast_2d(np.asarray(m_tab, dtype=np.float64))
    single = np.asarray(x_tab).ndim == 1
    schema = tables.schema
    if x.shape[1] != schema.n_features:
        raise ShapeMismatch(f"embed_tabular: {x.shape[1]} values for {schema.n_features} features")
    rows = []
    for j, spec in enumerate(schema.features):
        present = m[:, j] > 0
        if spec.kind == CATEGORICAL:
            vals = np.where(present, x[:, j], 0.0)
            idx = np.rint(vals).astype(np.int64)
            if present.any():
                seen = idx[present]
                if seen.min() < 0 or seen.max() >= spec.n_categories:
                    raise SchemaError(f"{spec.name}: category index out of range [0, {spec.n_categories})")
            idx = np.where(present, idx, spec.n_categories)
            looked = T.embedding(tables.tables[j], idx)
            # the mask factor keeps the padding row out of the gradient too
            rows.append(T.mul(looked, Tensor(present.astype(np.float64)[:, None])))
        else:
            idx = np.where(present, 1, 0).astype(np.int64)
            scale = np.where(present, x[:, j], 0.0)
            looked = T.embedding(tables.tables[j], idx)
            rows.append(T.mul(looked, Tensor(scale[:, None])))
    out = T.stack(rows, axis=1)
    return T.reshape(out, out.shape[1:]) if single else out


@dataclass
class ModalityTokens:
    """Learnable per-modality vectors multiplied into every token of their
    modality; initialized at ones so they start as exact identities."""

    t_img: Parameter
    t_tab: Parameter

    def parameters(self):
        return [self.t_img, self.t_tab]


def init_modality_tokens(d, group="fusion"):
    return ModalityTokens(
        t_img=Parameter(np.ones(d), group, "tokens/t_img"),
        t_tab=Parameter(np.ones(d), group, "tokens/t_tab"),
    )


def tabular_encoder_forward(tokens, m_tab, layers, t_tab, attn_sink=None):
    """Masked encoder stack over feature tokens, then the tabular modality
    token broadcast-multiplied over rows."""
    z = masked_encoder_stack(tokens, layers, np.asarray(m_tab, dtype=np.float64), attn_sink)
    return T.mul(z, t_tab)


@dataclass(frozen=True)
class VisionConfig:
    """Desk-scale residual CNN: per-stage widths (the last equals the
    latent width d_v), 2x pooling between stages, global average pooling
    into d_v, reshaped into (d_v/d) tokens of width d."""

    height: int
    width: int
    stage_widths: tuple
    d_v: int
    d: int

    def __post_init__(self):
        if self.d_v % self.d:
            raise ShapeMismatch(f"token width {self.d} must divide latent width {self.d_v}")
        if self.stage_widths[-1] != self.d_v:
            raise ShapeMismatch(f"last stage width {self.stage_widths[-1]} must equal d_v {self.d_v}")
        div = 2 ** len(self.stage_widths)
        if self.height % div or self.width % div:
            raise ShapeMismatch(f"image {self.height}x{self.width} not divisible by {div} for {len(self.stage_widths)} pooling stages")

    @property
    def n_vis(self):
        return self.d_v // self.d


@dataclass
class VisionParams:
    """Bias-free conv weights: per stage an entry conv plus one residual
    block of two convs. Zero images map to exactly zero latents."""

    convs: list

    def parameters(self):
        return list(self.convs)


def init_vision(cfg, rng, group="vision"):
    convs = []
    cin = 1
    for s, w in enumerate(cfg.stage_widths):
        for tag, ci, co in (("entry", cin, w), ("res_a", w, w), ("res_b", w, w)):
            fan_in = ci * 9
            data = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(co, ci, 3, 3))
            convs.append(Parameter(data, group, f"vision/stage{s}/{tag}"))
        cin = w
    return VisionParams(convs=convs)


def vision_backbone(x_img, cfg, params):
    """Images (B x 1 x H x W) -> pooled latent vectors (B x d_v)."""
    h = x_img if isinstance(x_img, Tensor) else Tensor(x_img)
    if h.shape[-2:] != (cfg.height, cfg.width):
        raise ShapeMismatch(f"image shape {h.shape[-2:]} does not match config {(cfg.height, cfg.width)}")
    k = 0
    for _ in cfg.stage_widths:
        h = T.relu(T.conv2d(h, params.convs[k], 1))
        r = T.relu(T.conv2d(h, params.convs[k + 1], 1))
        r = T.conv2d(r, params.convs[k + 2], 1)
        h = T.relu(T.add(h, r))
        h = T.maxpool2(h)
        k += 3
    pooled = T.tmean(T.reshape(h, h.shape[:2] + (-1,)), axis=2)
    return pooled


def vision_encoder_forward(x_img, m_img, cfg, params, t_img):
    """Images -> (B x n_vis x d) token matrices, modality-token scaled and
    multiplied by the scalar image mask so absent images produce exact
    zeros and push no gradient into the vision branch."""
    x = np.asarray(x_img, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim == 3:
        x = x[:, None]
    pooled = vision_backbone(Tensor(x), cfg, params)
    tok = T.reshape(pooled, (x.shape[0], cfg.n_vis, cfg.d))
    tok = T.mul(tok, t_img)
    m = np.asarray(m_img, dtype=np.float64).reshape(-1, 1, 1)
    tok = T.mul(tok, Tensor(m))
    return T.reshape(tok, (cfg.n_vis, cfg.d)) if single else tok


def augment_images(images, rng, probability=0.5, max_degrees=15.0):
    """Training-time augmentation: with the given probability per image,
    random horizontal flip (50%) plus nearest-neighbour rotation uniform in
    +-max_degrees. Returns a new array."""
    imgs = np.array(images, dtype=np.float64, copy=True)
    n, h, w = imgs.shape[0], imgs.shape[-2], imgs.shape[-1]
    ci, cj = (h - 1) / 2.0, (w - 1) / 2.0
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    for s in range(n):
        if rng.uniform() >= probability:
            continue
        img = imgs[s]
        if rng.uniform() < 0.5:
            img = img[..., ::-1]
        theta = math.radians(rng.uniform(-max_degrees, max_degrees))
        cos, sin = math.cos(theta), math.sin(theta)
        src_i = np.rint(cos * (ii - ci) + sin * (jj - cj) + ci).astype(np.int64)
        src_j = np.rint(-sin * (ii - ci) + cos * (jj - cj) + cj).astype(np.int64)
        inside = (src_i >= 0) & (src_i < h) & (src_j >= 0) & (src_j < w)
        rot = np.zeros_like(img)
        rot[..., inside] = img[..., src_i[inside], src_j[inside]]
        imgs[s] = rot
    return imgs
