"""Full multimodal predictor: unimodal token sequences are concatenated,
encoded by a masked fusion stack under the composite availability mask,
flattened, and mapped to per-class probabilities."""

import math
from dataclasses import dataclass

import numpy as np

from .attention import init_encoder_layer, masked_encoder_stack
from .encoders import (
    EmbeddingTables,
    ModalityTokens,
    VisionConfig,
    VisionParams,
    embed_tabular,
    init_modality_tokens,
    init_tables,
    init_vision,
    tabular_encoder_forward,
    vision_encoder_forward,
)
from .engine import tensor as T
from .engine.tensor import Parameter, Tensor
from .masking import MaskError, build_composite_mask
from .seeding import substream

PROB_EPS = 1e-7


class AdmissibilityError(ValueError):
    """Sample offers no modality at all."""


@dataclass
class LinearParams:
    w: Parameter
    b: Parameter

    def parameters(self):
        return [self.w, self.b]


def init_linear(n_in, n_out, rng, group, name, zero=False):
    if zero:
        data = np.zeros((n_in, n_out))
    else:
        data = rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, n_out))
    return LinearParams(
        w=Parameter(data, group, f"{name}/w"),
        b=Parameter(np.zeros(n_out), group, f"{name}/b"),
    )


@dataclass
class ModelParameters:
    """Everything learnable, each parameter tagged with exactly one of the
    four groups (vision / tabular / fusion / head) so the fine-tuning stage
    can run differential learning rates."""

    vision_cfg: VisionConfig
    vision: VisionParams
    tab_layers: list
    fusion_layers: list
    head: LinearParams
    tokens: ModalityTokens
    tables: EmbeddingTables
    n_classes: int

    def parameters(self):
        ps = list(self.vision.parameters())
        for layer in self.tab_layers:
            ps.extend(layer.parameters())
        for layer in self.fusion_layers:
            ps.extend(layer.parameters())
        ps.extend(self.head.parameters())
        ps.extend(self.tokens.parameters())
        ps.extend(self.tables.parameters())
        return ps

    @property
    def n_tokens(self):
        return self.vision_cfg.n_vis + self.tables.schema.n_features


def init_model(vision_cfg, schema, n_classes, seed, tab_layers=2, fusion_layers=2,
               n_heads=2, ffn_mult=4):
    """Seed-deterministic initialization; each component draws from its own
    named substream so configs can vary one piece without reshuffling the
    rest."""
    d = vision_cfg.d
    vision = init_vision(vision_cfg, substream(seed, "init/vision"))
    tabs = [
        init_encoder_layer(d, n_heads, substream(seed, "init/tab", i), "tabular", f"tab/layer{i}", ffn_mult)
        for i in range(tab_layers)
    ]
    fusions = [
        init_encoder_layer(d, n_heads, substream(seed, "init/fusion", i), "fusion", f"fusion/layer{i}", ffn_mult)
        for i in range(fusion_layers)
    ]
    tables = init_tables(schema, d, substream(seed, "init/tables"))
    tokens = init_modality_tokens(d)
    n_tok = vision_cfg.n_vis + schema.n_features
    head = init_linear(n_tok * d, n_classes, substream(seed, "init/head"), "head", "head", zero=True)
    return ModelParameters(
        vision_cfg=vision_cfg, vision=vision, tab_layers=tabs, fusion_layers=fusions,
        head=head, tokens=tokens, tables=tables, n_classes=n_classes,
    )


def fuse_forward(z_img, z_tab, m_mm, fusion_layers, attn_sink=None):
    """Concatenate token sequences and run the masked fusion stack; rows
    masked by the composite mask are exactly zero in the result."""
    m = np.asarray(m_mm, dtype=np.float64)
    if m.max() == 0:
        raise MaskError("fuse_forward: composite mask is all-zero")
    z = T.concat([z_img, z_tab], axis=-2)
    return masked_encoder_stack(z, fusion_layers, m, attn_sink)


def classify(z, head):
    """Flatten the token matrix row-major and apply the linear head; output
    probabilities are clamped to [eps, 1-eps]."""
    single = z.ndim == 2
    if single:
        z = T.reshape(z, (1,) + z.shape)
    flat = T.reshape(z, (z.shape[0], z.shape[1] * z.shape[2]))
    probs = T.clip(T.sigmoid(T.add(T.matmul(flat, head.w), head.b)), PROB_EPS, 1.0 - PROB_EPS)
    return T.reshape(probs, (probs.shape[1],)) if single else probs


def composite_mask_batch(m_img, m_tab, n_vis):
    m_img = np.asarray(m_img, dtype=np.float64).reshape(-1)
    m_tab = np.atleast_2d(np.asarray(m_tab, dtype=np.float64))
    if (m_img + m_tab.max(axis=1)).min() == 0:
        raise AdmissibilityError("batch contains a sample with no modality available")
    return np.concatenate([np.repeat(m_img[:, None], n_vis, axis=1), m_tab], axis=1)


def model_forward(params, x_img, x_tab, m_img, m_tab, attn_sink=None):
    """End-to-end prediction for a batch (or a single sample with unbatched
    arrays). Inadmissible samples are rejected before any computation."""
    x_img_arr = np.asarray(x_img, dtype=np.float64)
    single = x_img_arr.ndim == 2
    m_mm = composite_mask_batch(m_img, m_tab, params.vision_cfg.n_vis)
    z_img = vision_encoder_forward(x_img, m_img, params.vision_cfg, params.vision, params.tokens.t_img)
    if single:
        z_img = T.reshape(z_img, (1,) + z_img.shape)
    tok = embed_tabular(np.atleast_2d(x_tab), np.atleast_2d(m_tab), params.tables)
    z_tab = tabular_encoder_forward(tok, np.atleast_2d(m_tab), params.tab_layers, params.tokens.t_tab, attn_sink=None)
    z = fuse_forward(z_img, z_tab, m_mm, params.fusion_layers, attn_sink)
    pred = classify(z, params.head)
    return T.reshape(pred, (params.n_classes,)) if single else pred


@dataclass
class VisionModel:
    """Vision branch plus its own classification head, used for unimodal
    pre-training and reused by the late-fusion and model-selection
    baselines."""

    vision_cfg: VisionConfig
    vision: VisionParams
    t_img: Parameter
    head: LinearParams
    n_classes: int

    def parameters(self):
        return self.vision.parameters() + [self.t_img] + self.head.parameters()

    def forward(self, x_img, m_img):
        z = vision_encoder_forward(x_img, m_img, self.vision_cfg, self.vision, self.t_img)
        return classify(z, self.head)


@dataclass
class TabularModel:
    """Tabular branch (tables + masked encoder) plus its own head."""

    tables: EmbeddingTables
    tab_layers: list
    t_tab: Parameter
    head: LinearParams
    n_classes: int

    def parameters(self):
        ps = self.tables.parameters()
        for layer in self.tab_layers:
            ps.extend(layer.parameters())
        return ps + [self.t_tab] + self.head.parameters()

    def forward(self, x_tab, m_tab):
        tok = embed_tabular(np.atleast_2d(x_tab), np.atleast_2d(m_tab), self.tables)
        z = tabular_encoder_forward(tok, np.atleast_2d(m_tab), self.tab_layers, self.t_tab)
        pred = classify(z, self.head)
        return T.reshape(pred, (self.n_classes,)) if np.asarray(x_tab).ndim == 1 else pred


def init_vision_model(vision_cfg, n_classes, seed):
    return VisionModel(
        vision_cfg=vision_cfg,
        vision=init_vision(vision_cfg, substream(seed, "init/vision")),
        t_img=init_modality_tokens(vision_cfg.d).t_img,
        head=init_linear(vision_cfg.n_vis * vision_cfg.d, n_classes,
                         substream(seed, "init/vision_head"), "head", "vision_head", zero=True),
        n_classes=n_classes,
    )


def init_tabular_model(schema, d, n_classes, seed, tab_layers=2, n_heads=2, ffn_mult=4):
    layers = [
        init_encoder_layer(d, n_heads, substream(seed, "init/tab", i), "tabular", f"tab/layer{i}", ffn_mult)
        for i in range(tab_layers)
    ]
    return TabularModel(
        tables=init_tables(schema, d, substream(seed, "init/tables")),
        tab_layers=layers,
        t_tab=init_modality_tokens(d).t_tab,
        head=init_linear(schema.n_features * d, n_classes,
                         substream(seed, "init/tab_head"), "head", "tab_head", zero=True),
        n_classes=n_classes,
    )


def assemble_multimodal(vision_model, tabular_model, n_classes, seed,
                        fusion_layers=2, n_heads=2, ffn_mult=4):
    """Multimodal model seeded with pre-trained unimodal branches; the
    fusion stack and head are fresh, tokens restart at ones so the fused
    model initially passes the unimodal latents through unchanged."""
    d = vision_model.vision_cfg.d
    fusions = [
        init_encoder_layer(d, n_heads, substream(seed, "init/fusion", i), "fusion", f"fusion/layer{i}", ffn_mult)
        for i in range(fusion_layers)
    ]
    n_tok = vision_model.vision_cfg.n_vis + tabular_model.tables.schema.n_features
    return ModelParameters(
        vision_cfg=vision_model.vision_cfg,
        vision=vision_model.vision,
        tab_layers=tabular_model.tab_layers,
        fusion_layers=fusions,
        head=init_linear(n_tok * d, n_classes, substream(seed, "init/head"), "head", "head", zero=True),
        tokens=init_modality_tokens(d),
        tables=tabular_model.tables,
        n_classes=n_classes,
    )


def named_parameters(model):
    """Unique name -> Parameter mapping for any model container."""
    out = {}
    for p in model.parameters():
        if p.name in out:
            raise ValueError(f"duplicate parameter name {p.name!r}")
        out[p.name] = p
    return out
