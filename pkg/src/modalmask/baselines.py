"""Competitor strategies built on the same unimodal encoders: zero
substitution of missing latents, max-pool fusion, model selection, and the
early/late fusion ablations."""

from dataclasses import dataclass

import numpy as np

from .encoders import embed_tabular, tabular_encoder_forward, vision_backbone
from .engine import tensor as T
from .engine.tensor import Parameter, Tensor
from .model import (
    PROB_EPS,
    AdmissibilityError,
    LinearParams,
    init_linear,
)
from .seeding import substream


@dataclass
class MlpFusionParams:
    """The competitors' fusion module: stacked ReLU dense layers and a
    final linear map to the class logits. Paper scale is three layers of
    300 units; width and depth shrink with the desk profile."""

    layers: list
    out: LinearParams

    def parameters(self):
        ps = []
        for layer in self.layers:
            ps.extend(layer.parameters())
        return ps + self.out.parameters()


def init_mlp_fusion(n_in, n_classes, rng, width=300, depth=3):
    layers = []
    cur = n_in
    for i in range(depth):
        layers.append(init_linear(cur, width, rng, "fusion", f"mlp/layer{i}"))
        cur = width
    return MlpFusionParams(layers=layers, out=init_linear(cur, n_classes, rng, "head", "mlp/out", zero=True))


def mlp_forward(x, mlp):
    h = x
    for layer in mlp.layers:
        h = T.relu(T.add(T.matmul(h, layer.w), layer.b))
    logits = T.add(T.matmul(h, mlp.out.w), mlp.out.b)
    return T.clip(T.sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)


@dataclass
class BaselineModel:
    """Zero-composition or max-pool fusion over the shared unimodal
    encoders. `strategy` is "zeros" or "maxpool"; max pooling carries two
    learned projections onto a common width before the dimension-wise max."""

    strategy: str
    vision_cfg: object
    vision: object
    t_img: Parameter
    tables: object
    tab_layers: list
    t_tab: Parameter
    proj_img: LinearParams
    proj_tab: LinearParams
    mlp: MlpFusionParams
    n_classes: int

    def parameters(self):
        ps = self.vision.parameters() + [self.t_img] + self.tables.parameters()
        for layer in self.tab_layers:
            ps.extend(layer.parameters())
        ps.append(self.t_tab)
        if self.strategy == "maxpool":
            ps.extend(self.proj_img.parameters() + self.proj_tab.parameters())
        return ps + self.mlp.parameters()

    def forward(self, x_img, x_tab, m_img, m_tab):
        if self.strategy == "zeros":
            return zeros_compose_forward(self, x_img, x_tab, m_img, m_tab)
        return maxpool_fuse_forward(self, x_img, x_tab, m_img, m_tab)


def init_baseline(strategy, vision_model, tabular_model, n_classes, seed, mlp_width=300, mlp_depth=3):
    """Baseline fusion over (bit-identical) pre-trained unimodal branches."""
    cfg = vision_model.vision_cfg
    d = cfg.d
    n_in = cfg.d_v + d if strategy == "zeros" else d
    rng = substream(seed, "init/baseline_mlp")
    proj_rng = substream(seed, "init/baseline_proj")
    return BaselineModel(
        strategy=strategy,
        vision_cfg=cfg,
        vision=vision_model.vision,
        t_img=vision_model.t_img,
        tables=tabular_model.tables,
        tab_layers=tabular_model.tab_layers,
        t_tab=tabular_model.t_tab,
        proj_img=init_linear(cfg.d_v, d, proj_rng, "fusion", "proj_img"),
        proj_tab=init_linear(d, d, proj_rng, "fusion", "proj_tab"),
        mlp=init_mlp_fusion(n_in, n_classes, rng, mlp_width, mlp_depth),
        n_classes=n_classes,
    )


def _unimodal_latents(model, x_img, x_tab, m_img, m_tab):
    """Vision pooled latent (B x d_v) and mean-over-available tabular token
    latent (B x d); the image latent is zeroed by its mask so a missing
    image contributes an exact zero vector."""
    x = np.asarray(x_img, dtype=np.float64)
    if x.ndim == 3:
        x = x[:, None]
    m_img = np.asarray(m_img, dtype=np.float64).reshape(-1, 1)
    m_tab = np.atleast_2d(np.asarray(m_tab, dtype=np.float64))
    v = vision_backbone(Tensor(x), model.vision_cfg, model.vision)
    v = T.mul(v, Tensor(m_img))
    tok = embed_tabular(np.atleast_2d(x_tab), m_tab, model.tables)
    z_tab = tabular_encoder_forward(tok, m_tab, model.tab_layers, model.t_tab)
    denom = np.maximum(m_tab.sum(axis=1, keepdims=True), 1.0)
    pooled = T.mul(T.tsum(T.mul(z_tab, Tensor(m_tab[:, :, None])), axis=1), Tensor(1.0 / denom))
    return v, pooled


def zeros_compose_forward(model, x_img, x_tab, m_img, m_tab):
    """Missing latents become zero vectors; everything is concatenated and
    fed to the MLP. Note the deliberate failure mode this reproduces: an
    absent image and a black image yield identical fusion inputs."""
    v, pooled = _unimodal_latents(model, x_img, x_tab, m_img, m_tab)
    fused = T.concat([v, pooled], axis=1)
    return mlp_forward(fused, model.mlp)


def maxpool_fuse_forward(model, x_img, x_tab, m_img, m_tab):
    """Dimension-wise maximum over the available projected latents, then
    the MLP head. With one modality absent the pool is the identity on the
    other."""
    m_i = np.asarray(m_img, dtype=np.float64).reshape(-1, 1)
    m_t = (np.atleast_2d(np.asarray(m_tab, dtype=np.float64)).max(axis=1, keepdims=True))
    if (np.maximum(m_i, m_t)).min() == 0:
        raise AdmissibilityError("maxpool fusion: sample with no latent available")
    v, pooled = _unimodal_latents(model, x_img, x_tab, m_img, m_tab)
    p_img = T.add(T.matmul(v, model.proj_img.w), model.proj_img.b)
    p_tab = T.add(T.matmul(pooled, model.proj_tab.w), model.proj_tab.b)
    both = m_i * m_t
    # max(a, b) = a + relu(b - a); blend the three availability cases
    pooled_max = T.add(p_img, T.relu(T.add(p_tab, T.neg(p_img))))
    fused = T.add(
        T.mul(pooled_max, Tensor(both)),
        T.add(
            T.mul(p_img, Tensor(m_i * (1.0 - m_t))),
            T.mul(p_tab, Tensor(m_t * (1.0 - m_i))),
        ),
    )
    return mlp_forward(fused, model.mlp)


def maxpool_latents(latents):
    """Dimension-wise maximum of a non-empty list of equal-width vectors;
    plain array helper mirroring the fusion rule."""
    if not latents:
        raise AdmissibilityError("max pooling over an empty latent list")
    out = np.asarray(latents[0], dtype=np.float64)
    for lat in latents[1:]:
        out = np.maximum(out, np.asarray(lat, dtype=np.float64))
    return out


@dataclass
class ModelSelectionBundle:
    """Dispatch between a vision-only, a tabular-only, and a fully-paired
    multimodal predictor depending on what the sample brings."""

    vision_model: object
    tabular_model: object
    multimodal: object

    def predict(self, x_img, x_tab, m_img, m_tab):
        return model_selection_predict(self, x_img, x_tab, m_img, m_tab)


def model_selection_predict(bundle, x_img, x_tab, m_img, m_tab):
    """Per-sample dispatch: image-only -> vision member, tabular-only ->
    tabular member, both present (even with feature-level gaps) -> the
    paired multimodal member. The output is always exactly one member's
    output, never a blend."""
    x_img = np.asarray(x_img, dtype=np.float64)
    x_tab = np.atleast_2d(np.asarray(x_tab, dtype=np.float64))
    m_i = np.asarray(m_img, dtype=np.float64).reshape(-1)
    m_t = np.atleast_2d(np.asarray(m_tab, dtype=np.float64))
    has_tab = m_t.max(axis=1) > 0
    has_img = m_i > 0
    if not (has_img | has_tab).all():
        raise AdmissibilityError("model selection: sample with no modality")
    n = m_i.shape[0]
    out = np.empty((n, bundle.vision_model.n_classes))
    img_only = has_img & ~has_tab
    tab_only = has_tab & ~has_img
    both = has_img & has_tab
    if img_only.any():
        out[img_only] = bundle.vision_model.forward(x_img[img_only], m_i[img_only]).data
    if tab_only.any():
        out[tab_only] = bundle.tabular_model.forward(x_tab[tab_only], m_t[tab_only]).data
    if both.any():
        out[both] = bundle.multimodal.forward(x_img[both], x_tab[both], m_i[both], m_t[both]).data
    return out


def late_fusion_predict(vision_pred=None, tabular_pred=None):
    """Arithmetic mean of the available probability vectors."""
    preds = [np.asarray(p, dtype=np.float64) for p in (vision_pred, tabular_pred) if p is not None]
    if not preds:
        raise AdmissibilityError("late fusion: no prediction available")
    return sum(preds) / len(preds)


def late_fusion_batch(vision_model, tabular_model, x_img, x_tab, m_img, m_tab):
    """Late fusion over a batch with per-sample availability."""
    m_i = np.asarray(m_img, dtype=np.float64).reshape(-1)
    m_t = np.atleast_2d(np.asarray(m_tab, dtype=np.float64))
    has_tab = m_t.max(axis=1) > 0
    vp = vision_model.forward(np.asarray(x_img, dtype=np.float64), m_i).data
    tp = tabular_model.forward(np.atleast_2d(x_tab), m_t).data
    out = np.empty_like(vp)
    for i in range(out.shape[0]):
        out[i] = late_fusion_predict(
            vp[i] if m_i[i] > 0 else None,
            tp[i] if has_tab[i] else None,
        )
    return out
