"""Label-masked evaluation: per-class ROC AUC under observed-label
restriction, positive-count weighting with degenerate-class exclusion, and
the attention-mass attribution of modality importance."""

from dataclasses import dataclass, field

import numpy as np

from .model import composite_mask_batch, model_forward


class UndefinedMetric(ValueError):
    """AUC is undefined: a class lacks positives or negatives."""


def roc_auc(scores, labels):
    """Rank-statistic ROC AUC with half credit for ties; exactly equal to
    the all-pairs P(score+ > score-) + 0.5 P(tie) count."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError(f"roc_auc: scores {scores.shape} vs labels {labels.shape}")
    n_pos = int((labels > 0).sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric(f"AUC undefined: {n_pos} positives, {n_neg} negatives")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[labels > 0].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class EvalReport:
    """Per-class AUCs with observed counts, the positive-count weights over
    included classes (summing to 1), the weighted AUC, and the excluded
    classes with reasons."""

    per_class: list
    weights: dict
    weighted_auc: float
    excluded: dict


def weighted_auc(scores, y, m_y, class_names=None):
    """Weighted mean of per-class AUCs, each class restricted to samples
    with the label observed and weighted by its observed positive count.
    Classes with undefined AUC are excluded and the weights renormalized."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    m = np.atleast_2d(np.asarray(m_y, dtype=np.float64))
    n_classes = y.shape[1]
    names = list(class_names) if class_names is not None else [f"class{c}" for c in range(n_classes)]
    per_class = []
    excluded = {}
    for c in range(n_classes):
        obs = m[:, c] > 0
        yo = y[obs, c]
        so = scores[obs, c]
        n_pos = int((yo > 0).sum())
        n_neg = int(yo.size - n_pos)
        entry = {"class": names[c], "n_obs": int(yo.size), "n_pos": n_pos, "n_neg": n_neg}
        try:
            entry["auc"] = roc_auc(so, yo)
            per_class.append(entry)
        except UndefinedMetric as e:
            excluded[names[c]] = str(e)
    if not per_class:
        raise UndefinedMetric("all classes have undefined AUC")
    total_pos = sum(e["n_pos"] for e in per_class)
    weights = {}
    acc = 0.0
    for e in per_class:
        w = e["n_pos"] / total_pos
        e["weight"] = w
        weights[e["class"]] = w
        acc += w * e["auc"]
    return EvalReport(per_class=per_class, weights=weights, weighted_auc=acc, excluded=excluded)


def modality_attribution(model, ds, indices, batch_size=256):
    """Average attention mass flowing from available query tokens to the
    vision-token block versus the tabular block, per fusion layer.

    Rows of the masked attention matrix sum to 1 over available keys for
    every available query, so the two masses are complementary; a fully
    missing modality receives exactly zero mass."""
    indices = np.asarray(indices)
    n_vis = model.vision_cfg.n_vis
    n_layers = len(model.fusion_layers)
    sums = np.zeros((n_layers, 2))
    count = 0
    for start in range(0, indices.size, batch_size):
        idx = indices[start:start + batch_size]
        sink = []
        model_forward(model, ds.images[idx], ds.x_tab[idx], ds.m_img[idx], ds.m_tab[idx], attn_sink=sink)
        m_mm = composite_mask_batch(ds.m_img[idx], ds.m_tab[idx], n_vis)
        for li, w in enumerate(sink):
            vis = w[..., :n_vis].sum(axis=-1)
            tab = w[..., n_vis:].sum(axis=-1)
            head_mean_vis = vis.mean(axis=1)
            head_mean_tab = tab.mean(axis=1)
            avail = m_mm > 0
            denom = np.maximum(avail.sum(axis=1), 1)
            per_sample_vis = (head_mean_vis * avail).sum(axis=1) / denom
            per_sample_tab = (head_mean_tab * avail).sum(axis=1) / denom
            sums[li, 0] += per_sample_vis.sum()
            sums[li, 1] += per_sample_tab.sum()
        count += idx.size
    out = []
    for li in range(n_layers):
        out.append({
            "layer": li,
            "vision_mass": sums[li, 0] / count,
            "tabular_mass": sums[li, 1] / count,
        })
    return out
