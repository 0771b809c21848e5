"""Availability masks: per-sample image/tabular/label indicators, their
expansion into attention mask matrices, the composite mask consumed by the
fusion encoder, and modality dropout."""

from dataclasses import dataclass

import numpy as np


class MaskError(ValueError):
    """A mask violates the admissibility contract."""


def _as_binary(v, what):
    arr = np.asarray(v, dtype=np.float64)
    if arr.size == 0:
        raise MaskError(f"{what}: empty mask")
    if not np.isin(arr, (0.0, 1.0)).all():
        raise MaskError(f"{what}: entries must be 0 or 1")
    return arr


@dataclass(frozen=True)
class SampleMasks:
    """Availability of one sample: scalar image flag, per-feature tabular
    vector, per-class label vector."""

    m_img: float
    m_tab: np.ndarray
    m_y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m_tab", _as_binary(self.m_tab, "m_tab"))
        object.__setattr__(self, "m_y", _as_binary(self.m_y, "m_y"))
        if self.m_img not in (0, 1):
            raise MaskError("m_img must be 0 or 1")

    def admissible(self):
        """True when at least one modality is present."""
        return self.m_img + self.m_tab.max() >= 1


def expand_mask_to_matrix(avail):
    """L availability bits -> LxL matrix whose every row is the bit pattern."""
    avail = _as_binary(avail, "avail")
    if avail.ndim != 1:
        raise MaskError(f"avail must be a vector, got shape {avail.shape}")
    return np.tile(avail, (avail.shape[0], 1))


def build_composite_mask(m_img, m_tab, n_vis):
    """Fusion-encoder mask: the image bit repeated once per visual token,
    followed by the tabular feature bits."""
    m_tab = _as_binary(m_tab, "m_tab")
    if n_vis < 1:
        raise MaskError("n_vis must be >= 1")
    m_mm = np.concatenate([np.full(n_vis, float(m_img)), m_tab])
    if m_mm.max() == 0:
        raise MaskError("no modality available: composite mask is all-zero")
    return m_mm


@dataclass
class DropoutPolicy:
    """Bernoulli(r) modality dropout driven by a seeded stream. `img_share`
    is the probability the image side is the one dropped (paper-silent
    split, symmetric by default)."""

    r: float
    rng: np.random.Generator
    img_share: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise MaskError(f"dropout probability out of range: {self.r}")
        if not 0.0 <= self.img_share <= 1.0:
            raise MaskError(f"img_share out of range: {self.img_share}")


def apply_modality_dropout(masks, policy):
    """With probability r, zero exactly one of the two modalities of a
    fully bimodal sample. Samples that arrive with a single modality are
    returned unchanged (no draw is consumed), so dropout can never starve a
    sample of its last modality. Labels are never touched."""
    if masks.m_img + masks.m_tab.max() <= 1:
        return masks
    if policy.rng.uniform() >= policy.r:
        return masks
    if policy.rng.uniform() < policy.img_share:
        return SampleMasks(0.0, masks.m_tab, masks.m_y)
    return SampleMasks(masks.m_img, np.zeros_like(masks.m_tab), masks.m_y)


def apply_dropout_batch(m_img, m_tab, policy):
    """Vector form over a batch: returns new (m_img, m_tab) arrays."""
    m_img = np.array(m_img, dtype=np.float64, copy=True)
    m_tab = np.array(m_tab, dtype=np.float64, copy=True)
    for i in range(m_img.shape[0]):
        if m_img[i] + m_tab[i].max() <= 1:
            continue
        if policy.rng.uniform() >= policy.r:
            continue
        if policy.rng.uniform() < policy.img_share:
            m_img[i] = 0.0
        else:
            m_tab[i] = 0.0
    return m_img, m_tab
