"""Protocol-driven modality removal.

Exactly floor(rate * eligible) patients lose the chosen modality's mask;
raw arrays are untouched so runs at different rates keep sample identity.
Eligibility requires the target modality present AND the other modality
present, so injection can never produce an inadmissible sample. Sampling
uses a shared seeded permutation prefix, hence the masked set at a lower
rate is a subset of the masked set at any higher rate under the same seed
(variance reduction between curve points; flagged in reports because
independent draws are equally valid).
"""

import numpy as np

from ..seeding import substream

IMAGING = "imaging"
TABULAR = "tabular"


class InjectError(ValueError):
    pass


def eligible_for_removal(ds, modality):
    if modality == IMAGING:
        return (ds.m_img > 0) & (ds.m_tab.max(axis=1) > 0)
    if modality == TABULAR:
        return (ds.m_tab.max(axis=1) > 0) & (ds.m_img > 0)
    raise InjectError(f"unknown modality {modality!r}")


def inject_missingness(ds, modality, rate, seed):
    """New dataset with the modality mask zeroed for floor(rate*eligible)
    seeded-chosen patients; labels and raw payloads are preserved."""
    if not 0.0 <= rate <= 1.0:
        raise InjectError(f"rate out of range: {rate}")
    out = ds.copy()
    if rate == 0.0:
        return out
    elig = np.flatnonzero(eligible_for_removal(ds, modality))
    n_mask = int(np.floor(rate * len(elig)))
    order = substream(seed, "inject", 0 if modality == IMAGING else 1).permutation(len(elig))
    chosen = elig[order[:n_mask]]
    if modality == IMAGING:
        out.m_img[chosen] = 0.0
    else:
        out.m_tab[chosen] = 0.0
    return out
