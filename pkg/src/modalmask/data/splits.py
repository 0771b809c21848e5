"""Multilabel stratified k-fold assignment.

Second-order iterative stratification: samples are placed greedily,
driven by the label pair (including the diagonal singletons) that is
rarest among the still-unassigned samples, so both marginal label
frequencies and label co-occurrences stay balanced across folds. Only
observed positives (label present and mask bit set) count as evidence.
Ties break on fold fill deficit, then on a seeded draw, which makes the
assignment a pure function of (labels, masks, k, seed).
"""

from itertools import combinations

import numpy as np

from ..seeding import substream


class SplitError(ValueError):
    pass


def _evidence_pairs(y_row, m_row):
    pos = np.flatnonzero((y_row > 0) & (m_row > 0))
    pairs = [(c, c) for c in pos]
    pairs.extend(combinations(pos.tolist(), 2))
    return pairs


def iterative_stratified_kfold(y, m_y, k, seed):
    """Fold index per sample, each sample assigned exactly once."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    m_y = np.atleast_2d(np.asarray(m_y, dtype=np.float64))
    n = y.shape[0]
    if k < 2:
        raise SplitError("k must be >= 2")
    if k > n:
        raise SplitError(f"k={k} exceeds {n} samples")
    rng = substream(seed, "split")

    sample_pairs = [_evidence_pairs(y[i], m_y[i]) for i in range(n)]
    remaining_by_pair = {}
    for i, pairs in enumerate(sample_pairs):
        for p in pairs:
            remaining_by_pair.setdefault(p, set()).add(i)

    assignment = np.full(n, -1, dtype=np.int64)
    fold_sizes = np.zeros(k)
    desired_size = n / k
    # per-fold desired share of each pair
    pair_totals = {p: len(s) for p, s in remaining_by_pair.items()}
    fold_pair_counts = {p: np.zeros(k) for p in pair_totals}

    def place(i, fold):
        assignment[i] = fold
        fold_sizes[fold] += 1
        for p in sample_pairs[i]:
            fold_pair_counts[p][fold] += 1
            remaining_by_pair[p].discard(i)

    while any(remaining_by_pair.values()):
        # rarest pair among unassigned evidence; deterministic tie order
        p_star = min(
            (p for p, s in remaining_by_pair.items() if s),
            key=lambda p: (len(remaining_by_pair[p]), p),
        )
        for i in sorted(remaining_by_pair[p_star]):
            desire = pair_totals[p_star] / k - fold_pair_counts[p_star]
            best = desire.max()
            cand = np.flatnonzero(desire >= best - 1e-12)
            if len(cand) > 1:
                deficit = desired_size - fold_sizes[cand]
                cand = cand[deficit >= deficit.max() - 1e-12]
            fold = int(cand[rng.integers(len(cand))]) if len(cand) > 1 else int(cand[0])
            place(i, fold)

    # samples with no observed positive evidence: balance fold sizes
    leftovers = np.flatnonzero(assignment < 0)
    for i in leftovers:
        deficit = desired_size - fold_sizes
        cand = np.flatnonzero(deficit >= deficit.max() - 1e-12)
        fold = int(cand[rng.integers(len(cand))]) if len(cand) > 1 else int(cand[0])
        place(i, fold)

    return assignment


def train_val_holdout(y, m_y, train_indices, seed, val_fraction=0.2):
    """Stratified validation holdout inside one training fold, using the
    same iterative procedure with 1/val_fraction folds and taking one."""
    train_indices = np.asarray(train_indices)
    parts = int(round(1.0 / val_fraction))
    sub = iterative_stratified_kfold(
        np.asarray(y)[train_indices], np.asarray(m_y)[train_indices], parts, seed
    )
    val_local = sub == 0
    return train_indices[~val_local], train_indices[val_local]
