"""Clinical-feature cleaning pipeline.

Fit on the training rows only, then applied everywhere: physiological
range filters and (per rule) interquartile outlier bounds mark values
missing; survivors are min-max scaled to [0, 1]; categoricals become
dense indices fitted on training categories, with unseen transform-time
categories routed to the padding index, marked missing, and counted;
free-text description token lists expand into a multi-hot block over the
training vocabulary.

Quantiles interpolate linearly between closest ranks. A cleaned table
remembers its fitted transform, and cleaning a cleaned table applies the
recorded transform mapped into the scaled domain, which is the identity,
so the pipeline is idempotent by construction.
"""

from dataclasses import dataclass, field

import numpy as np

from ..encoders import CATEGORICAL, NUMERICAL, FeatureSpec, TabularSchema


class CleaningError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureRule:
    """Physiological range (inclusive; None = unbounded) and whether the
    IQR outlier filter applies."""

    low: float = None
    high: float = None
    iqr: bool = False


@dataclass(frozen=True)
class CleaningRules:
    per_feature: dict = field(default_factory=dict)
    quantile_method: str = "linear"

    def __post_init__(self):
        for name, rule in self.per_feature.items():
            if rule.low is not None and rule.high is not None and not rule.low < rule.high:
                raise CleaningError(f"{name}: range low must be below high")


@dataclass
class CleaningStats:
    numeric: dict          # name -> {"keep": (lo, hi), "scale": (mn, mx), "rescale": bool}
    categories: dict       # name -> list of category values
    vocab: list            # description tokens retained
    numeric_order: list
    categorical_order: list


@dataclass
class CleanedTable:
    x_tab: np.ndarray
    m_tab: np.ndarray
    schema: TabularSchema
    y: np.ndarray
    m_y: np.ndarray
    stats: CleaningStats
    unseen: dict           # feature -> count of unseen categories seen at transform


def _keep_interval(values, rule, method):
    lo = -np.inf if rule.low is None else rule.low
    hi = np.inf if rule.high is None else rule.high
    inside = values[(values >= lo) & (values <= hi)]
    if rule.iqr and inside.size:
        q1 = np.quantile(inside, 0.25, method=method)
        q3 = np.quantile(inside, 0.75, method=method)
        iqr = q3 - q1
        lo = max(lo, q1 - 1.5 * iqr)
        hi = min(hi, q3 + 1.5 * iqr)
    return lo, hi


def fit_cleaning(table, rules, fit_indices):
    """Compute every transform statistic from the fit rows alone. A numeric
    feature with no surviving training value stays in the schema but is
    marked missing everywhere (degenerate scaler)."""
    fit_idx = np.asarray(fit_indices)
    numeric = {}
    for name in table.numeric_order:
        col = table.numeric[name][fit_idx]
        rule = rules.per_feature.get(name, FeatureRule())
        valid = col[~np.isnan(col)]
        lo, hi = _keep_interval(valid, rule, rules.quantile_method)
        survivors = valid[(valid >= lo) & (valid <= hi)]
        if survivors.size == 0:
            numeric[name] = {"keep": (np.inf, -np.inf), "scale": (0.0, 1.0), "rescale": True}
            continue
        mn, mx = float(survivors.min()), float(survivors.max())
        numeric[name] = {"keep": (float(lo), float(hi)), "scale": (mn, mx), "rescale": True}
    categories = {}
    for name in table.categorical_order:
        col = [table.categorical[name][i] for i in fit_idx]
        categories[name] = sorted({v for v in col if v is not None})
        if not categories[name]:
            raise CleaningError(f"{name}: no training category observed")
    vocab = sorted({tok for i in fit_idx if table.description[i] is not None
                    for tok in table.description[i]})
    return CleaningStats(
        numeric=numeric, categories=categories, vocab=vocab,
        numeric_order=list(table.numeric_order),
        categorical_order=list(table.categorical_order),
    )


def _transform(table, stats):
    n = table.n
    cols, masks, specs = [], [], []
    unseen = {}
    for name in stats.numeric_order:
        raw = table.numeric[name]
        lo, hi = stats.numeric[name]["keep"]
        mn, mx = stats.numeric[name]["scale"]
        ok = ~np.isnan(raw) & (raw >= lo) & (raw <= hi)
        if stats.numeric[name]["rescale"] and mx > mn:
            scaled = (raw - mn) / (mx - mn)
        else:
            scaled = raw - mn
        cols.append(np.where(ok, scaled, 0.0))
        masks.append(ok.astype(np.float64))
        specs.append(FeatureSpec(name, NUMERICAL))
    for name in stats.categorical_order:
        index = {c: i for i, c in enumerate(stats.categories[name])}
        k = len(index)
        vals = np.zeros(n)
        mask = np.zeros(n)
        miss = 0
        for i, v in enumerate(table.categorical[name]):
            if v is None:
                vals[i] = k
            elif v in index:
                vals[i] = index[v]
                mask[i] = 1.0
            else:
                vals[i] = k
                miss += 1
        if miss:
            unseen[name] = miss
        cols.append(vals)
        masks.append(mask)
        specs.append(FeatureSpec(name, CATEGORICAL, n_categories=k))
    for tok in stats.vocab:
        vals = np.zeros(n)
        mask = np.zeros(n)
        for i, toks in enumerate(table.description):
            if toks is None:
                continue
            mask[i] = 1.0
            if tok in toks:
                vals[i] = 1.0
        cols.append(vals)
        masks.append(mask)
        specs.append(FeatureSpec(f"description:{tok}", NUMERICAL))
    x = np.stack(cols, axis=1) if cols else np.zeros((n, 0))
    m = np.stack(masks, axis=1) if masks else np.zeros((n, 0))
    return x, m, TabularSchema(tuple(specs)), unseen


def _recleaned(cleaned):
    """Cleaning already-cleaned data: the recorded transform composed with
    itself is the identity (filters map into the scaled domain, the scaler
    becomes [0, 1])."""
    stats = CleaningStats(
        numeric={
            name: {
                "keep": _map_interval(rec),
                "scale": (0.0, 1.0),
                "rescale": rec["rescale"],
            }
            for name, rec in cleaned.stats.numeric.items()
        },
        categories=dict(cleaned.stats.categories),
        vocab=list(cleaned.stats.vocab),
        numeric_order=list(cleaned.stats.numeric_order),
        categorical_order=list(cleaned.stats.categorical_order),
    )
    return CleanedTable(
        x_tab=cleaned.x_tab.copy(), m_tab=cleaned.m_tab.copy(), schema=cleaned.schema,
        y=cleaned.y.copy(), m_y=cleaned.m_y.copy(), stats=stats, unseen={},
    )


def _map_interval(rec):
    lo, hi = rec["keep"]
    mn, mx = rec["scale"]
    span = (mx - mn) if mx > mn else 1.0
    return ((lo - mn) / span, (hi - mn) / span)


def clean_clinical(table, rules, fit_indices):
    """Fit on `fit_indices` of `table`, transform every row; returns a
    CleanedTable with per-feature masks, the model-ready schema, the fitted
    stats, and an unseen-category report."""
    if isinstance(table, CleanedTable):
        return _recleaned(table)
    stats = fit_cleaning(table, rules, fit_indices)
    x, m, schema, unseen = _transform(table, stats)
    return CleanedTable(
        x_tab=x, m_tab=m, schema=schema,
        y=table.y.copy(), m_y=table.m_y.copy(),
        stats=stats, unseen=unseen,
    )
