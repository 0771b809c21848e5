import io
import os

import numpy as np
import pytest

from conftest import tiny_generator_config
from modalmask.data.clean import CleaningRules, FeatureRule, clean_clinical
from modalmask.data.clinical import (
    ClinicalSchemaError,
    ClinicalTable,
    default_cleaning_rules,
    load_clinical_table,
    LABEL_COLUMNS,
    NUMERIC_COLUMNS,
)
from modalmask.data.generate import (
    GeneratorConfig,
    GeneratorError,
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
)
from modalmask.data.inject import InjectError, inject_missingness
from modalmask.data.splits import SplitError, iterative_stratified_kfold, train_val_holdout
from modalmask.data.store import read_blob, sha256_file, write_blob


def test_generator_no_missingness_all_masks_one():
    cfg = tiny_generator_config(feature_missing=0.0, label_missing=0.0)
    ds = generate_synthetic_dataset(cfg)
    assert ds.m_img.min() == 1 and ds.m_tab.min() == 1 and ds.m_y.min() == 1


def test_generator_deterministic_bytes(tmp_path):
    cfg = tiny_generator_config(seed=42)
    m1 = save_dataset(generate_synthetic_dataset(cfg), os.path.join(tmp_path, "a"))
    m2 = save_dataset(generate_synthetic_dataset(cfg), os.path.join(tmp_path, "b"))
    assert m1["hashes"] == m2["hashes"]


def test_generator_missing_share_binomial():
    feats = tuple((f"n{i}", "numerical", 0) for i in range(2))
    cfg = GeneratorConfig(
        n_samples=10_000, height=4, width=4, features=feats, n_classes=2,
        img_strengths=(0.3, 0.3), tab_strengths=(0.5, 0.5), redundancy=0.5,
        feature_missing_rates=(0.35, 0.0), label_missing_rates=(0.0, 0.0),
        class_prevalence=(0.5, 0.5), noise=0.05, seed=9,
    )
    ds = generate_synthetic_dataset(cfg)
    share = 1.0 - ds.m_tab[:, 0].mean()
    assert 0.33 <= share <= 0.37
    assert ds.m_tab[:, 1].min() == 1.0


def test_generator_rejects_degenerate_config():
    with pytest.raises(GeneratorError):
        GeneratorConfig(
            n_samples=10, height=4, width=4, features=(("n0", "numerical", 0),),
            n_classes=0, img_strengths=(), tab_strengths=(), redundancy=0.5,
            feature_missing_rates=(0.0,), label_missing_rates=(), class_prevalence=(),
            noise=0.1, seed=0,
        )


def test_dataset_roundtrip_and_tamper_detection(tmp_path):
    ds = generate_synthetic_dataset(tiny_generator_config(n=32))
    out = os.path.join(tmp_path, "ds")
    save_dataset(ds, out)
    back = load_dataset(out)
    assert np.array_equal(back.images, ds.images)
    assert np.array_equal(back.x_tab, ds.x_tab)
    assert np.array_equal(back.m_tab, ds.m_tab)
    assert [f.name for f in back.schema.features] == [f.name for f in ds.schema.features]
    with open(os.path.join(out, "labels.bin"), "r+b") as fh:
        fh.seek(-1, 2)
        fh.write(b"\x01")
    with pytest.raises(GeneratorError, match="hash"):
        load_dataset(out)


def test_blob_rejects_bad_magic(tmp_path):
    path = os.path.join(tmp_path, "x.bin")
    with open(path, "wb") as fh:
        fh.write(b"NOTMAGIC" + b"\x00" * 16)
    from modalmask.data.store import StoreError
    with pytest.raises(StoreError):
        read_blob(path)


def test_inject_rate_zero_unchanged(tmp_path):
    ds = generate_synthetic_dataset(tiny_generator_config(n=64))
    out = inject_missingness(ds, "imaging", 0.0, seed=3)
    assert np.array_equal(out.m_img, ds.m_img)


def test_inject_exact_floor_count_and_label_preservation():
    ds = generate_synthetic_dataset(tiny_generator_config(n=100, feature_missing=0.0))
    out = inject_missingness(ds, "imaging", 0.5, seed=3)
    assert (out.m_img == 0).sum() == 50
    assert np.array_equal(out.y, ds.y) and np.array_equal(out.m_y, ds.m_y)
    out_t = inject_missingness(ds, "tabular", 0.25, seed=3)
    assert (out_t.m_tab.max(axis=1) == 0).sum() == 25


def test_inject_nested_prefix_subsets():
    ds = generate_synthetic_dataset(tiny_generator_config(n=120))
    low = inject_missingness(ds, "imaging", 0.25, seed=8)
    high = inject_missingness(ds, "imaging", 0.5, seed=8)
    masked_low = set(np.flatnonzero(low.m_img == 0).tolist())
    masked_high = set(np.flatnonzero(high.m_img == 0).tolist())
    assert masked_low <= masked_high


def test_inject_validates_rate():
    ds = generate_synthetic_dataset(tiny_generator_config(n=16))
    with pytest.raises(InjectError):
        inject_missingness(ds, "imaging", 1.5, seed=0)
    with pytest.raises(InjectError):
        inject_missingness(ds, "audio", 0.5, seed=0)


CSV_HEADER = ",".join(list(NUMERIC_COLUMNS) + ["sex", "ethnicity", "description"] + list(LABEL_COLUMNS))


def _csv(rows):
    return io.StringIO("\n".join([CSV_HEADER] + rows) + "\n")


def _row(age="50", temp="98.6", hr="80", rr="16", spo2="97", sbp="120", dbp="80",
         sex="F", eth="A", desc="fever|cough", labels=None):
    labels = labels or ["1"] + [""] * 13
    return ",".join([age, temp, hr, rr, spo2, sbp, dbp, sex, eth, desc] + labels)


def test_loader_parses_and_masks_labels():
    table = load_clinical_table(_csv([_row(), _row(temp="", labels=["0", "1"] + [""] * 12)]))
    assert table.n == 2
    assert np.isnan(table.numeric["temperature"][1])
    assert table.m_y[0, 0] == 1 and table.m_y[0, 1] == 0
    assert table.y[1, 1] == 1
    assert table.description[0] == ("fever", "cough")


def test_loader_rejects_header_mismatch():
    bad = io.StringIO("age,sex\n50,F\n")
    with pytest.raises(ClinicalSchemaError, match="header"):
        load_clinical_table(bad)


def test_loader_rejects_bad_label_value():
    with pytest.raises(ClinicalSchemaError, match="label"):
        load_clinical_table(_csv([_row(labels=["2"] + [""] * 13)]))


def test_loader_accepts_multihot_description_block():
    header = ",".join(list(NUMERIC_COLUMNS) + ["sex", "ethnicity",
                                               "description:fever", "description:cough"]
                      + list(LABEL_COLUMNS))
    row = ",".join(["50", "98.6", "80", "16", "97", "120", "80", "F", "A", "1", "0"]
                   + ["1"] + [""] * 13)
    table = load_clinical_table(io.StringIO(header + "\n" + row + "\n"))
    assert table.description[0] == ("fever",)


def _numeric_table(name, values):
    n = len(values)
    numeric = {c: np.full(n, np.nan) for c in NUMERIC_COLUMNS}
    numeric[name] = np.asarray(values, dtype=np.float64)
    numeric["age"] = np.linspace(20, 60, n)
    return ClinicalTable(
        numeric=numeric,
        categorical={"sex": ["F"] * n, "ethnicity": ["A"] * n},
        description=[("x",)] * n,
        y=np.ones((n, 14)), m_y=np.ones((n, 14)),
    )


def test_range_filter_marks_missing():
    table = _numeric_table("heart_rate", [60.0, 300.0, 100.0, 25.0, 225.0])
    cleaned = clean_clinical(table, default_cleaning_rules(), np.arange(5))
    col = [f.name for f in cleaned.schema.features].index("heart_rate")
    assert cleaned.m_tab[1, col] == 0.0          # 300 bpm out of [25, 225]
    assert cleaned.m_tab[[0, 2, 3, 4], col].min() == 1.0


def test_iqr_example_linear_quantiles():
    # [1,2,3,4,100]: Q1=2, Q3=4, bounds [-1, 7], 100 removed
    table = _numeric_table("systolic_bp", [1.0, 2.0, 3.0, 4.0, 100.0])
    cleaned = clean_clinical(table, default_cleaning_rules(), np.arange(5))
    assert cleaned.stats.numeric["systolic_bp"]["keep"] == (-1.0, 7.0)
    col = [f.name for f in cleaned.schema.features].index("systolic_bp")
    assert cleaned.m_tab[4, col] == 0.0
    assert cleaned.m_tab[:4, col].min() == 1.0


def test_minmax_endpoints_hit_exactly():
    table = _numeric_table("heart_rate", [60.0, 90.0, 120.0])
    cleaned = clean_clinical(table, default_cleaning_rules(), np.arange(3))
    col = [f.name for f in cleaned.schema.features].index("heart_rate")
    assert cleaned.x_tab[0, col] == 0.0
    assert cleaned.x_tab[2, col] == 1.0


def test_cleaning_idempotent():
    table = _numeric_table("systolic_bp", [1.0, 2.0, 3.0, 4.0, 100.0])
    once = clean_clinical(table, default_cleaning_rules(), np.arange(5))
    twice = clean_clinical(once, default_cleaning_rules(), np.arange(5))
    assert np.array_equal(once.x_tab, twice.x_tab)
    assert np.array_equal(once.m_tab, twice.m_tab)


def test_cleaning_no_leakage_from_held_out_rows():
    base = [60.0, 90.0, 120.0, 80.0]
    t1 = _numeric_table("heart_rate", base + [70.0])
    t2 = _numeric_table("heart_rate", base + [210.0])
    fit = np.arange(4)
    c1 = clean_clinical(t1, default_cleaning_rules(), fit)
    c2 = clean_clinical(t2, default_cleaning_rules(), fit)
    assert np.array_equal(c1.x_tab[:4], c2.x_tab[:4])
    assert np.array_equal(c1.m_tab[:4], c2.m_tab[:4])


def test_unseen_category_padded_and_counted():
    n = 4
    table = _numeric_table("heart_rate", [60.0, 70.0, 80.0, 90.0])
    table.categorical["ethnicity"] = ["A", "B", "A", "C"]
    cleaned = clean_clinical(table, default_cleaning_rules(), np.arange(3))  # C unseen in fit
    col = [f.name for f in cleaned.schema.features].index("ethnicity")
    spec = cleaned.schema.features[col]
    assert spec.n_categories == 2
    assert cleaned.x_tab[3, col] == 2.0 and cleaned.m_tab[3, col] == 0.0
    assert cleaned.unseen == {"ethnicity": 1}


def test_description_vocabulary_from_fit_rows_only():
    table = _numeric_table("heart_rate", [60.0, 70.0, 80.0])
    table.description = [("fever", "cough"), ("fever",), ("rash",)]
    cleaned = clean_clinical(table, default_cleaning_rules(), np.arange(2))
    names = [f.name for f in cleaned.schema.features]
    assert "description:fever" in names and "description:cough" in names
    assert "description:rash" not in names
    col = names.index("description:fever")
    assert cleaned.x_tab[0, col] == 1.0 and cleaned.x_tab[2, col] == 0.0


def test_kfold_partitions_exactly_and_deterministic():
    ds = generate_synthetic_dataset(tiny_generator_config(n=200, seed=3))
    a = iterative_stratified_kfold(ds.y, ds.m_y, 4, seed=5)
    b = iterative_stratified_kfold(ds.y, ds.m_y, 4, seed=5)
    assert np.array_equal(a, b)
    assert a.shape == (200,)
    assert set(a.tolist()) == {0, 1, 2, 3}
    assert np.bincount(a).min() >= 45


def test_kfold_single_label_balanced():
    rng = np.random.default_rng(0)
    y = (rng.uniform(size=(60, 1)) < 0.4).astype(float)
    folds = iterative_stratified_kfold(y, np.ones_like(y), 3, seed=1)
    counts = [y[folds == f].sum() for f in range(3)]
    assert max(counts) - min(counts) <= 1


def test_kfold_validates_k():
    y = np.ones((4, 1))
    with pytest.raises(SplitError):
        iterative_stratified_kfold(y, y, 1, seed=0)
    with pytest.raises(SplitError):
        iterative_stratified_kfold(y, y, 8, seed=0)


def test_holdout_sizes_and_determinism():
    ds = generate_synthetic_dataset(tiny_generator_config(n=150, seed=6))
    pool = np.arange(150)
    tr1, va1 = train_val_holdout(ds.y, ds.m_y, pool, seed=2)
    tr2, va2 = train_val_holdout(ds.y, ds.m_y, pool, seed=2)
    assert np.array_equal(tr1, tr2) and np.array_equal(va1, va2)
    assert set(tr1) | set(va1) == set(pool)
    assert not set(tr1) & set(va1)
    assert 0.15 <= va1.size / 150 <= 0.25
