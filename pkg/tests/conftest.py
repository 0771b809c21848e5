import numpy as np
import pytest

from modalmask.data.generate import GeneratorConfig, generate_synthetic_dataset
from modalmask.encoders import VisionConfig
from modalmask.stress import ExperimentSpec
from modalmask.training import TrainConfig


def tiny_generator_config(n=160, seed=11, n_classes=3, redundancy=0.5,
                          feature_missing=0.1, label_missing=0.2, height=8, width=8):
    feats = tuple((f"num{i}", "numerical", 0) for i in range(5)) + (("cat0", "categorical", 3),)
    return GeneratorConfig(
        n_samples=n, height=height, width=width, features=feats, n_classes=n_classes,
        img_strengths=(0.5,) * n_classes, tab_strengths=(0.9,) * n_classes,
        redundancy=redundancy,
        feature_missing_rates=(feature_missing,) * len(feats),
        label_missing_rates=(label_missing,) * n_classes,
        class_prevalence=(0.4,) * n_classes,
        noise=0.08, seed=seed,
    )


def tiny_spec(seed=7, max_epochs=3, n_classes=3):
    return ExperimentSpec(
        vision_cfg=VisionConfig(8, 8, (4, 8), 8, 4),
        n_classes=n_classes, tab_layers=1, fusion_layers=1, n_heads=2,
        mlp_width=16, mlp_depth=2,
        train_cfg=TrainConfig(batch_size=32, max_epochs=max_epochs, warmup_epochs=1,
                              plateau_patience=2, early_stop_patience=3, seed=seed),
    )


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_synthetic_dataset(tiny_generator_config())


class StubRng:
    """Deterministic uniform() stream for forced-draw tests."""

    def __init__(self, values):
        self.values = list(values)

    def uniform(self, *a, **k):
        return self.values.pop(0)
