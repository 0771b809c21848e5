from .generate import GeneratorConfig, MultimodalDataset, generate_synthetic_dataset
from .splits import iterative_stratified_kfold, train_val_holdout
from .inject import inject_missingness
from .store import read_blob, read_json, sha256_file, write_blob, write_json

__all__ = [
    "GeneratorConfig",
    "MultimodalDataset",
    "generate_synthetic_dataset",
    "iterative_stratified_kfold",
    "train_val_holdout",
    "inject_missingness",
    "read_blob",
    "read_json",
    "sha256_file",
    "write_blob",
    "write_json",
]
