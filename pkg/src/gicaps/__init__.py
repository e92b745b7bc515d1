"""Geometry-driven resampling of imbalanced multi-class data."""

from gicaps.dataset import Dataset, load_csv, normalize_minmax, stratified_kfold

__version__ = "0.1.0"

__all__ = ["Dataset", "load_csv", "normalize_minmax", "stratified_kfold", "__version__"]
