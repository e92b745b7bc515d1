"""Dataset container, CSV I/O, min-max scaling, stratified folds and
synthetic mixture-of-Gaussians data."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from gicaps.rng import derive_rng

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with dense integer class labels ``0..C-1``.

    ``label_names[c]`` is the original label of class ``c`` as read from disk
    (the remap table). Arrays are made read-only on construction.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] | None = None
    label_names: tuple[str, ...] | None = None
    class_index: dict[int, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        x = np.array(self.features, dtype=float, copy=True)
        y = np.array(self.labels, dtype=np.int64, copy=True).ravel()
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DatasetError(f"features must be a non-empty 2-D matrix, got shape {x.shape}")
        if y.shape[0] != x.shape[0]:
            raise DatasetError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        if not np.all(np.isfinite(x)):
            raise DatasetError("features contain NaN or Inf")
        if y.min() < 0:
            raise DatasetError("labels must be non-negative class ids")
        if self.feature_names is not None and len(self.feature_names) != x.shape[1]:
            raise DatasetError("feature_names length does not match the number of columns")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        index = {}
        for c in range(int(y.max()) + 1):
            rows = np.flatnonzero(y == c)
            rows.setflags(write=False)
            index[c] = rows
        object.__setattr__(self, "class_index", index)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_index)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows], self.feature_names, self.label_names)

    def with_features(self, features, feature_names=None) -> "Dataset":
        return Dataset(features, self.labels, feature_names, self.label_names)

    def label_name(self, c: int) -> str:
        if self.label_names is not None and c < len(self.label_names):
            return self.label_names[c]
        return str(c)


def _column_position(header, label_column, n_cols):
    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if header is None:
            raise DatasetError(f"label column {label_column!r} given by name but the file has no header")
        if label_column not in header:
            raise DatasetError(f"label column {label_column!r} not found in header")
        return header.index(label_column)
    pos = int(label_column)
    if pos < 0:
        pos += n_cols
    if not 0 <= pos < n_cols:
        raise DatasetError(f"label column {label_column} out of range for {n_cols} columns")
    return pos


def load_csv(path, label_column="-1", has_header: bool = True) -> Dataset:
    """Read a comma-separated file; labels are remapped to ``0..C-1`` in
    order of first appearance. Lines starting with ``#`` are skipped."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = [
            (reader.line_num, r)
            for r in reader
            if r and any(cell.strip() for cell in r) and not r[0].lstrip().startswith("#")
        ]
    header = None
    if has_header:
        if not rows:
            raise DatasetError(f"{path}: empty file")
        header = [h.strip() for h in rows[0][1]]
        rows = rows[1:]
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    n_cols = len(header) if header is not None else len(rows[0][1])
    lab = _column_position(header, label_column, n_cols)

    remap: dict[str, int] = {}
    feats = np.empty((len(rows), n_cols - 1))
    labels = np.empty(len(rows), dtype=np.int64)
    for i, (line, row) in enumerate(rows):
        if len(row) != n_cols:
            raise DatasetError(f"{path}: line {line} has {len(row)} cells, expected {n_cols}")
        j_out = 0
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "":
                raise DatasetError(f"{path}: missing value at line {line}, column {j + 1}")
            if j == lab:
                labels[i] = remap.setdefault(cell, len(remap))
                continue
            try:
                v = float(cell)
            except ValueError:
                raise DatasetError(f"{path}: cannot parse {cell!r} at line {line}, column {j + 1}") from None
            if not math.isfinite(v):
                raise DatasetError(f"{path}: non-finite value at line {line}, column {j + 1}")
            feats[i, j_out] = v
            j_out += 1
    if n_cols < 2:
        raise DatasetError(f"{path}: no feature columns")
    names = None
    if header is not None:
        names = tuple(h for j, h in enumerate(header) if j != lab)
    return Dataset(feats, labels, names, tuple(remap))


def write_csv(ds: Dataset, path, header_lines: Sequence[str] = ()) -> None:
    """Write features plus a trailing ``label`` column (original label names).

    Reals are written with ``repr`` so a reload is exact. ``header_lines``
    are emitted first as ``#`` comments, which :func:`load_csv` skips.
    """
    path = Path(path)
    names = ds.feature_names or tuple(f"f{j}" for j in range(ds.n_features))
    with path.open("w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "label"])
        for row, c in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [ds.label_name(int(c))])


@dataclass(frozen=True)
class NormalizationParams:
    mins: np.ndarray
    maxs: np.ndarray
    dropped_features: tuple[int, ...]
    retained_features: tuple[int, ...]

    def apply(self, ds: Dataset) -> Dataset:
        """Scale another dataset (e.g. a test fold) with these parameters.
        Values outside the fitted range are not clipped."""
        cols = list(self.retained_features)
        x = (ds.features[:, cols] - self.mins) / (self.maxs - self.mins)
        names = None
        if ds.feature_names is not None:
            names = tuple(ds.feature_names[j] for j in cols)
        return ds.with_features(x, names)


def normalize_minmax(ds: Dataset) -> tuple[Dataset, NormalizationParams]:
    x = ds.features
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    keep = hi > lo
    if not keep.any():
        raise DatasetError("degenerate dataset: every feature is constant")
    params = NormalizationParams(
        mins=lo[keep],
        maxs=hi[keep],
        dropped_features=tuple(int(j) for j in np.flatnonzero(~keep)),
        retained_features=tuple(int(j) for j in np.flatnonzero(keep)),
    )
    out = params.apply(ds)
    return out.with_features(np.clip(out.features, 0.0, 1.0), out.feature_names), params


def drop_singletons(ds: Dataset) -> tuple[Dataset, tuple[int, ...]]:
    """Remove classes with fewer than two members and renumber the rest
    densely, keeping their original names. Returns the removed class ids."""
    counts = ds.class_counts()
    small = tuple(int(c) for c in np.flatnonzero((counts > 0) & (counts < 2)))
    if not small:
        return ds, ()
    log.warning("removing %d class(es) with a single member: %s",
                len(small), ", ".join(ds.label_name(c) for c in small))
    alive = np.flatnonzero(counts >= 2)
    remap = np.full(len(counts), -1, dtype=np.int64)
    remap[alive] = np.arange(len(alive))
    rows = np.flatnonzero(remap[ds.labels] >= 0)
    names = tuple(ds.label_name(int(c)) for c in alive)
    return Dataset(ds.features[rows], remap[ds.labels[rows]], ds.feature_names, names), small


def stratified_kfold(ds: Dataset, k: int, seed: int):
    """Stratified folds as a list of ``(train_rows, test_rows)``.

    Classes with a single member never enter a test fold; they stay in
    every training split.
    """
    if k < 2:
        raise DatasetError("k must be at least 2")
    if k > ds.n_samples:
        raise DatasetError(f"k={k} exceeds the number of samples ({ds.n_samples})")
    rng = derive_rng(seed, "stratified_kfold")
    fold_of = np.full(ds.n_samples, -1, dtype=np.int64)
    pos = 0
    for c, rows in ds.class_index.items():
        if len(rows) == 1:
            log.warning("class %s has a single member; kept out of every test fold", ds.label_name(c))
            continue
        perm = rows[rng.permutation(len(rows))]
        fold_of[perm] = (pos + np.arange(len(perm))) % k
        pos += len(perm)
    everything = np.arange(ds.n_samples)
    folds = []
    for f in range(k):
        test = np.flatnonzero(fold_of == f)
        train = everything[fold_of != f]
        folds.append((train, test))
    return folds


@dataclass(frozen=True)
class GaussianBlobSpec:
    mean: np.ndarray
    covariance: np.ndarray
    count: int
    class_id: int

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise DatasetError(f"covariance shape {cov.shape} does not match mean of length {mean.size}")
        if np.max(np.abs(cov - cov.T)) > 1e-12:
            raise DatasetError("covariance is not symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise DatasetError("covariance is not positive definite") from None
        if int(self.count) < 1:
            raise DatasetError("blob count must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "count", int(self.count))
        object.__setattr__(self, "class_id", int(self.class_id))

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianBlobSpec":
        mean = np.asarray(d["mean"], dtype=float)
        cov = d.get("covariance", d.get("cov"))
        if cov is None:
            cov = np.eye(mean.size) * float(d.get("std", 1.0)) ** 2
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 1:
            cov = np.diag(cov)
        return cls(mean, cov, int(d["count"]), int(d["class_id"]))

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "count": self.count,
            "class_id": self.class_id,
        }


def generate_gmm_data(specs: Sequence[GaussianBlobSpec], seed: int) -> Dataset:
    """Draw every blob from its own seeded stream; rows follow spec order."""
    if not specs:
        raise DatasetError("no blob specs given")
    dim = specs[0].mean.size
    if any(s.mean.size != dim for s in specs):
        raise DatasetError("blob dimensions disagree")
    ids = sorted({s.class_id for s in specs})
    if ids != list(range(len(ids))):
        raise DatasetError(f"class ids must be dense 0..C-1, got {ids}")
    xs, ys = [], []
    for i, s in enumerate(specs):
        rng = derive_rng(seed, "blob", i)
        chol = np.linalg.cholesky(s.covariance)
        z = rng.standard_normal((s.count, dim))
        xs.append(s.mean + z @ chol.T)
        ys.append(np.full(s.count, s.class_id))
    return Dataset(np.vstack(xs), np.concatenate(ys))


# -- presets used by the demos, the benchmark and the acceptance suite --------

PAIN_COUNTS = (39835, 2908, 2349, 1409, 802, 242, 270, 53, 79, 32, 67, 76, 48, 22, 1, 5)


def _blob(mean, std, count, cid):
    mean = np.asarray(mean, dtype=float)
    std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape)
    return GaussianBlobSpec(mean, np.diag(std**2), count, cid)


def preset_specs(name: str, **kw) -> list[GaussianBlobSpec]:
    """Named generator configurations.

    ``blob3d``       single-class 3-D blob (default 2000 points)
    ``two_class_3d`` majority blob plus a smaller, partly overlapping minority
    ``imbalanced3``  three classes at ratio 100:10:1 (default N=2000)
    ``pain_like``    16 classes with the shape of the pain-intensity histogram

    The two-class margin data is not a blob mixture; see
    :func:`generate_shell_data`.
    """
    if name == "blob3d":
        n = int(kw.get("count", 2000))
        cov = np.array([[1.0, 0.3, 0.1], [0.3, 0.6, 0.05], [0.1, 0.05, 0.4]])
        return [GaussianBlobSpec(np.array([3.0, 2.0, 1.5]), cov, n, 0)]
    if name == "two_class_3d":
        n_major = int(kw.get("n_major", 400))
        n_minor = int(kw.get("n_minor", 40))
        return [
            _blob([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], n_major, 0),
            _blob([2.2, 0.0, 0.0], [0.8, 1.2, 1.2], n_minor, 1),
        ]
    if name == "imbalanced3":
        n = int(kw.get("n", 2000))
        ratios = np.array([100.0, 10.0, 1.0])
        counts = np.round(n * ratios / ratios.sum()).astype(int)
        counts[0] += n - counts.sum()
        return [
            _blob([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], counts[0], 0),
            _blob([2.5, 0.5, 0.0], [0.8, 0.8, 0.8], counts[1], 1),
            _blob([5.0, 1.0, 0.0], [0.7, 0.7, 0.7], counts[2], 2),
        ]
    if name == "pain_like":
        scale = float(kw.get("scale", 0.1))
        dim = int(kw.get("dim", 4))
        counts = [1 if c == 1 else max(2, int(round(c * scale))) for c in PAIN_COUNTS]
        specs = []
        for cid, cnt in enumerate(counts):
            # intensities laid along a bent curve so neighbouring levels overlap a little
            t = cid / (len(counts) - 1)
            mean = np.zeros(dim)
            mean[0] = 6.0 * t
            mean[1] = 2.0 * math.sin(math.pi * t)
            std = 0.35 if cid else 0.6
            specs.append(_blob(mean, std, cnt, cid))
        return specs
    raise DatasetError(f"unknown generator preset {name!r}")


def generate_shell_data(seed: int, dim: int = 4, n_major: int = 400, n_minor: int = 30,
                        radius: float = 5.0, noise: float = 0.3) -> Dataset:
    """Standard normal majority (class 0) enclosed by a sparse minority shell
    (class 1): uniform directions scaled to ``radius`` plus isotropic noise.

    Neighbouring shell points are far apart, so segments between them tend to
    pass close to majority points.
    """
    if dim < 2 or n_major < 1 or n_minor < 2 or radius <= 0 or noise < 0:
        raise DatasetError("invalid shell parameters")
    a = derive_rng(seed, "shell", "major").standard_normal((n_major, dim))
    rng = derive_rng(seed, "shell", "minor")
    u = rng.standard_normal((n_minor, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    b = radius * u + noise * rng.standard_normal((n_minor, dim))
    return Dataset(np.vstack([a, b]), np.repeat([0, 1], [n_major, n_minor]))
