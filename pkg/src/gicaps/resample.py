"""Apply one resampling method to every class of a dataset.

The output dataset holds the surviving input rows in their original order
followed by synthetic rows. Provenance records and undersampling audits refer
to row indices of the input dataset.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from gicaps.baselines import BaselineConfig, adasyn_records, ros, rus, smote_records
from gicaps.dataset import Dataset
from gicaps.oversample import OversampleConfig, gicaps_oversample_all
from gicaps.rng import derive_seed
from gicaps.undersample import UndersampleConfig, gicaps_undersample

log = logging.getLogger(__name__)

METHODS = ("gicaps", "gicaps-o", "gicaps-u", "smote", "adasyn", "ros", "rus", "none")


class ResampleError(ValueError):
    pass


@dataclass(frozen=True)
class ResampleSpec:
    """Method name plus the configuration blocks it uses.

    ``n_target`` is the per-class size used by GICaPS undersampling (and by
    full GICaPS as the common class size). An integer is an absolute count;
    a float in (0, 1) is a fraction of the largest class.
    """

    method: str = "none"
    n_target: float | int | None = None
    undersample: dict = field(default_factory=dict)
    oversample: OversampleConfig = field(default_factory=OversampleConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ResampleError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.method in ("gicaps", "gicaps-u") and self.n_target is None:
            raise ResampleError(f"method {self.method!r} needs n_target")

    def target_for(self, ds: Dataset) -> int:
        top = int(ds.class_counts().max())
        t = self.n_target
        if isinstance(t, float) and 0 < t < 1:
            return max(1, int(round(t * top)))
        return int(t)


@dataclass
class ResampleOutput:
    dataset: Dataset
    kept: np.ndarray  # input rows present in the output, in output order
    rejected: np.ndarray  # input rows removed by undersampling
    records: list = field(default_factory=list)  # synthetic provenance
    audits: dict = field(default_factory=dict)  # class id -> undersampling audit

    @property
    def n_synthetic(self) -> int:
        return len(self.records)


def _remap(records, rows):
    return [dataclasses.replace(r, m_index=int(rows[r.m_index]), v_index=int(rows[r.v_index])) for r in records]


def _with_synthetic(ds: Dataset, records) -> Dataset:
    if not records:
        return ds
    x = np.vstack([ds.features, np.array([r.point for r in records])])
    y = np.concatenate([ds.labels, np.array([r.class_id for r in records], dtype=np.int64)])
    return Dataset(x, y, ds.feature_names, ds.label_names)


def _undersample(ds: Dataset, n_target: int, ucfg: dict, seed: int):
    """GICaPS undersampling of every class above ``n_target``."""
    keep = np.ones(ds.n_samples, dtype=bool)
    audits = {}
    for c, rows in ds.class_index.items():
        if len(rows) <= n_target:
            continue
        cfg = UndersampleConfig(n_target=n_target, **ucfg)
        res = gicaps_undersample(ds.features[rows], cfg, seed=derive_seed(seed, "undersample", c))
        drop = np.setdiff1d(np.arange(len(rows)), res.retained)
        keep[rows[drop]] = False
        audits[c] = [{**a, "index": int(rows[a["index"]])} for a in res.audit]
    kept = np.flatnonzero(keep)
    return kept, np.flatnonzero(~keep), audits


def resample(ds: Dataset, spec: ResampleSpec, seed: int = 0) -> ResampleOutput:
    m = spec.method
    all_rows = np.arange(ds.n_samples)
    if m == "none":
        return ResampleOutput(ds, all_rows, np.empty(0, dtype=np.int64))

    if m in ("gicaps", "gicaps-u"):
        n_target = spec.target_for(ds)
        kept, rejected, audits = _undersample(ds, n_target, spec.undersample, seed)
        reduced = ds.subset(kept)
        if m == "gicaps-u":
            return ResampleOutput(reduced, kept, rejected, [], audits)
        counts = reduced.class_counts()
        h = {c: max(0, n_target - int(n)) for c, n in enumerate(counts)}
        ocfg = dataclasses.replace(spec.oversample, h_target=h)
        over = gicaps_oversample_all(reduced, ocfg, seed=derive_seed(seed, "oversample"))
        recs = _remap(over.records, kept)
        return ResampleOutput(_with_synthetic(reduced, recs), kept, rejected, recs, audits)

    if m == "gicaps-o":
        over = gicaps_oversample_all(ds, spec.oversample, seed=derive_seed(seed, "oversample"))
        return ResampleOutput(over.dataset, all_rows, np.empty(0, dtype=np.int64), over.records)

    counts = ds.class_counts()
    top = int(counts.max())
    majority = int(np.argmax(counts))

    if m == "smote":
        recs = []
        for c, n in enumerate(counts):
            if c != majority and n >= 2:
                recs.extend(smote_records(ds, c, spec.baseline, seed))
        return ResampleOutput(_with_synthetic(ds, recs), all_rows, np.empty(0, dtype=np.int64), recs)

    if m == "adasyn":
        base = ds
        kept, rejected = all_rows, np.empty(0, dtype=np.int64)
        cap = spec.baseline.adasyn_major_cap
        if cap is not None and top > cap:
            # shrink the majority at random before synthesising toward it
            r = rus(ds, majority, cap, seed=seed)
            rejected = r.rejected
            kept = np.setdiff1d(all_rows, rejected)
            base = r.dataset
            top = cap
        recs = []
        for c, n in enumerate(base.class_counts()):
            if n >= 2 and n < top:
                got, _ = adasyn_records(base, c, spec.baseline, seed, majority_size=top)
                recs.extend(got)
        recs = _remap(recs, kept)
        return ResampleOutput(_with_synthetic(base, recs), kept, rejected, recs)

    if m == "ros":
        target = top if spec.n_target is None else spec.target_for(ds)
        recs = []
        for c, n in enumerate(counts):
            if 0 < n < target:
                recs.extend(ros(ds, c, target, seed).records)
        return ResampleOutput(_with_synthetic(ds, recs), all_rows, np.empty(0, dtype=np.int64), recs)

    # rus
    present = counts[counts > 0]
    target = int(present.min()) if spec.n_target is None else spec.target_for(ds)
    keep = np.ones(ds.n_samples, dtype=bool)
    for c, n in enumerate(counts):
        if n > target:
            r = rus(ds, c, target, seed)
            keep[r.rejected] = False
    kept = np.flatnonzero(keep)
    return ResampleOutput(ds.subset(kept), kept, np.flatnonzero(~keep))
