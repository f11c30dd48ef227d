"""Synthetic multi-modal classification data with a tunable shared/unique split.

Each sample has a class ``y``, a shared latent ``s`` seen by every modality
and a private latent ``u^m`` per modality.  ``shared_fraction`` routes the
class-discriminative energy between the two, which makes the amount of
cross-modal versus modality-specific task information a ground-truth knob.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

_TRAIN, _TEST = 0, 1


@dataclass
class GenConfig:
    num_classes: int = 10
    train_per_class: int = 200
    test_per_class: int = 100
    shared_dim: int = 8
    unique_dims: list = field(default_factory=lambda: [8, 8])
    observed_dims: list = field(default_factory=lambda: [32, 32])
    separation: float = 2.0
    shared_fraction: float = 0.5
    noise: float = 1.0
    nuisance: float = 0.0
    seed: int = 0

    @property
    def num_modalities(self) -> int:
        return len(self.observed_dims)

    def validate(self) -> None:
        bad = []
        if self.num_classes < 2:
            bad.append("num_classes")
        if self.train_per_class < 1:
            bad.append("train_per_class")
        if self.test_per_class < 0:
            bad.append("test_per_class")
        if len(self.unique_dims) != len(self.observed_dims) or not self.observed_dims:
            bad.append("unique_dims")
        else:
            for du, D in zip(self.unique_dims, self.observed_dims):
                if self.shared_dim < 0 or du < 0 or self.shared_dim + du > D or self.shared_dim + du == 0:
                    bad.append("observed_dims")
                    break
        if not 0.0 <= self.shared_fraction <= 1.0:
            bad.append("shared_fraction")
        for name in ("separation", "noise", "nuisance"):
            if getattr(self, name) < 0:
                bad.append(name)
        if bad:
            raise ValidationError("invalid generator config", bad)


@dataclass
class MultiModalDataset:
    features: list  # one N x D_m array per modality
    labels: np.ndarray
    labeled_mask: np.ndarray
    split: str = "train"

    def __post_init__(self):
        n = len(self.labels)
        if any(x.shape[0] != n for x in self.features):
            raise ValidationError("modality row counts differ from label count", ["features"])
        if len(self.labeled_mask) != n:
            raise ValidationError("labeled_mask length differs from label count", ["labeled_mask"])

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_modalities(self) -> int:
        return len(self.features)

    def rows(self, idx) -> "MultiModalDataset":
        return MultiModalDataset([x[idx] for x in self.features], self.labels[idx],
                                 self.labeled_mask[idx], self.split)


@dataclass
class AugConfig:
    jitter: float = 1.0
    dropout: float = 0.1
    stream: int = 0

    def validate(self) -> None:
        bad = []
        if self.jitter < 0:
            bad.append("jitter")
        if not 0.0 <= self.dropout < 1.0:
            bad.append("dropout")
        if bad:
            raise ValidationError("invalid augmentation config", bad)


def _mixing(rng, D: int, L: int) -> np.ndarray:
    # D x L with orthonormal columns, so each latent maps to unit-norm directions
    q, _ = np.linalg.qr(rng.standard_normal((D, D)))
    return q[:, :L]


def gen_dataset(config: GenConfig):
    """Return ``(train, test)`` drawn from the latent model; deterministic per seed."""
    config.validate()
    C, M = config.num_classes, config.num_modalities
    geom = np.random.default_rng([config.seed, 0])
    rho, sep = config.shared_fraction, config.separation
    shared_means = geom.standard_normal((C, config.shared_dim)) * rho * sep
    unique_means = [geom.standard_normal((C, du)) * (1.0 - rho) * sep for du in config.unique_dims]
    mixes, nuisance_dirs = [], []
    for du, D in zip(config.unique_dims, config.observed_dims):
        A = _mixing(geom, D, D)
        L = config.shared_dim + du
        mixes.append(A[:, :L])
        nuisance_dirs.append(A[:, L:])

    def draw(split: int, per_class: int, name: str) -> MultiModalDataset:
        rng = np.random.default_rng([config.seed, 1 + split])
        y = np.repeat(np.arange(C), per_class)
        y = y[rng.permutation(len(y))]
        n = len(y)
        s = shared_means[y] + rng.standard_normal((n, config.shared_dim))
        feats = []
        for m in range(M):
            u = unique_means[m][y] + rng.standard_normal((n, config.unique_dims[m]))
            x = np.concatenate([s, u], axis=1) @ mixes[m].T
            extra = nuisance_dirs[m].shape[1]
            if config.nuisance > 0 and extra:
                x = x + (config.nuisance * rng.standard_normal((n, extra))) @ nuisance_dirs[m].T
            x = x + config.noise * rng.standard_normal(x.shape)
            feats.append(x)
        return MultiModalDataset(feats, y.astype(np.int64), np.ones(n, bool), name)

    return draw(_TRAIN, config.train_per_class, "train"), draw(_TEST, config.test_per_class, "test")


def augment(batch, aug: AugConfig, rng: np.random.Generator) -> list:
    """Jitter then inverted coordinate dropout; inputs are left untouched."""
    keep = 1.0 - aug.dropout
    out = []
    for x in batch:
        y = x + aug.jitter * rng.standard_normal(x.shape) if aug.jitter else x.copy()
        if aug.dropout:
            y = y * (rng.random(x.shape) < keep) / keep
        out.append(y)
    return out


def subset_labels(dataset: MultiModalDataset, fraction: float, seed: int) -> MultiModalDataset:
    """Class-stratified random label mask keeping ``round(fraction * N)`` rows."""
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"label fraction must lie in (0, 1], got {fraction}", ["label_fraction"])
    n = len(dataset)
    target = int(round(fraction * n))
    mask = np.zeros(n, bool)
    rng = np.random.default_rng([seed, 7])
    classes = np.unique(dataset.labels)
    if fraction == 1.0:
        mask[:] = True
    elif target < len(classes):
        warnings.warn("label fraction too small to cover every class; sampling unstratified",
                      RuntimeWarning, stacklevel=2)
        mask[rng.choice(n, size=target, replace=False)] = True
    else:
        # largest-remainder allocation keeps per-class counts proportional and the total exact
        groups = [np.flatnonzero(dataset.labels == c) for c in classes]
        exact = np.array([fraction * len(g) for g in groups])
        counts = np.floor(exact).astype(int)
        short = target - counts.sum()
        for i in np.argsort(-(exact - counts), kind="stable")[:short]:
            counts[i] += 1
        for g, k in zip(groups, counts):
            mask[rng.choice(g, size=min(k, len(g)), replace=False)] = True
    return MultiModalDataset([x for x in dataset.features], dataset.labels, mask, dataset.split)


def export_csv(dataset: MultiModalDataset, directory) -> list:
    """One ``modality{m}.csv`` per modality plus ``labels.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for m, x in enumerate(dataset.features):
        p = d / f"modality{m}.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([f"f{j}" for j in range(x.shape[1])])
            w.writerows([[repr(float(v)) for v in row] for row in x])
        paths.append(p)
    p = d / "labels.csv"
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "labeled_mask"])
        for y, k in zip(dataset.labels, dataset.labeled_mask):
            w.writerow([int(y), int(bool(k))])
    paths.append(p)
    return paths


def import_csv(directory, split: str = "train") -> MultiModalDataset:
    d = Path(directory)
    feats = []
    m = 0
    while (d / f"modality{m}.csv").exists():
        with open(d / f"modality{m}.csv", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        feats.append(np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64))
        m += 1
    if not feats:
        raise ValidationError(f"no modality CSV files in {d}", ["directory"])
    with open(d / "labels.csv", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    labels = np.array([int(r["label"]) for r in rows], dtype=np.int64)
    mask = np.array([r["labeled_mask"] in ("1", "true", "True") for r in rows], bool)
    return MultiModalDataset(feats, labels, mask, split)
