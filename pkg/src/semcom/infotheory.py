"""Exact mutual-information quantities on small discrete joints (bits).

Interaction information follows the convention
``I(Z1;Z2;Y) = I(Z1;Y) - I(Z1;Y|Z2)``, which may be negative.
"""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ValidationError

NORM_TOL = 1e-12


@dataclass
class DiscreteJoint:
    """Probability table indexed as ``table[z1, z2, y]``."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if t.ndim != 3:
            raise ValidationError(f"joint must be 3-D (z1, z2, y), got {t.ndim}-D", ["table"])
        if not np.isfinite(t).all() or (t < 0).any():
            raise ValidationError("joint has negative or non-finite entries", ["table"])
        if abs(t.sum() - 1.0) > NORM_TOL:
            raise ValidationError(f"joint sums to {t.sum()!r}, not 1", ["table"])
        self.table = t

    @classmethod
    def from_counts(cls, counts) -> "DiscreteJoint":
        c = np.asarray(counts, dtype=np.float64)
        return cls(c / c.sum())


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64).ravel()
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def _entropies(joint: DiscreteJoint) -> dict:
    t = joint.table
    return {
        "1": entropy(t.sum(axis=(1, 2))),
        "2": entropy(t.sum(axis=(0, 2))),
        "y": entropy(t.sum(axis=(0, 1))),
        "12": entropy(t.sum(axis=2)),
        "1y": entropy(t.sum(axis=1)),
        "2y": entropy(t.sum(axis=0)),
        "12y": entropy(t),
    }


def information_terms(joint: DiscreteJoint) -> dict:
    """All six queryable quantities at once."""
    H = _entropies(joint)
    i1 = H["1"] + H["y"] - H["1y"]
    i2 = H["2"] + H["y"] - H["2y"]
    i1_2 = H["12"] + H["2y"] - H["2"] - H["12y"]
    i2_1 = H["12"] + H["1y"] - H["1"] - H["12y"]
    return {
        "I(Z1;Y)": i1,
        "I(Z2;Y)": i2,
        "I(Z1;Y|Z2)": i1_2,
        "I(Z2;Y|Z1)": i2_1,
        "I(Z1;Z2;Y)": i1 - i1_2,
        "I(Z1,Z2;Y)": H["12"] + H["y"] - H["12y"],
    }


_SUPERSCRIPTS = str.maketrans({"¹": "1", "²": "2"})


def _canonical(expr: str) -> str:
    return re.sub(r"\s+", "", expr.translate(_SUPERSCRIPTS))


def mi_query(joint: DiscreteJoint, expr: str) -> float:
    """Evaluate e.g. ``"I(Z1;Y|Z2)"``; superscript digits are accepted."""
    terms = information_terms(joint)
    key = _canonical(expr)
    if key not in terms:
        raise ContractError(f"unsupported expression {expr!r}; choose from {sorted(terms)}")
    return terms[key]


@dataclass
class DecompositionReport:
    eq5_residual: float  # sum of single-modal MIs vs. 2*shared + both unique terms
    eq6_residual: float  # joint MI vs. shared + both unique terms
    terms: dict

    @property
    def passed(self) -> bool:
        return self.eq5_residual <= NORM_TOL and self.eq6_residual <= NORM_TOL


def verify_decomposition(joint: DiscreteJoint) -> DecompositionReport:
    t = information_terms(joint)
    shared = t["I(Z1;Z2;Y)"]
    uniq = t["I(Z1;Y|Z2)"] + t["I(Z2;Y|Z1)"]
    eq5 = abs(t["I(Z1;Y)"] + t["I(Z2;Y)"] - 2.0 * shared - uniq)
    eq6 = abs(t["I(Z1,Z2;Y)"] - shared - uniq)
    return DecompositionReport(eq5, eq6, t)


def random_joint(rng: np.random.Generator, max_alphabet: int = 4) -> DiscreteJoint:
    sizes = rng.integers(2, max_alphabet + 1, size=3)
    p = rng.dirichlet(np.ones(int(np.prod(sizes))))
    return DiscreteJoint(p.reshape(sizes) / p.sum())


def xor_joint() -> DiscreteJoint:
    t = np.zeros((2, 2, 2))
    for a in range(2):
        for b in range(2):
            t[a, b, a ^ b] = 0.25
    return DiscreteJoint(t)


def _bin_codes(z: np.ndarray, bins: int, dims) -> tuple:
    codes = np.zeros(z.shape[0], dtype=np.int64)
    for d in dims:
        col = z[:, d]
        lo, hi = col.min(), col.max()
        if hi > lo:
            b = np.floor((col - lo) / (hi - lo) * bins).astype(np.int64)
            b = np.minimum(b, bins - 1)
        else:
            b = np.zeros(len(col), dtype=np.int64)
        codes = codes * bins + b
    return codes, bins ** len(dims)


def bin_features(z1, z2, y, bins_per_dim: int = 4, dims_used=(0,), num_classes=None) -> DiscreteJoint:
    """Equal-width histogram estimate of the joint over binned features and labels."""
    z1 = np.asarray(z1, dtype=np.float64).reshape(len(y), -1)
    z2 = np.asarray(z2, dtype=np.float64).reshape(len(y), -1)
    y = np.asarray(y, dtype=np.int64)
    dims_used = list(dims_used)
    if bins_per_dim < 2:
        raise ValidationError("bins_per_dim must be >= 2", ["bins_per_dim"])
    if not 1 <= len(dims_used) <= 2:
        raise ValidationError("use one or two dimensions per modality", ["dims_used"])
    c1, a1 = _bin_codes(z1, bins_per_dim, dims_used)
    c2, a2 = _bin_codes(z2, bins_per_dim, dims_used)
    ay = int(num_classes or y.max() + 1)
    counts = np.zeros((a1, a2, ay))
    np.add.at(counts, (c1, c2, y), 1.0)
    if len(y) < 10 * counts.size:
        warnings.warn(f"{len(y)} samples for a {counts.size}-cell table: estimate unreliable",
                      RuntimeWarning, stacklevel=2)
    return DiscreteJoint.from_counts(counts)
