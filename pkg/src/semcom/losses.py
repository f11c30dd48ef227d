"""Training objectives: decoupled intra/cross-modal pre-training loss,
SimCLR and Barlow Twins baselines, and masked cross-entropy.

Correlations use cosine normalisation over the batch without mean
centering.  Original Barlow Twins standardises each feature first; here the
un-centred form is used for every correlation-based loss.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ndcore as nd
from .errors import ContractError, DimensionError, ValidationError
from .ndcore import Tensor

# Large negative logit used to drop self-similarity terms; stays finite.
_SELF_MASK = 1e9


@dataclass
class CorrelationMatrix:
    values: Tensor
    kind: str  # "intra" or "cross"
    modalities: tuple = ()

    @property
    def K(self) -> int:
        return self.values.shape[0]


@dataclass
class LossHyperParams:
    # 1/K for the default K=16
    lambda_intra: float | list = 0.0625
    lambda_sha: float = 0.0625
    lambda_uni: float = 0.0625
    k_sha: int = 8
    tau: float = 0.5
    lambda_bt: float = 0.0625

    def validate(self, K: int | None = None) -> None:
        bad = []
        lams = self.lambda_intra if isinstance(self.lambda_intra, list) else [self.lambda_intra]
        if not lams or any(l <= 0 for l in lams):
            bad.append("lambda_intra")
        for name in ("lambda_sha", "lambda_uni", "tau", "lambda_bt"):
            if getattr(self, name) <= 0:
                bad.append(name)
        if self.k_sha < 1 or (K is not None and self.k_sha >= K):
            bad.append("k_sha")
        if bad:
            raise ValidationError("invalid loss hyperparameters", bad)

    def lambda_for(self, m: int) -> float:
        if isinstance(self.lambda_intra, list):
            return float(self.lambda_intra[m])
        return float(self.lambda_intra)


def _eye(K: int) -> Tensor:
    return Tensor(np.eye(K))


def _correlation(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"correlation inputs differ: {a.shape} vs {b.shape}")
    if a.shape[0] < 2:
        raise ContractError("correlation needs a batch of at least 2 samples")
    num = nd.matmul(nd.transpose(a), b)
    denom = nd.matmul(nd.transpose(nd.column_norm(a)), nd.column_norm(b))
    return nd.div(num, denom)


def intra_corr(z: Tensor, z_aug: Tensor) -> CorrelationMatrix:
    """K x K cosine correlation between a feature batch and its augmented view."""
    return CorrelationMatrix(_correlation(z, z_aug), "intra")


def cross_corr(z_m: Tensor, z_n: Tensor, pair: tuple = ()) -> CorrelationMatrix:
    """Same normalisation as :func:`intra_corr`, across two modalities."""
    return CorrelationMatrix(_correlation(z_m, z_n), "cross", tuple(pair))


def _diag_off(C: Tensor, lam: float, target_diag: float) -> Tensor:
    K = C.shape[0]
    eye = _eye(K)
    off = Tensor(1.0 - np.eye(K))
    if target_diag:
        d = nd.sum(nd.mul(nd.square(nd.sub(Tensor(np.full((K, K), target_diag)), C)), eye))
    else:
        d = nd.sum(nd.mul(nd.square(C), eye))
    o = nd.sum(nd.mul(nd.square(C), off))
    return nd.add(d, nd.scale(o, lam))


def intra_loss(C: CorrelationMatrix, lam: float) -> Tensor:
    """Diagonal alignment plus weighted off-diagonal decorrelation."""
    if C.kind != "intra":
        raise ContractError(f"intra_loss expects an intra correlation, got {C.kind}")
    return _diag_off(C.values, lam, 1.0)


def cross_loss(C: CorrelationMatrix, hp: LossHyperParams) -> Tensor:
    """Shared block driven to identity, unique block driven to zero.

    Entries coupling the shared and unique blocks are not penalised.
    """
    if C.kind != "cross":
        raise ContractError(f"cross_loss expects a cross correlation, got {C.kind}")
    K, ks = C.K, hp.k_sha
    if not 0 < ks < K:
        raise ValidationError(f"k_sha must lie in (0, {K})", ["k_sha"])
    sha = nd.slice_block(C.values, (0, ks), (0, ks))
    uni = nd.slice_block(C.values, (ks, K), (ks, K))
    return nd.add(_diag_off(sha, hp.lambda_sha, 1.0), _diag_off(uni, hp.lambda_uni, 0.0))


def pretrain_loss(views: Sequence[tuple], hp: LossHyperParams) -> Tensor:
    """Sum of per-modality intra losses and cross losses over ordered pairs.

    ``views`` holds one ``(z, z_aug)`` pair per modality.  Cross-modal terms
    use the un-augmented features.
    """
    M = len(views)
    if M == 0:
        raise ContractError("pretrain_loss needs at least one modality")
    shape = views[0][0].shape
    for z, zt in views:
        if z.shape != shape or zt.shape != shape:
            raise DimensionError("feature shapes disagree across modalities")
    if M == 1:
        warnings.warn("single modality: cross-modal term omitted", RuntimeWarning, stacklevel=2)
    total = None
    for m, (z, zt) in enumerate(views):
        term = intra_loss(intra_corr(z, zt), hp.lambda_for(m))
        total = term if total is None else nd.add(total, term)
    for m in range(M):
        for n in range(M):
            if n != m:
                total = nd.add(total, cross_loss(cross_corr(views[m][0], views[n][0], (m, n)), hp))
    return total


def simclr_loss(z: Tensor, z_aug: Tensor, tau: float) -> Tensor:
    """NT-Xent averaged over all 2B anchors of the pooled batch."""
    if z.shape != z_aug.shape:
        raise DimensionError(f"simclr inputs differ: {z.shape} vs {z_aug.shape}")
    B = z.shape[0]
    pooled = nd.concat_rows([z, z_aug])
    norms = nd.column_norm(nd.transpose(pooled))
    if (norms.data < nd.DIV_EPS).any():
        warnings.warn("zero embedding row in simclr_loss", RuntimeWarning, stacklevel=2)
    unit = nd.div(pooled, nd.transpose(norms))
    sim = nd.scale(nd.matmul(unit, nd.transpose(unit)), 1.0 / tau)
    n = 2 * B
    logits = nd.sub(sim, Tensor(np.eye(n) * _SELF_MASK))
    pos = np.zeros((n, n))
    idx = np.arange(n)
    pos[idx, (idx + B) % n] = 1.0
    positive = nd.sum(nd.mul(sim, Tensor(pos)), axis=1)
    per_anchor = nd.sub(nd.logsumexp(logits, axis=1), positive)
    return nd.mean(per_anchor)


def barlow_twins_loss(z: Tensor, z_aug: Tensor, lam: float) -> Tensor:
    return intra_loss(intra_corr(z, z_aug), lam)


def cross_entropy(log_probs: Tensor, labels, labeled_mask=None) -> Tensor:
    """Mean negative log-likelihood over the labelled rows."""
    labels = np.asarray(labels, dtype=np.int64)
    B, C = log_probs.shape
    if labels.shape != (B,):
        raise DimensionError(f"labels shape {labels.shape} vs batch {B}")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ContractError("labels outside [0, C)")
    mask = np.ones(B, bool) if labeled_mask is None else np.asarray(labeled_mask, bool)
    count = int(mask.sum())
    if count == 0:
        raise ContractError("cross_entropy: no labelled rows in batch")
    pick = np.zeros((B, C))
    rows = np.flatnonzero(mask)
    pick[rows, labels[rows]] = 1.0
    return nd.scale(nd.sum(nd.mul(log_probs, Tensor(pick))), -1.0 / count)
