"""Self-check suites shared by the CLI and the tests."""
from __future__ import annotations

import numpy as np

from . import ndcore as nd
from .channel import ChannelConfig, apply_channel
from .infotheory import random_joint, verify_decomposition, xor_joint
from .losses import (LossHyperParams, barlow_twins_loss, cross_corr, cross_entropy, cross_loss,
                     intra_corr, intra_loss, pretrain_loss, simclr_loss)
from .ndcore import Tensor


def _loss_cases(rng: np.random.Generator, B: int, K: int) -> dict:
    hp = LossHyperParams(lambda_intra=0.3, lambda_sha=0.4, lambda_uni=0.2, k_sha=K // 2, tau=0.5,
                         lambda_bt=0.3)
    z = rng.standard_normal((B, K))
    zt = rng.standard_normal((B, K))
    z2 = rng.standard_normal((B, K))
    z2t = rng.standard_normal((B, K))
    C = 5
    labels = rng.integers(0, C, size=B)
    mask = np.arange(B) % 3 != 0
    chan = ChannelConfig(h=[[0.6, -0.8], [1.2, 0.3]], snr_db=5.0)
    fixed = lambda a: Tensor(a)  # noqa: E731

    def chan_loss(t):
        # fresh generator per call keeps the noise frozen across probes
        out = apply_channel(t, chan, np.random.default_rng(11), m=0)
        return nd.sum(nd.square(out))

    return {
        "intra_corr/z": (lambda t: nd.sum(nd.square(intra_corr(t, fixed(zt)).values)), z),
        "intra_loss/z": (lambda t: intra_loss(intra_corr(t, fixed(zt)), 0.3), z),
        "intra_loss/z_aug": (lambda t: intra_loss(intra_corr(fixed(z), t), 0.3), zt),
        "cross_loss/z_m": (lambda t: cross_loss(cross_corr(t, fixed(z2)), hp), z),
        "cross_loss/z_n": (lambda t: cross_loss(cross_corr(fixed(z), t), hp), z2),
        "pretrain_loss/z1": (lambda t: pretrain_loss([(t, fixed(zt)), (fixed(z2), fixed(z2t))], hp), z),
        "pretrain_loss/z2_aug": (lambda t: pretrain_loss([(fixed(z), fixed(zt)), (fixed(z2), t)], hp), z2t),
        "simclr_loss/z": (lambda t: simclr_loss(t, fixed(zt), hp.tau), z),
        "simclr_loss/z_aug": (lambda t: simclr_loss(fixed(z), t, hp.tau), zt),
        "barlow_twins_loss/z": (lambda t: barlow_twins_loss(t, fixed(zt), hp.lambda_bt), z),
        "cross_entropy/logits": (lambda t: cross_entropy(nd.log_softmax(t), labels, mask),
                                 rng.standard_normal((B, C))),
        "channel/frozen_noise": (chan_loss, z),
    }


def loss_gradient_suite(seed: int = 0, B: int = 8, K: int = 4, tolerance: float = 1e-4) -> dict:
    """Finite-difference check of every training objective; name -> GradCheckReport."""
    rng = np.random.default_rng(seed)
    return {name: nd.grad_check(fn, point, tolerance=tolerance)
            for name, (fn, point) in _loss_cases(rng, B, K).items()}


def mi_suite(trials: int = 100, seed: int = 0, max_alphabet: int = 4) -> dict:
    """Decomposition residuals over random joints plus the XOR joint."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        rep = verify_decomposition(random_joint(rng, max_alphabet))
        worst = max(worst, rep.eq5_residual, rep.eq6_residual)
    xor = verify_decomposition(xor_joint())
    worst = max(worst, xor.eq5_residual, xor.eq6_residual)
    return {"trials": trials, "max_residual": worst,
            "xor_interaction": xor.terms["I(Z1;Z2;Y)"]}
