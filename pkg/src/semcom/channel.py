"""Complex AWGN feature channel with zero-forcing equalisation.

SNR is measured against unit average per-dimension signal power, so the
complex noise variance is ``10 ** (-snr_db / 10)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import ndcore as nd
from .errors import ChannelOutageError, DimensionError, NumericError, ValidationError
from .ndcore import Tensor

NOISELESS = math.inf


def parse_snr(value) -> float:
    if value is None or (isinstance(value, str) and value.lower() in ("noiseless", "inf", "+inf")):
        return NOISELESS
    return float(value)


@dataclass
class ChannelConfig:
    h: list = field(default_factory=lambda: [1.0, 1.0])  # per modality; complex allowed
    snr_db: float = 20.0
    fading: str = "fixed"  # or "rayleigh"
    enabled: bool = True
    stream: int = 0

    def coefficient(self, m: int) -> complex:
        h = self.h[m] if isinstance(self.h, (list, tuple)) else self.h
        if isinstance(h, (list, tuple)):  # JSON form [re, im]
            h = complex(h[0], h[1])
        return complex(h)

    def validate(self, M: int | None = None) -> None:
        bad = []
        snr = parse_snr(self.snr_db)
        if math.isnan(snr) or snr == -math.inf:
            bad.append("snr_db")
        if self.fading not in ("fixed", "rayleigh"):
            bad.append("fading")
        if self.fading == "fixed":
            n = M if M is not None else (len(self.h) if isinstance(self.h, (list, tuple)) else 1)
            try:
                if any(abs(self.coefficient(m)) == 0 for m in range(n)):
                    bad.append("h")
            except (IndexError, TypeError, ValueError):
                bad.append("h")
        if bad:
            raise ValidationError("invalid channel config", bad)


@dataclass
class ChannelOutput:
    received: np.ndarray  # complex, B x K
    h: complex
    noise_var: float
    scale: float  # power-normalisation factor applied to the input


def noise_variance(snr_db) -> float:
    snr = parse_snr(snr_db)
    return 0.0 if snr == math.inf else 10.0 ** (-snr / 10.0)


def power_scale(z: np.ndarray) -> float:
    p = float(np.mean(z * z))
    return 1.0 / math.sqrt(p) if p > 0 else 1.0


def transmit(z, cfg: ChannelConfig, rng: np.random.Generator, m: int = 0,
             normalize: bool = True) -> ChannelOutput:
    """Send real features through ``h*z + n`` with circular complex noise."""
    z = np.asarray(z.data if isinstance(z, Tensor) else z, dtype=np.float64)
    if not np.isfinite(z).all():
        raise NumericError("transmit: non-finite features")
    s = 1.0
    if normalize:
        if not np.any(z):
            warnings.warn("all-zero batch: power normalisation skipped", RuntimeWarning, stacklevel=2)
        else:
            s = power_scale(z)
    zn = z * s
    if cfg.fading == "rayleigh":
        h = complex(rng.normal(scale=math.sqrt(0.5)), rng.normal(scale=math.sqrt(0.5)))
    else:
        h = cfg.coefficient(m)
    var = noise_variance(cfg.snr_db)
    received = h * zn.astype(np.complex128)
    if var > 0:
        std = math.sqrt(var / 2.0)
        received = received + (rng.normal(scale=std, size=z.shape) + 1j * rng.normal(scale=std, size=z.shape))
    return ChannelOutput(received, h, var, s)


def equalize(out: ChannelOutput) -> np.ndarray:
    """Zero-forcing: Re(conj(h) * received) / |h|^2."""
    mag2 = abs(out.h) ** 2
    if mag2 == 0:
        raise ChannelOutageError("channel coefficient is zero")
    return np.real(np.conj(out.h) * out.received) / mag2


def power_normalize(z: Tensor) -> Tensor:
    """Differentiable scaling to unit mean power per dimension over the batch."""
    if not np.any(z.data):
        warnings.warn("all-zero batch: power normalisation skipped", RuntimeWarning, stacklevel=2)
        return z
    return nd.div(z, nd.sqrt(nd.mean(nd.square(z))))


def apply_channel(z: Tensor, cfg: ChannelConfig, rng: np.random.Generator, m: int = 0) -> Tensor:
    """Normalise, transmit, equalise; noise enters as a frozen constant.

    The backward pass sees the channel as additive noise, so gradients flow
    to ``z`` through the power normalisation only.
    """
    zn = power_normalize(z)
    if not cfg.enabled:
        return zn
    out = transmit(zn.data, cfg, rng, m, normalize=False)
    residual = equalize(out) - zn.data
    return nd.add(zn, Tensor._wrap(residual, False))


def concat_features(blocks) -> Tensor:
    blocks = [b if isinstance(b, Tensor) else Tensor(b) for b in blocks]
    rows = {b.shape[0] for b in blocks}
    if len(rows) != 1:
        raise DimensionError(f"row counts differ: {sorted(rows)}")
    if len(blocks) == 1:
        return blocks[0]
    return nd.concat_cols(blocks)
