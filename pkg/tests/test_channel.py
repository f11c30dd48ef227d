import math

import numpy as np
import pytest

from semcom import ndcore as nd
from semcom.channel import (NOISELESS, ChannelConfig, apply_channel, concat_features, equalize,
                            noise_variance, parse_snr, power_normalize, transmit)
from semcom.errors import ChannelOutageError, DimensionError, ValidationError
from semcom.ndcore import Tensor


def features(seed=0, shape=(64, 16)):
    return np.random.default_rng(seed).standard_normal(shape) * 3.0 + 1.0


def normalised(z):
    return z / np.sqrt(np.mean(z * z))


def three_se(samples, target):
    # standard error of a sample variance estimate from its squared deviations
    sq = samples ** 2
    se = sq.std(ddof=1) / math.sqrt(sq.size)
    return abs(sq.mean() - target) <= 3 * se


def test_noise_variance_definition():
    assert noise_variance(0) == 1.0
    assert noise_variance(10) == pytest.approx(0.1, rel=1e-15)
    assert noise_variance(20) == pytest.approx(0.01, rel=1e-15)
    assert noise_variance("noiseless") == 0.0


def test_parse_snr_sentinels():
    assert parse_snr(None) == NOISELESS
    assert parse_snr("noiseless") == math.inf
    assert parse_snr("inf") == math.inf
    assert parse_snr("7.5") == 7.5


@pytest.mark.parametrize("h", [1.0, 1j, 2.0, [0.6, -0.8]])
def test_noiseless_equalisation_recovers_normalised_input(h):
    z = features()
    cfg = ChannelConfig(h=[h], snr_db="noiseless")
    out = transmit(z, cfg, np.random.default_rng(0))
    assert np.max(np.abs(equalize(out) - normalised(z))) <= 1e-12


def test_noiseless_h1_received_is_normalised_input():
    z = features(1)
    out = transmit(z, ChannelConfig(h=[1.0], snr_db=math.inf), np.random.default_rng(0))
    assert np.array_equal(out.received.real, z * out.scale)
    assert not out.received.imag.any()


def test_power_normalisation_unit_power():
    out = transmit(features(2), ChannelConfig(snr_db=math.inf), np.random.default_rng(0))
    zn = out.received.real
    assert np.mean(zn * zn) == pytest.approx(1.0, rel=1e-12)


def test_complex_noise_variance_at_10db():
    z = features(3, (256, 16))
    cfg = ChannelConfig(h=[1.0], snr_db=10.0)
    out = transmit(z, cfg, np.random.default_rng(42))
    noise = out.received - z * out.scale
    assert noise.size >= 4096
    mag = np.abs(noise)
    assert three_se(mag, 0.1)


def test_equalised_residual_variance_per_real_dimension():
    z = features(4)
    out = transmit(z, ChannelConfig(h=[1.0], snr_db=10.0), np.random.default_rng(7))
    residual = equalize(out) - z * out.scale
    assert three_se(residual, 0.05)


def test_residual_scales_with_channel_gain():
    z = features(5, (128, 32))
    out = transmit(z, ChannelConfig(h=[2.0], snr_db=10.0), np.random.default_rng(8))
    residual = equalize(out) - z * out.scale
    assert three_se(residual, 0.05 / 4)


def test_outage():
    out = transmit(features(), ChannelConfig(h=[1.0]), np.random.default_rng(0))
    out.h = 0j
    with pytest.raises(ChannelOutageError):
        equalize(out)


def test_zero_batch_warns_and_still_adds_noise():
    with pytest.warns(RuntimeWarning):
        out = transmit(np.zeros((8, 4)), ChannelConfig(snr_db=0.0), np.random.default_rng(0))
    assert np.abs(out.received).sum() > 0


def test_rayleigh_draws_coefficient():
    cfg = ChannelConfig(fading="rayleigh", snr_db=math.inf)
    out = transmit(features(), cfg, np.random.default_rng(3))
    assert out.h != 1.0
    assert np.max(np.abs(equalize(out) - normalised(features()))) <= 1e-12


def test_config_validation():
    with pytest.raises(ValidationError) as exc:
        ChannelConfig(h=[0.0], fading="rician").validate(1)
    assert "fading" in str(exc.value)
    with pytest.raises(ValidationError):
        ChannelConfig(h=[0.0, 1.0]).validate(2)
    with pytest.raises(ValidationError):
        ChannelConfig(h=[1.0]).validate(2)


def test_disabled_channel_only_normalises():
    z = Tensor(features())
    out = apply_channel(z, ChannelConfig(enabled=False, snr_db=0.0), np.random.default_rng(0))
    assert np.array_equal(out.data, power_normalize(z).data)


def test_noiseless_channel_equals_disabled():
    z = Tensor(features(6))
    a = apply_channel(z, ChannelConfig(snr_db=math.inf), np.random.default_rng(0))
    b = apply_channel(z, ChannelConfig(enabled=False), np.random.default_rng(0))
    assert np.array_equal(a.data, b.data)


def test_frozen_noise_gradient():
    cfg = ChannelConfig(h=[[0.3, 0.9]], snr_db=3.0)
    w = np.random.default_rng(9).standard_normal((6, 4))

    def fn(t):
        out = apply_channel(t, cfg, np.random.default_rng(123))
        return nd.sum(nd.mul(out, Tensor(w)))

    report = nd.grad_check(fn, features(7, (6, 4)))
    assert report.passed, report.max_rel_err


def test_channel_gradient_equals_normalisation_gradient():
    z0 = features(8, (5, 3))
    grads = []
    for cfg in (ChannelConfig(snr_db=0.0), ChannelConfig(enabled=False)):
        z = Tensor(z0, requires_grad=True)
        out = apply_channel(z, cfg, np.random.default_rng(1))
        nd.backward(nd.sum(nd.mul(out, Tensor(z0))))
        grads.append(z.grad.copy())
    assert np.allclose(grads[0], grads[1], atol=1e-12)


def test_concat_features():
    a = Tensor([[1.0], [2.0]])
    b = Tensor([[3.0], [4.0]])
    assert concat_features([a]) is a
    assert concat_features([a, b]).data.tolist() == [[1.0, 3.0], [2.0, 4.0]]
    with pytest.raises(DimensionError):
        concat_features([a, Tensor([[1.0]])])
