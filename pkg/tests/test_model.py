import math

import numpy as np
import pytest

from semcom import ndcore as nd
from semcom.errors import ContractError, DimensionError, ValidationError
from semcom.model import (SGD, Decoder, Encoder, OptimConfig, decode, encode, init_params,
                          learning_rate, load_checkpoint, save_checkpoint, sgd_step)
from semcom.ndcore import Tensor


def test_init_is_deterministic():
    a = init_params([32, 64, 16], seed=5)
    b = init_params([32, 64, 16], seed=5)
    c = init_params([32, 64, 16], seed=6)
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))
    assert not np.array_equal(a.weights[0].data, c.weights[0].data)


def test_init_scale_and_shapes():
    enc = init_params([200, 300, 16], seed=0)
    assert [w.shape for w in enc.weights] == [(300, 200), (16, 300)]
    assert [b.shape for b in enc.biases] == [(1, 300), (1, 16)]
    assert all(not b.data.any() for b in enc.biases)
    # uniform(-sqrt(6/fan_in), +) has std sqrt(2/fan_in)
    assert enc.weights[0].data.std() == pytest.approx(math.sqrt(2 / 200), rel=0.02)
    assert enc.out_dim == 16


def test_init_rejects_bad_dims():
    with pytest.raises(ValidationError):
        init_params([], seed=0)
    with pytest.raises(ValidationError):
        init_params([4, 0], seed=0)


def test_single_layer_encoder_is_affine():
    enc = init_params([3, 3], seed=0)
    enc.weights[0].data = np.eye(3)
    enc.biases[0].data = np.array([[0.5, -1.0, 2.0]])
    x = np.array([[1.0, 2.0, 3.0], [-1.0, 0.0, 4.0]])
    assert np.array_equal(encode(enc, x).data, x + enc.biases[0].data)


def test_encoder_matches_numpy_forward():
    rng = np.random.default_rng(1)
    enc = init_params([5, 7, 3], seed=2)
    x = rng.standard_normal((4, 5))
    w0, w1 = enc.weights[0].data, enc.weights[1].data
    expected = np.maximum(x @ w0.T, 0.0) @ w1.T
    assert np.allclose(encode(enc, x).data, expected, atol=1e-12)


def test_width_mismatch():
    enc = init_params([5, 3], seed=0)
    with pytest.raises(DimensionError):
        encode(enc, np.ones((2, 4)))
    dec = init_params([6, 4], seed=0, kind=Decoder)
    with pytest.raises(DimensionError):
        decode(dec, Tensor(np.ones((2, 5))))


def test_decode_rows_normalise():
    dec = init_params([6, 8, 10], seed=3, kind=Decoder)
    z = Tensor(np.random.default_rng(0).standard_normal((5, 6)) * 10)
    logp = decode(dec, z).data
    assert np.allclose(np.exp(logp).sum(axis=1), 1.0, atol=1e-12)


def test_zero_decoder_is_uniform():
    dec = init_params([4, 10], seed=0, kind=Decoder)
    dec.weights[0].data = np.zeros((10, 4))
    logp = decode(dec, Tensor(np.ones((3, 4)))).data
    assert np.allclose(logp, -math.log(10), atol=1e-15)


def test_sgd_plain_step():
    p = Tensor([[1.0, -2.0]], requires_grad=True)
    p.grad = np.array([[0.5, 1.0]])
    sgd_step([p], [np.zeros((1, 2))], OptimConfig(lr=0.1, momentum=0.0, weight_decay=0.0), 0.1)
    assert np.allclose(p.data, [[0.95, -2.1]], atol=1e-15)


def test_sgd_momentum_accumulates():
    # constant gradient: displacement after 2 steps is lr*(1 + (1+mu)) * g
    cfg = OptimConfig(lr=0.1, momentum=0.9, weight_decay=0.0, schedule="constant")
    p = Tensor([[0.0]], requires_grad=True)
    opt = SGD([p], cfg, total_epochs=1)
    for _ in range(2):
        p.grad = np.array([[1.0]])
        opt.step(0)
    assert p.data.item() == pytest.approx(-0.1 * 2.9, abs=1e-15)


def test_weight_decay_shrinks_toward_zero():
    p = Tensor([[2.0]], requires_grad=True)
    p.grad = np.zeros((1, 1))
    sgd_step([p], [np.zeros((1, 1))], OptimConfig(lr=0.1, momentum=0.0, weight_decay=0.5), 0.1)
    assert p.data.item() == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_zero_lr_leaves_params():
    p = Tensor([[3.0]], requires_grad=True)
    p.grad = np.array([[7.0]])
    sgd_step([p], [np.zeros((1, 1))], OptimConfig(), 0.0)
    assert p.data.item() == 3.0


def test_missing_gradient_named():
    p = Tensor([[1.0]], requires_grad=True, name="w_enc")
    with pytest.raises(ContractError, match="w_enc"):
        sgd_step([p], [np.zeros((1, 1))], OptimConfig(), 0.1)


def test_cosine_schedule():
    cfg = OptimConfig(lr=0.2)
    assert learning_rate(cfg, 0, 10) == pytest.approx(0.2)
    assert learning_rate(cfg, 5, 10) == pytest.approx(0.1)
    assert learning_rate(cfg, 10, 10) == pytest.approx(0.0, abs=1e-15)
    assert learning_rate(OptimConfig(lr=0.2, schedule="constant"), 7, 10) == 0.2


def test_optim_validate():
    with pytest.raises(ValidationError) as exc:
        OptimConfig(lr=0.0, momentum=1.0, schedule="step").validate()
    for name in ("lr", "momentum", "schedule"):
        assert name in str(exc.value)


def test_training_reduces_loss():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((40, 4))
    y = (x[:, 0] > 0).astype(int)
    dec = init_params([4, 8, 2], seed=1, kind=Decoder)
    from semcom.losses import cross_entropy
    opt = SGD(dec.parameters(), OptimConfig(lr=0.1, schedule="constant"), 1)
    losses = []
    for _ in range(50):
        loss = cross_entropy(decode(dec, Tensor(x)), y)
        nd.backward(loss, wrt=dec.parameters())
        opt.step(0)
        losses.append(loss.item())
    assert losses[-1] < 0.5 * losses[0]


@pytest.mark.parametrize("kind", [Encoder, Decoder])
def test_checkpoint_round_trip(tmp_path, kind):
    model = init_params([5, 6, 3], seed=9, kind=kind)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, seed=9, stage="pretrain")
    loaded, header = load_checkpoint(path)
    assert type(loaded) is kind
    assert header["layer_dims"] == [5, 6, 3] and header["seed"] == 9 and header["stage"] == "pretrain"
    assert header["tensor_order"] == ["weight0", "bias0", "weight1", "bias1"]
    for p, q in zip(model.parameters(), loaded.parameters()):
        assert p.data.tobytes() == q.data.tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValidationError):
        load_checkpoint(path)
    model = init_params([2, 2], seed=0)
    save_checkpoint(path, model, 0, "finetune")
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValidationError):
        load_checkpoint(path)


def test_copy_is_independent():
    enc = init_params([3, 2], seed=0)
    clone = enc.copy()
    clone.weights[0].data = clone.weights[0].data + 1.0
    assert not np.array_equal(enc.weights[0].data, clone.weights[0].data)
