"""Two-stage training: label-free pre-training on the devices, then joint
fine-tuning of encoders and decoder across the noisy feature channel.

A communication round is one fine-tuning mini-batch: every device uploads
its B x K feature block and receives the matching gradient block.  Stage I
is local and never charged.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import ndcore as nd
from .channel import ChannelConfig, apply_channel, concat_features, parse_snr, power_normalize
from .datagen import AugConfig, GenConfig, MultiModalDataset, augment, gen_dataset, subset_labels
from .errors import ContractError, ValidationError
from .losses import LossHyperParams, barlow_twins_loss, cross_entropy, pretrain_loss, simclr_loss
from .model import SGD, Decoder, Encoder, OptimConfig, decode, encode, init_params

log = logging.getLogger(__name__)

METHODS = ("proposed", "simclr", "barlow", "supervised")
PRETRAIN, FINETUNE = "pretrain", "finetune"

# rng stream ids; fixed so every run draws the same numbers for the same purpose
_S_ENC, _S_DEC, _S_PRE_BATCH, _S_AUG, _S_FT_BATCH, _S_CHAN, _S_EVAL, _S_LABELS = range(8)


def stream(seed: int, sid: int, sub: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), 1000 + sid, sub])


@dataclass
class ModelConfig:
    encoder_hidden: list = field(default_factory=lambda: [64])
    feature_dim: int = 16
    decoder_hidden: list = field(default_factory=lambda: [64])


@dataclass
class RunConfig:
    method: str = "proposed"
    pretrain_epochs: int = 60
    finetune_epochs: int = 10
    batch_size: int = 64
    snr_db: float = 20.0
    label_fraction: float = 1.0
    seed: int = 0
    eval_every: int = 10
    channel_in_training: bool = True
    complex_as_two_reals: bool = True
    gen: GenConfig = field(default_factory=GenConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain_optim: OptimConfig = field(default_factory=OptimConfig)
    finetune_optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossHyperParams = field(default_factory=LossHyperParams)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    aug: AugConfig = field(default_factory=AugConfig)

    def validate(self) -> None:
        bad = []
        if self.method not in METHODS:
            bad.append("method")
        if self.pretrain_epochs < 0 or (self.method == "supervised" and self.pretrain_epochs != 0):
            bad.append("pretrain_epochs")
        if self.finetune_epochs < 1:
            bad.append("finetune_epochs")
        if self.batch_size < 2:
            bad.append("batch_size")
        if not 0.0 < self.label_fraction <= 1.0:
            bad.append("label_fraction")
        if self.eval_every < 1:
            bad.append("eval_every")
        if math.isnan(parse_snr(self.snr_db)):
            bad.append("snr_db")
        if bad:
            raise ValidationError("invalid run config", bad)
        self.gen.validate()
        self.pretrain_optim.validate()
        self.finetune_optim.validate()
        self.loss.validate(self.model.feature_dim)
        self.aug.validate()
        self.channel_config().validate(self.gen.num_modalities)

    def channel_config(self) -> ChannelConfig:
        return replace(self.channel, snr_db=parse_snr(self.snr_db))


@dataclass
class LedgerEntry:
    stage: str
    round: int
    uplink: int
    downlink: int


class CommLedger:
    """Real scalars exchanged per round, device to server and back."""

    def __init__(self):
        self.entries: list = []
        self._rounds: dict = {}

    def add(self, stage: str, uplink: int, downlink: int) -> LedgerEntry:
        rnd = self._rounds.get(stage, 0)
        self._rounds[stage] = rnd + 1
        entry = LedgerEntry(stage, rnd, int(uplink), int(downlink))
        self.entries.append(entry)
        return entry

    def stage(self, stage: str) -> list:
        return [e for e in self.entries if e.stage == stage]

    @property
    def uplink_total(self) -> int:
        return sum(e.uplink for e in self.entries)

    @property
    def downlink_total(self) -> int:
        return sum(e.downlink for e in self.entries)


@dataclass
class MetricRecord:
    round: int
    stage: str
    method: str
    seed: int
    snr_db: float
    label_fraction: float
    train_loss: float
    test_accuracy: float
    uplink_scalars: int
    downlink_scalars: int


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    if n < batch_size:
        yield perm
        return
    for start in range(0, n - batch_size + 1, batch_size):
        yield perm[start:start + batch_size]


def make_encoders(cfg: RunConfig) -> list:
    dims_of = lambda D: [D, *cfg.model.encoder_hidden, cfg.model.feature_dim]  # noqa: E731
    return [init_params(dims_of(D), [cfg.seed, 1000 + _S_ENC, m], Encoder)
            for m, D in enumerate(cfg.gen.observed_dims)]


def make_decoder(cfg: RunConfig) -> Decoder:
    M, K = cfg.gen.num_modalities, cfg.model.feature_dim
    dims = [M * K, *cfg.model.decoder_hidden, cfg.gen.num_classes]
    return init_params(dims, [cfg.seed, 1000 + _S_DEC], Decoder)


def ssl_loss(method: str, views: list, hp: LossHyperParams) -> nd.Tensor:
    if method == "proposed":
        return pretrain_loss(views, hp)
    if method == "simclr":
        terms = [simclr_loss(z, zt, hp.tau) for z, zt in views]
    elif method == "barlow":
        terms = [barlow_twins_loss(z, zt, hp.lambda_bt) for z, zt in views]
    else:
        raise ContractError(f"method {method!r} has no self-supervised stage")
    total = terms[0]
    for t in terms[1:]:
        total = nd.add(total, t)
    return total


def pretrain(train: MultiModalDataset, encoders: list, cfg: RunConfig, ledger: CommLedger | None = None):
    """Stage I.  Returns ``(encoders, per-epoch mean loss)``.

    Only the feature matrices are read; labels never enter this path.
    """
    if cfg.method == "supervised":
        raise ContractError("supervised runs have no pre-training stage")
    features = train.features
    n = features[0].shape[0]
    params = [p for e in encoders for p in e.parameters()]
    opt = SGD(params, cfg.pretrain_optim, cfg.pretrain_epochs)
    batch_rng = stream(cfg.seed, _S_PRE_BATCH)
    aug_rng = stream(cfg.seed, _S_AUG, cfg.aug.stream)
    history = []
    for epoch in range(cfg.pretrain_epochs):
        losses = []
        for idx in _batches(n, cfg.batch_size, batch_rng):
            xs = [x[idx] for x in features]
            xts = augment(xs, cfg.aug, aug_rng)
            views = [(encode(e, x), encode(e, xt)) for e, x, xt in zip(encoders, xs, xts)]
            loss = ssl_loss(cfg.method, views, cfg.loss)
            nd.backward(loss, wrt=params)
            opt.step(epoch)
            losses.append(loss.item())
            if ledger is not None:
                ledger.add(PRETRAIN, 0, 0)
        history.append(float(np.mean(losses)))
    return encoders, history


def round_cost(cfg: RunConfig, batch: int) -> tuple:
    """(uplink, downlink) real scalars for one fine-tuning round."""
    MBK = cfg.gen.num_modalities * batch * cfg.model.feature_dim
    return MBK * (2 if cfg.complex_as_two_reals else 1), MBK


def forward_features(encoders, xs, chan: ChannelConfig, rng, use_channel: bool) -> nd.Tensor:
    blocks = []
    for m, (e, x) in enumerate(zip(encoders, xs)):
        z = encode(e, x)
        blocks.append(apply_channel(z, chan, rng, m) if use_channel else power_normalize(z))
    return concat_features(blocks)


def evaluate(test: MultiModalDataset, encoders, decoder, cfg: RunConfig, rng: np.random.Generator) -> float:
    """Accuracy with fresh channel noise; ties break toward the lowest class."""
    if len(test) == 0:
        raise ContractError("empty test set")
    with nd.no_grad():
        zc = forward_features(encoders, test.features, cfg.channel_config(), rng, True)
        logp = decode(decoder, zc)
    return float(np.mean(np.argmax(logp.data, axis=1) == test.labels))


def finetune(train: MultiModalDataset, encoders, decoder, cfg: RunConfig, test=None,
             ledger: CommLedger | None = None):
    """Stage II.  Returns ``(encoders, decoder, records)``."""
    ledger = ledger if ledger is not None else CommLedger()
    params = [p for e in encoders for p in e.parameters()] + decoder.parameters()
    opt = SGD(params, cfg.finetune_optim, cfg.finetune_epochs)
    chan = cfg.channel_config()
    batch_rng = stream(cfg.seed, _S_FT_BATCH)
    chan_rng = stream(cfg.seed, _S_CHAN, cfg.channel.stream)
    eval_rng = stream(cfg.seed, _S_EVAL)
    records = []
    rounds = 0
    window = []
    n = len(train)

    def snapshot():
        acc = evaluate(test, encoders, decoder, cfg, eval_rng) if test is not None else float("nan")
        records.append(MetricRecord(
            round=rounds, stage=FINETUNE, method=cfg.method, seed=cfg.seed,
            snr_db=parse_snr(cfg.snr_db), label_fraction=cfg.label_fraction,
            train_loss=float(np.mean(window)) if window else float("nan"),
            test_accuracy=acc, uplink_scalars=ledger.uplink_total,
            downlink_scalars=ledger.downlink_total))
        window.clear()

    for epoch in range(cfg.finetune_epochs):
        for idx in _batches(n, cfg.batch_size, batch_rng):
            mask = train.labeled_mask[idx]
            if not mask.any():
                continue
            xs = [x[idx] for x in train.features]
            zc = forward_features(encoders, xs, chan, chan_rng, cfg.channel_in_training)
            loss = cross_entropy(decode(decoder, zc), train.labels[idx], mask)
            nd.backward(loss, wrt=params)
            opt.step(epoch)
            ledger.add(FINETUNE, *round_cost(cfg, len(idx)))
            rounds += 1
            window.append(loss.item())
            if rounds % cfg.eval_every == 0:
                snapshot()
    if window or not records:
        snapshot()
    return encoders, decoder, records


def _pretrain_key(cfg: RunConfig) -> str:
    parts = {k: asdict(getattr(cfg, k)) for k in ("gen", "model", "pretrain_optim", "loss", "aug")}
    parts.update(method=cfg.method, seed=cfg.seed, epochs=cfg.pretrain_epochs, batch=cfg.batch_size)
    return json.dumps(parts, sort_keys=True, default=str)


def run_experiment(cfg: RunConfig, ledger: CommLedger | None = None, cache: dict | None = None,
                   data=None) -> list:
    """Stage I (unless supervised) then Stage II; deterministic per seed.

    ``cache`` may be shared between runs that differ only in fine-tuning
    settings (SNR, label fraction); Stage I does not depend on them.
    """
    cfg.validate()
    ledger = ledger if ledger is not None else CommLedger()
    train, test = data if data is not None else gen_dataset(cfg.gen)
    if cfg.label_fraction < 1.0:
        train = subset_labels(train, cfg.label_fraction, cfg.seed)
    encoders = make_encoders(cfg)
    records = []
    if cfg.method != "supervised":
        key = _pretrain_key(cfg)
        if cache is not None and key in cache:
            weights, history, steps = cache[key]
            for e, ws in zip(encoders, weights):
                for p, w in zip(e.parameters(), ws):
                    p.data = w.copy()
            for _ in range(steps):
                ledger.add(PRETRAIN, 0, 0)
        else:
            before = len(ledger.entries)
            encoders, history = pretrain(train, encoders, cfg, ledger)
            if cache is not None:
                weights = [[p.data.copy() for p in e.parameters()] for e in encoders]
                cache[key] = (weights, history, len(ledger.entries) - before)
        acc = evaluate(test, encoders, make_decoder(cfg), cfg, stream(cfg.seed, _S_EVAL, 1))
        records.append(MetricRecord(
            round=0, stage=PRETRAIN, method=cfg.method, seed=cfg.seed,
            snr_db=parse_snr(cfg.snr_db), label_fraction=cfg.label_fraction,
            train_loss=history[-1] if history else float("nan"), test_accuracy=acc,
            uplink_scalars=0, downlink_scalars=0))
    _, _, ft = finetune(train, encoders, make_decoder(cfg), cfg, test, ledger)
    records.extend(ft)
    log.info("%s seed=%d snr=%s labels=%.2f final acc %.4f", cfg.method, cfg.seed, cfg.snr_db,
             cfg.label_fraction, ft[-1].test_accuracy)
    return records


def rounds_to_reach(records, target: float) -> float:
    """First fine-tuning round whose accuracy reaches ``target`` (inf if never)."""
    for r in sorted((r for r in records if r.stage == FINETUNE), key=lambda r: r.round):
        if r.test_accuracy >= target:
            return float(r.round)
    return math.inf


def final_accuracy(records) -> float:
    ft = [r for r in records if r.stage == FINETUNE]
    return max(ft, key=lambda r: r.round).test_accuracy
