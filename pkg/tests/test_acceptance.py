"""Acceptance criteria 1-9, one PASS/FAIL line each.

Criteria 7 and 8 share a single default-config grid run (four methods,
SNR 10/20 dB, full and half labels, five seeds).
"""
import math
import time

import numpy as np
import pytest

from semcom.channel import ChannelConfig, equalize, transmit
from semcom.checks import loss_gradient_suite, mi_suite
from semcom.cli import main
from semcom.datagen import GenConfig, gen_dataset
from semcom.losses import CorrelationMatrix, LossHyperParams, cross_entropy, cross_loss, intra_loss, simclr_loss
from semcom.ndcore import Tensor
from semcom.pipeline import (FINETUNE, METHODS, PRETRAIN, CommLedger, RunConfig, final_accuracy,
                             finetune, make_decoder, make_encoders, rounds_to_reach, run_experiment)
from semcom.results import ExperimentGrid, run_grid

SNRS = (10.0, 20.0)
SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return emit


@pytest.fixture(scope="module")
def grid_run():
    grid = ExperimentGrid(base=RunConfig(), methods=list(METHODS), snr_db=list(SNRS),
                          label_fractions=[1.0, 0.5], seeds=list(SEEDS))
    start = time.perf_counter()
    records = run_grid(grid)
    return records, time.perf_counter() - start


def cell(records, method, snr, fraction):
    """Per-seed record lists for one grid cell."""
    out = {}
    for r in records:
        if r.method == method and r.snr_db == snr and r.label_fraction == fraction:
            out.setdefault(r.seed, []).append(r)
    return [out[s] for s in sorted(out)]


def total_rounds(runs):
    return max(r.round for r in runs[0] if r.stage == FINETUNE)


def test_1_gradient_correctness(report):
    start = time.perf_counter()
    reports = loss_gradient_suite(seed=0, B=8, K=4, tolerance=1e-4)
    elapsed = time.perf_counter() - start
    worst = max(r.max_rel_err for r in reports.values())
    ok = all(r.passed for r in reports.values()) and elapsed < 30
    assert report(1, ok, f"{len(reports)} checks, max rel err {worst:.2e}, {elapsed:.2f}s"), reports


def test_2_loss_unit_values(report):
    intra = intra_loss(CorrelationMatrix(Tensor([[1.0, 0.5], [0.5, 1.0]]), "intra"), 1.0).item()
    cross = cross_loss(CorrelationMatrix(Tensor([[0.9, 0.0], [0.0, 0.3]]), "cross"),
                       LossHyperParams(k_sha=1)).item()
    simclr = simclr_loss(Tensor(np.eye(2)), Tensor(np.eye(2)), 1.0).item()
    ce = cross_entropy(Tensor(np.full((3, 10), -math.log(10))), [0, 4, 9]).item()
    errors = [abs(intra - 0.5), abs(cross - 0.10), abs(simclr + math.log(math.e / (math.e + 2))),
              abs(ce - math.log(10))]
    ok = max(errors) <= 1e-9
    assert report(2, ok, f"max deviation {max(errors):.1e}"), errors


def test_3_mi_identities(report):
    start = time.perf_counter()
    res = mi_suite(trials=100, seed=0, max_alphabet=4)
    elapsed = time.perf_counter() - start
    ok = res["max_residual"] <= 1e-12 and res["xor_interaction"] == -1.0 and elapsed < 5
    assert report(3, ok, f"max residual {res['max_residual']:.1e}, XOR interaction "
                         f"{res['xor_interaction']:g} bit, {elapsed:.2f}s"), res


def test_4_pretraining_is_free(report, grid_run):
    records, _ = grid_run
    charged = [r for r in records if r.stage == PRETRAIN and (r.uplink_scalars or r.downlink_scalars)]
    # ledger rows themselves, every SSL method and seed, on a reduced config
    rows = 0
    bad = 0
    for method in ("proposed", "simclr", "barlow"):
        for seed in SEEDS:
            ledger = CommLedger()
            run_experiment(RunConfig(method=method, seed=seed, pretrain_epochs=2, finetune_epochs=1,
                                     gen=GenConfig(train_per_class=20, test_per_class=5)), ledger)
            stage1 = ledger.stage(PRETRAIN)
            rows += len(stage1)
            bad += sum(1 for e in stage1 if e.uplink or e.downlink)
    ok = not charged and bad == 0 and rows > 0
    assert report(4, ok, f"{rows} Stage-I ledger rows, {bad} charged; "
                         f"{len(charged)} charged Stage-I CSV rows"), charged


def test_5_ledger_arithmetic(report):
    cfg = RunConfig(finetune_epochs=1, gen=GenConfig(train_per_class=64, test_per_class=2))
    assert (cfg.gen.num_modalities, cfg.batch_size, cfg.model.feature_dim) == (2, 64, 16)
    train, test = gen_dataset(cfg.gen)
    ledger = CommLedger()
    finetune(train, make_encoders(cfg), make_decoder(cfg), cfg, test, ledger)
    rounds = ledger.stage(FINETUNE)
    ok = len(rounds) == 10 and all((e.uplink, e.downlink) == (4096, 2048) for e in rounds)
    assert report(5, ok, f"{len(rounds)} rounds, per-round costs "
                         f"{sorted({(e.uplink, e.downlink) for e in rounds})}"), rounds


def test_6_channel_statistics(report):
    rng = np.random.default_rng(2024)
    z = rng.standard_normal((256, 16)) * 2.0 + 0.5
    out = transmit(z, ChannelConfig(h=[1.0], snr_db=10.0), rng)
    noise = (out.received - z * out.scale).ravel()
    power = np.abs(noise) ** 2
    se = power.std(ddof=1) / math.sqrt(power.size)
    stat_ok = noise.size >= 4096 and abs(power.mean() - 0.1) <= 3 * se
    exact = transmit(z, ChannelConfig(h=[1.0], snr_db="noiseless"), rng)
    identity_err = float(np.max(np.abs(equalize(exact) - z * exact.scale)))
    ok = stat_ok and identity_err <= 1e-12
    assert report(6, ok, f"noise variance {power.mean():.4f} (target 0.1, 3SE {3 * se:.4f}, "
                         f"n={noise.size}); noiseless error {identity_err:.1e}"), (power.mean(), se)


def test_7_full_label_trend(report, grid_run):
    records, elapsed = grid_run
    lines, ok = [], elapsed < 600
    for snr in SNRS:
        sup = cell(records, "supervised", snr, 1.0)
        prop = cell(records, "proposed", snr, 1.0)
        sup_final = float(np.median([final_accuracy(r) for r in sup]))
        prop_final = float(np.median([final_accuracy(r) for r in prop]))
        reach = float(np.median([rounds_to_reach(r, sup_final) for r in prop]))
        budget = total_rounds(sup)
        ratio = reach / budget
        ok &= ratio <= 0.5 and prop_final >= sup_final - 0.01
        lines.append(f"{snr:g}dB ratio {ratio:.2f} (rounds {reach:g}/{budget}), "
                     f"final {prop_final:.3f} vs supervised {sup_final:.3f}")
    assert report(7, ok, "; ".join(lines) + f"; grid {elapsed:.0f}s"), lines


def test_8_half_label_trend(report, grid_run):
    records, _ = grid_run
    lines, ok = [], True
    for snr in SNRS:
        sup = float(np.median([final_accuracy(r) for r in cell(records, "supervised", snr, 0.5)]))
        prop = float(np.median([final_accuracy(r) for r in cell(records, "proposed", snr, 0.5)]))
        ok &= prop >= sup
        lines.append(f"{snr:g}dB proposed {prop:.3f} vs supervised {sup:.3f}")
    assert report(8, ok, "; ".join(lines)), lines


def test_9_determinism(report, tmp_path):
    cfg = tmp_path / "grid.json"
    cfg.write_text('{"base": {"pretrain_epochs": 2, "finetune_epochs": 1, '
                   '"gen": {"train_per_class": 30, "test_per_class": 10}}, '
                   '"methods": ["proposed", "simclr", "barlow", "supervised"], '
                   '"snr_db": [10.0], "label_fractions": [1.0, 0.5], "seeds": [0, 1]}')
    blobs = []
    for name in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
        blobs.append((tmp_path / name / "metrics.csv").read_bytes())
    ok = blobs[0] == blobs[1] and len(blobs[0]) > 0
    assert report(9, ok, f"two runs, {len(blobs[0])} bytes each, identical={blobs[0] == blobs[1]}")



def test_proposed_plateaus_sooner_than_supervised():
    # every round is evaluated: the default 10-round snapshots quantise this
    # comparison so coarsely that both medians land on the same snapshot
    grid = ExperimentGrid(base=RunConfig(eval_every=1), methods=["proposed", "supervised"],
                          snr_db=list(SNRS), seeds=list(SEEDS))
    records = run_grid(grid)
    for snr in SNRS:
        medians = {}
        for method in ("proposed", "supervised"):
            runs = cell(records, method, snr, 1.0)
            medians[method] = float(np.median([rounds_to_reach(r, 0.95 * final_accuracy(r)) for r in runs]))
        assert medians["proposed"] < medians["supervised"], (snr, medians)
