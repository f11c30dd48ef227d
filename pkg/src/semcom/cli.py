"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or usage, 2 numeric or I/O failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .checks import loss_gradient_suite, mi_suite
from .config import dump_json, from_dict, load_json
from .datagen import export_csv, gen_dataset, subset_labels
from .errors import ChannelOutageError, ContractError, DimensionError, NumericError, ValidationError
from .model import load_checkpoint, save_checkpoint
from .pipeline import (CommLedger, RunConfig, finetune, make_decoder, make_encoders, pretrain)
from .results import ExperimentGrid, emit_csv, emit_svg, run_grid

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _out_dir(args, fallback: str = "results") -> Path:
    out = args.out or os.environ.get("SEMCOM_OUT") or fallback
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_grid(args) -> ExperimentGrid:
    grid = from_dict(ExperimentGrid, load_json(args.config)) if args.config else ExperimentGrid()
    if args.seed is not None:
        grid = replace(grid, seeds=[args.seed])
    return grid


def _load_run(args) -> RunConfig:
    if not args.config:
        cfg = RunConfig()
    else:
        data = load_json(args.config)
        # a grid file can also drive single-run commands through its base config
        cfg = from_dict(RunConfig, data["base"], "base") if "base" in data else from_dict(RunConfig, data)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if cfg.method == "supervised":
        cfg = replace(cfg, pretrain_epochs=0)
    cfg.validate()
    return cfg


def cmd_run(args) -> int:
    grid = _load_grid(args)
    out = _out_dir(args, grid.output_dir)
    records = run_grid(grid, threads=args.threads)
    emit_csv(records, out / "metrics.csv")
    emit_svg(records, out / "curves.svg")
    dump_json(replace(grid, output_dir=str(out)), out / "config.json")
    print(f"wrote {len(records)} records to {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _load_run(args)
    out = _out_dir(args)
    train, _ = gen_dataset(cfg.gen)
    encoders, history = pretrain(train, make_encoders(cfg), cfg, CommLedger())
    for m, enc in enumerate(encoders):
        save_checkpoint(out / f"encoder{m}.ckpt", enc, cfg.seed, "pretrain")
    with open(out / "pretrain_loss.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        fh.writelines(f"{e},{v:.9g}\n" for e, v in enumerate(history))
    dump_json(cfg, out / "config.json")
    print(f"saved {len(encoders)} encoders to {out}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = _load_run(args)
    out = _out_dir(args)
    train, test = gen_dataset(cfg.gen)
    if cfg.label_fraction < 1.0:
        train = subset_labels(train, cfg.label_fraction, cfg.seed)
    if args.encoders:
        src = Path(args.encoders)
        encoders = [load_checkpoint(src / f"encoder{m}.ckpt")[0] for m in range(cfg.gen.num_modalities)]
    else:
        encoders = make_encoders(cfg)
    _, _, records = finetune(train, encoders, make_decoder(cfg), cfg, test, CommLedger())
    emit_csv(records, out / "metrics.csv")
    dump_json(cfg, out / "config.json")
    print(f"final accuracy {records[-1].test_accuracy:.4f}")
    return EXIT_OK


def cmd_verify_mi(args) -> int:
    res = mi_suite(args.trials, args.seed or 0)
    ok = res["max_residual"] <= 1e-12 and res["xor_interaction"] == -1.0
    print(f"trials {res['trials']}  max residual {res['max_residual']:.3e}  "
          f"xor interaction {res['xor_interaction']:.12g} bits")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_grad_check(args) -> int:
    reports = loss_gradient_suite(seed=args.seed or 0, tolerance=args.tolerance)
    width = max(map(len, reports))
    for name, rep in reports.items():
        print(f"{name:<{width}}  max rel err {rep.max_rel_err:.3e}  {'ok' if rep.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in reports.values()) else EXIT_NUMERIC


def cmd_export_data(args) -> int:
    cfg = _load_run(args)
    out = _out_dir(args)
    train, test = gen_dataset(cfg.gen)
    if cfg.label_fraction < 1.0:
        train = subset_labels(train, cfg.label_fraction, cfg.seed)
    export_csv(train, out / "train")
    export_csv(test, out / "test")
    print(f"exported {len(train)} train and {len(test)} test rows to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="semcom", description="Multi-modal semantic communication experiments.")
    p.add_argument("--version", action="version", version=f"semcom {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, threads=False):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", help="output directory (default: $SEMCOM_OUT or ./results)")
        sp.add_argument("--seed", type=int, help="override the seed")
        if threads:
            sp.add_argument("--threads", type=int, default=1, help="worker processes")

    common(sub.add_parser("run", help="run an experiment grid"), threads=True)
    common(sub.add_parser("pretrain", help="Stage I only; writes encoder checkpoints"))
    ft = sub.add_parser("finetune", help="Stage II from saved encoders")
    common(ft)
    ft.add_argument("--encoders", help="directory with encoder{m}.ckpt files")
    mi = sub.add_parser("verify-mi", help="information decomposition identities")
    mi.add_argument("--trials", type=int, default=100)
    mi.add_argument("--seed", type=int)
    gc = sub.add_parser("grad-check", help="finite-difference checks of every loss")
    gc.add_argument("--seed", type=int)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    common(sub.add_parser("export-data", help="write the synthetic dataset as CSV"))
    return p


_COMMANDS = {"run": cmd_run, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
             "verify-mi": cmd_verify_mi, "grad-check": cmd_grad_check, "export-data": cmd_export_data}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "threads", 1) < 1:
            raise ValidationError("--threads must be at least 1", ["threads"])
        return _COMMANDS[args.command](args)
    except (ValidationError, ContractError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericError, ChannelOutageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
