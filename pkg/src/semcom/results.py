"""Experiment grids and their outputs: metrics CSV and accuracy-curve SVG."""
from __future__ import annotations

import csv
import io
import itertools
import math
import xml.etree.ElementTree as ET
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .datagen import gen_dataset
from .errors import ContractError, ValidationError
from .pipeline import FINETUNE, METHODS, PRETRAIN, MetricRecord, RunConfig, run_experiment

CSV_HEADER = ("round,stage,method,seed,snr_db,label_fraction,train_loss,"
              "test_accuracy,uplink_scalars,downlink_scalars")
_STAGE_ORDER = {PRETRAIN: 0, FINETUNE: 1}
_COLORS = {"proposed": "#d62728", "simclr": "#1f77b4", "barlow": "#2ca02c", "supervised": "#7f7f7f"}


@dataclass
class ExperimentGrid:
    base: RunConfig = field(default_factory=RunConfig)
    methods: list = field(default_factory=lambda: list(METHODS))
    snr_db: list = field(default_factory=lambda: [10.0, 20.0])
    label_fractions: list = field(default_factory=lambda: [1.0])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output_dir: str = "results"

    def validate(self) -> None:
        bad = [name for name in ("methods", "snr_db", "label_fractions", "seeds") if not getattr(self, name)]
        if any(m not in METHODS for m in self.methods):
            bad.append("methods")
        if bad:
            raise ValidationError("empty or invalid sweep", bad)
        for cfg in self.cells():
            cfg.validate()

    def cells(self) -> list:
        out = []
        for method, seed, snr, frac in itertools.product(self.methods, self.seeds, self.snr_db,
                                                         self.label_fractions):
            out.append(replace(self.base, method=method, seed=int(seed), snr_db=snr,
                               label_fraction=float(frac),
                               pretrain_epochs=0 if method == "supervised" else self.base.pretrain_epochs))
        return out


def _run_group(cells: list) -> list:
    # cells share method and seed, so Stage I runs once and is reused
    cache: dict = {}
    data_by_gen: dict = {}
    records = []
    for cfg in cells:
        key = repr(cfg.gen)
        if key not in data_by_gen:
            data_by_gen[key] = gen_dataset(cfg.gen)
        records.extend(run_experiment(cfg, cache=cache, data=data_by_gen[key]))
    return records


def run_grid(grid: ExperimentGrid, threads: int = 1) -> list:
    """Run every cell; the returned records are in CSV order."""
    grid.validate()
    groups: dict = {}
    for cfg in grid.cells():
        groups.setdefault((cfg.method, cfg.seed), []).append(cfg)
    jobs = list(groups.values())
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_group, jobs))
    else:
        parts = [_run_group(job) for job in jobs]
    return sort_records([r for part in parts for r in part])


def sort_records(records) -> list:
    return sorted(records, key=lambda r: (r.method, r.seed, r.round, _STAGE_ORDER.get(r.stage, 9),
                                          r.snr_db, r.label_fraction))


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(float(value), ".9g")


def csv_text(records) -> str:
    records = list(records)
    if not records:
        raise ContractError("no records to write")
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for r in sort_records(records):
        buf.write(",".join([str(r.round), r.stage, r.method, str(r.seed), _fmt(r.snr_db),
                            _fmt(r.label_fraction), _fmt(r.train_loss), _fmt(r.test_accuracy),
                            str(r.uplink_scalars), str(r.downlink_scalars)]) + "\n")
    return buf.getvalue()


def emit_csv(records, path) -> Path:
    path = Path(path)
    path.write_bytes(csv_text(records).encode("utf-8"))
    return path


def read_csv(path) -> list:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(MetricRecord(
                round=int(row["round"]), stage=row["stage"], method=row["method"], seed=int(row["seed"]),
                snr_db=float(row["snr_db"]), label_fraction=float(row["label_fraction"]),
                train_loss=float(row["train_loss"]), test_accuracy=float(row["test_accuracy"]),
                uplink_scalars=int(row["uplink_scalars"]), downlink_scalars=int(row["downlink_scalars"])))
    return out


def median_curves(records) -> dict:
    """``{(snr_db, label_fraction): {method: [(round, median accuracy), ...]}}``."""
    by_cell: dict = {}
    for r in records:
        if r.stage != FINETUNE:
            continue
        by_cell.setdefault((r.snr_db, r.label_fraction), {}).setdefault(r.method, {}) \
            .setdefault(r.round, []).append(r.test_accuracy)
    return {cell: {m: [(rnd, float(np.median(v))) for rnd, v in sorted(rounds.items())]
                   for m, rounds in methods.items()}
            for cell, methods in by_cell.items()}


def _method_order(methods) -> list:
    known = [m for m in METHODS if m in methods]
    return known + sorted(set(methods) - set(known))


def svg_text(records, width: int = 640, panel_height: int = 320) -> str:
    curves = median_curves(records)
    if not curves:
        raise ContractError("no fine-tuning records to plot")
    methods = _method_order({m for cell in curves.values() for m in cell})
    margin_l, margin_r, margin_t, margin_b = 60, 20, 30, 40
    legend_h = 24
    cells = sorted(curves, key=lambda c: (c[1] * -1, c[0]))
    height = legend_h + panel_height * len(cells)
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width), height=str(height),
                     viewBox=f"0 0 {width} {height}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(width), height=str(height), fill="white")

    legend = ET.SubElement(svg, "g", attrib={"class": "legend"})
    for i, m in enumerate(methods):
        x = margin_l + i * 130
        ET.SubElement(legend, "line", x1=str(x), y1="12", x2=str(x + 20), y2="12",
                      stroke=_COLORS.get(m, "black"), attrib={"stroke-width": "2"})
        t = ET.SubElement(legend, "text", x=str(x + 25), y="16", attrib={"font-size": "12"})
        t.text = m

    for p, cell in enumerate(cells):
        top = legend_h + p * panel_height
        x0, x1 = margin_l, width - margin_r
        y0, y1 = top + panel_height - margin_b, top + margin_t
        max_round = max(rnd for series in curves[cell].values() for rnd, _ in series) or 1
        g = ET.SubElement(svg, "g", attrib={"class": "panel"})
        title = ET.SubElement(g, "text", x=str(x0), y=str(top + 18), attrib={"font-size": "13"})
        snr, frac = cell
        snr_txt = "noiseless" if math.isinf(snr) else f"{snr:g} dB"
        title.text = f"SNR {snr_txt}, labels {frac:.0%}"
        ET.SubElement(g, "polyline", fill="none", stroke="black",
                      points=f"{x0},{y1} {x0},{y0} {x1},{y0}", attrib={"class": "axes"})
        for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
            ty = y0 - tick * (y0 - y1)
            lab = ET.SubElement(g, "text", x=str(x0 - 8), y=f"{ty + 4:.2f}",
                                attrib={"font-size": "10", "text-anchor": "end"})
            lab.text = f"{tick:.2f}"
        xl = ET.SubElement(g, "text", x=str((x0 + x1) // 2), y=str(y0 + 30),
                           attrib={"font-size": "11", "text-anchor": "middle"})
        xl.text = f"communication rounds (max {max_round})"
        for m in methods:
            series = curves[cell].get(m)
            if not series:
                continue
            pts = []
            for rnd, acc in series:
                acc = min(1.0, max(0.0, acc))
                px = x0 + (x1 - x0) * rnd / max_round
                py = y0 - acc * (y0 - y1)
                pts.append(f"{px:.2f},{py:.2f}")
            ET.SubElement(g, "polyline", fill="none", stroke=_COLORS.get(m, "black"),
                          points=" ".join(pts), attrib={"class": "series", "data-method": m,
                                                        "stroke-width": "1.5"})
    return ET.tostring(svg, encoding="unicode")


def emit_svg(records, path) -> Path:
    path = Path(path)
    path.write_text(svg_text(records), encoding="utf-8")
    return path
