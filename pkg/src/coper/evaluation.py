"""Decoded evaluation and report emission.

Greedy-decodes every test sample, scores token-wise accuracy into a
per-(P1, P2) grid, summarizes the three categories, and renders the
results as CSV plus self-contained SVG (heatmap, category bars, loss
curves).  Output bytes are deterministic: fixed float formatting, no
timestamps, no external assets.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import BOS_ID, encode
from .dataset import DatasetManifest, Split, load_records
from .model import ConfigError, Transformer
from .training import LossRegion, encode_records, teacher_forced_metrics


class InvalidTarget(ValueError):
    """Accuracy against an empty target is undefined."""


def token_accuracy(pred, target) -> float:
    """Fraction of aligned positions that match; missing positions count wrong."""
    target = tuple(target)
    if len(target) == 0:
        raise InvalidTarget("target must be non-empty")
    pred = tuple(pred)
    hits = sum(1 for i, t in enumerate(target) if i < len(pred) and pred[i] == t)
    return hits / len(target)


@dataclass
class PairAccuracyGrid:
    """(p1, p2) -> [correct token count, total token count]."""

    cells: dict = field(default_factory=dict)

    def add(self, pair, correct: int, total: int) -> None:
        cell = self.cells.setdefault(tuple(pair), [0, 0])
        cell[0] += int(correct)
        cell[1] += int(total)

    def accuracy(self, pair) -> float | None:
        cell = self.cells.get(tuple(pair))
        if cell is None or cell[1] == 0:
            return None
        return cell[0] / cell[1]

    def overall(self) -> float:
        correct = sum(c for c, _ in self.cells.values())
        total = sum(t for _, t in self.cells.values())
        return correct / total if total else 0.0


@dataclass
class CategoryReport:
    """Table-shaped summary: ID/OOD losses plus per-category decoded accuracy."""

    id_loss: float
    ood_loss: float
    id_accuracy: float
    hollow_accuracy: float
    extrapolation_accuracy: float

    @property
    def average(self) -> float:
        return (self.id_accuracy + self.hollow_accuracy + self.extrapolation_accuracy) / 3.0

    def to_dict(self) -> dict:
        return {
            "id_loss": self.id_loss,
            "ood_loss": self.ood_loss,
            "id_accuracy": self.id_accuracy,
            "hollow_accuracy": self.hollow_accuracy,
            "extrapolation_accuracy": self.extrapolation_accuracy,
            "average": self.average,
        }


@dataclass
class EvalResult:
    grids: dict                 # Split -> PairAccuracyGrid
    report: CategoryReport
    split_accuracy: dict        # Split.value -> decoded accuracy
    split_tf_loss: dict         # Split.value -> teacher-forced loss

    def combined_grid(self) -> PairAccuracyGrid:
        merged = PairAccuracyGrid()
        for grid in self.grids.values():
            for pair, (c, t) in grid.cells.items():
                merged.add(pair, c, t)
        return merged


def greedy_predictor(model: Transformer, batch_size: int = 64):
    """Default predictor: greedy continuation of the model."""

    def predict(prompts: np.ndarray, n: int) -> np.ndarray:
        return model.generate_greedy(prompts, n)

    return predict


def decode_records(records, predictor, batch_size: int = 64):
    """Greedy-decode records grouped by (prompt length, answer length).

    Yields (record, predicted ids) in the original record order.
    """
    groups: dict = {}
    for idx, rec in enumerate(records):
        key = (len(rec.input_text), len(rec.target_text))
        groups.setdefault(key, []).append(idx)
    out = [None] * len(records)
    for (in_len, out_len), idxs in sorted(groups.items()):
        for i in range(0, len(idxs), batch_size):
            chunk = idxs[i:i + batch_size]
            prompts = np.asarray(
                [(BOS_ID,) + encode(records[j].input_text) for j in chunk], dtype=np.int64)
            preds = predictor(prompts, out_len)
            for row, j in enumerate(chunk):
                out[j] = tuple(int(v) for v in preds[row])
    return list(zip(records, out))


def evaluate(
    model: Transformer | None,
    data_dir: Path,
    batch_size: int = 64,
    max_samples_per_split: int | None = None,
    predictor=None,
    loss_region: LossRegion = LossRegion.ANSWER_ONLY,
) -> EvalResult:
    """Decoded accuracy per (P1, P2) pair and per category, plus TF losses.

    A custom `predictor(prompts, n) -> ids` replaces the model's greedy
    decoding (used by the harness self-tests); losses then require a model
    and are skipped when one is not given.
    """
    data_dir = Path(data_dir)
    manifest = DatasetManifest.load(data_dir / "manifest.json")
    if model is not None:
        if model.config.vocab_size != len(manifest.to_dict()["vocab"]):
            raise ConfigError(
                f"model vocab {model.config.vocab_size} != dataset vocab "
                f"{len(manifest.to_dict()['vocab'])}")
        if predictor is None:
            predictor = greedy_predictor(model, batch_size)
    elif predictor is None:
        raise ConfigError("evaluate needs a model or an explicit predictor")

    grids: dict = {}
    split_accuracy: dict = {}
    split_tf_loss: dict = {}
    for split in (Split.TEST_ID, Split.TEST_HOLLOW, Split.TEST_EXTRAPOLATION):
        records = load_records(data_dir, split)
        if not records:
            continue
        if max_samples_per_split is not None:
            records = records[:max_samples_per_split]
        grid = PairAccuracyGrid()
        correct_total = [0, 0]
        for rec, pred in decode_records(records, predictor, batch_size):
            target = encode(rec.target_text)
            hits = sum(1 for i, t in enumerate(target) if i < len(pred) and pred[i] == t)
            grid.add((rec.p1, rec.p2), hits, len(target))
            correct_total[0] += hits
            correct_total[1] += len(target)
        grids[split] = grid
        split_accuracy[split.value] = correct_total[0] / correct_total[1]
        if model is not None:
            loss_v, _ = teacher_forced_metrics(model, encode_records(records), loss_region)
            split_tf_loss[split.value] = loss_v

    def acc(split):
        return split_accuracy.get(split.value, 0.0)

    ood_sizes = {s: sum(t for _, t in grids[s].cells.values())
                 for s in (Split.TEST_HOLLOW, Split.TEST_EXTRAPOLATION) if s in grids}
    ood_total = sum(ood_sizes.values())
    ood_loss = 0.0
    if ood_total and split_tf_loss:
        ood_loss = sum(split_tf_loss.get(s.value, 0.0) * n for s, n in ood_sizes.items()) / ood_total
    report = CategoryReport(
        id_loss=split_tf_loss.get(Split.TEST_ID.value, 0.0),
        ood_loss=ood_loss,
        id_accuracy=acc(Split.TEST_ID),
        hollow_accuracy=acc(Split.TEST_HOLLOW),
        extrapolation_accuracy=acc(Split.TEST_EXTRAPOLATION),
    )
    return EvalResult(grids, report, split_accuracy, split_tf_loss)


# ---------------------------------------------------------------------------
# Deterministic CSV + SVG emission
# ---------------------------------------------------------------------------

_DARK = (13, 35, 57)      # accuracy 0
_LIGHT = (237, 246, 252)  # accuracy 1


def _color(acc: float) -> str:
    acc = min(max(acc, 0.0), 1.0)
    r, g, b = (round(d + (l - d) * acc) for d, l in zip(_DARK, _LIGHT))
    return f"#{r:02x}{g:02x}{b:02x}"


def _svg(width: int, height: int, body: list) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">')
    return head + "\n" + "\n".join(body) + "\n</svg>\n"


def _legend(x: int, y: int, height: int) -> list:
    body = [f'<text x="{x}" y="{y - 6}">acc</text>']
    steps = 24
    for i in range(steps):
        frac = 1.0 - i / (steps - 1)
        body.append(f'<rect x="{x}" y="{y + i * height // steps}" width="14" '
                    f'height="{height // steps + 1}" fill="{_color(frac)}"/>')
    for frac, label in ((1.0, "1.0"), (0.5, "0.5"), (0.0, "0.0")):
        yy = y + round((1.0 - frac) * height)
        body.append(f'<text x="{x + 18}" y="{yy + 4}">{label}</text>')
    return body


def emit_heatmap(grid: PairAccuracyGrid, csv_path: Path, svg_path: Path, title: str = "accuracy") -> None:
    """Row-major CSV plus an SVG grid; never-sampled pairs stay blank."""
    rows = sorted(grid.cells)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["p1", "p2", "correct", "total", "accuracy"])
        for pair in rows:
            c, t = grid.cells[pair]
            writer.writerow([pair[0], pair[1], c, t, f"{c / t:.6f}" if t else ""])

    if rows:
        p1_lo = min(p for p, _ in rows)
        p1_hi = max(p for p, _ in rows)
        p2_lo = min(p for _, p in rows)
        p2_hi = max(p for _, p in rows)
    else:
        p1_lo = p1_hi = p2_lo = p2_hi = 0
    cell = 26
    left, top = 46, 34
    ncols = p1_hi - p1_lo + 1
    nrows = p2_hi - p2_lo + 1
    body = [f'<text x="{left}" y="16">{title}</text>']
    for (p1, p2) in rows:
        acc = grid.accuracy((p1, p2))
        x = left + (p1 - p1_lo) * cell
        y = top + (p2 - p2_lo) * cell
        body.append(f'<rect x="{x}" y="{y}" width="{cell - 2}" height="{cell - 2}" '
                    f'fill="{_color(acc)}"><title>({p1},{p2}) {acc:.3f}</title></rect>')
    for p1 in range(p1_lo, p1_hi + 1):
        body.append(f'<text x="{left + (p1 - p1_lo) * cell + 4}" '
                    f'y="{top + nrows * cell + 14}">{p1}</text>')
    for p2 in range(p2_lo, p2_hi + 1):
        body.append(f'<text x="{left - 24}" y="{top + (p2 - p2_lo) * cell + 16}">{p2}</text>')
    body.append(f'<text x="{left + max(ncols, 1) * cell // 2 - 6}" '
                f'y="{top + nrows * cell + 30}">p1</text>')
    body.append(f'<text x="10" y="{top + nrows * cell // 2}">p2</text>')
    body += _legend(left + ncols * cell + 16, top, max(nrows * cell - 4, 40))
    width = left + ncols * cell + 90
    height = top + nrows * cell + 40
    Path(svg_path).write_text(_svg(width, height, body))


def emit_category_bar(named_reports: list, csv_path: Path, svg_path: Path) -> None:
    """named_reports: [(name, CategoryReport), ...] -> CSV + grouped bars."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "split", "loss", "accuracy"])
        for name, rep in named_reports:
            writer.writerow([name, "id", f"{rep.id_loss:.6f}", f"{rep.id_accuracy:.6f}"])
            writer.writerow([name, "hollow", "", f"{rep.hollow_accuracy:.6f}"])
            writer.writerow([name, "extrapolation", "", f"{rep.extrapolation_accuracy:.6f}"])
            writer.writerow([name, "ood", f"{rep.ood_loss:.6f}", ""])
            writer.writerow([name, "average", "", f"{rep.average:.6f}"])

    bar_w, gap, group_gap, top, bottom, left = 34, 6, 30, 30, 46, 40
    chart_h = 160
    colors = {"id": "#2f6f9f", "hollow": "#c07f2d", "extrapolation": "#9f2f4f"}
    body = []
    x = left
    for name, rep in named_reports:
        for split, acc in (("id", rep.id_accuracy), ("hollow", rep.hollow_accuracy),
                           ("extrapolation", rep.extrapolation_accuracy)):
            h = round(acc * chart_h)
            body.append(f'<rect x="{x}" y="{top + chart_h - h}" width="{bar_w}" height="{h}" '
                        f'fill="{colors[split]}"><title>{name} {split} {acc:.3f}</title></rect>')
            body.append(f'<text x="{x}" y="{top + chart_h + 14}" font-size="9">{split[:3]}</text>')
            x += bar_w + gap
        body.append(f'<text x="{x - 3 * (bar_w + gap)}" y="{top + chart_h + 28}">{name}</text>')
        x += group_gap
    for frac in (0.0, 0.5, 1.0):
        y = top + chart_h - round(frac * chart_h)
        body.append(f'<line x1="{left - 4}" y1="{y}" x2="{x}" y2="{y}" '
                    f'stroke="#999" stroke-dasharray="2,3"/>')
        body.append(f'<text x="6" y="{y + 4}">{frac:.1f}</text>')
    Path(svg_path).write_text(_svg(x + 20, top + chart_h + bottom, body))


def emit_loss_curves(runlog, csv_path: Path, svg_path: Path) -> None:
    """CSV (epoch, split, loss) and an SVG line chart of ID vs OOD losses."""
    series: dict = {}
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "split", "loss"])
        for pt in runlog.points:
            writer.writerow([pt.epoch, "train", f"{pt.train_loss:.6f}"])
            series.setdefault("train", []).append((pt.epoch, pt.train_loss))
            for split, loss in sorted(pt.split_loss.items()):
                writer.writerow([pt.epoch, split, f"{loss:.6f}"])
                series.setdefault(split, []).append((pt.epoch, loss))

    width, height, left, top = 420, 220, 46, 16
    chart_w, chart_h = width - left - 110, height - top - 36
    all_pts = [v for pts in series.values() for _, v in pts]
    all_ep = [e for pts in series.values() for e, _ in pts]
    if not all_pts:
        Path(svg_path).write_text(_svg(width, height, ['<text x="10" y="20">no data</text>']))
        return
    lo, hi = min(all_pts), max(all_pts)
    e_lo, e_hi = min(all_ep), max(all_ep)
    span = (hi - lo) or 1.0
    e_span = (e_hi - e_lo) or 1

    def xy(epoch, loss):
        x = left + (epoch - e_lo) / e_span * chart_w
        y = top + (1.0 - (loss - lo) / span) * chart_h
        return f"{x:.1f},{y:.1f}"

    palette = ["#2f6f9f", "#c07f2d", "#9f2f4f", "#3f8f5f", "#555555"]
    body = []
    for i, (name, pts) in enumerate(sorted(series.items())):
        color = palette[i % len(palette)]
        path = " ".join(xy(e, v) for e, v in pts)
        body.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        body.append(f'<text x="{width - 100}" y="{top + 14 + 14 * i}" fill="{color}">{name}</text>')
    body.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + chart_h}" stroke="#333"/>')
    body.append(f'<line x1="{left}" y1="{top + chart_h}" x2="{left + chart_w}" '
                f'y2="{top + chart_h}" stroke="#333"/>')
    body.append(f'<text x="6" y="{top + 8}">{hi:.2f}</text>')
    body.append(f'<text x="6" y="{top + chart_h}">{lo:.2f}</text>')
    body.append(f'<text x="{left}" y="{height - 8}">epoch {e_lo}..{e_hi}</text>')
    Path(svg_path).write_text(_svg(width, height, body))
