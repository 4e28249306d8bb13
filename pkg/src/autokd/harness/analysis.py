"""Trial-log analysis: rank correlation across budgets, accuracy histograms,
best-so-far curves, and small self-contained SVG charts."""

from __future__ import annotations

import math
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from ..bohb import TrialRecord
from .logio import read_log

Pair = Tuple[float, float]


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties.

    Returns nan when either side is constant (the coefficient is undefined).
    """
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise ValueError("need at least two observations")
    rx = rankdata(xs) - (len(xs) + 1) / 2
    ry = rankdata(ys) - (len(ys) + 1) / 2
    den = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if den == 0.0:
        return float("nan")
    return float(np.clip(rx @ ry / den, -1.0, 1.0))


def _config_key(r: TrialRecord) -> Tuple[int, str]:
    return (r.seed, repr(r.theta))


def rank_correlation_report(records: Sequence[TrialRecord]) -> Dict[Pair, Optional[float]]:
    """Spearman rho for every budget pair over configurations seen at both.

    A pair with fewer than two shared configurations (or an undefined
    coefficient) maps to None.
    """
    acc: Dict[float, Dict[Tuple[int, str], float]] = {}
    for r in records:
        acc.setdefault(r.budget, {})[_config_key(r)] = r.val_accuracy
    budgets = sorted(acc)
    out: Dict[Pair, Optional[float]] = {}
    for i, b1 in enumerate(budgets):
        for b2 in budgets[i + 1:]:
            shared = sorted(set(acc[b1]) & set(acc[b2]))
            rho = None
            if len(shared) >= 2:
                rho = spearman([acc[b1][k] for k in shared], [acc[b2][k] for k in shared])
                rho = None if math.isnan(rho) else rho
            out[(b1, b2)] = rho
    return out


def mean_rank_correlation(records: Sequence[TrialRecord]) -> Optional[float]:
    vals = [v for v in rank_correlation_report(records).values() if v is not None]
    return float(np.mean(vals)) if vals else None


def _fmt(x) -> str:
    return f"{x:g}" if isinstance(x, (int, float)) else str(x)


def rank_correlation_csv(report: Dict[Pair, Optional[float]]) -> str:
    lines = ["budget_a,budget_b,spearman,n_absent"]
    for (a, b), rho in sorted(report.items()):
        lines.append(f"{_fmt(a)},{_fmt(b)},{'' if rho is None else f'{rho:.6f}'},{int(rho is None)}")
    return "\n".join(lines) + "\n"


def accuracy_histograms(records: Sequence[TrialRecord], bins: int = 10) -> List[Tuple[float, float, float, int]]:
    """(budget, bin_lo, bin_hi, count) rows over [0, 1]; the last bin is closed."""
    rows = []
    edges = np.linspace(0.0, 1.0, bins + 1)
    for b in sorted({r.budget for r in records}):
        vals = [r.val_accuracy for r in records if r.budget == b]
        counts, _ = np.histogram(vals, bins=edges)
        rows += [(b, float(edges[i]), float(edges[i + 1]), int(c)) for i, c in enumerate(counts)]
    return rows


def best_so_far(records: Sequence[TrialRecord]) -> List[Tuple[float, int, float, float]]:
    """(budget, trial_id, cumulative trial seconds, best accuracy at that budget)."""
    rows = []
    clock = 0.0
    best: Dict[float, float] = {}
    for r in sorted(records, key=lambda r: r.trial_id):
        clock += r.wall_seconds
        best[r.budget] = max(best.get(r.budget, 0.0), r.val_accuracy)
        rows.append((r.budget, r.trial_id, clock, best[r.budget]))
    return rows


# ---------------------------------------------------------------------------
# SVG

_W, _H, _PAD = 480, 320, 40
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg(body: List[str], title: str) -> str:
    head = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">',
            f'<rect width="{_W}" height="{_H}" fill="white"/>',
            f'<text x="{_W / 2:.1f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
            f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="black"/>',
            f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>']
    return "\n".join(head + body + ["</svg>"]) + "\n"


def histogram_svg(rows) -> str:
    budgets = sorted({r[0] for r in rows})
    nb = len(budgets)
    bins = sorted({(r[1], r[2]) for r in rows})
    peak = max([r[3] for r in rows] + [1])
    span_w = (_W - 2 * _PAD) / max(len(bins), 1)
    bar_w = span_w / max(nb, 1)
    body = []
    for bi, b in enumerate(budgets):
        for r in rows:
            if r[0] != b:
                continue
            k = bins.index((r[1], r[2]))
            h = (_H - 2 * _PAD) * r[3] / peak
            x = _PAD + k * span_w + bi * bar_w
            body.append(f'<rect x="{x:.2f}" y="{_H - _PAD - h:.2f}" width="{bar_w:.2f}" '
                        f'height="{h:.2f}" fill="{_COLORS[bi % len(_COLORS)]}"/>')
        body.append(f'<text x="{_W - _PAD - 60}" y="{_PAD + 14 * bi}" '
                    f'fill="{_COLORS[bi % len(_COLORS)]}">budget {_fmt(b)}</text>')
    return _svg(body, "validation accuracy per budget")


def curve_svg(rows) -> str:
    budgets = sorted({r[0] for r in rows})
    t_max = max([r[2] for r in rows] + [1e-12])
    body = []
    for bi, b in enumerate(budgets):
        pts = []
        for r in rows:
            if r[0] == b:
                x = _PAD + (_W - 2 * _PAD) * r[2] / t_max
                y = _H - _PAD - (_H - 2 * _PAD) * r[3]
                pts.append(f"{x:.2f},{y:.2f}")
        color = _COLORS[bi % len(_COLORS)]
        body.append(f'<polyline fill="none" stroke="{color}" points="{" ".join(pts)}"/>')
        body.append(f'<text x="{_W - _PAD - 60}" y="{_H - _PAD - 10 - 14 * bi}" fill="{color}">'
                    f'budget {_fmt(b)}</text>')
    return _svg(body, "best accuracy vs cumulative trial time")


def correlation_svg(report: Dict[Pair, Optional[float]]) -> str:
    budgets = sorted({b for pair in report for b in pair})
    n = max(len(budgets), 1)
    cell = min(_W - 2 * _PAD, _H - 2 * _PAD) / n
    body = []
    for i, a in enumerate(budgets):
        for j, b in enumerate(budgets):
            rho = 1.0 if a == b else report.get((min(a, b), max(a, b)))
            x, y = _PAD + j * cell, _PAD + i * cell
            if rho is None:
                fill, label = "#dddddd", "n/a"
            else:
                shade = int(round(255 * (1 - max(0.0, rho))))
                fill, label = f"rgb({shade},{shade},255)", f"{rho:.2f}"
            body.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{cell:.2f}" height="{cell:.2f}" '
                        f'fill="{fill}" stroke="white"/>')
            body.append(f'<text x="{x + cell / 2:.2f}" y="{y + cell / 2:.2f}" '
                        f'text-anchor="middle">{label}</text>')
        body.append(f'<text x="{_PAD - 4}" y="{_PAD + (i + 0.5) * cell:.2f}" '
                    f'text-anchor="end">{_fmt(a)}</text>')
    return _svg(body, "Spearman rank correlation between budgets")


def analyze(log_path, out_dir) -> List[str]:
    """Write CSV + SVG reports for a trial log; returns the written paths."""
    records = read_log(log_path)
    os.makedirs(out_dir, exist_ok=True)
    hist = accuracy_histograms(records)
    curve = best_so_far(records)
    report = rank_correlation_report(records)
    files = {
        "histograms.csv": "budget,bin_lo,bin_hi,count\n" + "".join(
            f"{_fmt(b)},{lo:.2f},{hi:.2f},{c}\n" for b, lo, hi, c in hist),
        "best_so_far.csv": "budget,trial_id,cumulative_seconds,best_accuracy\n" + "".join(
            f"{_fmt(b)},{t},{s:.9f},{a:.6f}\n" for b, t, s, a in curve),
        "rank_correlation.csv": rank_correlation_csv(report),
        "histograms.svg": histogram_svg(hist),
        "best_so_far.svg": curve_svg(curve),
        "rank_correlation.svg": correlation_svg(report),
    }
    written = []
    for name, text in files.items():
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        written.append(path)
    return written
