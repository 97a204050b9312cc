"""Deterministic standalone SVG charts for metric reports.

No plotting library: the files are assembled from fixed-format strings so a
rerun over the same data is byte-identical.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError
from .harness import MetricReport

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 70, 20, 30, 50


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _frame(title: str) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="20" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{title}</text>',
    ]


def _axes(lines: list[str], y_label: str) -> None:
    x0, x1 = _ML, _W - _MR
    y0, y1 = _H - _MB, _MT
    lines.append(
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black" stroke-width="1"/>'
    )
    lines.append(
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black" stroke-width="1"/>'
    )
    for tick in range(0, 101, 20):
        y = y0 - (y0 - y1) * tick / 100.0
        lines.append(
            f'<line x1="{x0 - 4}" y1="{_fmt(y)}" x2="{x0}" y2="{_fmt(y)}" stroke="black"/>'
        )
        lines.append(
            f'<text x="{x0 - 8}" y="{_fmt(y + 4)}" text-anchor="end" font-family="sans-serif" '
            f'font-size="11">{tick}</text>'
        )
    lines.append(
        f'<text x="16" y="{(_H - _MB + _MT) // 2}" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {(_H - _MB + _MT) // 2})" text-anchor="middle">{y_label}</text>'
    )


def _y_pos(acc: float) -> float:
    y0, y1 = _H - _MB, _MT
    return y0 - (y0 - y1) * acc / 100.0


def _line_chart(reports: list[MetricReport], path: Path) -> None:
    kind = reports[0].sweep_kind or "sweep"
    ordered = sorted(reports, key=lambda r: r.sweep_value)
    xs = [r.sweep_value for r in ordered]
    lo, hi = min(xs), max(xs)
    span = (hi - lo) or 1.0
    x0, x1 = _ML, _W - _MR

    def x_pos(v: float) -> float:
        return x0 + (x1 - x0) * (v - lo) / span

    lines = _frame(f"accuracy vs {kind} ({ordered[0].target_domain})")
    _axes(lines, "accuracy (%)")
    pts = " ".join(f"{_fmt(x_pos(r.sweep_value))},{_fmt(_y_pos(r.mean_accuracy))}" for r in ordered)
    lines.append(f'<polyline points="{pts}" fill="none" stroke="crimson" stroke-width="2"/>')
    for r in ordered:
        cx, cy = x_pos(r.sweep_value), _y_pos(r.mean_accuracy)
        lines.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="3" fill="crimson"/>')
        lines.append(
            f'<text x="{_fmt(cx)}" y="{_H - _MB + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{r.sweep_value:g}</text>'
        )
    lines.append("</svg>")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _bar_chart(reports: list[MetricReport], path: Path) -> None:
    lines = _frame("mean accuracy per report")
    _axes(lines, "accuracy (%)")
    x0, x1 = _ML, _W - _MR
    slot = (x1 - x0) / len(reports)
    width = min(60.0, slot * 0.6)
    for i, r in enumerate(reports):
        cx = x0 + slot * (i + 0.5)
        top = _y_pos(r.mean_accuracy)
        lines.append(
            f'<rect x="{_fmt(cx - width / 2)}" y="{_fmt(top)}" width="{_fmt(width)}" '
            f'height="{_fmt(_H - _MB - top)}" fill="steelblue"/>'
        )
        label = r.target_domain if r.sweep_value is None else f"{r.target_domain}:{r.sweep_value:g}"
        lines.append(
            f'<text x="{_fmt(cx)}" y="{_H - _MB + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{label}</text>'
        )
        lines.append(
            f'<text x="{_fmt(cx)}" y="{_fmt(top - 5)}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{r.display}</text>'
        )
    lines.append("</svg>")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def emit_plots(reports: list[MetricReport], out_dir) -> list[Path]:
    """Write static charts for the given reports; returns the file paths.

    Reports that share a sweep axis become one line chart (one polyline
    vertex per report); otherwise a bar chart with one bar per report.
    """
    if not reports:
        raise ConfigError("emit_plots: no reports")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    sweepable = len(reports) >= 2 and all(r.sweep_value is not None for r in reports)
    if sweepable:
        kind = (reports[0].sweep_kind or "sweep").replace("/", "-")
        path = out_dir / f"accuracy_vs_{kind}.svg"
        _line_chart(reports, path)
        written.append(path)
    else:
        path = out_dir / "accuracy_bars.svg"
        _bar_chart(reports, path)
        written.append(path)
    return written
