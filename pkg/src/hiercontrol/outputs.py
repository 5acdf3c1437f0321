"""Deterministic artifact writers: CSV trajectories, JSON reports, SVG charts.

Every writer is bit-exact for identical inputs: fixed float formatting
(17 significant digits in CSV, sorted keys in JSON), fixed newlines, no
timestamps, no environment-dependent content.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ValidationError
from .grids import SpaceTimeField


def format_value(v: float) -> str:
    """17-significant-digit decimal; exact zero renders as plain 0."""
    if v == 0.0:
        return "0"
    return "%.17g" % v


def write_rows(path: str, header: list[str], rows) -> None:
    """CSV writer with fixed formatting; numbers go through format_value."""
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(
                    ",".join(c if isinstance(c, str) else format_value(float(c)) for c in row)
                    + "\n"
                )
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def emit_csv(trajectory: SpaceTimeField, path: str) -> None:
    """Full space-time trajectory, time-major then space-major.

    Header is t,x,value in 1D and t,x,y,value in 2D; row count is
    (steps + 1) * n_nodes.
    """
    grid, tgrid = trajectory.grid, trajectory.tgrid
    header = ["t", "x", "value"] if grid.dim == 1 else ["t", "x", "y", "value"]

    def rows():
        for m in range(tgrid.n_slices):
            t = tgrid.times[m]
            for i in range(grid.n_nodes):
                coords = tuple(grid.nodes[i])
                yield (t, *coords, trajectory.values[m, i])

    write_rows(path, header, rows())


def emit_report(report, path: str) -> None:
    """Pretty-printed JSON with sorted keys and a trailing newline."""
    text = json.dumps(_plain(report), sort_keys=True, indent=2)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _plain(obj):
    """Recursively convert numpy scalars/arrays and dataclass-likes to JSON types."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    if hasattr(obj, "as_dict"):
        return _plain(obj.as_dict())
    return obj


# ---------------------------------------------------------------------------
# SVG line charts

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_VIEW_W, _VIEW_H = 800, 500
_ML, _MR, _MT, _MB = 70, 24, 36, 52


def _ticks(lo: float, hi: float, count: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    raw = np.linspace(lo, hi, count)
    return [float(t) for t in raw]


def emit_svg(series, path: str, title: str = "", xlabel: str = "", ylabel: str = "",
             ylog: bool = False) -> None:
    """Line chart of one or more (x, y) series in a fixed 800x500 viewBox.

    ``series`` is a list of {"label": str, "x": seq, "y": seq}.  With
    ``ylog`` the y data are log10-transformed (nonpositive values are
    dropped from that curve).
    """
    if not series:
        raise ValidationError("emit_svg needs at least one series")
    curves = []
    for s in series:
        x = np.asarray(s["x"], dtype=float)
        y = np.asarray(s["y"], dtype=float)
        if x.shape != y.shape or x.ndim != 1:
            raise ValidationError(f"series {s.get('label', '?')!r} has mismatched x/y")
        if ylog:
            keep = y > 0
            x, y = x[keep], np.log10(y[keep])
        if x.size:
            curves.append((str(s.get("label", "")), x, y))
    if not curves:
        raise ValidationError("emit_svg: no plottable points after filtering")

    xlo = min(float(c[1].min()) for c in curves)
    xhi = max(float(c[1].max()) for c in curves)
    ylo = min(float(c[2].min()) for c in curves)
    yhi = max(float(c[2].max()) for c in curves)
    if xhi <= xlo:
        xhi = xlo + 1.0
    if yhi <= ylo:
        yhi = ylo + 1.0
    pw = _VIEW_W - _ML - _MR
    ph = _VIEW_H - _MT - _MB

    def X(v):
        return _ML + (v - xlo) / (xhi - xlo) * pw

    def Y(v):
        return _MT + (yhi - v) / (yhi - ylo) * ph

    def f(v):
        return "%.6g" % v

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_VIEW_W} {_VIEW_H}" '
        f'font-family="monospace" font-size="12">',
        f'<rect x="0" y="0" width="{_VIEW_W}" height="{_VIEW_H}" fill="white"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" '
        f'stroke="black" stroke-width="1"/>',
    ]
    if title:
        out.append(
            f'<text x="{_VIEW_W // 2}" y="{_MT - 12}" text-anchor="middle" '
            f'font-size="14">{_esc(title)}</text>'
        )
    for t in _ticks(xlo, xhi):
        px = X(t)
        out.append(f'<line x1="{f(px)}" y1="{_MT + ph}" x2="{f(px)}" y2="{_MT + ph + 5}" stroke="black"/>')
        out.append(
            f'<text x="{f(px)}" y="{_MT + ph + 18}" text-anchor="middle">{f(t)}</text>'
        )
    for t in _ticks(ylo, yhi):
        py = Y(t)
        label = f(t) if not ylog else "1e%s" % f(t)
        out.append(f'<line x1="{_ML - 5}" y1="{f(py)}" x2="{_ML}" y2="{f(py)}" stroke="black"/>')
        out.append(
            f'<text x="{_ML - 8}" y="{f(py + 4)}" text-anchor="end">{label}</text>'
        )
    if xlabel:
        out.append(
            f'<text x="{_ML + pw // 2}" y="{_VIEW_H - 14}" text-anchor="middle">{_esc(xlabel)}</text>'
        )
    if ylabel:
        cy = _MT + ph // 2
        out.append(
            f'<text x="18" y="{cy}" text-anchor="middle" '
            f'transform="rotate(-90 18 {cy})">{_esc(ylabel)}</text>'
        )
    for idx, (label, x, y) in enumerate(curves):
        color = _PALETTE[idx % len(_PALETTE)]
        pts = " ".join(f"{f(X(a))},{f(Y(b))}" for a, b in zip(x, y))
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        if label:
            ly = _MT + 16 + 16 * idx
            out.append(
                f'<line x1="{_ML + pw - 150}" y1="{ly - 4}" x2="{_ML + pw - 126}" '
                f'y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>'
            )
            out.append(f'<text x="{_ML + pw - 120}" y="{ly}">{_esc(label)}</text>')
    out.append("</svg>")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(out) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
