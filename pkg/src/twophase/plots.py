"""Deterministic SVG line plots of run artifacts (no rendering dependency)."""
from __future__ import annotations

import csv
import glob
import os

import numpy as np

from .grid import read_binary

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=20, top=40, bottom=50)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def line_plot(series, title: str, xlabel: str, ylabel: str, logy: bool = False,
              annotation: str | None = None) -> str:
    """SVG text for ``series = [(x, y, label), ...]``."""
    pts = [(np.asarray(x, float), np.asarray(y, float), lab) for x, y, lab in series]
    if logy:
        pts = [(x, np.where(np.abs(y) > 0, np.log10(np.maximum(np.abs(y), 1e-300)), np.nan), lab)
               for x, y, lab in pts]
    xs = np.concatenate([p[0] for p in pts]) if pts else np.zeros(1)
    ys = np.concatenate([p[1] for p in pts]) if pts else np.zeros(1)
    ys = ys[np.isfinite(ys)] if np.any(np.isfinite(ys)) else np.zeros(1)
    x0, x1 = float(np.min(xs)), float(np.max(xs))
    y0, y1 = float(np.min(ys)), float(np.max(ys))
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        pad = max(abs(y0) * 0.1, 1e-12 if not logy else 0.5)
        y0, y1 = y0 - pad, y1 + pad
    L, R, T, B = MARGIN["left"], MARGIN["right"], MARGIN["top"], MARGIN["bottom"]
    pw, ph = WIDTH - L - R, HEIGHT - T - B
    sx = lambda v: L + (v - x0) / (x1 - x0) * pw  # noqa: E731
    sy = lambda v: T + ph - (v - y0) / (y1 - y0) * ph  # noqa: E731
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<rect x="{L}" y="{T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
           f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="15">{_esc(title)}</text>',
           f'<text x="{L + pw / 2}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">'
           f'{_esc(xlabel)}</text>',
           f'<text x="16" y="{T + ph / 2}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 16 {T + ph / 2})">{_esc(("log10 " if logy else "") + ylabel)}</text>']
    for k in range(5):
        xv = x0 + k * (x1 - x0) / 4
        yv = y0 + k * (y1 - y0) / 4
        out.append(f'<text x="{_fmt(sx(xv))}" y="{T + ph + 16}" text-anchor="middle" '
                   f'font-size="10">{xv:.3g}</text>')
        out.append(f'<text x="{L - 6}" y="{_fmt(sy(yv) + 3)}" text-anchor="end" '
                   f'font-size="10">{yv:.3g}</text>')
    for i, (x, y, lab) in enumerate(pts):
        ok = np.isfinite(y)
        if not np.any(ok):
            continue
        path = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(x[ok], y[ok]))
        color = COLORS[i % len(COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        out.append(f'<text x="{L + pw - 4}" y="{T + 14 + 13 * i}" text-anchor="end" '
                   f'font-size="11" fill="{color}">{_esc(str(lab))}</text>')
    if annotation:
        out.append(f'<text x="{L + 6}" y="{T + 14}" font-size="11">{_esc(annotation)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return {}
    head, body = rows[0], rows[1:]
    return {k: np.array([float(r[i]) if r[i] != "" else np.nan for r in body])
            for i, k in enumerate(head)}


def _epsilon(run_dir):
    path = os.path.join(run_dir, "config.ini")
    if not os.path.exists(path):
        return None
    from .config import load_config

    cfg, _ = load_config(path)
    return cfg.epsilon


def emit_plots(run_dir: str) -> tuple[list, list]:
    """Write SVG plots into ``run_dir/plots``; returns ``(files, messages)``.

    Field plots need snapshots; norm, contraction and residual histories
    need the CSV files.  Missing inputs are reported in ``messages``.
    """
    out_dir = os.path.join(run_dir, "plots")
    os.makedirs(out_dir, exist_ok=True)
    files, messages = [], []

    def save(name, text):
        path = os.path.join(out_dir, name)
        with open(path, "w") as fh:
            fh.write(text)
        files.append(path)

    snaps = sorted(glob.glob(os.path.join(run_dir, "snapshots", "*.bin")))
    if snaps:
        series, hmax = [], 0.0
        for p in snaps:
            head, _, h = read_binary(p)
            line = h if h.ndim == 1 else h[:, 0]
            x = np.arange(line.size) * head["L_tan"] / head["M_tan"]
            series.append((x, line, f"t={head['t']:.3g}"))
            hmax = max(hmax, float(np.max(np.abs(h))))
        eps = _epsilon(run_dir)
        note = f"max|h| = {hmax:.3g}"
        if eps:
            note += f" ({'<=' if hmax <= 2 * eps else '>'} 2 eps = {2 * eps:.3g})"
        save("h_evolution.svg", line_plot(series, "interface height", "x1", "h", annotation=note))
    else:
        messages.append("no snapshots found: field plots skipped")

    diag = os.path.join(run_dir, "diagnostics.csv")
    if os.path.exists(diag):
        d = _read_csv(diag)
        t = d.get("t", np.arange(len(next(iter(d.values())))))
        norms = [k for k in ("h_sup", "u_plus_W2", "u_minus_W2", "theta_W2", "rho_W1") if k in d]
        save("norms.svg", line_plot([(t, d[k], k) for k in norms], "solution norms", "t", "norm",
                                    logy=True))
        res = [k for k in d if k.startswith("res_")]
        if res:
            save("residuals.svg", line_plot([(t, d[k], k[4:]) for k in res],
                                            "interface law residuals", "t", "sup", logy=True))
    else:
        messages.append("no diagnostics.csv: norm and residual plots skipped")

    trace = os.path.join(run_dir, "trace.csv")
    if os.path.exists(trace):
        tr = _read_csv(trace)
        if tr and tr["step"].size:
            steps = np.unique(tr["step"])
            worst = [np.nanmax(np.where(tr["step"] == s, tr["ratio"], np.nan))
                     if np.any((tr["step"] == s) & np.isfinite(tr["ratio"])) else np.nan
                     for s in steps]
            iters = [np.max(tr["iteration"][tr["step"] == s]) for s in steps]
            save("contraction.svg", line_plot([(steps, worst, "max ratio")],
                                              "Picard contraction ratio", "step", "ratio"))
            save("iterations.svg", line_plot([(steps, iters, "iterations")],
                                             "Picard iterations per step", "step", "count"))
    else:
        messages.append("no trace.csv: contraction plots skipped")

    if not files:
        messages.append("nothing to plot")
    return files, messages
