"""Static SVG plots of a finished run (no plotting dependency)."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

PLOT_KINDS = ("entropy", "confirmations", "trajectory")
PALETTE = ("#1f77b4", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f")

W, H = 640, 400
ML, MR, MT, MB = 60, 110, 30, 45


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".") if v != int(v) else str(int(v))


def _frame(title: str, xlabel: str, ylabel: str, xmax: float, ymax: float) -> list[str]:
    pw, ph = W - ML - MR, H - MT - MB
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line class="axis" x1="{ML}" y1="{MT + ph}" x2="{ML + pw}" y2="{MT + ph}" stroke="black"/>',
        f'<line class="axis" x1="{ML}" y1="{MT}" x2="{ML}" y2="{MT + ph}" stroke="black"/>',
        f'<text x="{ML + pw / 2}" y="{H - 8}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{MT + ph / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {MT + ph / 2})">{escape(ylabel)}</text>',
    ]
    for i in range(5):
        fx = i / 4
        x = ML + fx * pw
        y = MT + ph - fx * ph
        out.append(f'<text x="{x:.1f}" y="{MT + ph + 16}" text-anchor="middle" font-size="10">'
                   f'{_fmt(fx * xmax)}</text>')
        out.append(f'<text x="{ML - 6}" y="{y + 3:.1f}" text-anchor="end" font-size="10">'
                   f'{_fmt(fx * ymax)}</text>')
    return out


def line_chart(title: str, xlabel: str, ylabel: str,
               series: dict[str, list[tuple[float, float]]], step: bool = False) -> str:
    pts = [p for s in series.values() for p in s]
    xmax = max((p[0] for p in pts), default=1.0) or 1.0
    ymax = max((p[1] for p in pts), default=1.0) or 1.0
    pw, ph = W - ML - MR, H - MT - MB
    out = _frame(title, xlabel, ylabel, xmax, ymax)
    for i, (name, data) in enumerate(series.items()):
        if not data:
            continue
        colour = PALETTE[i % len(PALETTE)]
        coords = []
        prev_y = None
        for x, y in data:
            sx = ML + x / xmax * pw
            sy = MT + ph - y / ymax * ph
            if step and prev_y is not None:
                coords.append(f"{sx:.2f},{prev_y:.2f}")
            coords.append(f"{sx:.2f},{sy:.2f}")
            prev_y = sy
        out.append(f'<polyline class="series" data-name="{escape(name)}" fill="none" '
                   f'stroke="{colour}" stroke-width="1.5" points="{" ".join(coords)}"/>')
        ly = MT + 14 * (i + 1)
        out.append(f'<text x="{W - MR + 10}" y="{ly}" font-size="11" fill="{colour}">'
                   f'{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def entropy_plot(robot_ids: list[str], rows: list[dict[str, float]]) -> str:
    series = {rid: [(r["tick"], r[f"{rid}_entropy"]) for r in rows] for rid in robot_ids}
    return line_chart("Belief entropy", "tick", "entropy (bits)", series)


def confirmations_plot(rows: list[dict[str, float]]) -> str:
    series = {"confirmed": [(r["tick"], r["confirmed"]) for r in rows]} if rows else {}
    return line_chart("Targets confirmed", "tick", "confirmed targets", series, step=True)


def trajectory_plot(summary: dict, robot_ids: list[str], rows: list[dict[str, float]]) -> str:
    """Obstacle map with robot tracks; targets red until confirmed, then green."""
    world = summary["world"]
    w, h = world["width"], world["height"]
    scale = min((W - 40) / w, (H - 40) / h)
    ox, oy = 20, 20

    def sx(x: float) -> float:
        return ox + (x + 0.5) * scale

    def sy(y: float) -> float:
        return oy + (h - y - 0.5) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<rect class="axis" x="{ox}" y="{oy}" width="{w * scale:.2f}" height="{h * scale:.2f}" '
        'fill="none" stroke="black"/>',
    ]
    for y, row in enumerate(world["obstacles"]):
        for x, ch in enumerate(row):
            if ch == "#":
                out.append(f'<rect class="obstacle" x="{ox + x * scale:.2f}" '
                           f'y="{oy + (h - y - 1) * scale:.2f}" width="{scale:.2f}" '
                           f'height="{scale:.2f}" fill="#888"/>')
    for i, rid in enumerate(robot_ids):
        pts = [(r[f"{rid}_cell_x"], r[f"{rid}_cell_y"]) for r in rows]
        if not pts:
            continue
        colour = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline class="series" data-name="{escape(rid)}" fill="none" '
                   f'stroke="{colour}" stroke-width="1.5" points="{coords}"/>')
    for t in summary["targets"]:
        x, y = t["cell"]
        colour = "green" if t["confirmed_tick"] is not None else "red"
        out.append(f'<circle class="target" data-id="{escape(t["id"])}" cx="{sx(x):.2f}" '
                   f'cy="{sy(y):.2f}" r="{max(3.0, scale * 0.6):.2f}" fill="{colour}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_plots(out: Path, kinds, summary: dict, robot_ids: list[str],
                rows: list[dict[str, float]]) -> list[Path]:
    written = []
    for kind in kinds:
        if kind == "entropy":
            path, text = out / "entropy_vs_tick.svg", entropy_plot(robot_ids, rows)
        elif kind == "confirmations":
            path, text = out / "confirmations_vs_tick.svg", confirmations_plot(rows)
        elif kind == "trajectory":
            path, text = out / "trajectories.svg", trajectory_plot(summary, robot_ids, rows)
        else:
            raise ValueError(f"unknown plot kind {kind!r}")
        path.write_text(text)
        written.append(path)
    return written
