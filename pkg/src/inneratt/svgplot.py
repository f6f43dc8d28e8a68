"""Static SVG rendering of training metrics: reward curve on top, one
polyline per attention head's entropy below. No plotting dependencies, just
SVG 1.1 text."""

from __future__ import annotations

import csv
import math

HEAD_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728")
WIDTH, HEIGHT = 900, 640
MARGIN = 60


def _finite_points(xs, ys):
    return [(x, y) for x, y in zip(xs, ys) if math.isfinite(y)]


class _Panel:
    def __init__(self, x0, y0, width, height, points_by_series):
        self.x0, self.y0, self.width, self.height = x0, y0, width, height
        all_pts = [p for pts in points_by_series.values() for p in pts]
        xs = [p[0] for p in all_pts] or [0.0, 1.0]
        ys = [p[1] for p in all_pts] or [0.0, 1.0]
        self.xmin, self.xmax = min(xs), max(xs)
        self.ymin, self.ymax = min(ys), max(ys)
        if self.xmax == self.xmin:
            self.xmax += 1.0
        if self.ymax == self.ymin:
            self.ymax += 1.0

    def px(self, x):
        return self.x0 + (x - self.xmin) / (self.xmax - self.xmin) * self.width

    def py(self, y):
        return self.y0 + self.height - (y - self.ymin) / (self.ymax - self.ymin) * self.height

    def polyline(self, points, color):
        coords = " ".join(f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in points)
        return (f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                f'points="{coords}" />')

    def frame(self, title):
        return (
            f'<rect x="{self.x0}" y="{self.y0}" width="{self.width}" '
            f'height="{self.height}" fill="none" stroke="#888" />'
            f'<text x="{self.x0}" y="{self.y0 - 8}" font-size="14" '
            f'font-family="sans-serif">{title}</text>'
            f'<text x="{self.x0 - 8}" y="{self.py(self.ymin)}" font-size="11" '
            f'text-anchor="end" font-family="sans-serif">{self.ymin:.3g}</text>'
            f'<text x="{self.x0 - 8}" y="{self.py(self.ymax) + 4}" font-size="11" '
            f'text-anchor="end" font-family="sans-serif">{self.ymax:.3g}</text>'
        )


def plot_metrics(metrics_csv, out_svg):
    """Render a metrics CSV (see the trainer's header) into an SVG file with
    the reward curve and one entropy polyline per attention head."""
    episodes, rewards, entropies = [], [], [[] for _ in range(4)]
    with open(metrics_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            episodes.append(float(row["episode"]))
            rewards.append(float(row["mean_reward"]))
            for h in range(4):
                entropies[h].append(float(row[f"entropy_h{h}"]))

    reward_pts = {"reward": _finite_points(episodes, rewards)}
    entropy_pts = {f"h{h}": _finite_points(episodes, entropies[h]) for h in range(4)}

    panel_h = (HEIGHT - 3 * MARGIN) // 2
    top = _Panel(MARGIN, MARGIN, WIDTH - 2 * MARGIN, panel_h, reward_pts)
    bottom = _Panel(MARGIN, 2 * MARGIN + panel_h, WIDTH - 2 * MARGIN, panel_h, entropy_pts)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{WIDTH}" height="{HEIGHT}">',
        '<rect width="100%" height="100%" fill="white" />',
        top.frame("mean episode reward"),
    ]
    if reward_pts["reward"]:
        parts.append(top.polyline(reward_pts["reward"], "#333333"))
    parts.append(bottom.frame("attention entropy per head"))
    for h in range(4):
        pts = entropy_pts[f"h{h}"]
        if pts:
            parts.append(bottom.polyline(pts, HEAD_COLORS[h]))
        legend_x = MARGIN + 10 + h * 80
        parts.append(
            f'<rect x="{legend_x}" y="{HEIGHT - 30}" width="12" height="12" '
            f'fill="{HEAD_COLORS[h]}" />'
            f'<text x="{legend_x + 16}" y="{HEIGHT - 19}" font-size="12" '
            f'font-family="sans-serif">head {h}</text>'
        )
    parts.append("</svg>")
    with open(out_svg, "w") as fh:
        fh.write("\n".join(parts) + "\n")
