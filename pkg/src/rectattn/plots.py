"""Error-vs-sparsity line charts rendered as plain SVG.

Pure-Python rendering keeps the output byte-deterministic: identical CSV input
always yields identical SVG bytes.
"""

import csv
from pathlib import Path

from .errors import SchemaError

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 160, 40, 50

PALETTE = ("#0d6efd", "#dc3545", "#198754", "#fd7e14", "#6f42c1", "#20c997")

METRICS = (("normalized_l1", "Normalized L1 error vs sparsity"),
           ("cosine_similarity", "Cosine similarity vs sparsity"))

REQUIRED_COLUMNS = {"variant", "sparsity", "normalized_l1", "cosine_similarity"}


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def _render_chart(series: dict, metric: str, title: str) -> str:
    xs_all = [x for pts in series.values() for x, _ in pts]
    ys_all = [y for pts in series.values() for _, y in pts]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.05, x_hi + 0.05
    if y_hi == y_lo:
        pad = abs(y_hi) * 0.1 or 0.1
        y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(x):
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * (WIDTH - MARGIN_L - MARGIN_R)

    def sy(y):
        return HEIGHT - MARGIN_B - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - MARGIN_T - MARGIN_B)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{MARGIN_L}" y="24" font-size="15" fill="#212529">{title}</text>',
    ]
    for x in _ticks(x_lo, x_hi):
        px = sx(x)
        parts.append(f'<line x1="{px:.2f}" y1="{MARGIN_T}" x2="{px:.2f}" '
                     f'y2="{HEIGHT - MARGIN_B}" stroke="#e9ecef"/>')
        parts.append(f'<text x="{px:.2f}" y="{HEIGHT - MARGIN_B + 18}" '
                     f'text-anchor="middle" fill="#6c757d">{_fmt(x)}</text>')
    for y in _ticks(y_lo, y_hi):
        py = sy(y)
        parts.append(f'<line x1="{MARGIN_L}" y1="{py:.2f}" x2="{WIDTH - MARGIN_R}" '
                     f'y2="{py:.2f}" stroke="#e9ecef"/>')
        parts.append(f'<text x="{MARGIN_L - 8}" y="{py + 4:.2f}" '
                     f'text-anchor="end" fill="#6c757d">{_fmt(y)}</text>')
    parts.append(f'<text x="{(MARGIN_L + WIDTH - MARGIN_R) / 2:.2f}" y="{HEIGHT - 12}" '
                 f'text-anchor="middle" fill="#212529">sparsity</text>')

    for i, (variant, pts) in enumerate(sorted(series.items())):
        color = PALETTE[i % len(PALETTE)]
        pts = sorted(pts)
        if len(pts) > 1:
            coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
            parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                         f'stroke-width="2"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3.5" fill="{color}"/>')
        ly = MARGIN_T + 16 + 18 * i
        parts.append(f'<rect x="{WIDTH - MARGIN_R + 12}" y="{ly - 9}" width="12" height="12" '
                     f'fill="{color}"/>')
        parts.append(f'<text x="{WIDTH - MARGIN_R + 30}" y="{ly + 2}" '
                     f'fill="#212529">{variant}</text>')
    parts.append("</svg>\n")
    return "\n".join(parts)


def render_plots(csv_path, out_dir) -> list[Path]:
    """Render one SVG per metric from a sweep CSV. Raises SchemaError on a
    missing column or when the CSV has no data rows."""
    csv_path = Path(csv_path)
    try:
        with open(csv_path, newline="") as fh:
            reader = csv.DictReader(fh)
            columns = set(reader.fieldnames or ())
            rows = list(reader)
    except OSError as exc:
        raise SchemaError(f"cannot read {csv_path}: {exc}") from exc
    missing = REQUIRED_COLUMNS - columns
    if missing:
        raise SchemaError(f"{csv_path} is missing columns {sorted(missing)}")
    if not rows:
        raise SchemaError(f"{csv_path} has no data rows")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for metric, title in METRICS:
        series: dict[str, list] = {}
        for row in rows:
            try:
                point = (float(row["sparsity"]), float(row[metric]))
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"bad numeric value in {csv_path}: {exc}") from exc
            series.setdefault(row["variant"], []).append(point)
        path = out / f"{metric}_vs_sparsity.svg"
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(_render_chart(series, metric, title))
        tmp.replace(path)
        written.append(path)
    return written
