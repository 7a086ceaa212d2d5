"""History CSV parsing and the loss-curve SVG report.

The SVG contains exactly two <polyline> elements (train loss and validation
loss), drawn blue and orange to match the usual loss-vs-validation-loss plot.
Rendering is pure text generation, so identical input gives identical bytes.
"""

from .errors import DataError
from .training import EpochRecord

CSV_HEADER = "epoch,train_loss,train_acc,val_loss,val_acc"

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 62, 18, 18, 46
TRAIN_COLOR = "#1f77b4"
VAL_COLOR = "#ff7f0e"


def read_history_csv(path):
    with open(path, "r") as fh:
        lines = [line.rstrip("\n") for line in fh]
    lines = [l for l in lines if l.strip()]
    if not lines or lines[0].strip() != CSV_HEADER:
        raise DataError(f"{path}: row 1 is not the expected header '{CSV_HEADER}'")
    records = []
    for row_no, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 5:
            raise DataError(f"{path}: row {row_no} has {len(parts)} fields, expected 5")
        try:
            records.append(EpochRecord(
                epoch=int(parts[0]),
                train_loss=float(parts[1]),
                train_acc=float(parts[2]),
                val_loss=float(parts[3]),
                val_acc=float(parts[4]),
            ))
        except ValueError as exc:
            raise DataError(f"{path}: row {row_no} is malformed: {exc}") from exc
    if not records:
        raise DataError(f"{path}: no data rows")
    return records


def _scale(values, lo, hi, out_lo, out_hi):
    if hi == lo:
        return [(out_lo + out_hi) / 2.0 for _ in values]
    return [out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo) for v in values]


def render_history_svg(records):
    """Two-series loss plot; y axis is loss (down is lower on screen)."""
    epochs = [r.epoch for r in records]
    train = [r.train_loss for r in records]
    val = [r.val_loss for r in records]
    vmin = min(min(train), min(val))
    vmax = max(max(train), max(val))
    if vmax == vmin:
        vmin -= 0.5
        vmax += 0.5
    plot_r = WIDTH - MARGIN_R
    plot_b = HEIGHT - MARGIN_B
    xs = _scale(epochs, min(epochs), max(epochs), MARGIN_L, plot_r)
    y_train = _scale(train, vmin, vmax, plot_b, MARGIN_T)
    y_val = _scale(val, vmin, vmax, plot_b, MARGIN_T)

    def points(xs_, ys_):
        return " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs_, ys_))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{MARGIN_L}" y1="{plot_b}" x2="{plot_r}" y2="{plot_b}" stroke="black"/>',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{plot_b}" stroke="black"/>',
        f'<text x="{(MARGIN_L + plot_r) / 2:.0f}" y="{HEIGHT - 10}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">epoch</text>',
        f'<text x="16" y="{(MARGIN_T + plot_b) / 2:.0f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14" '
        f'transform="rotate(-90 16 {(MARGIN_T + plot_b) / 2:.0f})">loss</text>',
        f'<text x="{MARGIN_L - 8}" y="{MARGIN_T + 5}" text-anchor="end" '
        f'font-family="sans-serif" font-size="11">{vmax:.4f}</text>',
        f'<text x="{MARGIN_L - 8}" y="{plot_b + 4}" text-anchor="end" '
        f'font-family="sans-serif" font-size="11">{vmin:.4f}</text>',
        f'<text x="{MARGIN_L:.0f}" y="{plot_b + 16}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="11">{min(epochs)}</text>',
        f'<text x="{plot_r:.0f}" y="{plot_b + 16}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="11">{max(epochs)}</text>',
        f'<polyline fill="none" stroke="{TRAIN_COLOR}" stroke-width="2" '
        f'points="{points(xs, y_train)}"/>',
        f'<polyline fill="none" stroke="{VAL_COLOR}" stroke-width="2" '
        f'points="{points(xs, y_val)}"/>',
        f'<line x1="{plot_r - 150}" y1="{MARGIN_T + 10}" x2="{plot_r - 120}" '
        f'y2="{MARGIN_T + 10}" stroke="{TRAIN_COLOR}" stroke-width="2"/>',
        f'<text x="{plot_r - 114}" y="{MARGIN_T + 14}" font-family="sans-serif" '
        f'font-size="12">train loss</text>',
        f'<line x1="{plot_r - 150}" y1="{MARGIN_T + 28}" x2="{plot_r - 120}" '
        f'y2="{MARGIN_T + 28}" stroke="{VAL_COLOR}" stroke-width="2"/>',
        f'<text x="{plot_r - 114}" y="{MARGIN_T + 32}" font-family="sans-serif" '
        f'font-size="12">val loss</text>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


def write_history_svg(csv_path, svg_path):
    records = read_history_csv(csv_path)
    svg = render_history_svg(records)
    with open(svg_path, "w", newline="") as fh:
        fh.write(svg)
    return svg
