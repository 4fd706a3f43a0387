"""Minimal deterministic SVG line plots (no plotting dependency)."""

W, H = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 160, 30, 50

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def line_plot(path, xs, series, title="", xlabel="", ylabel=""):
    """Write a line plot with one polyline per entry of `series`
    ({label: [y...]}), x ticks at every value of xs."""
    xs = list(xs)
    ys_all = [y for ys in series.values() for y in ys]
    y_lo, y_hi = min(ys_all), max(ys_all)
    pad = max(0.05 * (y_hi - y_lo), 0.25)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    x_lo, x_hi = min(xs), max(xs)
    span_x = max(x_hi - x_lo, 1e-9)

    def px(x):
        return MARGIN_L + (x - x_lo) / span_x * (W - MARGIN_L - MARGIN_R)

    def py(y):
        return H - MARGIN_B - (y - y_lo) / (y_hi - y_lo) * (H - MARGIN_T - MARGIN_B)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W // 2}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{MARGIN_L}" y1="{H - MARGIN_B}" x2="{W - MARGIN_R}" y2="{H - MARGIN_B}" stroke="black"/>',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{H - MARGIN_B}" stroke="black"/>',
    ]
    for x in xs:
        parts.append(f'<line x1="{px(x):.1f}" y1="{H - MARGIN_B}" x2="{px(x):.1f}" '
                     f'y2="{H - MARGIN_B + 5}" stroke="black"/>')
        parts.append(f'<text x="{px(x):.1f}" y="{H - MARGIN_B + 20}" text-anchor="middle" '
                     f'font-size="12" class="xtick">{x}</text>')
    n_ticks = 5
    for i in range(n_ticks + 1):
        y = y_lo + (y_hi - y_lo) * i / n_ticks
        parts.append(f'<text x="{MARGIN_L - 8}" y="{py(y):.1f}" text-anchor="end" '
                     f'font-size="11">{y:.1f}</text>')
    parts.append(f'<text x="{(MARGIN_L + W - MARGIN_R) // 2}" y="{H - 10}" '
                 f'text-anchor="middle" font-size="12">{xlabel}</text>')
    parts.append(f'<text x="16" y="{H // 2}" font-size="12" '
                 f'transform="rotate(-90 16 {H // 2})" text-anchor="middle">{ylabel}</text>')

    for i, (label, ys) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = MARGIN_T + 16 + 18 * i
        lx = W - MARGIN_R + 12
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 28}" y="{ly}" font-size="12">{label}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")
    return path
