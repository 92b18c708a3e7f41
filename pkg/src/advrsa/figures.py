"""Hand-emitted SVG charts (no plotting dependency).

The pipeline's figures are simple grouped bar charts; emitting the SVG
directly keeps outputs byte-deterministic and dependency-free. All
coordinates are formatted with fixed precision so identical inputs yield
identical bytes.
"""

from xml.sax.saxutils import escape

PALETTE = ("#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377")


def _fmt(x):
    return f"{x:.2f}"


def svg_grouped_bars(categories, series, errors=None, title="", ylabel="",
                     width=640, height=400):
    """A grouped bar chart as an SVG string.

    ``categories`` label the x axis groups; ``series`` maps series name ->
    one value per category; ``errors`` optionally maps series name -> one
    (lo, hi) absolute interval per category, drawn as whiskers.
    """
    if not categories:
        raise ValueError("need at least one category")
    names = list(series)
    if not names:
        raise ValueError("need at least one series")
    for name in names:
        if len(series[name]) != len(categories):
            raise ValueError(f"series {name!r} has {len(series[name])} values "
                             f"for {len(categories)} categories")
    errors = errors or {}
    for name in errors:
        if name not in series:
            raise ValueError(f"errors given for unknown series {name!r}")
        if len(errors[name]) != len(categories):
            raise ValueError(f"errors for {name!r} do not match categories")

    lo = min(0.0, *(min(v) for v in series.values()))
    hi = max(0.0, *(max(v) for v in series.values()))
    for name, ivals in errors.items():
        lo = min([lo] + [pair[0] for pair in ivals])
        hi = max([hi] + [pair[1] for pair in ivals])
    if hi == lo:
        hi = lo + 1.0
    pad = 0.08 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    if lo > 0:
        lo = 0.0
    if hi < 0:
        hi = 0.0

    margin_left, margin_right, margin_top, margin_bottom = 62, 16, 42, 56
    plot_w = width - margin_left - margin_right
    plot_h = height - margin_top - margin_bottom

    def y_px(v):
        return margin_top + (hi - v) / (hi - lo) * plot_h

    group_w = plot_w / len(categories)
    bar_gap = 0.18 * group_w
    bar_w = (group_w - 2 * bar_gap) / len(names)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        parts.append(f'<text x="{_fmt(width / 2)}" y="22" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="15" '
                     f'font-weight="bold">{escape(title)}</text>')
    if ylabel:
        parts.append(f'<text x="16" y="{_fmt(margin_top + plot_h / 2)}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="12" transform="rotate(-90 16 '
                     f'{_fmt(margin_top + plot_h / 2)})">{escape(ylabel)}</text>')

    # y grid and ticks: 5 evenly spaced levels
    for i in range(6):
        v = lo + (hi - lo) * i / 5
        y = y_px(v)
        parts.append(f'<line x1="{margin_left}" y1="{_fmt(y)}" '
                     f'x2="{margin_left + plot_w}" y2="{_fmt(y)}" '
                     f'stroke="#dddddd" stroke-width="1"/>')
        parts.append(f'<text x="{margin_left - 6}" y="{_fmt(y + 4)}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="11">{v:.2f}</text>')

    # bars
    for si, name in enumerate(names):
        color = PALETTE[si % len(PALETTE)]
        for ci, value in enumerate(series[name]):
            x = margin_left + ci * group_w + bar_gap + si * bar_w
            y0, y1 = y_px(max(0.0, value)), y_px(min(0.0, value))
            parts.append(f'<rect x="{_fmt(x)}" y="{_fmt(y0)}" '
                         f'width="{_fmt(bar_w)}" height="{_fmt(y1 - y0)}" '
                         f'fill="{color}"/>')
            if name in errors:
                e_lo, e_hi = errors[name][ci]
                cx = x + bar_w / 2
                parts.append(f'<line x1="{_fmt(cx)}" y1="{_fmt(y_px(e_lo))}" '
                             f'x2="{_fmt(cx)}" y2="{_fmt(y_px(e_hi))}" '
                             f'stroke="#333333" stroke-width="1.5"/>')
                for ev in (e_lo, e_hi):
                    parts.append(f'<line x1="{_fmt(cx - 3)}" '
                                 f'y1="{_fmt(y_px(ev))}" x2="{_fmt(cx + 3)}" '
                                 f'y2="{_fmt(y_px(ev))}" stroke="#333333" '
                                 f'stroke-width="1.5"/>')

    # x axis labels and baseline
    parts.append(f'<line x1="{margin_left}" y1="{_fmt(y_px(0.0))}" '
                 f'x2="{margin_left + plot_w}" y2="{_fmt(y_px(0.0))}" '
                 f'stroke="#333333" stroke-width="1"/>')
    for ci, cat in enumerate(categories):
        cx = margin_left + (ci + 0.5) * group_w
        parts.append(f'<text x="{_fmt(cx)}" y="{height - margin_bottom + 18}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="12">{escape(str(cat))}</text>')

    # legend
    lx = margin_left
    ly = height - 18
    for si, name in enumerate(names):
        color = PALETTE[si % len(PALETTE)]
        parts.append(f'<rect x="{_fmt(lx)}" y="{ly - 10}" width="12" '
                     f'height="12" fill="{color}"/>')
        parts.append(f'<text x="{_fmt(lx + 16)}" y="{ly}" '
                     f'font-family="sans-serif" font-size="12">'
                     f'{escape(name)}</text>')
        lx += 16 + 8 * len(name) + 28

    parts.append("</svg>")
    return "\n".join(parts) + "\n"
