"""
SVG Chart Generation
Self-contained SVG line, band, histogram and QQ charts for calibration results
"""

import logging
import os
import re
from typing import Dict, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

from .config import CHART_THEMES
from .exceptions import DataError

logger = logging.getLogger(__name__)

TICKS = 5


def _num(value: float) -> str:
    return f"{value:.2f}"


def _tick_label(value: float) -> str:
    return f"{value:.4g}"


class _SvgCanvas:
    """Accumulates SVG elements; every attribute is written with fixed precision"""

    def __init__(self, width: int, height: int, background: str):
        self.width = width
        self.height = height
        self.parts: List[str] = [
            '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
            f'<svg version="1.1" xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect x="0" y="0" width="{width}" height="{height}" style="fill:{background};stroke:none"/>',
        ]

    def group_start(self, css_class: str):
        self.parts.append(f'<g class="{css_class}">')

    def group_end(self):
        self.parts.append("</g>")

    def line(self, x1, y1, x2, y2, style: str):
        self.parts.append(f'<line x1="{_num(x1)}" y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" style="{style}"/>')

    def polyline(self, xs, ys, style: str):
        points = " ".join(f"{_num(x)},{_num(y)}" for x, y in zip(xs, ys))
        self.parts.append(f'<polyline points="{points}" style="{style}"/>')

    def polygon(self, xs, ys, style: str):
        points = " ".join(f"{_num(x)},{_num(y)}" for x, y in zip(xs, ys))
        self.parts.append(f'<polygon points="{points}" style="{style}"/>')

    def rect(self, x, y, width, height, style: str):
        self.parts.append(
            f'<rect x="{_num(x)}" y="{_num(y)}" width="{_num(width)}" height="{_num(height)}" style="{style}"/>'
        )

    def circle(self, x, y, r, style: str):
        self.parts.append(f'<circle cx="{_num(x)}" cy="{_num(y)}" r="{_num(r)}" style="{style}"/>')

    def text(self, x, y, content: str, style: str, anchor: str = "middle"):
        self.parts.append(
            f'<text x="{_num(x)}" y="{_num(y)}" text-anchor="{anchor}" style="{style}">{escape(content)}</text>'
        )

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


class _Frame:
    """Data-to-pixel mapping of one plot area"""

    def __init__(self, x_range: Tuple[float, float], y_range: Tuple[float, float], width: int, height: int, margin: int):
        self.x0, self.x1 = self._padded(*x_range)
        self.y0, self.y1 = self._padded(*y_range)
        self.left, self.right = margin, width - margin / 2
        self.top, self.bottom = margin / 2 + 10, height - margin

    @staticmethod
    def _padded(low: float, high: float) -> Tuple[float, float]:
        if high == low:
            pad = 1.0 if low == 0.0 else abs(low) * 0.1
            return low - pad, high + pad
        return low, high

    def x(self, values):
        values = np.asarray(values, dtype=np.float64)
        return self.left + (values - self.x0) / (self.x1 - self.x0) * (self.right - self.left)

    def y(self, values):
        values = np.asarray(values, dtype=np.float64)
        return self.bottom - (values - self.y0) / (self.y1 - self.y0) * (self.bottom - self.top)


def _finite_range(*arrays) -> Tuple[float, float]:
    values = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])
    values = values[np.isfinite(values)]
    if values.size == 0:
        raise DataError("nothing to plot: no finite values")
    return float(values.min()), float(values.max())


class SvgChartGenerator:
    """Renders calibration charts as standalone SVG documents"""

    def __init__(self, theme: str = "default"):
        self.theme = theme
        self.theme_config = CHART_THEMES.get(theme, CHART_THEMES["default"])

    # -- building blocks ------------------------------------------------------

    def _canvas(self) -> _SvgCanvas:
        t = self.theme_config
        return _SvgCanvas(t["width"], t["height"], t["background_color"])

    def _frame(self, x_range, y_range) -> _Frame:
        t = self.theme_config
        return _Frame(x_range, y_range, t["width"], t["height"], t["margin"])

    def _series_style(self, index: int, dashed: bool = False) -> str:
        t = self.theme_config
        color = t["series_colors"][index % len(t["series_colors"])]
        dash = ";stroke-dasharray:6,3" if dashed else ""
        return f"fill:none;stroke:{color};stroke-width:{t['stroke_width']}{dash}"

    def _text_style(self, size_key: str = "label_size", weight: str = "normal") -> str:
        t = self.theme_config
        return f"font-family:{t['font_family']};font-size:{t[size_key]}px;font-weight:{weight};fill:{t['axis_color']}"

    def _add_axes(self, canvas: _SvgCanvas, frame: _Frame, x_label: str, y_label: str):
        t = self.theme_config
        axis_style = f"stroke:{t['axis_color']};stroke-width:1"
        grid_style = f"stroke:{t['grid_color']};stroke-width:0.5"
        label_style = self._text_style()
        canvas.group_start("axis")
        for value in np.linspace(frame.y0, frame.y1, TICKS):
            y = float(frame.y(value))
            canvas.line(frame.left, y, frame.right, y, grid_style)
            canvas.text(frame.left - 6, y + 4, _tick_label(value), label_style, anchor="end")
        for value in np.linspace(frame.x0, frame.x1, TICKS):
            x = float(frame.x(value))
            canvas.line(x, frame.bottom, x, frame.bottom + 4, axis_style)
            canvas.text(x, frame.bottom + 16, _tick_label(value), label_style)
        canvas.line(frame.left, frame.bottom, frame.right, frame.bottom, axis_style)
        canvas.line(frame.left, frame.top, frame.left, frame.bottom, axis_style)
        canvas.text((frame.left + frame.right) / 2, frame.bottom + 34, x_label, label_style)
        canvas.text(14, (frame.top + frame.bottom) / 2, y_label, label_style)
        canvas.group_end()

    def _add_title(self, canvas: _SvgCanvas, title: str):
        canvas.text(canvas.width / 2, 22, title, self._text_style("title_size", "bold"))

    def _add_legend(self, canvas: _SvgCanvas, frame: _Frame, entries: Sequence[Tuple[str, str]]):
        canvas.group_start("legend")
        for i, (label, color) in enumerate(entries):
            y = frame.top + 8 + 16 * i
            canvas.rect(frame.right - 130, y - 8, 12, 8, f"fill:{color};stroke:none")
            canvas.text(frame.right - 112, y, label, self._text_style(), anchor="start")
        canvas.group_end()

    def _color(self, index: int) -> str:
        colors = self.theme_config["series_colors"]
        return colors[index % len(colors)]

    # -- charts ---------------------------------------------------------------

    def theta_comparison(
        self,
        times,
        true_values: Optional[Sequence[float]],
        fitted_values: Sequence[float],
        title: str = "True vs fitted parameter",
        y_label: str = "theta(t)",
    ) -> str:
        """True Θ component (solid) against the fitted one (dashed)"""
        times = np.asarray(times, dtype=np.float64)
        if times.size == 0:
            raise DataError("nothing to plot: empty time grid")
        series = [np.asarray(fitted_values, dtype=np.float64)]
        if true_values is not None:
            series.insert(0, np.asarray(true_values, dtype=np.float64))
        frame = self._frame(_finite_range(times), _finite_range(*series))
        canvas = self._canvas()
        self._add_title(canvas, title)
        self._add_axes(canvas, frame, "t", y_label)
        canvas.group_start("series")
        entries = []
        for i, values in enumerate(series):
            is_fit = i == len(series) - 1
            canvas.polyline(frame.x(times), frame.y(values), self._series_style(i, dashed=is_fit))
            entries.append(("fitted" if is_fit else "true", self._color(i)))
        canvas.group_end()
        self._add_legend(canvas, frame, entries)
        return canvas.render()

    def trajectory_bands(
        self,
        times,
        observed: Optional[Sequence[float]],
        center: Sequence[float],
        bands: Dict[float, Tuple[Sequence[float], Sequence[float]]],
        title: str = "Prediction intervals",
    ) -> str:
        """Interval bands (widest first) under the centre line and the observed path"""
        times = np.asarray(times, dtype=np.float64)
        if times.size == 0:
            raise DataError("nothing to plot: empty time grid")
        t = self.theme_config
        arrays = [center] + [np.asarray(v) for pair in bands.values() for v in pair]
        if observed is not None:
            arrays.append(observed)
        frame = self._frame(_finite_range(times), _finite_range(*arrays))
        canvas = self._canvas()
        self._add_title(canvas, title)
        self._add_axes(canvas, frame, "t", "x(t)")
        canvas.group_start("bands")
        entries = []
        for level in sorted(bands, reverse=True):
            lower, upper = (np.asarray(v, dtype=np.float64) for v in bands[level])
            color = t["band_colors"].get(f"{level:.2f}", t["grid_color"])
            xs = np.concatenate([frame.x(times), frame.x(times)[::-1]])
            ys = np.concatenate([frame.y(upper), frame.y(lower)[::-1]])
            canvas.polygon(xs, ys, f"fill:{color};stroke:none;fill-opacity:0.8")
            entries.append((f"{level:.0%} interval", color))
        canvas.group_end()
        canvas.group_start("series")
        canvas.polyline(frame.x(times), frame.y(center), self._series_style(0))
        entries.append(("prediction", self._color(0)))
        if observed is not None:
            canvas.polyline(frame.x(times), frame.y(observed), self._series_style(1, dashed=True))
            entries.append(("observed", self._color(1)))
        canvas.group_end()
        self._add_legend(canvas, frame, entries)
        return canvas.render()

    def trajectory_comparison(
        self,
        times,
        paths_true,
        paths_fit,
        title: str = "Paths with true (solid) and fitted (dashed) parameters",
    ) -> str:
        """Pairs of paths driven by the same noise; one colour per pair"""
        times = np.asarray(times, dtype=np.float64)
        paths_true = np.atleast_2d(np.asarray(paths_true, dtype=np.float64))
        paths_fit = np.atleast_2d(np.asarray(paths_fit, dtype=np.float64))
        if times.size == 0 or paths_true.size == 0:
            raise DataError("nothing to plot: no paths")
        if paths_true.shape != paths_fit.shape:
            raise DataError(f"{paths_true.shape[0]} true paths for {paths_fit.shape[0]} fitted paths")
        frame = self._frame(_finite_range(times), _finite_range(paths_true, paths_fit))
        canvas = self._canvas()
        self._add_title(canvas, title)
        self._add_axes(canvas, frame, "t", "X(t)")
        canvas.group_start("series")
        entries = []
        for i, (true_path, fit_path) in enumerate(zip(paths_true, paths_fit)):
            canvas.polyline(frame.x(times), frame.y(true_path), self._series_style(i))
            canvas.polyline(frame.x(times), frame.y(fit_path), self._series_style(i, dashed=True))
            entries.append((f"path {i + 1}", self._color(i)))
        canvas.group_end()
        self._add_legend(canvas, frame, entries)
        return canvas.render()

    def histogram_overlay(self, rows, title: str = "Endpoint distributions") -> str:
        """Two histograms on common bins, drawn as outlined bars"""
        rows = np.asarray(rows, dtype=np.float64)
        if rows.size == 0:
            raise DataError("nothing to plot: empty histogram")
        frame = self._frame(_finite_range(rows[:, 0], rows[:, 1]), (0.0, float(rows[:, 2:4].max())))
        canvas = self._canvas()
        self._add_title(canvas, title)
        self._add_axes(canvas, frame, "X(T)", "count")
        canvas.group_start("bars")
        for column, name in ((2, "true"), (3, "fitted")):
            color = self._color(column - 2)
            for left, right, count in zip(rows[:, 0], rows[:, 1], rows[:, column]):
                x0, x1 = float(frame.x(left)), float(frame.x(right))
                y = float(frame.y(count))
                canvas.rect(x0, y, x1 - x0, frame.bottom - y, f"fill:{color};fill-opacity:0.35;stroke:{color}")
        canvas.group_end()
        self._add_legend(canvas, frame, [("true", self._color(0)), ("fitted", self._color(1))])
        return canvas.render()

    def qq_scatter(self, points, title: str = "QQ plot") -> str:
        """Quantile pairs with the diagonal as reference"""
        points = np.asarray(points, dtype=np.float64)
        if points.size == 0:
            raise DataError("nothing to plot: no quantile pairs")
        low, high = _finite_range(points)
        frame = self._frame((low, high), (low, high))
        canvas = self._canvas()
        self._add_title(canvas, title)
        self._add_axes(canvas, frame, "true quantiles", "fitted quantiles")
        t = self.theme_config
        canvas.group_start("points")
        canvas.line(frame.x(low), frame.y(low), frame.x(high), frame.y(high), f"stroke:{t['grid_color']};stroke-width:1")
        style = f"fill:{self._color(0)};stroke:none"
        for x, y in points:
            canvas.circle(float(frame.x(x)), float(frame.y(y)), t["marker_radius"], style)
        canvas.group_end()
        return canvas.render()

    def loss_curve(self, epochs, loss, val_loss=None, title: str = "Training loss") -> str:
        epochs = np.asarray(epochs, dtype=np.float64)
        if epochs.size == 0:
            raise DataError("nothing to plot: empty loss history")
        series = [np.asarray(loss, dtype=np.float64)]
        if val_loss is not None:
            series.append(np.asarray(val_loss, dtype=np.float64))
        frame = self._frame(_finite_range(epochs), _finite_range(*series))
        canvas = self._canvas()
        self._add_title(canvas, title)
        self._add_axes(canvas, frame, "epoch", "mean loss per term")
        canvas.group_start("series")
        entries = []
        for i, values in enumerate(series):
            canvas.polyline(frame.x(epochs), frame.y(values), self._series_style(i, dashed=i == 1))
            entries.append(("validation" if i else "training", self._color(i)))
        canvas.group_end()
        self._add_legend(canvas, frame, entries)
        return canvas.render()

    # -- files ----------------------------------------------------------------

    def save(self, svg: str, output_path: str) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(output_path)), exist_ok=True)
        with open(output_path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(svg)
        logger.info("Chart saved: %s", output_path)
        return output_path

    def get_chart_info(self, file_path: str) -> Dict[str, int]:
        """Element counts of a saved chart"""
        with open(file_path, "r", encoding="utf-8") as handle:
            content = handle.read()
        info = {tag: len(re.findall(rf"<{tag}\b", content)) for tag in ("polyline", "polygon", "circle", "rect", "text")}
        info["axis_groups"] = content.count('<g class="axis">')
        info["file_size"] = len(content.encode("utf-8"))
        return info
