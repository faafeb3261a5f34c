"""Tiny raster plotter: line and scatter charts drawn straight into an RGB array."""

from __future__ import annotations

import numpy as np

from .imageio import write_image

# 3x5 glyphs, rows top to bottom, '#' = ink
_GLYPHS = {
    "0": "###|#.#|#.#|#.#|###", "1": ".#.|##.|.#.|.#.|###", "2": "###|..#|###|#..|###", "3": "###|..#|.##|..#|###",
    "4": "#.#|#.#|###|..#|..#", "5": "###|#..|###|..#|###", "6": "###|#..|###|#.#|###", "7": "###|..#|..#|.#.|.#.",
    "8": "###|#.#|###|#.#|###", "9": "###|#.#|###|..#|###", ".": "...|...|...|...|.#.", "-": "...|...|###|...|...",
    "+": "...|.#.|###|.#.|...", ":": "...|.#.|...|.#.|...", "_": "...|...|...|...|###", "=": "...|###|...|###|...",
    "(": ".#.|#..|#..|#..|.#.", ")": ".#.|..#|..#|..#|.#.", "a": ".#.|#.#|###|#.#|#.#", "b": "##.|#.#|##.|#.#|##.",
    "c": ".##|#..|#..|#..|.##", "d": "##.|#.#|#.#|#.#|##.", "e": "###|#..|##.|#..|###", "f": "###|#..|##.|#..|#..",
    "g": ".##|#..|#.#|#.#|.##", "h": "#.#|#.#|###|#.#|#.#", "i": "###|.#.|.#.|.#.|###", "j": "..#|..#|..#|#.#|.#.",
    "k": "#.#|#.#|##.|#.#|#.#", "l": "#..|#..|#..|#..|###", "m": "#.#|###|###|#.#|#.#", "n": "##.|#.#|#.#|#.#|#.#",
    "o": ".#.|#.#|#.#|#.#|.#.", "p": "##.|#.#|##.|#..|#..", "q": ".#.|#.#|#.#|##.|.##", "r": "##.|#.#|##.|#.#|#.#",
    "s": ".##|#..|.#.|..#|##.", "t": "###|.#.|.#.|.#.|.#.", "u": "#.#|#.#|#.#|#.#|###", "v": "#.#|#.#|#.#|#.#|.#.",
    "w": "#.#|#.#|###|###|#.#", "x": "#.#|#.#|.#.|#.#|#.#", "y": "#.#|#.#|.#.|.#.|.#.", "z": "###|..#|.#.|#..|###",
    " ": "...|...|...|...|...",
}
_PALETTE = np.array([[31, 119, 180], [214, 39, 40], [44, 160, 44], [148, 103, 189],
                     [255, 127, 14], [23, 190, 207], [140, 86, 75], [127, 127, 127]],
                    dtype=np.uint8)


def _glyph(ch: str) -> np.ndarray:
    rows = _GLYPHS.get(ch.lower(), _GLYPHS[" "]).split("|")
    return np.array([[c == "#" for c in row] for row in rows])


class Canvas:
    def __init__(self, width: int = 480, height: int = 320):
        self.w, self.h = width, height
        self.px = np.full((height, width, 3), 255, dtype=np.uint8)

    def dot(self, x: int, y: int, color, r: int = 0):
        x0, x1 = max(x - r, 0), min(x + r + 1, self.w)
        y0, y1 = max(y - r, 0), min(y + r + 1, self.h)
        if x0 < x1 and y0 < y1:
            self.px[y0:y1, x0:x1] = color

    def line(self, x0, y0, x1, y1, color):
        n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
        for t in np.linspace(0.0, 1.0, n + 1):
            self.dot(int(round(x0 + t * (x1 - x0))), int(round(y0 + t * (y1 - y0))), color)

    def text(self, x: int, y: int, s: str, color=(0, 0, 0), scale: int = 2):
        for k, ch in enumerate(s):
            g = _glyph(ch)
            for r, c in zip(*np.nonzero(g)):
                for dy in range(scale):
                    for dx in range(scale):
                        self.dot(x + (4 * k + c) * scale + dx, y + r * scale + dy, color)

    def save(self, path):
        # stored as [-1, 1] floats would requantize; write bytes directly
        write_image(path, self.px.transpose(2, 0, 1))


def _fmt(v: float) -> str:
    return f"{v:.3g}"


class _Axes:
    def __init__(self, canvas: Canvas, xs, ys, margin=(64, 16, 24, 40)):
        self.c = canvas
        self.left, self.right, self.top, self.bottom = margin
        xs = np.concatenate([np.ravel(x) for x in xs]) if len(xs) else np.zeros(1)
        ys = np.concatenate([np.ravel(y) for y in ys]) if len(ys) else np.zeros(1)
        xs, ys = xs[np.isfinite(xs)], ys[np.isfinite(ys)]
        self.x0, self.x1 = (xs.min(), xs.max()) if xs.size else (0.0, 1.0)
        self.y0, self.y1 = (ys.min(), ys.max()) if ys.size else (0.0, 1.0)
        if self.x1 == self.x0:
            self.x0, self.x1 = self.x0 - 0.5, self.x1 + 0.5
        if self.y1 == self.y0:
            self.y0, self.y1 = self.y0 - 0.5, self.y1 + 0.5
        pad = 0.05 * (self.y1 - self.y0)
        self.y0, self.y1 = self.y0 - pad, self.y1 + pad

    def map(self, x, y):
        pw = self.c.w - self.left - self.right
        ph = self.c.h - self.top - self.bottom
        px = self.left + (x - self.x0) / (self.x1 - self.x0) * pw
        py = self.top + (1 - (y - self.y0) / (self.y1 - self.y0)) * ph
        return px, py

    def frame(self, xlabel: str, ylabel: str, title: str):
        c, k = self.c, (0, 0, 0)
        l, r, t, b = self.left, self.c.w - self.right, self.top, self.c.h - self.bottom
        c.line(l, b, r, b, k)
        c.line(l, t, l, b, k)
        for frac in (0.0, 0.5, 1.0):
            xv = self.x0 + frac * (self.x1 - self.x0)
            px, _ = self.map(xv, self.y0)
            c.line(px, b, px, b + 3, k)
            c.text(int(px) - 12, b + 6, _fmt(xv))
            yv = self.y0 + frac * (self.y1 - self.y0)
            _, py = self.map(self.x0, yv)
            c.line(l - 3, py, l, py, k)
            c.text(2, int(py) - 5, _fmt(yv))
        c.text(r - 8 * len(xlabel), b + 24, xlabel)
        c.text(l + 4, 6, f"{ylabel}  {title}".strip())


def line_plot(path, series: dict, xlabel: str = "", ylabel: str = "", title: str = "",
              size=(480, 320), markers: bool = True) -> None:
    """``series`` maps a name to (x, y); the legend lists names in palette order."""
    canvas = Canvas(*size)
    ax = _Axes(canvas, [np.asarray(v[0], float) for v in series.values()],
               [np.asarray(v[1], float) for v in series.values()])
    ax.frame(xlabel, ylabel, title)
    for i, (name, (x, y)) in enumerate(series.items()):
        col = _PALETTE[i % len(_PALETTE)]
        pts = [ax.map(a, b) for a, b in zip(np.asarray(x, float), np.asarray(y, float))
               if np.isfinite(a) and np.isfinite(b)]
        for (a0, b0), (a1, b1) in zip(pts[:-1], pts[1:]):
            canvas.line(a0, b0, a1, b1, col)
        if markers:
            for a, b in pts:
                canvas.dot(int(round(a)), int(round(b)), col, r=2)
        canvas.dot(canvas.w - 150, ax.top + 9 + 14 * i, col, r=2)
        canvas.text(canvas.w - 142, ax.top + 5 + 14 * i, str(name)[:17], col)
    canvas.save(path)


def scatter_plot(path, points: np.ndarray, labels=None, xlabel: str = "", ylabel: str = "",
                 title: str = "", size=(360, 360), diagonal: bool = False) -> None:
    points = np.asarray(points, float)
    canvas = Canvas(*size)
    ax = _Axes(canvas, [points[:, 0]], [points[:, 1]])
    ax.frame(xlabel, ylabel, title)
    if diagonal:
        lo, hi = max(ax.x0, ax.y0), min(ax.x1, ax.y1)
        if hi > lo:
            canvas.line(*ax.map(lo, lo), *ax.map(hi, hi), (160, 160, 160))
    labels = np.zeros(len(points), int) if labels is None else np.asarray(labels)
    for (a, b), lab in zip(points, labels):
        px, py = ax.map(a, b)
        canvas.dot(int(round(px)), int(round(py)), _PALETTE[int(lab) % len(_PALETTE)], r=1)
    canvas.save(path)
