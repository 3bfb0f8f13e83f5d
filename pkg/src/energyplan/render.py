"""Raster (PPM) and vector (SVG) scene renders.

Heatmap colour map: field values are min-max normalised per image and mapped
piecewise-linearly through the stops in ``HEAT_STOPS`` (dark blue, blue,
cyan, yellow, white). Overlay colours are fixed in ``COLORS``. Rows run from
the top of the grid (largest y) down, one grid cell = ``scale`` pixels.
"""

import numpy as np

HEAT_STOPS = np.array([
    [0.00, 10, 10, 40],
    [0.25, 30, 60, 200],
    [0.50, 40, 200, 220],
    [0.75, 240, 220, 40],
    [1.00, 255, 255, 255],
])

COLORS = {
    "background": (24, 24, 24),
    "drivable": (70, 70, 70),
    "lane": (200, 200, 200),
    "gt": (40, 220, 60),
    "anchor": (120, 120, 255),
    "candidate": (255, 150, 40),
    "selected": (255, 30, 30),
    "agent": (230, 60, 230),
    "ego": (255, 255, 0),
    "stop_red": (255, 0, 0),
    "stop_green": (0, 255, 0),
}


def heat_colors(values):
    """Map an array of values to uint8 RGB through ``HEAT_STOPS``."""
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    u = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    out = np.empty(v.shape + (3,))
    for c in range(3):
        out[..., c] = np.interp(u, HEAT_STOPS[:, 0], HEAT_STOPS[:, c + 1])
    return np.round(out).astype(np.uint8)


class Canvas:
    def __init__(self, grid, scale=4):
        self.grid = grid
        self.scale = int(scale)
        h, w = grid.shape
        self.pixels = np.zeros((h * self.scale, w * self.scale, 3), dtype=np.uint8)
        self.pixels[...] = COLORS["background"]

    def to_pixel(self, pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        g = self.grid
        col = (pts[:, 0] - g.origin[0] + 0.5 * g.resolution) / g.resolution * self.scale
        row = (g.y_max + 0.5 * g.resolution - pts[:, 1]) / g.resolution * self.scale
        return np.stack([row, col], axis=1)

    def fill_cells(self, rgb_cells):
        """Paint an (H, W, 3) per-cell image, flipping rows so +y is up."""
        img = np.repeat(np.repeat(rgb_cells[::-1], self.scale, axis=0), self.scale, axis=1)
        self.pixels[...] = img

    def _plot(self, rows, cols, color):
        h, w, _ = self.pixels.shape
        r = np.floor(rows).astype(int)
        c = np.floor(cols).astype(int)
        ok = (r >= 0) & (r < h) & (c >= 0) & (c < w)
        self.pixels[r[ok], c[ok]] = color

    def polyline(self, pts, color):
        px = self.to_pixel(pts)
        for a, b in zip(px[:-1], px[1:]):
            n = int(np.ceil(np.abs(b - a).max())) + 1
            t = np.linspace(0.0, 1.0, n)
            self._plot(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), color)

    def disc(self, center, radius, color):
        (r0, c0), = self.to_pixel(center)
        rad = radius / self.grid.resolution * self.scale
        h, w, _ = self.pixels.shape
        rr, cc = np.mgrid[max(0, int(r0 - rad)):min(h, int(r0 + rad) + 1),
                          max(0, int(c0 - rad)):min(w, int(c0 + rad) + 1)]
        inside = (rr + 0.5 - r0) ** 2 + (cc + 0.5 - c0) ** 2 <= max(rad, 1.0) ** 2
        self.pixels[rr[inside], cc[inside]] = color


def _path(scene, xy):
    return np.vstack([np.asarray(scene.ego.position, dtype=float)[None, :], np.asarray(xy)[:, :2]])


def render_scene(scene, field=None, anchors=None, candidates=None, scale=4):
    """RGB image of a scene with optional field underlay, anchors and candidates."""
    cv = Canvas(scene.grid, scale)
    if field is not None:
        cv.fill_cells(heat_colors(field.values))
    else:
        cells = np.empty(scene.grid.shape + (3,), dtype=np.uint8)
        cells[...] = COLORS["background"]
        cells[np.asarray(scene.drivable_mask, dtype=bool)] = COLORS["drivable"]
        cv.fill_cells(cells)
    for lane in scene.lanes:
        cv.polyline(lane.polyline, COLORS["lane"])
    if scene.stop_line is not None:
        sl = scene.stop_line
        cv.polyline(np.array([sl.start, sl.end]), COLORS["stop_red" if sl.state == "red" else "stop_green"])
    if anchors is not None:
        for a in np.asarray(getattr(anchors, "anchors", anchors)):
            cv.polyline(_path(scene, a), COLORS["anchor"])
    if candidates is not None:
        for k, tr in enumerate(candidates.trajectories):
            if k != candidates.selected:
                cv.polyline(_path(scene, tr), COLORS["candidate"])
    cv.polyline(_path(scene, scene.gt_trajectory.xy), COLORS["gt"])
    if candidates is not None:
        cv.polyline(_path(scene, candidates.selected_trajectory), COLORS["selected"])
    for ag in scene.agents:
        cv.disc(ag.position, ag.radius, COLORS["agent"])
    cv.disc(scene.ego.position, 1.0, COLORS["ego"])
    return cv.pixels


def ppm_bytes(pixels):
    h, w, _ = pixels.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def write_ppm(path, pixels):
    data = ppm_bytes(pixels)
    with open(path, "wb") as f:
        f.write(data)
    return data


def read_ppm(path):
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6" or parts[2] != b"255":
        raise ValueError("not a binary 8-bit PPM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)


def _svg_points(scene, pts, scale):
    g = scene.grid
    out = []
    for x, y in np.asarray(pts)[:, :2]:
        out.append(f"{(x - g.origin[0] + 0.5 * g.resolution) / g.resolution * scale:.3f},"
                   f"{(g.y_max + 0.5 * g.resolution - y) / g.resolution * scale:.3f}")
    return " ".join(out)


def render_svg(scene, anchors=None, candidates=None, scale=4):
    """Vector overlay with the same layout and colours as the raster render."""
    h, w = scene.grid.shape
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * scale}" height="{h * scale}">',
             f'<rect width="100%" height="100%" fill="rgb{COLORS["background"]}"/>']

    def poly(pts, color, width=1.0):
        lines.append(f'<polyline points="{_svg_points(scene, pts, scale)}" fill="none" '
                     f'stroke="rgb{color}" stroke-width="{width}"/>')

    for lane in scene.lanes:
        poly(lane.polyline, COLORS["lane"])
    if anchors is not None:
        for a in np.asarray(getattr(anchors, "anchors", anchors)):
            poly(_path(scene, a), COLORS["anchor"])
    if candidates is not None:
        for k, tr in enumerate(candidates.trajectories):
            if k != candidates.selected:
                poly(_path(scene, tr), COLORS["candidate"])
    poly(_path(scene, scene.gt_trajectory.xy), COLORS["gt"], 1.5)
    if candidates is not None:
        poly(_path(scene, candidates.selected_trajectory), COLORS["selected"], 1.5)
    for ag in scene.agents:
        (cx, cy) = _svg_points(scene, np.array([ag.position]), scale).split(",")
        lines.append(f'<circle cx="{cx}" cy="{cy}" r="{ag.radius / scene.grid.resolution * scale:.3f}" '
                     f'fill="rgb{COLORS["agent"]}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
