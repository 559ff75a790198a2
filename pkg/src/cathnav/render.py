"""Deterministic software rasterizer for the X-ray-like observations.

Orthographic top-down projection (world x-y plane to image columns-rows).
The vessel renders as semi-transparent gray via accumulated chord thickness
through the hull union, pixel = 255 * exp(-kappa * thickness); catheter
links stamp a hard dark footprint.  No anti-aliasing and no randomness, so
identical scenes produce identical bytes.

The vessel is static, so its attenuation background is rasterized once per
(model, camera) and cached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import AortaModel

OBS_RESOLUTION = 128
CATHETER_VALUE = 30        # stamped gray level of the catheter footprint
ATTENUATION = 12.0         # kappa, 1/m

# Color ramp for heatmap overlays: (normalized value, RGB).  Value 0 keeps
# the base pixel; values in (0, 1] interpolate linearly between stops.
HEAT_RAMP = ((0.0, (20, 20, 120)),
             (0.5, (230, 210, 40)),
             (1.0, (255, 30, 30)))


@dataclass(frozen=True)
class CameraSpec:
    """Orthographic top-down camera over a square world window."""

    center_x: float
    center_y: float
    half_extent: float      # meters from center to window edge
    resolution: int = OBS_RESOLUTION

    @staticmethod
    def for_model(model: AortaModel, resolution: int = OBS_RESOLUTION,
                  pad: float = 1.06) -> "CameraSpec":
        b = model.bounds
        cx = float(b[0] + b[3]) / 2.0
        cy = float(b[1] + b[4]) / 2.0
        half = max(b[3] - b[0], b[4] - b[1]) / 2.0 * pad
        return CameraSpec(cx, cy, float(half), resolution)

    @property
    def pixel_size(self) -> float:
        return 2.0 * self.half_extent / self.resolution

    def covers(self, model: AortaModel) -> bool:
        b = model.bounds
        return (self.center_x - self.half_extent <= b[0]
                and self.center_y - self.half_extent <= b[1]
                and b[3] <= self.center_x + self.half_extent
                and b[4] <= self.center_y + self.half_extent)


@njit(cache=True)
def _background_kernel(res, cx, cy, half, fn, fo, hfs, hfe, haabb):
    """Per-pixel chord thickness through the union of hulls."""
    n_hulls = hfs.shape[0]
    pix = 2.0 * half / res
    out = np.zeros((res, res))
    lo = np.zeros(n_hulls)
    hi = np.zeros(n_hulls)
    for i in range(res):
        y = cy + (res / 2.0 - i - 0.5) * pix
        for j in range(res):
            x = cx + (j + 0.5 - res / 2.0) * pix
            m = 0
            for h in range(n_hulls):
                if (x < haabb[h, 0] or x > haabb[h, 3]
                        or y < haabb[h, 1] or y > haabb[h, 4]):
                    continue
                zl = -1e300
                zh = 1e300
                ok = True
                for f in range(hfs[h], hfe[h]):
                    nx, ny, nz = fn[f, 0], fn[f, 1], fn[f, 2]
                    rhs = fo[f] - nx * x - ny * y
                    if nz > 1e-12:
                        v = rhs / nz
                        if v < zh:
                            zh = v
                    elif nz < -1e-12:
                        v = rhs / nz
                        if v > zl:
                            zl = v
                    elif rhs < 0.0:
                        ok = False
                        break
                if ok and zl < zh:
                    lo[m] = zl
                    hi[m] = zh
                    m += 1
            if m == 0:
                continue
            # merge intervals (insertion sort by lower bound; m is small)
            for a in range(1, m):
                kl = lo[a]
                kh = hi[a]
                b = a - 1
                while b >= 0 and lo[b] > kl:
                    lo[b + 1] = lo[b]
                    hi[b + 1] = hi[b]
                    b -= 1
                lo[b + 1] = kl
                hi[b + 1] = kh
            total = 0.0
            cur_lo = lo[0]
            cur_hi = hi[0]
            for a in range(1, m):
                if lo[a] <= cur_hi:
                    if hi[a] > cur_hi:
                        cur_hi = hi[a]
                else:
                    total += cur_hi - cur_lo
                    cur_lo = lo[a]
                    cur_hi = hi[a]
            total += cur_hi - cur_lo
            out[i, j] = total
    return out


@njit(cache=True)
def _stamp_links_kernel(img, p0s, p1s, radius, cx, cy, half, value):
    """Stamp projected capsule footprints; pixel centers inside go dark."""
    res = img.shape[0]
    pix = 2.0 * half / res
    n = p0s.shape[0]
    for k in range(n):
        ax = p0s[k, 0]
        ay = p0s[k, 1]
        bx = p1s[k, 0]
        by = p1s[k, 1]
        r = radius
        xmin = min(ax, bx) - r
        xmax = max(ax, bx) + r
        ymin = min(ay, by) - r
        ymax = max(ay, by) + r
        j0 = int(math.floor((xmin - cx) / pix + res / 2.0 - 0.5))
        j1 = int(math.ceil((xmax - cx) / pix + res / 2.0 + 0.5))
        i0 = int(math.floor(res / 2.0 - (ymax - cy) / pix - 0.5))
        i1 = int(math.ceil(res / 2.0 - (ymin - cy) / pix + 0.5))
        if j0 < 0:
            j0 = 0
        if i0 < 0:
            i0 = 0
        if j1 > res:
            j1 = res
        if i1 > res:
            i1 = res
        ux = bx - ax
        uy = by - ay
        uu = ux * ux + uy * uy
        for i in range(i0, i1):
            py = cy + (res / 2.0 - i - 0.5) * pix
            for j in range(j0, j1):
                px = cx + (j + 0.5 - res / 2.0) * pix
                wx = px - ax
                wy = py - ay
                if uu > 0.0:
                    t = (wx * ux + wy * uy) / uu
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                else:
                    t = 0.0
                dx = wx - t * ux
                dy = wy - t * uy
                if dx * dx + dy * dy <= r * r:
                    img[i, j] = value


_BG_CACHE: dict[tuple, np.ndarray] = {}


def vessel_background(model: AortaModel, camera: CameraSpec) -> np.ndarray:
    """Cached 8-bit attenuation image of the vessel alone."""
    key = (id(model), camera)
    bg = _BG_CACHE.get(key)
    if bg is None:
        g = model.packed()
        thick = _background_kernel(camera.resolution, camera.center_x,
                                   camera.center_y, camera.half_extent,
                                   g.face_normals, g.face_offsets,
                                   g.hull_face_start, g.hull_face_end,
                                   g.hull_aabb)
        bg = np.round(255.0 * np.exp(-ATTENUATION * thick)).astype(np.uint8)
        _BG_CACHE[key] = bg
    return bg


def render_observation(p0s: np.ndarray, p1s: np.ndarray, link_radius: float,
                       model: AortaModel, camera: CameraSpec) -> np.ndarray:
    """Grayscale observation frame (resolution^2 bytes, default 128x128)."""
    img = vessel_background(model, camera).copy()
    _stamp_links_kernel(img, np.ascontiguousarray(p0s, dtype=np.float64),
                        np.ascontiguousarray(p1s, dtype=np.float64),
                        float(link_radius), camera.center_x, camera.center_y,
                        camera.half_extent, CATHETER_VALUE)
    return img


def ramp_color(v: float) -> tuple[int, int, int]:
    """Heat ramp lookup for a normalized value in [0, 1]."""
    v = min(max(v, 0.0), 1.0)
    for (v0, c0), (v1, c1) in zip(HEAT_RAMP[:-1], HEAT_RAMP[1:]):
        if v <= v1:
            t = 0.0 if v1 == v0 else (v - v0) / (v1 - v0)
            return tuple(int(round(c0[k] + t * (c1[k] - c0[k])))
                         for k in range(3))
    return HEAT_RAMP[-1][1]


def render_debug(p0s, p1s, link_radius, model: AortaModel,
                 heatmap=None, camera: CameraSpec | None = None) -> np.ndarray:
    """RGB view: grayscale base with heatmap splats on surface points.

    Heatmap values normalize by their maximum; zero-valued points leave the
    base untouched, the maximum maps to the ramp's top color.  Each surface
    point splats exactly one pixel.
    """
    camera = camera or CameraSpec.for_model(model, resolution=512)
    gray = render_observation(p0s, p1s, link_radius, model, camera)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    if heatmap is None:
        return rgb
    values = np.asarray(heatmap.values, dtype=np.float64)
    vmax = float(values.max()) if values.size else 0.0
    if vmax <= 0.0:
        return rgb
    res = camera.resolution
    pix = camera.pixel_size
    pts = model.surface_points
    for k in range(len(pts)):
        if values[k] <= 0.0:
            continue
        j = int(math.floor((pts[k, 0] - camera.center_x) / pix + res / 2.0))
        i = int(math.floor(res / 2.0 - (pts[k, 1] - camera.center_y) / pix))
        if 0 <= i < res and 0 <= j < res:
            rgb[i, j] = ramp_color(values[k] / vmax)
    return rgb
