"""Force sensing: per-step magnitudes, episode aggregates, surface heatmaps.

The magnitude of a sensed contact force is f_t = sqrt(fx^2 + fy^2 + fz^2);
episode statistics are the max and the arithmetic mean over all samples.
Heatmaps assign each vessel surface point the mean magnitude of all samples
within an accumulation radius.

Force logs are CSV with header
``time_s,f_x,f_y,f_z,f_t,px,py,pz,link_id,hull_id``; heatmaps export as
16-bit PGM plus a JSON sidecar documenting the linear gray scale and a raw
``px,py,pz,value`` CSV.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geometry import AortaModel

FORCE_LOG_HEADER = "time_s,f_x,f_y,f_z,f_t,px,py,pz,link_id,hull_id"


@dataclass(frozen=True)
class ForceSample:
    time: float
    f_x: float
    f_y: float
    f_z: float
    position: np.ndarray
    link_id: int
    hull_id: int

    @property
    def magnitude(self) -> float:
        return math.sqrt(self.f_x ** 2 + self.f_y ** 2 + self.f_z ** 2)


@dataclass
class ForceHeatmap:
    values: np.ndarray          # mean force per surface point, N
    radius: float               # accumulation radius, m
    counts: np.ndarray = field(default=None, repr=False)


def force_magnitude(f_x: float, f_y: float, f_z: float) -> float:
    """Magnitude of the sensed force triplet."""
    if not (math.isfinite(f_x) and math.isfinite(f_y) and math.isfinite(f_z)):
        raise ValueError("force components must be finite")
    return math.sqrt(f_x * f_x + f_y * f_y + f_z * f_z)


def episode_force_stats(samples) -> tuple[float, float]:
    """(f_max, f_mean) over the sample magnitudes; empty input gives (0, 0)."""
    if hasattr(samples, "__len__") and len(samples) == 0:
        return 0.0, 0.0
    mags = np.asarray([s.magnitude if isinstance(s, ForceSample) else float(s)
                       for s in samples], dtype=np.float64)
    if mags.size == 0:
        return 0.0, 0.0
    return float(np.max(mags)), float(np.mean(mags))


def _sample_positions_magnitudes(samples):
    pos = np.asarray([s.position for s in samples], dtype=np.float64).reshape(-1, 3)
    mag = np.asarray([s.magnitude for s in samples], dtype=np.float64)
    return pos, mag


def accumulate_heatmap(samples, model: AortaModel, radius: float) -> ForceHeatmap:
    """Mean sample magnitude per surface point within the given radius.

    Pairing uses a KD-tree as a candidate generator and re-filters with the
    exact squared-distance test, accumulating in (point, sample) order, so
    the result is bitwise identical to a brute-force double loop.
    """
    if radius <= 0.0:
        raise ValueError("radius must be > 0")
    pts = model.surface_points
    values = np.zeros(len(pts))
    counts = np.zeros(len(pts), dtype=np.int64)
    if len(samples) == 0 or len(pts) == 0:
        return ForceHeatmap(values, radius, counts)
    pos, mag = _sample_positions_magnitudes(samples)
    tree = cKDTree(pts)
    cand = tree.query_ball_point(pos, radius * (1.0 + 1e-9))
    pairs_p = []
    pairs_s = []
    r2 = radius * radius
    for s_idx, plist in enumerate(cand):
        for p_idx in plist:
            d = pts[p_idx] - pos[s_idx]
            if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r2:
                pairs_p.append(p_idx)
                pairs_s.append(s_idx)
    if pairs_p:
        pp = np.asarray(pairs_p, dtype=np.int64)
        ss = np.asarray(pairs_s, dtype=np.int64)
        order = np.lexsort((ss, pp))
        pp, ss = pp[order], ss[order]
        sums = np.zeros(len(pts))
        np.add.at(sums, pp, mag[ss])
        np.add.at(counts, pp, 1)
        nz = counts > 0
        values[nz] = sums[nz] / counts[nz]
    return ForceHeatmap(values, radius, counts)


def heatmap_conservation(samples, model: AortaModel, radius: float):
    """Conservation identity of the heatmap pairing.

    Returns (lhs, rhs): the summed magnitude of matched samples and the sum
    of per-pair contributions divided by each sample's multiplicity.  The two
    are equal up to floating-point roundoff.
    """
    pts = model.surface_points
    if len(samples) == 0 or len(pts) == 0:
        return 0.0, 0.0
    pos, mag = _sample_positions_magnitudes(samples)
    tree = cKDTree(pts)
    cand = tree.query_ball_point(pos, radius * (1.0 + 1e-9))
    r2 = radius * radius
    lhs = 0.0
    rhs = 0.0
    for s_idx, plist in enumerate(cand):
        mult = 0
        for p_idx in plist:
            d = pts[p_idx] - pos[s_idx]
            if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r2:
                mult += 1
        if mult:
            lhs += mag[s_idx]
            rhs += mult * (mag[s_idx] / mult)
    return lhs, rhs


# ---------------------------------------------------------------------------
# Force log CSV
# ---------------------------------------------------------------------------

def format_force_row(s: ForceSample) -> str:
    vals = [s.time, s.f_x, s.f_y, s.f_z, s.magnitude,
            s.position[0], s.position[1], s.position[2]]
    row = ",".join(repr(float(v)) for v in vals)
    return f"{row},{int(s.link_id)},{int(s.hull_id)}"


def write_force_log(samples, path) -> None:
    lines = [FORCE_LOG_HEADER] + [format_force_row(s) for s in samples]
    Path(path).write_text("\n".join(lines) + "\n")


def read_force_log(path, ft_tolerance: float = 1e-9):
    """Parse a force log; returns (samples, warnings).

    A warning is recorded for every row whose f_t column disagrees with the
    recomputed magnitude by more than ``ft_tolerance``.  Malformed rows raise
    ValueError naming the line number.
    """
    text = Path(path).read_text().strip().splitlines()
    if not text:
        raise ValueError("force log is empty")
    header = [h.strip() for h in text[0].split(",")]
    idx = {name: k for k, name in enumerate(header)}
    for req in ("time_s", "f_x", "f_y", "f_z"):
        if req not in idx:
            raise ValueError(f"force log missing column '{req}'")
    samples = []
    warnings = []
    for ln, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise ValueError(f"line {ln}: expected {len(header)} fields, "
                             f"got {len(parts)}")
        try:
            t = float(parts[idx["time_s"]])
            fx = float(parts[idx["f_x"]])
            fy = float(parts[idx["f_y"]])
            fz = float(parts[idx["f_z"]])
            px = float(parts[idx["px"]]) if "px" in idx else 0.0
            py = float(parts[idx["py"]]) if "py" in idx else 0.0
            pz = float(parts[idx["pz"]]) if "pz" in idx else 0.0
            link = int(parts[idx["link_id"]]) if "link_id" in idx else -1
            hull = int(parts[idx["hull_id"]]) if "hull_id" in idx else -1
        except ValueError as exc:
            raise ValueError(f"line {ln}: {exc}") from exc
        ft = force_magnitude(fx, fy, fz)
        if "f_t" in idx:
            ft_col = float(parts[idx["f_t"]])
            if abs(ft_col - ft) > ft_tolerance:
                warnings.append(
                    f"line {ln}: f_t column {ft_col!r} disagrees with "
                    f"recomputed magnitude {ft!r}")
        samples.append(ForceSample(t, fx, fy, fz,
                                   np.array([px, py, pz]), link, hull))
    return samples, warnings


# ---------------------------------------------------------------------------
# Heatmap export
# ---------------------------------------------------------------------------

def export_heatmap(heatmap: ForceHeatmap, model: AortaModel, prefix) -> dict:
    """Write <prefix>.pgm (16-bit top-down projection), <prefix>.json
    (scale sidecar) and <prefix>.csv (px,py,pz,value rows)."""
    prefix = Path(prefix)
    pts = model.surface_points
    values = heatmap.values
    vmax = float(values.max()) if len(values) else 0.0

    res = 256
    b = model.bounds
    cx, cy = (b[0] + b[3]) / 2.0, (b[1] + b[4]) / 2.0
    half = max(b[3] - b[0], b[4] - b[1]) / 2.0 * 1.05 + 1e-9
    img = np.zeros((res, res), dtype=np.uint16)
    if vmax > 0.0:
        xs = ((pts[:, 0] - cx) / (2 * half) + 0.5) * res
        ys = ((cy - pts[:, 1]) / (2 * half) + 0.5) * res
        xi = np.clip(xs.astype(np.int64), 0, res - 1)
        yi = np.clip(ys.astype(np.int64), 0, res - 1)
        gray = np.round(values / vmax * 65535.0).astype(np.uint16)
        for k in range(len(pts)):
            if gray[k] > img[yi[k], xi[k]]:
                img[yi[k], xi[k]] = gray[k]
    with open(prefix.with_suffix(".pgm"), "wb") as fh:
        fh.write(f"P5\n{res} {res}\n65535\n".encode())
        fh.write(img.astype(">u2").tobytes())
    sidecar = {"max_value_N": vmax, "levels": 65535,
               "scale": "value_N = gray / 65535 * max_value_N (linear)",
               "resolution": res,
               "window_m": [cx - half, cy - half, cx + half, cy + half],
               "accumulation_radius_m": heatmap.radius}
    prefix.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
    rows = ["px,py,pz,value"]
    rows += [f"{float(p[0])!r},{float(p[1])!r},{float(p[2])!r},{float(v)!r}"
             for p, v in zip(pts, values)]
    prefix.with_suffix(".csv").write_text("\n".join(rows) + "\n")
    return sidecar
