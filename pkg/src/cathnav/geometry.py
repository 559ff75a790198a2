"""Aortic geometry as sets of convex hulls with named anatomical sites.

Vessels are modeled as chains of convex prisms whose union is the navigable
lumen: each tube segment is the convex hull of two consecutive octagonal
cross-section rings.  Interface faces between consecutive prisms are marked
non-collidable so the catheter can pass; branch tubes start buried inside the
parent tube and the contact solver suppresses wall faces whose witness point
lies inside another hull, which opens the branch mouths.

Stylized Type-I and Type-II arches are generated procedurally (the paper's
phantom scans are not shipped); ``load_aorta`` accepts external hull sets
through a JSON manifest.  Lumen radii default to 12 mm (aorta) and 6 mm
(branches) - plausible anthropomorphic values, not measured ones.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull as _QHull

from ._geomlib import (point_hull_surface_distance, point_plane_max)
from .errors import GeometryError, ManifestError

MANIFEST_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Convex hull
# ---------------------------------------------------------------------------

class ConvexHull:
    """A convex hull with outward-oriented triangular faces.

    ``collidable`` flags faces that act as vessel wall; interface faces
    between chained prisms are non-collidable so the lumen union stays open.
    """

    def __init__(self, vertices: np.ndarray, check_convex: bool = True,
                 convex_tol: float = 1e-6):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise GeometryError("hull vertices must be an (n, 3) array")
        if len(self.vertices) < 4:
            raise GeometryError("a hull needs at least 4 vertices")
        try:
            hull = _QHull(self.vertices)
        except Exception as exc:  # qhull errors on degenerate input
            raise GeometryError(f"degenerate hull: {exc}") from exc
        self.faces = np.ascontiguousarray(hull.simplices, dtype=np.int64)
        # qhull equations: n.x + b <= 0 inside, n outward
        self.normals = np.ascontiguousarray(hull.equations[:, :3])
        self.offsets = np.ascontiguousarray(-hull.equations[:, 3])
        self.collidable = np.ones(len(self.faces), dtype=bool)
        if check_convex:
            depth = self.offsets[None, :] - self.vertices @ self.normals.T
            worst = float(np.max(np.min(depth, axis=1)))
            if worst > convex_tol:
                j = int(np.argmax(np.min(depth, axis=1)))
                raise GeometryError(
                    f"vertex {j} lies {worst:.2e} m inside the hull surface")

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    @property
    def aabb(self) -> np.ndarray:
        return np.concatenate([self.vertices.min(axis=0),
                               self.vertices.max(axis=0)])

    def contains(self, point: np.ndarray, tol: float = 0.0) -> bool:
        return self.plane_max(point) <= tol

    def plane_max(self, point: np.ndarray) -> float:
        """max over faces of (n.p - d); <= 0 means inside."""
        return float(np.max(self.normals @ np.asarray(point) - self.offsets))

    def mark_open_plane(self, normal: np.ndarray, offset: float,
                        tol: float = 1e-7) -> None:
        """Mark faces lying in the given plane as non-collidable."""
        normal = np.asarray(normal, dtype=float)
        align = self.normals @ normal
        near = np.abs(self.offsets - offset * align) <= tol
        self.collidable &= ~((align > 1.0 - 1e-9) & near)

    def open_planes(self, tol: float = 1e-9) -> list[tuple[np.ndarray, float]]:
        """Distinct planes of the currently non-collidable faces."""
        planes: list[tuple[np.ndarray, float]] = []
        for f in np.nonzero(~self.collidable)[0]:
            n, d = self.normals[f], float(self.offsets[f])
            if not any(abs(d - d2) < 1e-7 and np.linalg.norm(n - n2) < 1e-7
                       for n2, d2 in planes):
                planes.append((n.copy(), d))
        return planes


# ---------------------------------------------------------------------------
# Packed arrays for the numba contact/render kernels
# ---------------------------------------------------------------------------

@dataclass
class PackedGeometry:
    face_normals: np.ndarray    # (F, 3)
    face_offsets: np.ndarray    # (F,)
    face_collidable: np.ndarray  # (F,) uint8
    hull_face_start: np.ndarray  # (H,)
    hull_face_end: np.ndarray
    tri_a: np.ndarray           # (T, 3) triangle vertices (all faces)
    tri_b: np.ndarray
    tri_c: np.ndarray
    tri_collidable: np.ndarray  # (T,) uint8
    hull_tri_start: np.ndarray
    hull_tri_end: np.ndarray
    hull_aabb: np.ndarray       # (H, 6) [min, max]


def pack_hulls(hulls: list[ConvexHull]) -> PackedGeometry:
    fn, fo, fc, ta, tb, tc, tcol = [], [], [], [], [], [], []
    hfs, hfe, hts, hte, aabb = [], [], [], [], []
    for h in hulls:
        hfs.append(len(fo))
        fn.extend(h.normals)
        fo.extend(h.offsets)
        fc.extend(h.collidable.astype(np.uint8))
        hfe.append(len(fo))
        hts.append(len(ta))
        for k, tri in enumerate(h.faces):
            ta.append(h.vertices[tri[0]])
            tb.append(h.vertices[tri[1]])
            tc.append(h.vertices[tri[2]])
            tcol.append(np.uint8(h.collidable[k]))
        hte.append(len(ta))
        aabb.append(h.aabb)
    return PackedGeometry(
        np.ascontiguousarray(fn, dtype=np.float64),
        np.ascontiguousarray(fo, dtype=np.float64),
        np.ascontiguousarray(fc, dtype=np.uint8),
        np.asarray(hfs, dtype=np.int64), np.asarray(hfe, dtype=np.int64),
        np.ascontiguousarray(ta, dtype=np.float64),
        np.ascontiguousarray(tb, dtype=np.float64),
        np.ascontiguousarray(tc, dtype=np.float64),
        np.asarray(tcol, dtype=np.uint8),
        np.asarray(hts, dtype=np.int64), np.asarray(hte, dtype=np.int64),
        np.ascontiguousarray(aabb, dtype=np.float64))


# ---------------------------------------------------------------------------
# Aorta model
# ---------------------------------------------------------------------------

@dataclass
class AortaModel:
    hulls: list[ConvexHull]
    sites: dict[str, np.ndarray]
    insertion_axis: np.ndarray
    arch_kind: str
    surface_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    branch_axes: dict[str, np.ndarray] = field(default_factory=dict)
    _packed: PackedGeometry | None = field(default=None, repr=False)

    def packed(self) -> PackedGeometry:
        if self._packed is None:
            self._packed = pack_hulls(self.hulls)
        return self._packed

    @property
    def bounds(self) -> np.ndarray:
        lo = np.min([h.aabb[:3] for h in self.hulls], axis=0)
        hi = np.max([h.aabb[3:] for h in self.hulls], axis=0)
        return np.concatenate([lo, hi])

    def validate(self) -> None:
        for name in ("start", "bca_target", "lcca_target"):
            if name not in self.sites:
                raise ManifestError(f"missing site '{name}'")
            inside, _ = containment_and_distance(self, self.sites[name])
            if not inside:
                raise GeometryError(f"site '{name}' lies outside the lumen")
        if len(self.surface_points) == 0:
            raise GeometryError("surface_points must be non-empty")


def lumen_clearance(model: AortaModel, point) -> float:
    """Lower bound of the distance from an interior point to the vessel wall.

    Open interface faces cross the lumen interior, so plain per-hull surface
    distance collapses to zero at junctions.  For each hull containing the
    point, the minimum clearance over its *collidable* faces bounds the wall
    distance from below; the max over containing hulls is returned.
    Returns 0 for exterior points.
    """
    p = np.asarray(point, dtype=np.float64)
    best = 0.0
    for h in model.hulls:
        excess = h.normals @ p - h.offsets
        if np.max(excess) > 0.0:
            continue
        walls = excess[h.collidable]
        clearance = np.inf if len(walls) == 0 else float(np.min(-walls))
        best = max(best, clearance)
    return best


def containment_and_distance(model: AortaModel, point) -> tuple[bool, float]:
    """Whether the point is inside any hull, and distance to the nearest
    hull surface (interior or exterior)."""
    p = np.asarray(point, dtype=np.float64)
    g = model.packed()
    inside = False
    best = np.inf
    for h in range(len(model.hulls)):
        d = point_hull_surface_distance(
            p, g.tri_a, g.tri_b, g.tri_c, g.hull_tri_start[h], g.hull_tri_end[h],
            g.face_normals, g.face_offsets, g.hull_face_start[h], g.hull_face_end[h])
        phi, _ = point_plane_max(p, g.face_normals, g.face_offsets,
                                 g.hull_face_start[h], g.hull_face_end[h])
        if phi <= 0.0:
            inside = True
        best = min(best, d)
    return inside, float(best)


def sample_surface_points(hulls: list[ConvexHull], spacing: float = 0.002) -> np.ndarray:
    """Deterministic points on collidable faces at roughly the given spacing.

    Each triangle is subdivided into k^2 congruent sub-triangles and their
    centroids are emitted, so points are strictly interior to their face and
    never duplicated across shared edges.
    """
    pts = []
    for h in hulls:
        for f, tri in enumerate(h.faces):
            if not h.collidable[f]:
                continue
            a, b, c = h.vertices[tri[0]], h.vertices[tri[1]], h.vertices[tri[2]]
            longest = max(np.linalg.norm(b - a), np.linalg.norm(c - b),
                          np.linalg.norm(a - c))
            k = max(1, int(math.ceil(longest / spacing)))
            e1 = (b - a) / k
            e2 = (c - a) / k
            for i in range(k):
                for j in range(k - i):
                    pts.append(a + (i + 1.0 / 3.0) * e1 + (j + 1.0 / 3.0) * e2)
                    if i + j < k - 1:
                        pts.append(a + (i + 2.0 / 3.0) * e1 + (j + 2.0 / 3.0) * e2)
    return np.asarray(pts, dtype=np.float64).reshape(-1, 3)


# ---------------------------------------------------------------------------
# Procedural arches
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArchParams:
    """Dimensions of the stylized arch.  None fields take per-kind defaults."""

    lumen_radius: float = 0.012      # aorta lumen radius (m)
    branch_radius: float = 0.006     # branch lumen radius (m)
    ascending_length: float = 0.07
    n_ascending: int = 4
    arch_radius: float | None = None
    arch_span_deg: float | None = None
    n_arch: int | None = None
    branch_length: float = 0.075
    n_branch: int = 5
    bca_angle_deg: float | None = None
    lcca_angle_deg: float | None = None
    n_sides: int = 8
    catheter_radius: float = 0.001
    tip_link_length: float = 0.006
    site_depth_extra: float = 0.008  # goal depth past the branch mouth
    corridor_length: float = 0.12    # straight test tube dimensions
    corridor_segments: int = 8


_KIND_DEFAULTS = {
    "type1": dict(arch_radius=0.030, arch_span_deg=180.0, n_arch=12,
                  bca_angle_deg=50.0, lcca_angle_deg=85.0),
    "type2": dict(arch_radius=0.044, arch_span_deg=135.0, n_arch=8,
                  bca_angle_deg=40.0, lcca_angle_deg=58.0),
}


def _resolved(kind: str, params: ArchParams) -> dict:
    vals = dict(params.__dict__)
    for key, dv in _KIND_DEFAULTS[kind].items():
        if vals.get(key) is None:
            vals[key] = dv
    return vals


def _ring(center, tangent, radius, n_sides):
    """Cross-section ring perpendicular to the tangent.

    For planar centerlines (our arches live in the x-y plane) the frame uses
    world +z as one ring axis, which is an exact parallel transport.
    """
    t = np.asarray(tangent, float)
    t = t / np.linalg.norm(t)
    u = np.array([0.0, 0.0, 1.0])
    if abs(t @ u) > 0.9:
        u = np.array([1.0, 0.0, 0.0])
    u = u - (u @ t) * t
    u = u / np.linalg.norm(u)
    v = np.cross(t, u)
    ro = radius / math.cos(math.pi / n_sides)  # inradius = lumen radius
    ang = 2.0 * np.pi * (np.arange(n_sides) + 0.5) / n_sides
    return (np.asarray(center)[None, :]
            + ro * (np.cos(ang)[:, None] * u[None, :]
                    + np.sin(ang)[:, None] * v[None, :]))


def _tube(centers: np.ndarray, tangents: np.ndarray, radius: float,
          n_sides: int, open_start: bool, open_end: bool) -> list[ConvexHull]:
    """Chain of convex prisms over consecutive rings; interface caps open."""
    rings = [_ring(centers[i], tangents[i], radius, n_sides)
             for i in range(len(centers))]
    hulls = []
    for k in range(len(rings) - 1):
        pts = np.vstack([rings[k], rings[k + 1]])
        h = ConvexHull(pts)
        cap0 = np.all(h.faces < n_sides, axis=1)
        cap1 = np.all(h.faces >= n_sides, axis=1)
        if k > 0 or open_start:
            h.collidable[cap0] = False
        if k < len(rings) - 2 or open_end:
            h.collidable[cap1] = False
        hulls.append(h)
    return hulls


def generate_arch(kind: str, params: ArchParams = ArchParams()) -> AortaModel:
    """Stylized aortic arch: ascending segment, arched section, two branches.

    The arch lies in the x-y plane with insertion along +y; branch tubes
    leave the arch radially outward.  BCA is the proximal branch, LCCA the
    distal one.  Sites sit one tip-link length plus ``site_depth_extra``
    past each branch mouth.
    """
    kind = kind.lower().replace("-", "").replace("_", "")
    if kind in ("typei", "1"):
        kind = "type1"
    if kind in ("typeii", "2"):
        kind = "type2"
    if kind == "corridor":
        return make_corridor(params)
    if kind not in _KIND_DEFAULTS:
        raise GeometryError(f"unknown arch kind '{kind}'")
    p = _resolved(kind, params)
    if p["lumen_radius"] <= p["catheter_radius"]:
        raise GeometryError("lumen radius must exceed catheter radius")
    if p["branch_radius"] <= p["catheter_radius"]:
        raise GeometryError("branch radius must exceed catheter radius")

    span = math.radians(p["arch_span_deg"])
    R = p["arch_radius"]
    asc_top = np.array([0.0, p["ascending_length"], 0.0])
    arch_center = asc_top + np.array([-R, 0.0, 0.0])

    th_b = math.radians(p["bca_angle_deg"])
    th_l = math.radians(p["lcca_angle_deg"])
    if not (0.0 < th_b < th_l < span):
        raise GeometryError("branch angles must be ordered inside the arch span")
    mouth_gap = R * (th_l - th_b)
    if mouth_gap < 2.2 * p["branch_radius"]:
        raise GeometryError(
            f"branches overlap: mouth gap {mouth_gap:.4f} m < "
            f"{2.2 * p['branch_radius']:.4f} m")

    # Main vessel centerline: straight ascending run, then the torus sector.
    centers, tangents = [], []
    for i in range(p["n_ascending"] + 1):
        y = p["ascending_length"] * i / p["n_ascending"]
        centers.append(np.array([0.0, y, 0.0]))
        tangents.append(np.array([0.0, 1.0, 0.0]))
    for j in range(1, p["n_arch"] + 1):
        th = span * j / p["n_arch"]
        centers.append(arch_center + R * np.array([math.cos(th), math.sin(th), 0.0]))
        tangents.append(np.array([-math.sin(th), math.cos(th), 0.0]))
    main = _tube(np.asarray(centers), np.asarray(tangents),
                 p["lumen_radius"], p["n_sides"],
                 open_start=True, open_end=False)

    hulls = list(main)
    sites = {"start": np.array([0.0, 0.02, 0.0])}
    branch_axes = {}
    for name, th in (("bca_target", th_b), ("lcca_target", th_l)):
        direction = np.array([math.cos(th), math.sin(th), 0.0])
        origin = arch_center + R * direction
        d0 = 0.35 * p["lumen_radius"]
        dist = np.linspace(d0, p["branch_length"], p["n_branch"] + 1)
        bc = np.asarray([origin + d * direction for d in dist])
        bt = np.tile(direction, (p["n_branch"] + 1, 1))
        branch = _tube(bc, bt, p["branch_radius"], p["n_sides"],
                       open_start=True, open_end=False)
        hulls.extend(branch)
        mouth = p["lumen_radius"]
        sites[name] = origin + (mouth + p["site_depth_extra"]
                                + p["tip_link_length"]) * direction
        branch_axes[name] = direction

    model = AortaModel(hulls, sites, np.array([0.0, 1.0, 0.0]), kind,
                       branch_axes=branch_axes)
    model.surface_points = sample_surface_points(hulls)
    model.validate()
    return model


def make_corridor(params: ArchParams = ArchParams(), length: float | None = None,
                  n_segments: int | None = None) -> AortaModel:
    """Straight test tube along +y with both targets on the axis."""
    if params.lumen_radius <= params.catheter_radius:
        raise GeometryError("lumen radius must exceed catheter radius")
    length = params.corridor_length if length is None else length
    n_segments = params.corridor_segments if n_segments is None else n_segments
    ys = np.linspace(0.0, length, n_segments + 1)
    centers = np.stack([np.zeros(n_segments + 1), ys,
                        np.zeros(n_segments + 1)], axis=1)
    tangents = np.tile(np.array([0.0, 1.0, 0.0]), (n_segments + 1, 1))
    hulls = _tube(centers, tangents, params.lumen_radius, params.n_sides,
                  open_start=True, open_end=False)
    sites = {"start": np.array([0.0, 0.02, 0.0]),
             "bca_target": np.array([0.0, 0.75 * length, 0.0]),
             "lcca_target": np.array([0.0, 0.85 * length, 0.0])}
    axes = {"bca_target": np.array([0.0, 1.0, 0.0]),
            "lcca_target": np.array([0.0, 1.0, 0.0])}
    model = AortaModel(hulls, sites, np.array([0.0, 1.0, 0.0]), "corridor",
                       branch_axes=axes)
    model.surface_points = sample_surface_points(hulls)
    model.validate()
    return model


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------

def save_manifest(model: AortaModel, path) -> None:
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "units": "m",
        "arch_kind": model.arch_kind,
        "insertion_axis": model.insertion_axis.tolist(),
        "sites": {k: v.tolist() for k, v in model.sites.items()},
        "hulls": [{
            "vertices": h.vertices.tolist(),
            "open_planes": [[*n.tolist(), d] for n, d in h.open_planes()],
        } for h in model.hulls],
    }
    Path(path).write_text(json.dumps(doc))


def _load_obj_vertices(path: Path) -> np.ndarray:
    verts = []
    for line in path.read_text().splitlines():
        parts = line.split()
        if parts and parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
    if not verts:
        raise ManifestError(f"no vertex lines in OBJ file {path}")
    return np.asarray(verts, dtype=np.float64)


def load_aorta(path, surface_spacing: float = 0.002) -> AortaModel:
    """Load a hull-set manifest; hulls failing the convexity check are
    rejected with their index.  Faces are recomputed from vertices."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    if not doc.get("hulls"):
        raise ManifestError("manifest references no hulls")
    sites_doc = doc.get("sites") or {}
    for name in ("start", "bca_target", "lcca_target"):
        if name not in sites_doc:
            raise ManifestError(f"manifest is missing site '{name}'")
    hulls = []
    for i, hd in enumerate(doc["hulls"]):
        if "obj" in hd:
            verts = _load_obj_vertices(path.parent / hd["obj"])
        else:
            verts = np.asarray(hd.get("vertices", []), dtype=np.float64)
        try:
            h = ConvexHull(verts)
        except GeometryError as exc:
            raise ManifestError(f"hull {i} rejected: {exc}") from exc
        for plane in hd.get("open_planes", []):
            h.mark_open_plane(np.asarray(plane[:3]), float(plane[3]))
        hulls.append(h)
    _auto_open_interfaces(hulls)
    sites = {k: np.asarray(v, dtype=np.float64) for k, v in sites_doc.items()}
    axis = np.asarray(doc.get("insertion_axis", [0.0, 1.0, 0.0]), dtype=np.float64)
    model = AortaModel(hulls, sites, axis / np.linalg.norm(axis),
                       doc.get("arch_kind", "external"))
    model.surface_points = sample_surface_points(hulls, surface_spacing)
    model.validate()
    return model


def _auto_open_interfaces(hulls: list[ConvexHull], tol: float = 1e-7) -> None:
    """Mark faces whose vertices all sit inside-or-on another hull as open.

    This recovers interface caps of chained decompositions that carry no
    explicit open-plane annotations.
    """
    for i, h in enumerate(hulls):
        for f, tri in enumerate(h.faces):
            if not h.collidable[f]:
                continue
            pts = h.vertices[tri]
            for j, other in enumerate(hulls):
                if i == j:
                    continue
                lo, hi = other.aabb[:3], other.aabb[3:]
                if np.any(pts < lo - tol) or np.any(pts > hi + tol):
                    continue
                if all(other.plane_max(p) <= tol for p in pts):
                    h.collidable[f] = False
                    break
