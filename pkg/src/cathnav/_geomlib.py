"""Low-level geometric kernels shared by geometry and contact modules."""

import numpy as np
from numba import njit


@njit(cache=True)
def closest_point_triangle(p, a, b, c):
    """Closest point on triangle abc to point p (Ericson's method)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        return a.copy()
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0.0 and d4 <= d3:
        return b.copy()
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return a + v * ab
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0.0 and d5 <= d6:
        return c.copy()
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a + w * ac
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + w * (c - b)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a + ab * v + ac * w


@njit(cache=True)
def closest_segment_segment(p0, p1, q0, q1):
    """Closest points between two segments (returns dist, pt_on_p, pt_on_q)."""
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    if a <= 1e-300 and e <= 1e-300:
        return np.linalg.norm(p0 - q0), p0.copy(), q0.copy()
    if a <= 1e-300:
        s = 0.0
        t = min(max(f / e, 0.0), 1.0)
    else:
        c = d1 @ r
        if e <= 1e-300:
            t = 0.0
            s = min(max(-c / a, 0.0), 1.0)
        else:
            b = d1 @ d2
            denom = a * e - b * b
            if denom > 1e-300:
                s = min(max((b * f - c * e) / denom, 0.0), 1.0)
            else:
                s = 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = min(max(-c / a, 0.0), 1.0)
            elif t > 1.0:
                t = 1.0
                s = min(max((b - c) / a, 0.0), 1.0)
    cp = p0 + d1 * s
    cq = q0 + d2 * t
    return np.linalg.norm(cp - cq), cp, cq


@njit(cache=True)
def segment_triangle_closest(p0, p1, a, b, c):
    """Exact closest points between segment [p0,p1] and triangle abc.

    Candidates: segment vs the three edges, the two endpoints vs the face,
    and a transversal plane crossing inside the triangle (distance zero).
    Returns (dist, point_on_segment, point_on_triangle).
    """
    n = np.cross(b - a, c - a)
    nn = n @ n
    if nn > 1e-300:
        s0 = (p0 - a) @ n
        s1 = (p1 - a) @ n
        if s0 * s1 <= 0.0 and (s0 != 0.0 or s1 != 0.0):
            t = s0 / (s0 - s1)
            x = p0 + t * (p1 - p0)
            q = closest_point_triangle(x, a, b, c)
            if np.linalg.norm(x - q) < 1e-12:
                return 0.0, x, q
    best = 1e300
    bp = p0.copy()
    bq = p0.copy()
    for k in range(3):
        if k == 0:
            e0, e1 = a, b
        elif k == 1:
            e0, e1 = b, c
        else:
            e0, e1 = c, a
        d, cp, cq = closest_segment_segment(p0, p1, e0, e1)
        if d < best:
            best, bp, bq = d, cp, cq
    for k in range(2):
        p = p0 if k == 0 else p1
        q = closest_point_triangle(p, a, b, c)
        d = np.linalg.norm(p - q)
        if d < best:
            best, bp, bq = d, p.copy(), q
    return best, bp, bq


@njit(cache=True)
def point_plane_max(point, normals, offsets, f0, f1):
    """max over faces [f0,f1) of (n . p - d); <= 0 means inside the hull."""
    best = -1e300
    arg = -1
    for f in range(f0, f1):
        v = (normals[f, 0] * point[0] + normals[f, 1] * point[1]
             + normals[f, 2] * point[2]) - offsets[f]
        if v > best:
            best = v
            arg = f
    return best, arg


@njit(cache=True)
def point_hull_surface_distance(point, tri_a, tri_b, tri_c, t0, t1,
                                normals, offsets, f0, f1):
    """Distance from a point to the boundary of a convex hull.

    Interior points use the minimum face-plane clearance (exact for convex
    hulls); exterior points use the closest triangle.
    """
    phi, _ = point_plane_max(point, normals, offsets, f0, f1)
    if phi <= 0.0:
        return -phi
    best = 1e300
    for t in range(t0, t1):
        q = closest_point_triangle(point, tri_a[t], tri_b[t], tri_c[t])
        d = np.linalg.norm(point - q)
        if d < best:
            best = d
    return best
