"""Adaptive quality triangulation of polygonal regions into six-node triangles."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import triangle
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from ..dehomog.contours import ContourSet, find_crossings, signed_area

MIN_ANGLE = 25.0
MAX_REFINE_PASSES = 12

# name -> (max_size, min_size, growth_rate, curvature_factor), mm on a 60 mm domain
SIZING_PRESETS = {
    "coarse": (71.7, 1.433, 1.4, 0.40),
    "medium": (38.0, 0.214, 1.3, 0.30),
    "fine": (14.3, 0.054, 1.2, 0.25),
    "extreme-fine": (7.71, 0.014, 1.1, 0.20),
}
SIZING_LEVELS = tuple(SIZING_PRESETS)


class MeshError(RuntimeError):
    pass


@dataclass(frozen=True)
class MeshSizing:
    max_size: float
    min_size: float
    growth_rate: float
    curvature_factor: float

    def __post_init__(self):
        if not 0 < self.min_size <= self.max_size:
            raise ValueError("need 0 < min_size <= max_size")
        if not self.growth_rate > 1:
            raise ValueError("growth_rate must exceed 1")
        if not 0 < self.curvature_factor <= 1:
            raise ValueError("curvature_factor must lie in (0, 1]")

    @classmethod
    def preset(cls, name: str, scale: float = 1.0, cap: float | None = None) -> "MeshSizing":
        """Named level scaled by ``scale``; ``cap`` bounds the maximum size (domain extent)."""
        key = name.replace("_", "-").replace(" ", "-").lower()
        if key not in SIZING_PRESETS:
            raise KeyError(f"unknown mesh sizing {name!r}; choose from {list(SIZING_PRESETS)}")
        mx, mn, g, cf = SIZING_PRESETS[key]
        mx, mn = mx * scale, mn * scale
        if cap is not None:
            mx = min(mx, cap)
        return cls(mx, min(mn, mx), g, cf)


@dataclass(frozen=True)
class TriMesh:
    """Six-node triangles: corners 0-2 counter-clockwise, node 3+k opposite corner k."""

    nodes: np.ndarray  # (n, 2)
    elements: np.ndarray  # (m, 6)
    boundary_edges: np.ndarray  # (b, 3) corner, corner, midside; material on the left
    boundary_tags: np.ndarray  # (b,) index of the source loop
    n_corner: int  # nodes [0, n_corner) are triangle vertices

    def __post_init__(self):
        for name in ("nodes", "elements", "boundary_edges", "boundary_tags"):
            a = np.asarray(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_elements(self) -> int:
        return int(self.elements.shape[0])

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.shape[0])

    def areas(self) -> np.ndarray:
        return triangle_areas(self.nodes, self.elements[:, :3])

    def area(self) -> float:
        return float(self.areas().sum())

    def edge_lengths(self) -> np.ndarray:
        e = unique_edges(self.elements[:, :3])
        return np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1)


def triangle_areas(xy: np.ndarray, tri: np.ndarray) -> np.ndarray:
    a, b, c = xy[tri[:, 0]], xy[tri[:, 1]], xy[tri[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def unique_edges(tri: np.ndarray) -> np.ndarray:
    e = np.sort(np.vstack([tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]]), axis=1)
    return np.unique(e, axis=0)


def circumradii(loop: np.ndarray) -> np.ndarray:
    """Radius of the circle through each vertex of a closed loop and its two neighbours."""
    p = loop[:-1]
    a, b = np.roll(p, 1, axis=0), np.roll(p, -1, axis=0)
    la = np.linalg.norm(p - a, axis=1)
    lb = np.linalg.norm(b - p, axis=1)
    lc = np.linalg.norm(b - a, axis=1)
    cross = np.abs((p[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]) - (p[:, 1] - a[:, 1]) * (b[:, 0] - a[:, 0]))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = la * lb * lc / (2.0 * cross)
    return np.where(cross > 1e-14 * (la * lb + 1e-300), r, np.inf)


# --------------------------------------------------------------------------
# boundary preparation

def _merge_close(pts: np.ndarray, d_min: float) -> np.ndarray:
    """Drop vertices closer than ``d_min`` to the previously kept one (open vertex list)."""
    keep = [0]
    for k in range(1, len(pts)):
        if np.hypot(*(pts[k] - pts[keep[-1]])) >= d_min:
            keep.append(k)
    while len(keep) > 1 and np.hypot(*(pts[keep[-1]] - pts[keep[0]])) < d_min:
        keep.pop()
    return pts[keep]


def prepare_loops(c: ContourSet, s: MeshSizing) -> list:
    """Oriented, cleaned loops (open vertex lists, material on the left) with their source index."""
    if c is None or len(c) == 0:
        raise MeshError("no mesh: empty geometry")
    crossings = find_crossings(c.loops)
    if crossings:
        raise MeshError(f"contour loops cross at {crossings[0]}")
    out = []
    for k, (loop, hole) in enumerate(zip(c.loops, c.holes)):
        area = abs(signed_area(loop))
        if area < s.min_size ** 2:
            warnings.warn(f"dropping degenerate loop {k} (area {area:.3g} < min_size^2)", stacklevel=3)
            continue
        pts = _merge_close(loop[:-1], s.min_size)
        if len(pts) < 3 or abs(signed_area(np.vstack([pts, pts[:1]]))) < s.min_size ** 2:
            warnings.warn(f"dropping loop {k}: collapses below min_size", stacklevel=3)
            continue
        closed = np.vstack([pts, pts[:1]])
        if (signed_area(closed) < 0) != hole:
            pts = pts[::-1]
        out.append((k, pts))
    if not out:
        raise MeshError("no mesh: every loop is degenerate")
    if find_crossings([np.vstack([p, p[:1]]) for _, p in out]):
        raise MeshError("loops cross after merging vertices closer than min_size")
    return out


class SizeField:
    """Target edge length: curvature-limited at the boundary, growing by
    ``growth_rate - 1`` per unit distance, clipped to the sizing bounds.

    Sources are bucketed by size and each bucket uses its lower bound, so the
    field never exceeds the exact minimum over all sources.
    """

    def __init__(self, points: np.ndarray, sizes: np.ndarray, s: MeshSizing, bucket_ratio: float = 1.2):
        self.sizing = s
        points = np.asarray(points, float)
        sizes = np.asarray(sizes, float)
        b = np.floor(np.log(sizes / s.min_size) / np.log(bucket_ratio) + 1e-9).astype(int)
        self.buckets = []
        for k in np.unique(b):
            sel = b == k
            self.buckets.append((float(sizes[sel].min()), cKDTree(points[sel])))

    def __call__(self, xy: np.ndarray) -> np.ndarray:
        s = self.sizing
        xy = np.atleast_2d(xy)
        h = np.full(len(xy), float(s.max_size))
        for h0, tree in self.buckets:
            if h0 >= s.max_size:
                continue
            d, _ = tree.query(xy, distance_upper_bound=(s.max_size - h0) / (s.growth_rate - 1.0))
            np.minimum(h, h0 + (s.growth_rate - 1.0) * d, out=h)
        return np.clip(h, s.min_size, s.max_size)


def curvature_sources(c: ContourSet, s: MeshSizing):
    """Contour vertices with their curvature-limited sizes."""
    pts, sizes = [], []
    for loop in c.loops:
        pts.append(loop[:-1])
        sizes.append(np.clip(s.curvature_factor * circumradii(loop), s.min_size, s.max_size))
    return np.vstack(pts), np.concatenate(sizes)


def _split_loop(pts: np.ndarray, field: SizeField, s: MeshSizing) -> np.ndarray:
    """Bisect segments longer than the field at their ends or middle.

    The size field wins over min_size: a segment between two kept vertices may
    end up shorter than min_size rather than longer than the field allows.
    """
    while True:
        nxt = np.roll(pts, -1, axis=0)
        L = np.linalg.norm(nxt - pts, axis=1)
        h = np.minimum(np.minimum(field(pts), field(nxt)), field(0.5 * (pts + nxt)))
        split = L > h * (1 + 1e-12)
        if not split.any():
            return pts
        out = np.empty((len(pts) + split.sum(), 2))
        pos = np.arange(len(pts)) + np.concatenate([[0], np.cumsum(split)[:-1]])
        out[pos] = pts
        out[pos[split] + 1] = 0.5 * (pts[split] + nxt[split])
        pts = out


# --------------------------------------------------------------------------
# triangulation

def _pslg(loops: list, field: SizeField, s: MeshSizing):
    verts, segs, marks = [], [], []
    off = 0
    for k, pts in loops:
        p = _split_loop(pts, field, s)
        n = len(p)
        idx = off + np.arange(n)
        verts.append(p)
        segs.append(np.column_stack([idx, np.roll(idx, -1)]))
        marks.append(np.full(n, k + 2))
        off += n
    return np.vstack(verts), np.vstack(segs), np.concatenate(marks)


def _material_triangles(tri: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Flood-fill regions separated by oriented segments; keep those left of a segment."""
    m = len(tri)
    e = np.vstack([tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]])
    owner = np.tile(np.arange(m), 3)
    key = np.sort(e, axis=1)
    seg_key = {tuple(x) for x in np.sort(segs, axis=1).tolist()}
    is_seg = np.array([tuple(x) in seg_key for x in key.tolist()], bool)
    order = np.lexsort((key[:, 1], key[:, 0]))
    ks = key[order]
    same = np.all(ks[1:] == ks[:-1], axis=1)
    a, b = order[:-1][same], order[1:][same]
    open_ = ~is_seg[a]
    g = sp.coo_matrix((np.ones(open_.sum()), (owner[a][open_], owner[b][open_])), shape=(m, m))
    _, label = connected_components(g, directed=False)
    # a triangle whose edge runs along a segment in the same direction lies on its left
    directed = {tuple(x) for x in segs.tolist()}
    inside = np.full(label.max() + 1, -1)
    for j in np.flatnonzero(is_seg):
        left = tuple(e[j].tolist()) in directed
        lab = label[owner[j]]
        if inside[lab] == -1:
            inside[lab] = int(left)
    return inside[label] == 1


def _add_midside(xy: np.ndarray, tri: np.ndarray):
    edges = np.sort(np.vstack([tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]]), axis=1)
    uniq, inv = np.unique(edges, axis=0, return_inverse=True)
    inv = inv.ravel()
    mids = 0.5 * (xy[uniq[:, 0]] + xy[uniq[:, 1]])
    n0 = len(xy)
    m = len(tri)
    mid_idx = (n0 + inv).reshape(3, m).T
    return np.vstack([xy, mids]), np.column_stack([tri, mid_idx]), uniq, n0


def _compact(xy: np.ndarray, tri: np.ndarray):
    used = np.unique(tri)
    remap = np.full(len(xy), -1)
    remap[used] = np.arange(len(used))
    return xy[used], remap[tri], remap


def triangulate_region(c: ContourSet, s: MeshSizing, *, max_passes: int = MAX_REFINE_PASSES,
                       return_field: bool = False):
    """Quality six-node triangulation of the material enclosed by ``c``."""
    loops = prepare_loops(c, s)
    field = SizeField(*curvature_sources(c, s), s)
    V, S, M = _pslg(loops, field, s)

    first = triangle.triangulate(dict(vertices=V, segments=S, segment_markers=M), "pQ")
    keep = _material_triangles(first["triangles"], S)
    if not keep.any():
        raise MeshError("no mesh: no material region enclosed by the loops")
    cur = dict(vertices=first["vertices"], triangles=first["triangles"][keep],
               segments=S, segment_markers=M)
    opts = f"rpq{MIN_ANGLE:g}Q"
    cur = triangle.triangulate(cur, opts)
    for _ in range(max_passes):
        xy, tri = cur["vertices"], cur["triangles"]
        centroid = xy[tri].mean(axis=1)
        target = np.sqrt(3.0) / 4.0 * field(centroid) ** 2
        area = triangle_areas(xy, tri)
        if np.all(area <= target * (1 + 1e-9)):
            break
        cur = dict(vertices=xy, triangles=tri, segments=cur["segments"],
                   segment_markers=cur["segment_markers"], triangle_max_area=target)
        cur = triangle.triangulate(cur, opts + "a")
    else:
        raise MeshError(f"size field not met after {max_passes} refinement passes")

    xy, tri, remap = _compact(cur["vertices"], cur["triangles"])
    segs = remap[cur["segments"]]
    smark = np.asarray(cur["segment_markers"]).ravel()
    neg = triangle_areas(xy, tri) < 0
    tri[neg] = tri[neg][:, [0, 2, 1]]
    nodes, elements, _, n0 = _add_midside(xy, tri)

    # boundary edges: corner pairs used by exactly one element, oriented as in that element
    e = np.vstack([elements[:, [1, 2, 3]], elements[:, [2, 0, 4]], elements[:, [0, 1, 5]]])
    key = np.sort(e[:, :2], axis=1)
    _, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    bnd = e[cnt[inv.ravel()] == 1]
    tag_of = {tuple(sorted(p)): int(t) - 2 for p, t in zip(segs.tolist(), smark.tolist())}
    tags = np.array([tag_of.get(tuple(sorted(p)), -1) for p in bnd[:, :2].tolist()], int)
    mesh = TriMesh(nodes, elements, bnd, tags, n0)
    return (mesh, field) if return_field else mesh
