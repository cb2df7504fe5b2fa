"""Boundary extraction: smoothing, marching squares, loop chaining, simplification.

Samples sit at element centers.  The grid is padded with two extra layers on
every side, both placed exactly on the domain edge: one carries the edge
values, the other a value below the contour level.  Regions touching the edge
are therefore closed by straight segments along the domain boundary, through
the true corners, rather than by chamfers half a pixel inside.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..fields import smooth_array
from .morph import BinaryImage

log = logging.getLogger(__name__)


class ContourError(RuntimeError):
    pass


def signed_area(loop: np.ndarray) -> float:
    x, y = loop[:, 0], loop[:, 1]
    return 0.5 * float(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1]))


@dataclass(frozen=True)
class ContourSet:
    """Closed loops (first vertex repeated last), outer loops counter-clockwise."""

    loops: tuple
    holes: tuple = field(default=())

    def __post_init__(self):
        loops = tuple(np.asarray(l, float) for l in self.loops)
        for l in loops:
            if l.ndim != 2 or l.shape[1] != 2:
                raise ValueError("loops must be (n, 2) arrays")
            if not np.array_equal(l[0], l[-1]):
                raise ValueError("loops must be closed (first vertex == last vertex)")
            if len(np.unique(l[:-1], axis=0)) < 3:
                raise ValueError("loops need at least 3 distinct vertices")
            l.setflags(write=False)
        holes = tuple(bool(h) for h in self.holes) if self.holes else tuple(signed_area(l) < 0 for l in loops)
        if len(holes) != len(loops):
            raise ValueError("one hole flag per loop")
        object.__setattr__(self, "loops", loops)
        object.__setattr__(self, "holes", holes)

    def __len__(self):
        return len(self.loops)

    @property
    def n_vertices(self) -> int:
        return sum(len(l) - 1 for l in self.loops)

    def area(self) -> float:
        return float(sum(signed_area(l) for l in self.loops))

    def ordered(self) -> "ContourSet":
        """Outer loops first, then holes; each group by leftmost-lowest vertex."""
        def key(k):
            l = self.loops[k][:-1]
            i = np.lexsort((l[:, 1], l[:, 0]))[0]
            return (self.holes[k], float(l[i, 0]), float(l[i, 1]))
        idx = sorted(range(len(self.loops)), key=key)
        return ContourSet(tuple(self.loops[k] for k in idx), tuple(self.holes[k] for k in idx))


# --------------------------------------------------------------------------
# marching squares

# corners c0..c3 counter-clockwise from lower-left; edge k runs c_k -> c_{k+1}
def _case_segments():
    table = {}
    for case in range(16):
        inside = [(case >> k) & 1 for k in range(4)]
        segs = []
        if case in (0, 15):
            table[case] = segs
            continue
        if case in (5, 10):
            table[case] = None  # saddle, resolved per cell
            continue
        # the single run of inside corners, counter-clockwise from a to b
        a = next(k for k in range(4) if inside[k] and not inside[k - 1])
        b = a
        while inside[(b + 1) % 4]:
            b = (b + 1) % 4
        segs.append((b, (a - 1) % 4))
        table[case] = segs
    return table


_CASES = _case_segments()


def _saddle(case: int, center_inside: bool):
    if case == 5:  # c0 and c2 inside
        return [(0, 1), (2, 3)] if center_inside else [(0, 3), (2, 1)]
    return [(1, 2), (3, 0)] if center_inside else [(1, 0), (3, 2)]


def _sample_axis(n: int, h: float) -> np.ndarray:
    inner = (np.arange(n) + 0.5) * h
    return np.concatenate([[0.0, 0.0], inner, [n * h, n * h]])


def _pad_values(values: np.ndarray, level: float) -> np.ndarray:
    low = min(0.0, level - 1.0)
    v = np.pad(values, 1, mode="edge")
    return np.pad(v, 1, constant_values=low)


def marching_squares(values: np.ndarray, level: float, h: float = 1.0) -> list:
    """Closed loops of ``values == level`` with the super-level set on the left."""
    V = _pad_values(np.asarray(values, float), level)
    ys = _sample_axis(values.shape[0], h)
    xs = _sample_axis(values.shape[1], h)
    ny, nx = V.shape
    inside = V >= level
    case = (inside[:-1, :-1].astype(np.int8) | inside[:-1, 1:] << 1
            | inside[1:, 1:] << 2 | inside[1:, :-1] << 3)
    H = nx - 1  # horizontal edges per row

    def edge_id(j, i, k):
        # edges: 0 bottom, 1 right, 2 top, 3 left; horizontal ids first
        if k == 0:
            return j * H + i
        if k == 2:
            return (j + 1) * H + i
        return ny * H + j * nx + (i + 1 if k == 1 else i)

    def edge_point(eid):
        if eid < ny * H:
            j, i = divmod(eid, H)
            v0, v1 = V[j, i], V[j, i + 1]
            t = (level - v0) / (v1 - v0)
            return (xs[i] + t * (xs[i + 1] - xs[i]), ys[j])
        j, i = divmod(eid - ny * H, nx)
        v0, v1 = V[j, i], V[j + 1, i]
        t = (level - v0) / (v1 - v0)
        return (xs[i], ys[j] + t * (ys[j + 1] - ys[j]))

    nxt = {}
    jj, ii = np.nonzero((case != 0) & (case != 15))
    for j, i in zip(jj.tolist(), ii.tolist()):
        c = int(case[j, i])
        segs = _CASES[c]
        if segs is None:
            centre = 0.25 * (V[j, i] + V[j, i + 1] + V[j + 1, i] + V[j + 1, i + 1])
            segs = _saddle(c, centre >= level)
        for ka, kb in segs:
            a, b = edge_id(j, i, ka), edge_id(j, i, kb)
            if a in nxt:
                raise ContourError(f"edge {a} starts two segments")
            nxt[a] = b

    loops = []
    while nxt:
        start, cur = next(iter(nxt.items()))
        chain = [start]
        del nxt[start]
        while cur != start:
            chain.append(cur)
            try:
                cur = nxt.pop(cur)
            except KeyError:
                raise ContourError("open contour chain") from None
        pts = np.array([edge_point(e) for e in chain])
        # zero-length segments appear along the edge padding
        keep = np.ones(len(pts), bool)
        keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
        pts = pts[keep]
        if len(pts) > 1 and np.array_equal(pts[0], pts[-1]):
            pts = pts[:-1]
        loops.append(np.vstack([pts, pts[:1]]))
    return loops


# --------------------------------------------------------------------------
# simplification

def _dp_open(pts: np.ndarray, tol: float) -> np.ndarray:
    """Indices kept by Douglas-Peucker on an open polyline."""
    n = len(pts)
    keep = np.zeros(n, bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        a, b = stack.pop()
        if b <= a + 1:
            continue
        seg = pts[a + 1:b]
        p, q = pts[a], pts[b]
        d = q - p
        L2 = float(d @ d)
        if L2 == 0.0:
            dist = np.hypot(*(seg - p).T)
        else:
            t = np.clip(((seg - p) @ d) / L2, 0.0, 1.0)
            dist = np.hypot(*(seg - p - t[:, None] * d).T)
        k = int(np.argmax(dist))
        if dist[k] > tol:
            m = a + 1 + k
            keep[m] = True
            stack.append((a, m))
            stack.append((m, b))
    return np.nonzero(keep)[0]


def simplify_loop(loop: np.ndarray, tol: float) -> np.ndarray:
    """Douglas-Peucker on a closed loop, anchored at the leftmost-lowest vertex
    and the vertex farthest from it."""
    pts = loop[:-1]
    s = int(np.lexsort((pts[:, 1], pts[:, 0]))[0])
    pts = np.roll(pts, -s, axis=0)
    far = int(np.argmax(np.hypot(*(pts - pts[0]).T)))
    if far == 0:
        return np.vstack([pts[:1], pts[:1]])
    first = pts[: far + 1]
    second = np.vstack([pts[far:], pts[:1]])
    k1 = _dp_open(first, tol)
    k2 = _dp_open(second, tol) + far
    idx = np.concatenate([k1, k2[1:-1]])
    out = pts[idx]
    return np.vstack([out, out[:1]])


def hausdorff_to_polyline(points: np.ndarray, poly: np.ndarray) -> float:
    """Largest distance from ``points`` to the polyline ``poly`` (segments)."""
    a, b = poly[:-1], poly[1:]
    d = b - a
    L2 = np.einsum("ij,ij->i", d, d)
    worst = 0.0
    for chunk in np.array_split(points, max(1, len(points) // 2000)):
        rel = chunk[:, None, :] - a[None]
        t = np.clip(np.einsum("pij,ij->pi", rel, d) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
        dist = np.hypot(*(rel - t[..., None] * d[None]).transpose(2, 0, 1))
        worst = max(worst, float(dist.min(axis=1).max()))
    return worst


# --------------------------------------------------------------------------
# intersection audit

def _segments(loops):
    segs = [np.stack([l[:-1], l[1:]], axis=1) for l in loops]
    owner = np.concatenate([np.full(len(s), k) for k, s in enumerate(segs)])
    local = np.concatenate([np.arange(len(s)) for s in segs])
    sizes = np.array([len(s) for s in segs])
    return np.concatenate(segs), owner, local, sizes


def _cross(o, a, b):
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0])


def find_crossings(loops, max_report: int = 10) -> list:
    """Pairs of properly crossing segments (bucketed by a uniform grid).

    Returned as ``(loop_a, seg_a, loop_b, seg_b)``.  Segments that merely share
    an endpoint (neighbours along a loop) are ignored.
    """
    if not loops:
        return []
    S, owner, local, sizes = _segments(loops)
    lo = np.minimum(S[:, 0], S[:, 1])
    hi = np.maximum(S[:, 0], S[:, 1])
    span = hi.max(axis=0) - lo.min(axis=0)
    cell = max(float(np.median(np.hypot(*(S[:, 1] - S[:, 0]).T))) * 4.0, 1e-12, float(span.max()) / 512)
    origin = lo.min(axis=0)
    c0 = np.floor((lo - origin) / cell).astype(int)
    c1 = np.floor((hi - origin) / cell).astype(int)
    buckets: dict = {}
    for s in range(len(S)):
        for cx in range(c0[s, 0], c1[s, 0] + 1):
            for cy in range(c0[s, 1], c1[s, 1] + 1):
                buckets.setdefault((cx, cy), []).append(s)
    found = set()
    for members in buckets.values():
        if len(members) < 2:
            continue
        m = np.array(members)
        A, B = np.meshgrid(m, m, indexing="ij")
        sel = A < B
        a, b = A[sel], B[sel]
        p1, p2, q1, q2 = S[a, 0], S[a, 1], S[b, 0], S[b, 1]
        d1, d2 = _cross(q1, q2, p1), _cross(q1, q2, p2)
        d3, d4 = _cross(p1, p2, q1), _cross(p1, p2, q2)
        hit = (d1 * d2 < 0) & (d3 * d4 < 0)
        for x, y in zip(a[hit].tolist(), b[hit].tolist()):
            found.add((x, y))
            if len(found) >= max_report:
                break
    return [(int(owner[x]), int(local[x]), int(owner[y]), int(local[y])) for x, y in sorted(found)]


# --------------------------------------------------------------------------

def extract_boundary(phi: BinaryImage, R_f: float = 8.0, eta_t: float = 0.5, dp_tol: float = 1e-5,
                     h: float | None = None) -> ContourSet:
    """Smooth, contour at ``eta_t`` and simplify; coordinates in the grid's units."""
    if phi.count() == 0:
        raise ContourError("cannot extract a boundary from an empty image")
    if not 0 < eta_t < 1:
        raise ValueError("eta_t must lie in (0, 1)")
    h = phi.grid.h if h is None else h
    smooth = smooth_array(phi.bits.astype(float), R_f)
    raw = marching_squares(smooth, eta_t, h)
    pairs = []
    for loop in raw:
        simp = simplify_loop(loop, dp_tol) if dp_tol > 0 else loop
        if len(simp) - 1 < 3 or signed_area(simp) == 0.0:
            log.warning("dropping degenerate contour loop with %d vertices", len(loop) - 1)
            continue
        pairs.append([loop, simp])
    # simplification may make loops cross; tighten the tolerance on offenders
    tol = dp_tol
    while True:
        crossings = find_crossings([p[1] for p in pairs], 1000)
        if not crossings:
            break
        tol /= 10.0
        if tol < 1e-12:
            raise ContourError("simplified contours still cross at tolerance 1e-12")
        for k in {c[0] for c in crossings} | {c[2] for c in crossings}:
            pairs[k][1] = simplify_loop(pairs[k][0], tol)
    loops = [p[1] for p in pairs]
    if not loops:
        raise ContourError("no contour loop survived simplification")
    return ContourSet(tuple(loops)).ordered()
