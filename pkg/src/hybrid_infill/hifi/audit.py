"""Independent mesh auditor.

Everything here is recomputed from the delivered mesh and the source
contours; nothing is read from the generator's bookkeeping.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dehomog.contours import ContourSet
from .mesh import MIN_ANGLE, MeshSizing, TriMesh

# quadrature points of the 3-point rule, in (xi, eta)
_QP = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])


@dataclass
class MeshAudit:
    min_jacobian: float = np.inf
    min_angle: float = 180.0
    min_angle_free: float = 180.0  # away from sharp input corners
    min_edge: float = np.inf
    max_size_ratio: float = 0.0  # element size / allowed size
    max_boundary_ratio: float = 0.0  # boundary edge length / allowed length
    max_neighbor_ratio: float = 1.0  # reported, see notes on grading
    area_mismatch: float = 0.0
    boundary_offset: float = 0.0
    violations: list = field(default_factory=list)  # validity and sizing
    quality_issues: list = field(default_factory=list)  # angle and short-edge targets

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def quality_ok(self) -> bool:
        return not self.violations and not self.quality_issues


def _p2_dshape(xi: float, eta: float) -> np.ndarray:
    """d/dxi, d/deta of the six shape functions, shape (2, 6)."""
    L1, L2, L3 = 1 - xi - eta, xi, eta
    # dL/dxi = (-1, 1, 0), dL/deta = (-1, 0, 1)
    dxi = np.array([-(4 * L1 - 1), 4 * L2 - 1, 0.0, 4 * L3, -4 * L3, 4 * (L1 - L2)])
    deta = np.array([-(4 * L1 - 1), 0.0, 4 * L3 - 1, 4 * L2, 4 * (L1 - L3), -4 * L2])
    return np.stack([dxi, deta])


def _angles(xy: np.ndarray, tri: np.ndarray) -> np.ndarray:
    p = xy[tri]
    out = np.empty(tri.shape)
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        out[:, k] = np.degrees(np.arccos(np.clip(cos, -1, 1)))
    return out


def _seg_distance(pts: np.ndarray, a: np.ndarray, b: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Distance from each point to the nearest of the segments a-b."""
    ab = b - a
    L2 = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk, None, :]
        t = np.clip(np.einsum("pij,ij->pi", p - a[None], ab) / L2, 0, 1)
        q = a[None] + t[..., None] * ab[None]
        out[s:s + chunk] = np.sqrt(((p - q) ** 2).sum(-1).min(axis=1))
    return out


def _allowed_size(x: np.ndarray, bpts: np.ndarray, bsize: np.ndarray, s: MeshSizing,
                  chunk: int = 1024) -> np.ndarray:
    """Exact gradation-limited size: min over boundary points of h_b + (g - 1) d."""
    out = np.empty(len(x))
    for k in range(0, len(x), chunk):
        d = np.sqrt(((x[k:k + chunk, None, :] - bpts[None]) ** 2).sum(-1))
        out[k:k + chunk] = (bsize[None] + (s.growth_rate - 1) * d).min(axis=1)
    return np.clip(out, s.min_size, s.max_size)


def _corner_angles(loop: np.ndarray) -> np.ndarray:
    """Interior angle (degrees, material side) at each vertex of a loop oriented material-left."""
    p = loop[:-1]
    a = np.roll(p, 1, axis=0) - p
    b = np.roll(p, -1, axis=0) - p
    ang = np.degrees(np.arctan2(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0], np.einsum("ij,ij->i", a, b)))
    return np.mod(ang, 360.0)


def audit_mesh(mesh: TriMesh, contours: ContourSet, s: MeshSizing, *, angle_tol: float = 1e-6) -> MeshAudit:
    r = MeshAudit()
    xy, el = mesh.nodes, mesh.elements
    scale = float(np.ptp(xy, axis=0).max())
    tri = el[:, :3]

    # positive Jacobian of the isoparametric map at every quadrature point
    for xi, eta in _QP:
        d = _p2_dshape(xi, eta)
        X, Y = xy[el, 0], xy[el, 1]
        J = np.stack([X @ d.T, Y @ d.T], axis=1)  # (m, 2, 2): rows x,y; cols xi,eta
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        r.min_jacobian = min(r.min_jacobian, float(det.min()))
    if r.min_jacobian <= 0:
        r.violations.append(f"non-positive Jacobian {r.min_jacobian:.3g}")

    # conformity: each edge shared by at most two elements, with a common midside node
    e = np.vstack([el[:, [1, 2, 3]], el[:, [2, 0, 4]], el[:, [0, 1, 5]]])
    key = np.sort(e[:, :2], axis=1)
    order = np.lexsort((key[:, 1], key[:, 0]))
    ks, es = key[order], e[order]
    same = np.all(ks[1:] == ks[:-1], axis=1)
    if np.any(same[1:] & same[:-1]):
        r.violations.append("edge shared by more than two elements")
    if np.any(es[1:, 2][same] != es[:-1, 2][same]):
        r.violations.append("neighbouring elements disagree on a midside node")
    if np.any(same & (es[1:, 0] == es[:-1, 0])):
        r.violations.append("neighbouring elements traverse a shared edge in the same direction")
    mid_err = np.abs(xy[e[:, 2]] - 0.5 * (xy[e[:, 0]] + xy[e[:, 1]])).max()
    if mid_err > 1e-12 * scale:
        r.violations.append(f"midside node off edge midpoint by {mid_err:.3g}")
    if np.intersect1d(np.unique(el[:, :3]), np.unique(el[:, 3:])).size:
        r.violations.append("node used both as corner and as midside node")

    # edges used once must lie on the source contours and enclose exactly the element area
    single = np.ones(len(ks), bool)
    single[1:] &= ~same
    single[:-1] &= ~same
    bnd = es[single]
    src = [l for l in contours.loops]
    a = np.vstack([l[:-1] for l in src])
    b = np.vstack([l[1:] for l in src])
    probe = np.vstack([xy[bnd[:, 0]], xy[bnd[:, 2]]])
    r.boundary_offset = float(_seg_distance(probe, a, b).max()) if len(bnd) else 0.0
    if r.boundary_offset > s.min_size:
        r.violations.append(f"boundary edge strays {r.boundary_offset:.3g} from the contours (hanging node?)")
    p, q = xy[bnd[:, 0]], xy[bnd[:, 1]]
    enclosed = 0.5 * float(np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))
    ar = 0.5 * ((xy[tri[:, 1], 0] - xy[tri[:, 0], 0]) * (xy[tri[:, 2], 1] - xy[tri[:, 0], 1])
                - (xy[tri[:, 1], 1] - xy[tri[:, 0], 1]) * (xy[tri[:, 2], 0] - xy[tri[:, 0], 0]))
    r.area_mismatch = abs(enclosed - ar.sum()) / max(abs(enclosed), 1e-300)
    if r.area_mismatch > 1e-9:
        r.violations.append(f"elements overlap or leave gaps (area mismatch {r.area_mismatch:.3g})")

    # sizing against the exact gradation-limited field built from contour curvature
    bpts, bsize = [], []
    for l in src:
        pts = l[:-1]
        pa, pb = np.roll(pts, 1, axis=0), np.roll(pts, -1, axis=0)
        la = np.linalg.norm(pts - pa, axis=1)
        lb = np.linalg.norm(pb - pts, axis=1)
        lc = np.linalg.norm(pb - pa, axis=1)
        cr = np.abs((pts[:, 0] - pa[:, 0]) * (pb[:, 1] - pa[:, 1]) - (pts[:, 1] - pa[:, 1]) * (pb[:, 0] - pa[:, 0]))
        R = np.where(cr > 1e-14 * la * lb, la * lb * lc / np.maximum(2 * cr, 1e-300), np.inf)
        bpts.append(pts)
        bsize.append(np.clip(s.curvature_factor * R, s.min_size, s.max_size))
    bpts, bsize = np.vstack(bpts), np.concatenate(bsize)
    size = np.sqrt(4 * np.abs(ar) / np.sqrt(3))
    allowed = _allowed_size(xy[tri].mean(axis=1), bpts, bsize, s)
    r.max_size_ratio = float((size / allowed).max())
    if r.max_size_ratio > 1 + 1e-9:
        r.violations.append(f"element size exceeds the sizing field by factor {r.max_size_ratio:.4f}")
    blen = np.linalg.norm(q - p, axis=1)
    ballow = np.minimum(_allowed_size(xy[bnd[:, 0]], bpts, bsize, s), _allowed_size(xy[bnd[:, 1]], bpts, bsize, s))
    r.max_boundary_ratio = float((blen / ballow).max()) if len(bnd) else 0.0
    if r.max_boundary_ratio > 1 + 1e-9:
        r.violations.append(f"boundary edge exceeds curvature sizing by factor {r.max_boundary_ratio:.4f}")

    # shortest edge
    uk = ks[np.r_[True, ~same]]
    elen = np.linalg.norm(xy[uk[:, 0]] - xy[uk[:, 1]], axis=1)
    r.min_edge = float(elen.min())
    if r.min_edge < s.min_size * (1 - 1e-9):
        r.quality_issues.append(f"edge of length {r.min_edge:.3g} below min_size {s.min_size:.3g}")

    # minimum angle, excused only next to input corners that are themselves sharper than the bound
    ang = _angles(xy, tri)
    r.min_angle = float(ang.min())
    sharp = []
    for l in src:
        ca = _corner_angles(l)
        sharp.append(l[:-1][ca < 2 * MIN_ANGLE])
    sharp = np.vstack(sharp) if sharp else np.zeros((0, 2))
    free = np.ones(len(tri), bool)
    if len(sharp):
        d = _seg_distance(xy[tri].reshape(-1, 2), sharp, sharp).reshape(-1, 3).min(axis=1)
        free = d > 1e-12 * scale
    r.min_angle_free = float(ang[free].min()) if free.any() else 180.0
    if r.min_angle_free < MIN_ANGLE - angle_tol:
        r.quality_issues.append(f"minimum angle {r.min_angle_free:.2f} deg below {MIN_ANGLE:g}")

    # adjacent element size ratio, reported only
    a_el = np.tile(np.arange(len(tri)), 3)[order]
    i, j = a_el[:-1][same], a_el[1:][same]
    if i.size:
        rat = size[i] / size[j]
        r.max_neighbor_ratio = float(np.maximum(rat, 1 / rat).max())
    return r
