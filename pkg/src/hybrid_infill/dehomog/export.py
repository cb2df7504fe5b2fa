"""Geometry export: minimal ASCII DXF (R12) and SVG, plus a DXF reader."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .contours import ContourSet


def _num(v: float) -> str:
    # repr gives the shortest string that round-trips the double exactly
    return repr(float(v))


def dxf_text(c: ContourSet) -> str:
    c = c.ordered()
    out = ["0", "SECTION", "2", "HEADER", "9", "$ACADVER", "1", "AC1009", "0", "ENDSEC", "0", "SECTION", "2", "ENTITIES"]
    for loop, hole in zip(c.loops, c.holes):
        layer = "HOLES" if hole else "OUTER"
        out += ["0", "POLYLINE", "8", layer, "66", "1", "10", "0.0", "20", "0.0", "30", "0.0", "70", "1"]
        for x, y in loop[:-1]:
            out += ["0", "VERTEX", "8", layer, "10", _num(x), "20", _num(y), "30", "0.0"]
        out += ["0", "SEQEND", "8", layer]
    out += ["0", "ENDSEC", "0", "EOF"]
    return "\n".join(out) + "\n"


def read_dxf(path) -> ContourSet:
    """Read closed POLYLINE entities written by :func:`export_geometry`."""
    lines = Path(path).read_text().splitlines()
    if len(lines) % 2:
        raise ValueError(f"{path}: odd number of lines in DXF group stream")
    pairs = [(lines[k].strip(), lines[k + 1].strip()) for k in range(0, len(lines), 2)]
    loops, holes = [], []
    cur = None
    vert = None
    layer = None
    for code, value in pairs:
        if code == "0":
            if vert is not None:
                cur.append(vert)
                vert = None
            if value == "POLYLINE":
                cur, layer = [], None
            elif value == "VERTEX":
                if cur is None:
                    raise ValueError(f"{path}: VERTEX outside POLYLINE")
                vert = [None, None]
            elif value == "SEQEND":
                if cur is None:
                    raise ValueError(f"{path}: SEQEND without POLYLINE")
                pts = np.array(cur, float)
                loops.append(np.vstack([pts, pts[:1]]))
                holes.append(layer == "HOLES")
                cur = None
        elif code == "8" and cur is not None and vert is None:
            layer = value
        elif vert is not None and code in ("10", "20"):
            vert[0 if code == "10" else 1] = float(value)
    if cur is not None:
        raise ValueError(f"{path}: unterminated POLYLINE")
    if not loops:
        raise ValueError(f"{path}: no polylines found")
    return ContourSet(tuple(loops), tuple(holes))


def svg_text(c: ContourSet, stroke: float | None = None) -> str:
    pts = np.vstack([l for l in c.loops])
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    w, h = x1 - x0, y1 - y0
    stroke = stroke if stroke is not None else 0.002 * max(w, h)
    paths = []
    for loop in c.ordered().loops:
        # SVG y grows downwards
        coords = " L ".join(f"{_num(x - x0)} {_num(y1 - y)}" for x, y in loop[:-1])
        paths.append(f"M {coords} Z")
    d = " ".join(paths)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_num(w)} {_num(h)}" '
        f'width="{_num(w)}mm" height="{_num(h)}mm">\n'
        f'  <path d="{d}" fill="black" fill-rule="evenodd" stroke="none" stroke-width="{_num(stroke)}"/>\n'
        "</svg>\n"
    )


def export_geometry(c: ContourSet, fmt: str, path) -> Path:
    if c is None or len(c) == 0:
        raise ValueError("cannot export an empty contour set")
    path = Path(path)
    if fmt == "dxf":
        path.write_text(dxf_text(c))
    elif fmt == "svg":
        path.write_text(svg_text(c))
    else:
        raise ValueError(f"unknown geometry format {fmt!r}")
    return path


def loops_equal(a: ContourSet, b: ContourSet) -> bool:
    """Bit-exact equality of loop coordinates and hole flags."""
    if len(a) != len(b) or a.holes != b.holes:
        return False
    return all(np.array_equal(x, y) for x, y in zip(a.loops, b.loops))

