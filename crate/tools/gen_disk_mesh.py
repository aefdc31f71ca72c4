#!/usr/bin/env python3
"""Generate an unstructured triangular disk mesh in the text mesh format.

The boundary is a regular polygon inscribed in the circle; interior nodes
sit on a hexagonal lattice trimmed away from the boundary ring. A Delaunay
triangulation of the combined point set covers the convex hull, which is
exactly the boundary polygon, so no triangle trimming is needed.

Usage: gen_disk_mesh.py [R] [BOUNDARY_SEGMENTS] [OUT]
"""

import sys

import numpy as np
from scipy.spatial import Delaunay


def disk_mesh(radius: float, boundary_segments: int) -> tuple[np.ndarray, np.ndarray]:
    spacing = 2.0 * np.pi * radius / boundary_segments
    theta = 2.0 * np.pi * np.arange(boundary_segments) / boundary_segments
    pts = [np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)]

    # Hexagonal interior lattice, kept one ring clear of the boundary.
    row_height = spacing * np.sqrt(3.0) / 2.0
    n_rows = int(np.ceil(2.0 * radius / row_height)) + 1
    inner = radius - 0.95 * spacing
    rows = []
    for j in range(-n_rows, n_rows + 1):
        y = j * row_height
        if abs(y) >= inner:
            continue
        shift = 0.5 * spacing if j % 2 else 0.0
        half_width = np.sqrt(max(inner * inner - y * y, 0.0))
        n_cols = int(np.floor((half_width - shift) / spacing))
        if half_width < 0.25 * spacing:
            continue
        x = shift + spacing * np.arange(-n_cols, n_cols + 1)
        x = x[np.abs(x) <= half_width]
        if x.size:
            rows.append(np.stack([x, np.full(x.size, y)], axis=1))
    if rows:
        pts.append(np.concatenate(rows))
    nodes = np.concatenate(pts)

    tri = Delaunay(nodes)
    simplices = tri.simplices.copy()
    # Delaunay of a point set whose hull is the boundary polygon tiles that
    # polygon; orientation is normalized to counter-clockwise.
    for k, (a, b, c) in enumerate(simplices):
        pa, pb, pc = nodes[a], nodes[b], nodes[c]
        cross = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
        if cross < 0.0:
            simplices[k, 1], simplices[k, 2] = simplices[k, 2], simplices[k, 1]
    return nodes, simplices


def main() -> None:
    radius = float(sys.argv[1]) if len(sys.argv) > 1 else 0.1
    segments = int(sys.argv[2]) if len(sys.argv) > 2 else 122
    out = sys.argv[3] if len(sys.argv) > 3 else "disk.mesh"
    nodes, tris = disk_mesh(radius, segments)

    area = 0.0
    for a, b, c in tris:
        pa, pb, pc = nodes[a], nodes[b], nodes[c]
        area += 0.5 * abs(
            (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
        )
    polygon_area = 0.5 * segments * radius * radius * np.sin(2.0 * np.pi / segments)

    with open(out, "w", encoding="ascii") as f:
        f.write(f"# disk radius {radius}, {segments} boundary segments\n")
        f.write(f"nodes {len(nodes)}\n")
        for x, y in nodes:
            f.write(f"{x:.17e} {y:.17e}\n")
        f.write(f"triangles {len(tris)}\n")
        for a, b, c in tris:
            f.write(f"{a} {b} {c}\n")
    print(
        f"{out}: {len(nodes)} nodes, {len(tris)} triangles, "
        f"area {area:.12e} (polygon {polygon_area:.12e})"
    )
    assert abs(area - polygon_area) < 1e-12 * polygon_area


if __name__ == "__main__":
    main()
