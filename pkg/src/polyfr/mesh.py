"""Conforming 2D polygonal meshes with full edge topology.

Meshes are plain physical-space entities: vertices, counter-clockwise
polygonal elements, and oriented edges carrying neighbor links and outward
unit normals.  The on-disk format is a small JSON document with keys
``vertices`` (array of [x, y]), ``elements`` (array of arrays of 0-based
vertex ids) and ``boundary`` (array of ``{"edge": [v0, v1], "tag": str}``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Raised for malformed mesh documents or broken mesh invariants."""


@dataclass(frozen=True)
class Element:
    id: int
    vertex_ids: tuple[int, ...]
    edge_ids: tuple[int, ...]
    area: float
    centroid: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_ids)


@dataclass(frozen=True)
class Edge:
    id: int
    vertex_ids: tuple[int, int]
    left_element: int
    right_element: int | None
    normal: np.ndarray  # unit, outward from left_element
    length: float
    midpoint: np.ndarray

    @property
    def is_boundary(self) -> bool:
        return self.right_element is None


@dataclass
class Mesh:
    vertices: np.ndarray  # (n_vertices, 2)
    elements: list[Element]
    edges: list[Edge]
    boundary_tags: dict[int, str] = field(default_factory=dict)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def element_coords(self, elem_id: int) -> np.ndarray:
        return self.vertices[list(self.elements[elem_id].vertex_ids)]

    def boundary_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.is_boundary]

    def interior_edges(self) -> list[Edge]:
        return [e for e in self.edges if not e.is_boundary]

    def total_area(self) -> float:
        return float(sum(e.area for e in self.elements))

    def boundary_length(self) -> float:
        return float(sum(e.length for e in self.boundary_edges()))

    def h_max(self) -> float:
        h = 0.0
        for elem in self.elements:
            coords = self.element_coords(elem.id)
            d = coords[:, None, :] - coords[None, :, :]
            h = max(h, float(np.sqrt((d * d).sum(-1)).max()))
        return h


def shoelace_area(coords: np.ndarray) -> float:
    """Signed area of a polygon given as an (n, 2) vertex array."""
    x, y = coords[:, 0], coords[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_centroid(coords: np.ndarray) -> np.ndarray:
    x, y = coords[:, 0], coords[:, 1]
    xr, yr = np.roll(x, -1), np.roll(y, -1)
    cross = x * yr - xr * y
    a = 0.5 * cross.sum()
    cx = ((x + xr) * cross).sum() / (6.0 * a)
    cy = ((y + yr) * cross).sum() / (6.0 * a)
    return np.array([cx, cy])


def _edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def mesh_from_arrays(
    vertices,
    element_vertices,
    boundary: list[tuple[tuple[int, int], str]] | None = None,
) -> Mesh:
    """Build a Mesh with full topology from raw vertex/element arrays.

    Elements are normalized to counter-clockwise orientation.  Raises
    :class:`MeshError` on indices out of range, degenerate (zero-area)
    elements, edges shared by more than two elements, or hanging-node style
    non-conforming interfaces.
    """
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must be an (n, 2) array")
    n_vert = len(vertices)
    scale = float(np.ptp(vertices, axis=0).max()) or 1.0

    polys: list[list[int]] = []
    for raw in element_vertices:
        ids = [int(v) for v in raw]
        if len(ids) < 3:
            raise MeshError(f"element {len(polys)} has fewer than 3 vertices")
        if len(set(ids)) != len(ids):
            raise MeshError(f"element {len(polys)} repeats a vertex")
        if any(v < 0 or v >= n_vert for v in ids):
            raise MeshError(f"element {len(polys)} references a missing vertex")
        area = shoelace_area(vertices[ids])
        if area < 0.0:
            ids = ids[::-1]  # normalize to CCW
            area = -area
        if area <= 1e-14 * scale * scale:
            raise MeshError(f"element {len(polys)} is inverted or degenerate")
        polys.append(ids)

    # edge topology: each undirected vertex pair is shared by at most 2 elements
    edge_of_pair: dict[tuple[int, int], int] = {}
    edges_tmp: list[dict] = []
    elements: list[Element] = []
    for eid, ids in enumerate(polys):
        coords = vertices[ids]
        edge_ids = []
        for i in range(len(ids)):
            a, b = ids[i], ids[(i + 1) % len(ids)]
            key = _edge_key(a, b)
            if key not in edge_of_pair:
                edge_of_pair[key] = len(edges_tmp)
                edges_tmp.append({"pair": (a, b), "left": eid, "right": None})
            else:
                rec = edges_tmp[edge_of_pair[key]]
                if rec["right"] is not None:
                    raise MeshError(f"edge {key} shared by more than two elements")
                if rec["pair"] == (a, b):
                    raise MeshError(f"edge {key} traversed twice in the same direction")
                rec["right"] = eid
            edge_ids.append(edge_of_pair[key])
        elements.append(
            Element(
                id=eid,
                vertex_ids=tuple(ids),
                edge_ids=tuple(edge_ids),
                area=shoelace_area(coords),
                centroid=polygon_centroid(coords),
            )
        )

    edges: list[Edge] = []
    for k, rec in enumerate(edges_tmp):
        a, b = rec["pair"]
        p0, p1 = vertices[a], vertices[b]
        t = p1 - p0
        length = float(np.hypot(*t))
        if length <= 1e-14 * scale:
            raise MeshError(f"edge ({a}, {b}) has zero length")
        normal = np.array([t[1], -t[0]]) / length  # outward for CCW traversal
        edges.append(
            Edge(
                id=k,
                vertex_ids=(a, b),
                left_element=rec["left"],
                right_element=rec["right"],
                normal=normal,
                length=length,
                midpoint=0.5 * (p0 + p1),
            )
        )

    _check_conforming(vertices, edges, scale)

    tags: dict[int, str] = {}
    if boundary is not None:
        for pair, tag in boundary:
            key = _edge_key(int(pair[0]), int(pair[1]))
            if key not in edge_of_pair:
                raise MeshError(f"boundary entry references unknown edge {key}")
            eid = edge_of_pair[key]
            if edges[eid].right_element is not None:
                raise MeshError(f"boundary tag on interior edge {key}")
            tags[eid] = str(tag)
    for e in edges:
        if e.is_boundary and e.id not in tags:
            tags[e.id] = "boundary"

    return Mesh(vertices=vertices, elements=elements, edges=edges, boundary_tags=tags)


def _check_conforming(vertices: np.ndarray, edges: list[Edge], scale: float) -> None:
    # A hanging node shows up as the midpoint of one boundary-like edge lying
    # strictly inside another; desk-scale O(n^2) scan is fine here.
    open_edges = [e for e in edges if e.is_boundary]
    for e in open_edges:
        for f in open_edges:
            if e.id == f.id:
                continue
            p0 = vertices[f.vertex_ids[0]]
            p1 = vertices[f.vertex_ids[1]]
            d = p1 - p0
            r = e.midpoint - p0
            cross = d[0] * r[1] - d[1] * r[0]
            if abs(cross) > 1e-12 * scale * scale:
                continue
            t = float(np.dot(r, d) / np.dot(d, d))
            if 1e-10 < t < 1.0 - 1e-10:
                raise MeshError(
                    f"non-conforming interface: edge {e.vertex_ids} lies inside "
                    f"edge {f.vertex_ids}"
                )


def load_mesh(path) -> Mesh:
    """Load a mesh from the JSON document format described in the module docs."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise MeshError(f"cannot parse mesh document {path}: {exc}") from exc
    return mesh_from_dict(doc)


def mesh_from_dict(doc: dict) -> Mesh:
    if not isinstance(doc, dict) or "vertices" not in doc or "elements" not in doc:
        raise MeshError("mesh document must contain 'vertices' and 'elements'")
    boundary = None
    if "boundary" in doc:
        boundary = []
        for item in doc["boundary"]:
            if "edge" not in item or "tag" not in item:
                raise MeshError("boundary entries must carry 'edge' and 'tag'")
            boundary.append(((item["edge"][0], item["edge"][1]), item["tag"]))
    return mesh_from_arrays(doc["vertices"], doc["elements"], boundary)


def mesh_to_dict(mesh: Mesh) -> dict:
    return {
        "vertices": [[float(x), float(y)] for x, y in mesh.vertices],
        "elements": [list(e.vertex_ids) for e in mesh.elements],
        "boundary": [
            {"edge": list(mesh.edges[eid].vertex_ids), "tag": tag}
            for eid, tag in sorted(mesh.boundary_tags.items())
        ],
    }


def save_mesh(mesh: Mesh, path) -> None:
    Path(path).write_text(json.dumps(mesh_to_dict(mesh), indent=1), encoding="utf-8")


class _VertexPool:
    """Deduplicating vertex store used by the refinement pass."""

    def __init__(self, vertices: np.ndarray):
        self.coords = [np.asarray(v, dtype=float) for v in vertices]
        self._mid: dict[tuple[int, int], int] = {}

    def midpoint(self, a: int, b: int) -> int:
        key = _edge_key(a, b)
        if key not in self._mid:
            self._mid[key] = len(self.coords)
            self.coords.append(0.5 * (self.coords[a] + self.coords[b]))
        return self._mid[key]

    def append(self, point: np.ndarray) -> int:
        self.coords.append(np.asarray(point, dtype=float))
        return len(self.coords) - 1


def refine_uniform(mesh: Mesh) -> Mesh:
    """Refine every element once, preserving conformity and boundary tags.

    Triangles split into 4 congruent triangles and quadrilaterals into 4
    quadrilaterals through their edge midpoints.  Polygons with more than
    four vertices are fan-triangulated about their centroid first, then each
    fan triangle is quadrisected.
    """
    pool = _VertexPool(mesh.vertices)
    new_elements: list[list[int]] = []
    new_boundary: list[tuple[tuple[int, int], str]] = []

    boundary_tag_of_pair = {
        _edge_key(*mesh.edges[eid].vertex_ids): tag
        for eid, tag in mesh.boundary_tags.items()
    }

    def split_triangle(a: int, b: int, c: int) -> None:
        ab, bc, ca = pool.midpoint(a, b), pool.midpoint(b, c), pool.midpoint(c, a)
        new_elements.extend(
            [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        )

    for elem in mesh.elements:
        ids = list(elem.vertex_ids)
        if len(ids) == 3:
            split_triangle(*ids)
        elif len(ids) == 4:
            a, b, c, d = ids
            ab, bc = pool.midpoint(a, b), pool.midpoint(b, c)
            cd, da = pool.midpoint(c, d), pool.midpoint(d, a)
            center = pool.append(polygon_centroid(mesh.element_coords(elem.id)))
            new_elements.extend(
                [
                    [a, ab, center, da],
                    [ab, b, bc, center],
                    [center, bc, c, cd],
                    [da, center, cd, d],
                ]
            )
        else:
            center = pool.append(polygon_centroid(mesh.element_coords(elem.id)))
            for i in range(len(ids)):
                split_triangle(ids[i], ids[(i + 1) % len(ids)], center)

    # boundary children: each original boundary edge contributes its two halves
    for (a, b), tag in boundary_tag_of_pair.items():
        m = pool.midpoint(a, b)
        new_boundary.append(((a, m), tag))
        new_boundary.append(((m, b), tag))

    return mesh_from_arrays(np.array(pool.coords), new_elements, new_boundary)


# ---------------------------------------------------------------------------
# Builders for the small test meshes used throughout the suite and the CLI.
# ---------------------------------------------------------------------------

def two_triangle_square() -> Mesh:
    """Unit square split along the main diagonal."""
    return mesh_from_arrays(
        [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        [[0, 1, 2], [0, 2, 3]],
    )


def structured_triangles(nx: int, ny: int | None = None) -> Mesh:
    """Unit square as an nx-by-ny grid of squares, each split by a diagonal.

    Diagonal direction alternates in a checkerboard so the mesh has no
    globally preferred direction; element count is 2*nx*ny.
    """
    ny = nx if ny is None else ny
    verts = [[i / nx, j / ny] for j in range(ny + 1) for i in range(nx + 1)]
    vid = lambda i, j: j * (nx + 1) + i
    elems = []
    for j in range(ny):
        for i in range(nx):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                elems += [[a, b, c], [a, c, d]]
            else:
                elems += [[a, b, d], [b, c, d]]
    return mesh_from_arrays(np.array(verts), elems)


def structured_quads(nx: int, ny: int | None = None) -> Mesh:
    """Unit square as an nx-by-ny grid of axis-aligned quadrilaterals."""
    ny = nx if ny is None else ny
    verts = [[i / nx, j / ny] for j in range(ny + 1) for i in range(nx + 1)]
    vid = lambda i, j: j * (nx + 1) + i
    elems = [
        [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]
        for j in range(ny)
        for i in range(nx)
    ]
    return mesh_from_arrays(np.array(verts), elems)


def regular_polygon_mesh(n_sides: int, radius: float = 1.0) -> Mesh:
    """Single regular polygon element centered at the origin."""
    ang = 2.0 * math.pi * np.arange(n_sides) / n_sides
    verts = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return mesh_from_arrays(verts, [list(range(n_sides))])
