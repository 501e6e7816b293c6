"""Polytopic 2D meshes: loading, generation, sub-triangulation, regularity.

Meshes are collections of closed polygonal elements whose union covers the
domain.  Facets are straight atomic segments shared by exactly two elements
(interior) or one element plus the boundary; hanging vertices are handled by
splitting element edges, so consecutive vertices of a canonicalized element
loop always span exactly one facet.  All geometric predicates use a relative
tolerance of 1e-12 on the mesh bounding-box scale.
"""
from __future__ import annotations

import json
import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

GEOM_RTOL = 1e-12

LABEL_INTERIOR = "interior"
LABEL_DIRICHLET = "D"
LABEL_NEUMANN = "N"


class MeshError(ValueError):
    """Invalid mesh topology, geometry, or labeling."""


@dataclass(frozen=True)
class SubSimplex:
    """One triangle of an element's sub-triangulation.

    boundary_edge holds the endpoints of the simplex face lying on the element
    boundary (None for interior simplices of a supplied sub-triangulation).
    """

    vertices: np.ndarray            # (3, 2)
    area: float
    boundary_edge: Optional[np.ndarray] = None   # (2, 2) endpoints
    boundary_edge_length: float = 0.0


@dataclass
class Facet:
    index: int
    endpoints: np.ndarray           # (2, 2), canonical (lexicographic) order
    vertex_ids: tuple[int, int]
    length: float
    normal: np.ndarray              # fixed unit normal n_F
    label: str
    elements: tuple[int, ...]
    element_normals: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def is_boundary(self) -> bool:
        return len(self.elements) == 1

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.endpoints[0] + self.endpoints[1])


@dataclass
class Element:
    index: int
    loop: np.ndarray                # vertex ids, CCW, atomic (one facet per edge)
    points: np.ndarray              # (n, 2) loop coordinates
    diameter: float
    area: float
    centroid: np.ndarray
    facet_ids: list[int]
    sub_triangulation: list[SubSimplex] = field(default_factory=list)


@dataclass(frozen=True)
class DomainGeometry:
    """Global geometric quantities of the meshed domain.

    rho is a certified lower bound for the largest inscribed-ball radius
    (inscribed-ball search over candidate centers), reported approximate.
    rho_gamma = c_gamma * (1/2) * min diameter of the maximal straight sides
    of the domain boundary.
    """

    h_omega: float
    rho: float
    rho_gamma: float
    c_gamma: float
    convex: bool
    area: float
    rho_is_approximate: bool = True


class Mesh:
    """Immutable polytopic mesh; safe for concurrent read access."""

    dimension = 2

    def __init__(self, vertices: np.ndarray, elements: list[Element], facets: list[Facet]):
        self.vertices = vertices
        self.elements = elements
        self.facets = facets
        self._cache: dict = {}

    # -- convenience -----------------------------------------------------
    def facets_with_label(self, label: str) -> list[Facet]:
        return [f for f in self.facets if f.label == label]

    @property
    def interior_facets(self) -> list[Facet]:
        return self.facets_with_label(LABEL_INTERIOR)

    @property
    def dirichlet_facets(self) -> list[Facet]:
        return self.facets_with_label(LABEL_DIRICHLET)

    @property
    def neumann_facets(self) -> list[Facet]:
        return self.facets_with_label(LABEL_NEUMANN)

    @property
    def jump_facets(self) -> list[Facet]:
        """Facets entering the inequality sums: interior plus Dirichlet."""
        return [f for f in self.facets if f.label != LABEL_NEUMANN]

    @property
    def gamma(self) -> float:
        if "gamma" not in self._cache:
            self._cache["gamma"] = shape_regularity(self)
        return self._cache["gamma"]

    @property
    def scale(self) -> float:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(max(hi - lo))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        for e in self.elements:
            h.update(np.ascontiguousarray(e.loop).tobytes())
        return h.hexdigest()[:16]

    def to_data(self) -> dict:
        boundary = [
            {"edge": list(f.vertex_ids), "label": f.label}
            for f in self.facets
            if f.is_boundary
        ]
        return {
            "vertices": self.vertices.tolist(),
            "cells": [e.loop.tolist() for e in self.elements],
            "boundary": boundary,
        }


# ---------------------------------------------------------------------------
# basic polygon helpers
# ---------------------------------------------------------------------------

def polygon_area(pts: np.ndarray) -> float:
    # relative to the first vertex: translation-invariant up to rounding
    x = pts[:, 0] - pts[0, 0]
    y = pts[:, 1] - pts[0, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_centroid(pts: np.ndarray) -> np.ndarray:
    x = pts[:, 0] - pts[0, 0]
    y = pts[:, 1] - pts[0, 1]
    cr = x * np.roll(y, -1) - np.roll(x, -1) * y
    a = 0.5 * cr.sum()
    cx = float(((x + np.roll(x, -1)) * cr).sum() / (6.0 * a))
    cy = float(((y + np.roll(y, -1)) * cr).sum() / (6.0 * a))
    return np.array([cx, cy]) + pts[0]


def polygon_diameter(pts: np.ndarray) -> float:
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d**2).sum(-1)).max())


def _point_in_polygon(p: np.ndarray, pts: np.ndarray) -> bool:
    x, y = p
    inside = False
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        if (y0 > y) != (y1 > y):
            t = (y - y0) / (y1 - y0)
            if x < x0 + t * (x1 - x0):
                inside = not inside
    return inside


def _point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-300), 0.0, 1.0)
    return float(np.hypot(*(a + t * ab - p)))


# ---------------------------------------------------------------------------
# mesh construction
# ---------------------------------------------------------------------------

def _insert_hanging_vertices(vertices: np.ndarray, loops: list[list[int]], tol: float):
    """Split loop edges at any mesh vertex lying strictly inside them."""
    out = []
    for loop in loops:
        new_loop: list[int] = []
        n = len(loop)
        for k in range(n):
            i, j = loop[k], loop[(k + 1) % n]
            a, b = vertices[i], vertices[j]
            ab = b - a
            L2 = float(np.dot(ab, ab))
            if L2 == 0.0:
                raise MeshError(f"degenerate edge between vertices {i} and {j}")
            rel = vertices - a
            cross = np.abs(rel[:, 0] * ab[1] - rel[:, 1] * ab[0]) / np.sqrt(L2)
            t = (rel @ ab) / L2
            on = (cross <= tol) & (t > tol) & (t < 1.0 - tol)
            on[i] = on[j] = False
            hanging = np.nonzero(on)[0]
            new_loop.append(i)
            for v in hanging[np.argsort(t[hanging])]:
                new_loop.append(int(v))
        out.append(new_loop)
    return out


def _trace_boundary_loops(exposed: list[tuple[int, int]]):
    """Chain exposed facets into closed vertex loops; raise if they branch."""
    adj: dict[int, list[int]] = {}
    for a, b in exposed:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    for v, nb in adj.items():
        if len(nb) != 2:
            raise MeshError("non-conforming cover: boundary facets do not chain")
    loops = []
    unused = {tuple(sorted(e)) for e in exposed}
    while unused:
        a0, b0 = next(iter(unused))
        loop = [a0, b0]
        unused.discard((a0, b0))
        while True:
            prev, cur = loop[-2], loop[-1]
            nxt = [w for w in adj[cur] if w != prev]
            if not nxt:
                raise MeshError("non-conforming cover: open boundary chain")
            if nxt[0] == loop[0]:
                unused.discard(tuple(sorted((cur, nxt[0]))))
                break
            loop.append(nxt[0])
            unused.discard(tuple(sorted((cur, nxt[0]))))
        loops.append(loop)
    return loops


def _match_boundary_label(vertices, fac_ids, labeled_edges, tol):
    a, b = vertices[fac_ids[0]], vertices[fac_ids[1]]
    for (i, j, label) in labeled_edges:
        p, q = vertices[i], vertices[j]
        pq = q - p
        L2 = float(np.dot(pq, pq))
        ok = True
        for z in (a, b):
            rel = z - p
            cross = abs(rel[0] * pq[1] - rel[1] * pq[0]) / np.sqrt(L2)
            t = float(rel @ pq) / L2
            if cross > tol or t < -tol or t > 1.0 + tol:
                ok = False
                break
        if ok:
            return label
    return None


def mesh_from_data(data: dict, label_rule: Optional[Callable] = None) -> Mesh:
    """Build and validate a Mesh from the JSON mesh format.

    data keys: "vertices", "cells", "boundary" (list of {"edge": [i, j],
    "label": "D"|"N"}), optional "subtriangulation" (per-cell triples of
    vertex ids).  label_rule(midpoint, normal) -> label may replace the
    boundary list (used by generators).
    """
    vertices = np.asarray(data["vertices"], dtype=float)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("malformed file: vertices must be pairs")
    loops = [list(map(int, c)) for c in data["cells"]]
    if not loops:
        raise MeshError("malformed file: no cells")
    tol = GEOM_RTOL * max(1.0, float(np.abs(vertices).max()))

    for idx, loop in enumerate(loops):
        if len(loop) < 3:
            raise MeshError(f"malformed file: cell {idx} has fewer than 3 vertices")
        if polygon_area(vertices[loop]) < 0:
            loops[idx] = loop[::-1]
        if abs(polygon_area(vertices[loops[idx]])) <= tol**0.5 * 0:
            raise MeshError(f"malformed file: cell {idx} degenerate")

    loops = _insert_hanging_vertices(vertices, loops, tol)

    # facet incidence: key = sorted vertex pair
    incidence: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
    for ei, loop in enumerate(loops):
        n = len(loop)
        for k in range(n):
            i, j = loop[k], loop[(k + 1) % n]
            incidence.setdefault((min(i, j), max(i, j)), []).append((ei, i, j))
    for key, occ in incidence.items():
        if len(occ) > 2:
            raise MeshError(f"malformed file: edge {key} shared by {len(occ)} cells")

    exposed = [key for key, occ in incidence.items() if len(occ) == 1]

    # conformity: exposed facets must chain into a single loop whose area
    # matches the summed element areas
    loops_b = _trace_boundary_loops(exposed)
    if len(loops_b) != 1:
        raise MeshError("non-conforming cover: boundary splits into several loops")
    outer = loops_b[0]
    area_sum = sum(abs(polygon_area(vertices[lp])) for lp in loops)
    area_outer = abs(polygon_area(vertices[outer]))
    if abs(area_outer - area_sum) > 1e-9 * area_sum:
        raise MeshError("non-conforming cover: element areas do not fill the boundary loop")

    labeled_edges = [
        (int(e["edge"][0]), int(e["edge"][1]), str(e["label"]))
        for e in data.get("boundary", [])
    ]
    for (_, _, lab) in labeled_edges:
        if lab not in (LABEL_DIRICHLET, LABEL_NEUMANN):
            raise MeshError(f"malformed file: unknown boundary label {lab!r}")

    facets: list[Facet] = []
    facet_of_key: dict[tuple[int, int], int] = {}
    for key, occ in sorted(incidence.items()):
        i, j = key
        a, b = vertices[i], vertices[j]
        if (b[0], b[1]) < (a[0], a[1]):
            i, j = j, i
            a, b = b, a
        d = b - a
        length = float(np.hypot(*d))
        normal = np.array([d[1], -d[0]]) / length
        if len(occ) == 2:
            label = LABEL_INTERIOR
        else:
            label = _match_boundary_label(vertices, (i, j), labeled_edges, tol)
            if label is None and label_rule is not None:
                label = label_rule(0.5 * (a + b), normal)
            if label is None:
                raise MeshError(f"unlabeled boundary facet between vertices {i} and {j}")
        fac = Facet(
            index=len(facets),
            endpoints=np.array([a, b]),
            vertex_ids=(i, j),
            length=length,
            normal=normal,
            label=label,
            elements=tuple(o[0] for o in occ),
        )
        for (ei, u, v) in occ:
            e = vertices[v] - vertices[u]       # directed as traversed CCW in cell ei
            n_out = np.array([e[1], -e[0]]) / np.hypot(*e)
            fac.element_normals[ei] = n_out
        if len(occ) == 2:
            n1, n2 = (fac.element_normals[o[0]] for o in occ)
            if np.abs(n1 + n2).max() > 1e-12:
                raise MeshError(f"inconsistent normals on shared edge {key}")
        facets.append(fac)
        facet_of_key[key] = fac.index

    sub_supplied = data.get("subtriangulation")
    elements: list[Element] = []
    for ei, loop in enumerate(loops):
        pts = vertices[loop]
        fids = []
        n = len(loop)
        for k in range(n):
            i, j = loop[k], loop[(k + 1) % n]
            fids.append(facet_of_key[(min(i, j), max(i, j))])
        elem = Element(
            index=ei,
            loop=np.asarray(loop, dtype=int),
            points=pts,
            diameter=polygon_diameter(pts),
            area=abs(polygon_area(pts)),
            centroid=polygon_centroid(pts),
            facet_ids=fids,
        )
        if sub_supplied is not None and sub_supplied[ei]:
            elem.sub_triangulation = _supplied_subtriangulation(
                vertices, elem, sub_supplied[ei], tol
            )
        else:
            elem.sub_triangulation = subtriangulate(elem)
        elements.append(elem)

    return Mesh(vertices, elements, facets)


def _supplied_subtriangulation(vertices, elem: Element, triples, tol) -> list[SubSimplex]:
    subs = []
    total = 0.0
    boundary_segments = list(zip(elem.points, np.roll(elem.points, -1, axis=0)))
    for tri in triples:
        p = vertices[list(tri)]
        area = abs(polygon_area(p))
        if area <= tol:
            raise MeshError(f"degenerate sub-simplex in element {elem.index}")
        total += area
        edge = None
        for k in range(3):
            a, b = p[k], p[(k + 1) % 3]
            for (s0, s1) in boundary_segments:
                d01 = _point_segment_distance(a, s0, s1) + _point_segment_distance(b, s0, s1)
                if d01 <= 2 * tol * max(1.0, elem.diameter):
                    if edge is not None:
                        raise MeshError(
                            f"sub-simplex of element {elem.index} meets the boundary in two edges"
                        )
                    edge = np.array([a, b])
                    break
        subs.append(
            SubSimplex(
                vertices=p,
                area=area,
                boundary_edge=edge,
                boundary_edge_length=0.0 if edge is None else float(np.hypot(*(edge[1] - edge[0]))),
            )
        )
    if abs(total - elem.area) > 1e-12 * elem.area:
        raise MeshError(f"supplied sub-triangulation does not partition element {elem.index}")
    return subs


def load_mesh(path) -> Mesh:
    """Load a mesh from a JSON file (see mesh_from_data for the schema)."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MeshError(f"malformed file: {exc}") from exc
    return mesh_from_data(data)


def save_mesh(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        json.dump(mesh.to_data(), fh)


# ---------------------------------------------------------------------------
# sub-triangulation and regularity
# ---------------------------------------------------------------------------

def subtriangulate(element: Element) -> list[SubSimplex]:
    """Centroid fan of a star-shaped element.

    Every loop edge spawns exactly one sub-simplex whose boundary face is that
    edge.  Raises MeshError when a fan triangle is not positively oriented
    (element not star-shaped with respect to its centroid).
    """
    c = element.centroid
    pts = element.points
    subs = []
    for k in range(len(pts)):
        a, b = pts[k], pts[(k + 1) % len(pts)]
        signed = 0.5 * ((a[0] - c[0]) * (b[1] - c[1]) - (a[1] - c[1]) * (b[0] - c[0]))
        if signed <= 1e-13 * element.diameter**2:
            raise MeshError(
                f"element {element.index} is not star-shaped with respect to its centroid; "
                "supply an explicit sub-triangulation"
            )
        subs.append(
            SubSimplex(
                vertices=np.array([c, a, b]),
                area=signed,
                boundary_edge=np.array([a, b]),
                boundary_edge_length=float(np.hypot(*(b - a))),
            )
        )
    return subs


def shape_regularity(mesh: Mesh) -> float:
    """Largest constant gamma with gamma * h_K <= d |T| / |F_K^T| on the mesh."""
    d = mesh.dimension
    gamma = np.inf
    for elem in mesh.elements:
        touched = False
        for sub in elem.sub_triangulation:
            if sub.boundary_edge is None:
                continue
            touched = True
            gamma = min(gamma, d * sub.area / (sub.boundary_edge_length * elem.diameter))
        if not touched:
            raise MeshError(f"element {elem.index} has no boundary-touching sub-simplex")
    return float(gamma)


def facet_length_scale(mesh: Mesh, mode: str = "element-min") -> dict[int, float]:
    """h-tilde per facet: its own length, or the smallest adjacent element
    diameter.  Neumann facets carry no jump terms and are excluded."""
    if mode not in ("facet", "element-min"):
        raise ValueError(f"unknown h-tilde mode {mode!r}")
    out: dict[int, float] = {}
    for f in mesh.jump_facets:
        if mode == "facet":
            out[f.index] = f.length
        else:
            out[f.index] = min(mesh.elements[ei].diameter for ei in f.elements)
    return out


def mesh_stats(mesh: Mesh, htilde_mode: str = "element-min", p: float = 2.0) -> dict:
    """Mesh quantities entering the assembled constants."""
    hts = facet_length_scale(mesh, htilde_mode)
    ratio = 0.0
    for f in mesh.jump_facets:
        for ei in f.elements:
            h_k = mesh.elements[ei].diameter
            ratio = max(ratio, (hts[f.index] / h_k) ** (-1.0 + 1.0 / p))
    return {
        "max_h": max(e.diameter for e in mesh.elements),
        "max_facets": max(len(e.facet_ids) for e in mesh.elements),
        "max_htilde_ratio": ratio,
    }


# ---------------------------------------------------------------------------
# domain geometry
# ---------------------------------------------------------------------------

def _outer_loop(mesh: Mesh) -> np.ndarray:
    exposed = [f.vertex_ids for f in mesh.facets if f.is_boundary]
    loop = _trace_boundary_loops(exposed)[0]
    pts = mesh.vertices[loop]
    if polygon_area(pts) < 0:
        pts = pts[::-1]
    return pts


def _merge_collinear(pts: np.ndarray, tol: float) -> np.ndarray:
    keep = []
    n = len(pts)
    for k in range(n):
        a, b, c = pts[(k - 1) % n], pts[k], pts[(k + 1) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if abs(cross) > tol:
            keep.append(k)
    return pts[keep]


def domain_geometry(mesh: Mesh, c_gamma: float = 0.9) -> DomainGeometry:
    """Diameter, inscribed-ball radius, convexity, and boundary-facet scale.

    rho is approximated as the largest boundary distance over candidate
    centers (area centroid and a Chebyshev-style linear-program center), a
    certified lower bound for star-shaped domains.
    """
    if not (0.0 < c_gamma < 1.0):
        raise ValueError("c_gamma must lie in (0, 1)")
    outer = _outer_loop(mesh)
    area = polygon_area(outer)
    if area <= 0.0:
        raise MeshError("degenerate domain")
    tol = GEOM_RTOL * max(1.0, float(np.abs(outer).max())) ** 2

    corners = _merge_collinear(outer, tol * 10)
    h_omega = polygon_diameter(corners)

    # convexity: all turns of the outer loop in the same direction
    conv = True
    n = len(corners)
    for k in range(n):
        a, b, c = corners[k], corners[(k + 1) % n], corners[(k + 2) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if cross < -1e-12 * h_omega**2:
            conv = False
            break

    segments = list(zip(corners, np.roll(corners, -1, axis=0)))

    def radius_at(center):
        if not _point_in_polygon(center, outer):
            return -np.inf
        return min(_point_segment_distance(center, s0, s1) for s0, s1 in segments)

    candidates = [polygon_centroid(outer)]
    cheb = _chebyshev_center(segments)
    if cheb is not None:
        candidates.append(cheb)
    rho = max(radius_at(c) for c in candidates)
    if rho <= 0.0:
        raise MeshError("degenerate domain: no inscribed ball found")

    side_diams = [float(np.hypot(*(s1 - s0))) for s0, s1 in segments]
    rho_gamma = c_gamma * 0.5 * min(side_diams)

    return DomainGeometry(
        h_omega=float(h_omega),
        rho=float(min(rho, h_omega / 2.0)),
        rho_gamma=float(rho_gamma),
        c_gamma=float(c_gamma),
        convex=conv,
        area=float(area),
    )


def _chebyshev_center(segments) -> Optional[np.ndarray]:
    """Linear feasibility search: maximize r with n_i . x + r <= n_i . p_i."""
    from scipy.optimize import linprog

    rows, rhs = [], []
    for s0, s1 in segments:
        d = s1 - s0
        nrm = np.array([d[1], -d[0]]) / np.hypot(*d)   # outward for CCW loop
        rows.append([nrm[0], nrm[1], 1.0])
        rhs.append(float(nrm @ s0))
    res = linprog(
        c=[0.0, 0.0, -1.0],
        A_ub=np.asarray(rows),
        b_ub=np.asarray(rhs),
        bounds=[(None, None), (None, None), (0.0, None)],
        method="highs",
    )
    if not res.success or res.x[2] <= 0:
        return None
    return np.array(res.x[:2])


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def _label_rule(name: str) -> Callable:
    if name == "all-dirichlet":
        return lambda mid, nrm: LABEL_DIRICHLET
    if name == "all-neumann":
        return lambda mid, nrm: LABEL_NEUMANN
    if name == "left-dirichlet":
        def rule(mid, nrm):
            return LABEL_DIRICHLET if abs(mid[0]) <= 1e-12 else LABEL_NEUMANN
        return rule
    raise ValueError(f"unknown label rule {name!r}")


def generate_mesh(
    kind: str,
    resolution: int = 1,
    sides: int = 6,
    splits: int = 2,
    seed: int = 0,
    label_rule: str = "all-dirichlet",
) -> Mesh:
    """Generate a mesh of the unit square (or a regular polygon).

    kinds: structured-triangles, structured-quads, fan-polygon (regular
    polygon with `sides` edges, one element), agglomerated (random merges of
    structured triangles into 3-8 edge polygons), split-facet (structured
    quads with every facet divided into `splits` collinear facets).
    """
    rule = _label_rule(label_rule)
    if kind == "fan-polygon":
        if sides < 3:
            raise ValueError("fan-polygon needs at least 3 sides")
        ang = 2.0 * np.pi * np.arange(sides) / sides
        verts = np.column_stack([np.cos(ang), np.sin(ang)])
        data = {"vertices": verts.tolist(), "cells": [list(range(sides))]}
        return mesh_from_data(data, label_rule=rule)

    if resolution < 1:
        raise ValueError("resolution must be at least 1")
    n = resolution

    if kind in ("structured-quads", "split-facet"):
        verts, cells = _quad_grid(n)
        if kind == "split-facet":
            if splits < 1:
                raise ValueError("splits must be at least 1")
            verts, cells = _split_facets(verts, cells, splits)
        data = {"vertices": verts, "cells": cells}
        return mesh_from_data(data, label_rule=rule)

    if kind == "structured-triangles":
        verts, cells = _tri_grid(n)
        data = {"vertices": verts, "cells": cells}
        return mesh_from_data(data, label_rule=rule)

    if kind == "agglomerated":
        verts, cells = _tri_grid(max(n, 4))
        cells = _agglomerate(np.asarray(verts), cells, seed)
        data = {"vertices": verts, "cells": cells}
        return mesh_from_data(data, label_rule=rule)

    raise ValueError(f"unknown generator kind {kind!r}")


def _quad_grid(n: int):
    verts = [[i / n, j / n] for j in range(n + 1) for i in range(n + 1)]
    vid = lambda i, j: j * (n + 1) + i
    cells = [
        [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]
        for j in range(n)
        for i in range(n)
    ]
    return verts, cells


def _tri_grid(n: int):
    verts = [[i / n, j / n] for j in range(n + 1) for i in range(n + 1)]
    vid = lambda i, j: j * (n + 1) + i
    cells = []
    for j in range(n):
        for i in range(n):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                cells += [[a, b, c], [a, c, d]]
            else:
                cells += [[a, b, d], [b, c, d]]
    return verts, cells


def _split_facets(verts: list, cells: list, k: int):
    """Insert k-1 equispaced vertices into every cell edge (shared by ids)."""
    verts = [list(v) for v in verts]
    created: dict[tuple, list[int]] = {}

    def split_ids(i, j):
        key = (min(i, j), max(i, j))
        if key not in created:
            a = np.asarray(verts[key[0]])
            b = np.asarray(verts[key[1]])
            ids = []
            for m in range(1, k):
                verts.append(list(a + (m / k) * (b - a)))
                ids.append(len(verts) - 1)
            created[key] = ids
        ids = created[key]
        return ids if (i, j) == (min(i, j), max(i, j)) else ids[::-1]

    new_cells = []
    for cell in cells:
        loop = []
        for idx in range(len(cell)):
            i, j = cell[idx], cell[(idx + 1) % len(cell)]
            loop.append(i)
            loop.extend(split_ids(i, j))
        new_cells.append(loop)
    return verts, new_cells


def _agglomerate(verts: np.ndarray, tri_cells: list, seed: int) -> list:
    """Greedy random merges of adjacent triangles into polygons (3-8 edges).

    A merge is kept only when the merged loop stays star-shaped with respect
    to its centroid, so the default centroid fan always applies.
    """
    rng = np.random.default_rng(seed)
    loops = [list(c) for c in tri_cells]
    alive = [True] * len(loops)

    def edges_of(loop):
        return [(loop[k], loop[(k + 1) % len(loop)]) for k in range(len(loop))]

    def star_ok(loop):
        pts = verts[loop]
        c = polygon_centroid(pts)
        for k in range(len(pts)):
            a, b = pts[k], pts[(k + 1) % len(pts)]
            s = (a[0] - c[0]) * (b[1] - c[1]) - (a[1] - c[1]) * (b[0] - c[0])
            if s <= 1e-10:
                return False
        return True

    edge_owner: dict[tuple[int, int], list[int]] = {}
    for idx, loop in enumerate(loops):
        for (u, v) in edges_of(loop):
            edge_owner.setdefault((min(u, v), max(u, v)), []).append(idx)

    order = rng.permutation(len(loops))
    for idx in order:
        if not alive[idx]:
            continue
        neighbors = set()
        for (u, v) in edges_of(loops[idx]):
            for other in edge_owner[(min(u, v), max(u, v))]:
                if other != idx and alive[other]:
                    neighbors.add(other)
        for other in rng.permutation(sorted(neighbors)):
            merged = _merge_loops(loops[idx], loops[other])
            if merged is None or len(merged) > 8:
                continue
            if abs(polygon_area(verts[merged])) <= 0 or not star_ok(merged):
                continue
            alive[other] = False
            loops[idx] = merged
            for (u, v) in edges_of(merged):
                key = (min(u, v), max(u, v))
                owners = edge_owner.setdefault(key, [])
                owners[:] = [o for o in owners if o not in (idx, other)] + [idx]
            break
    return [loops[i] for i in range(len(loops)) if alive[i]]


def _merge_loops(la: list, lb: list):
    """Union of two CCW loops sharing exactly one edge; None when not mergeable."""
    ea = {(la[k], la[(k + 1) % len(la)]) for k in range(len(la))}
    shared = [(u, v) for (u, v) in ea if (v, u) in {(lb[k], lb[(k + 1) % len(lb)]) for k in range(len(lb))}]
    if len(shared) != 1:
        return None
    u, v = shared[0]
    ka = la.index(u)
    kb = lb.index(v)
    merged = []
    # walk la from v around to u, then lb from u around to v
    pos = (ka + 1) % len(la)      # la[pos] == v
    for step in range(len(la) - 1):
        merged.append(la[(pos + step) % len(la)])
    pos = (kb + 1) % len(lb)      # lb[pos] == u
    for step in range(len(lb) - 1):
        merged.append(lb[(pos + step) % len(lb)])
    if len(set(merged)) != len(merged):
        return None
    return merged
