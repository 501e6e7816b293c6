import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import polysob as ps
from polysob.geometry import MeshError
from conftest import RIGHT_TRIANGLE_DATA, dilate_mesh


# -- loading --------------------------------------------------------------

def test_load_single_square(tmp_path, unit_square_mesh):
    path = tmp_path / "square.json"
    ps.save_mesh(unit_square_mesh, path)
    mesh = ps.load_mesh(path)
    assert len(mesh.elements) == 1
    assert len(mesh.facets) == 4
    assert all(f.is_boundary for f in mesh.facets)


def test_two_triangles_share_diagonal():
    data = {
        "vertices": [[0, 0], [1, 0], [1, 1], [0, 1]],
        "cells": [[0, 1, 2], [0, 2, 3]],
        "boundary": [
            {"edge": [0, 1], "label": "D"}, {"edge": [1, 2], "label": "D"},
            {"edge": [2, 3], "label": "D"}, {"edge": [3, 0], "label": "D"},
        ],
    }
    mesh = ps.mesh_from_data(data)
    assert len(mesh.interior_facets) == 1
    assert sum(f.is_boundary for f in mesh.facets) == 4


def test_gap_between_elements_rejected():
    data = {
        "vertices": [[0, 0], [1, 0], [1, 1], [0, 1], [2, 0], [3, 0], [3, 1], [2, 1]],
        "cells": [[0, 1, 2, 3], [4, 5, 6, 7]],
        "boundary": [],
    }
    with pytest.raises(MeshError, match="non-conforming cover"):
        ps.mesh_from_data(data)


def test_unlabeled_boundary_facet_rejected():
    data = {
        "vertices": [[0, 0], [1, 0], [1, 1], [0, 1]],
        "cells": [[0, 1, 2, 3]],
        "boundary": [{"edge": [0, 1], "label": "D"}],
    }
    with pytest.raises(MeshError, match="unlabeled boundary facet"):
        ps.mesh_from_data(data)


def test_malformed_file_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(MeshError, match="malformed"):
        ps.load_mesh(path)


def test_hanging_vertex_splits_edge():
    # left square spans one edge, two right squares hang on it
    data = {
        "vertices": [
            [0, 0], [1, 0], [1, 1], [0, 1],
            [1, 0.5], [2, 0], [2, 0.5], [2, 1],
        ],
        "cells": [[0, 1, 2, 3], [1, 5, 6, 4], [4, 6, 7, 2]],
        "boundary": [
            {"edge": [0, 1], "label": "D"}, {"edge": [1, 5], "label": "D"},
            {"edge": [5, 6], "label": "D"}, {"edge": [6, 7], "label": "D"},
            {"edge": [7, 2], "label": "D"}, {"edge": [2, 3], "label": "D"},
            {"edge": [3, 0], "label": "D"},
        ],
    }
    mesh = ps.mesh_from_data(data)
    assert len(mesh.interior_facets) == 3          # the split edge gives two
    big = mesh.elements[0]
    assert len(big.loop) == 5                      # hanging vertex inserted


# -- generators -----------------------------------------------------------

def test_structured_quads_counts():
    mesh = ps.generate_mesh("structured-quads", resolution=2)
    assert len(mesh.elements) == 4
    assert len(mesh.interior_facets) == 4


def test_fan_polygon_single_element():
    mesh = ps.generate_mesh("fan-polygon", sides=6)
    assert len(mesh.elements) == 1
    assert len(mesh.facets) == 6
    assert mesh.elements[0].area == pytest.approx(3 * math.sqrt(3) / 2, rel=1e-12)


def test_split_facet_counts():
    mesh = ps.generate_mesh("split-facet", resolution=1, splits=3)
    assert len(mesh.elements) == 1
    assert len(mesh.facets) == 12


def test_generator_rejects_bad_args():
    with pytest.raises(ValueError):
        ps.generate_mesh("structured-quads", resolution=0)
    with pytest.raises(ValueError):
        ps.generate_mesh("fan-polygon", sides=2)
    with pytest.raises(ValueError):
        ps.generate_mesh("nonsense")


def test_agglomerated_polygon_sizes():
    mesh = ps.generate_mesh("agglomerated", seed=7, resolution=4)
    sizes = [len(e.loop) for e in mesh.elements]
    assert all(3 <= n <= 8 for n in sizes)
    assert any(n > 3 for n in sizes)               # something actually merged
    assert sum(e.area for e in mesh.elements) == pytest.approx(1.0, rel=1e-12)


def test_label_rules():
    mesh = ps.generate_mesh("structured-quads", resolution=2, label_rule="left-dirichlet")
    assert len(mesh.dirichlet_facets) == 2
    assert len(mesh.neumann_facets) == 6
    for f in mesh.dirichlet_facets:
        assert abs(f.midpoint[0]) <= 1e-12


# -- sub-triangulation and regularity ---------------------------------------

def test_subtriangulate_unit_square(unit_square_mesh):
    subs = unit_square_mesh.elements[0].sub_triangulation
    assert len(subs) == 4
    for sub in subs:
        assert sub.area == pytest.approx(0.25, abs=1e-14)
        assert sub.boundary_edge_length == pytest.approx(1.0, abs=1e-14)


def test_subtriangulate_right_triangle(right_triangle_mesh):
    subs = right_triangle_mesh.elements[0].sub_triangulation
    assert len(subs) == 3
    for sub in subs:
        assert sub.area == pytest.approx(1.0 / 6.0, abs=1e-14)


def test_subtriangulate_rejects_nonconvex_without_supplied():
    # L-shaped single element whose centroid fan folds over
    data = {
        "vertices": [[0, 0], [2, 0], [2, 1], [0.2, 1], [0.2, 2], [0, 2]],
        "cells": [[0, 1, 2, 3, 4, 5]],
        "boundary": [
            {"edge": [0, 1], "label": "D"}, {"edge": [1, 2], "label": "D"},
            {"edge": [2, 3], "label": "D"}, {"edge": [3, 4], "label": "D"},
            {"edge": [4, 5], "label": "D"}, {"edge": [5, 0], "label": "D"},
        ],
    }
    with pytest.raises(MeshError, match="star-shaped"):
        ps.mesh_from_data(data)


def test_supplied_subtriangulation_accepted():
    # L-shaped element, fanned from an interior kernel point so every
    # sub-simplex has exactly one boundary edge
    data = {
        "vertices": [[0, 0], [2, 0], [2, 1], [0.2, 1], [0.2, 2], [0, 2], [0.1, 0.5]],
        "cells": [[0, 1, 2, 3, 4, 5]],
        "boundary": [
            {"edge": [0, 1], "label": "D"}, {"edge": [1, 2], "label": "D"},
            {"edge": [2, 3], "label": "D"}, {"edge": [3, 4], "label": "D"},
            {"edge": [4, 5], "label": "D"}, {"edge": [5, 0], "label": "D"},
        ],
        "subtriangulation": [
            [[6, 0, 1], [6, 1, 2], [6, 2, 3], [6, 3, 4], [6, 4, 5], [6, 5, 0]]
        ],
    }
    mesh = ps.mesh_from_data(data)
    elem = mesh.elements[0]
    assert len(elem.sub_triangulation) == 6
    assert sum(s.area for s in elem.sub_triangulation) == pytest.approx(elem.area, rel=1e-12)
    assert ps.shape_regularity(mesh) > 0.0


def test_gamma_anchors(unit_square_mesh, right_triangle_mesh):
    assert unit_square_mesh.gamma == pytest.approx(1.0 / (2.0 * math.sqrt(2.0)), abs=1e-12)
    assert right_triangle_mesh.gamma == pytest.approx(1.0 / 6.0, abs=1e-12)


@given(
    st.floats(min_value=0.1, max_value=10.0),
    st.floats(min_value=0.0, max_value=2 * math.pi),
    st.floats(min_value=-3.0, max_value=3.0),
)
def test_gamma_rigid_motion_and_dilation_invariance(factor, angle, shift):
    mesh = ps.generate_mesh("structured-triangles", resolution=2)
    moved = dilate_mesh(mesh, factor, rotate=angle, shift=(shift, -shift))
    assert abs(moved.gamma - mesh.gamma) <= 1e-14 * max(1.0, mesh.gamma)


def test_subtriangulation_partitions_elements(quads3):
    for elem in quads3.elements:
        total = sum(s.area for s in elem.sub_triangulation)
        assert total == pytest.approx(elem.area, rel=1e-12)


def test_facet_lengths_sum_to_perimeter(tris2):
    for elem in tris2.elements:
        per = sum(tris2.facets[f].length for f in elem.facet_ids)
        pts = elem.points
        ref = sum(
            math.hypot(*(pts[(k + 1) % len(pts)] - pts[k])) for k in range(len(pts))
        )
        assert per == pytest.approx(ref, rel=1e-12)


def test_interior_normals_opposite(quads3):
    for f in quads3.interior_facets:
        n1, n2 = (f.element_normals[e] for e in f.elements)
        assert np.abs(n1 + n2).max() <= 1e-14
        assert abs(np.linalg.norm(f.normal) - 1.0) <= 1e-14


# -- facet length scales ----------------------------------------------------

def test_facet_length_scale_modes():
    data = {
        "vertices": [[0, 0], [1, 0], [1, 1], [0, 1], [3, 0], [3, 1]],
        "cells": [[0, 1, 2, 3], [1, 4, 5, 2]],
        "boundary": [
            {"edge": [0, 1], "label": "D"}, {"edge": [1, 4], "label": "D"},
            {"edge": [4, 5], "label": "D"}, {"edge": [5, 2], "label": "D"},
            {"edge": [2, 3], "label": "D"}, {"edge": [3, 0], "label": "D"},
        ],
    }
    mesh = ps.mesh_from_data(data)
    interior = mesh.interior_facets[0]
    hmin = ps.facet_length_scale(mesh, "element-min")
    hfac = ps.facet_length_scale(mesh, "facet")
    h1 = mesh.elements[0].diameter
    h2 = mesh.elements[1].diameter
    assert hmin[interior.index] == pytest.approx(min(h1, h2))
    assert hfac[interior.index] == pytest.approx(interior.length)
    # Dirichlet boundary facets carry the adjacent element diameter
    for f in mesh.dirichlet_facets:
        assert hmin[f.index] == pytest.approx(mesh.elements[f.elements[0]].diameter)
        assert hmin[f.index] <= max(h1, h2) + 1e-14


def test_neumann_facets_excluded_from_scale():
    mesh = ps.generate_mesh("structured-quads", resolution=2, label_rule="left-dirichlet")
    scales = ps.facet_length_scale(mesh, "element-min")
    for f in mesh.neumann_facets:
        assert f.index not in scales
    with pytest.raises(ValueError):
        ps.facet_length_scale(mesh, "bogus")


# -- domain geometry ----------------------------------------------------------

def test_domain_geometry_unit_square(quads3):
    geom = ps.domain_geometry(quads3, c_gamma=0.9)
    assert geom.h_omega == pytest.approx(math.sqrt(2.0), rel=1e-12)
    assert geom.rho == pytest.approx(0.5, rel=1e-9)
    assert geom.convex
    assert geom.rho_gamma == pytest.approx(0.45, rel=1e-12)
    assert 0.0 < geom.rho <= geom.h_omega / 2.0


def test_domain_geometry_l_shape(l_shape_mesh):
    geom = ps.domain_geometry(l_shape_mesh)
    assert not geom.convex
    assert geom.h_omega == pytest.approx(2.0 * math.sqrt(2.0), rel=1e-12)
    assert geom.area == pytest.approx(3.0, rel=1e-12)
    assert 0.0 < geom.rho <= geom.h_omega / 2.0


def test_domain_geometry_rejects_bad_cgamma(quads3):
    with pytest.raises(ValueError):
        ps.domain_geometry(quads3, c_gamma=1.5)


def test_mesh_stats(quads3):
    stats = ps.mesh_stats(quads3, "element-min", 2.0)
    assert stats["max_h"] == pytest.approx(math.sqrt(2.0) / 3.0, rel=1e-12)
    assert stats["max_facets"] == 4
    assert stats["max_htilde_ratio"] >= 1.0


def test_round_trip_serialization(tmp_path, tris2):
    path = tmp_path / "mesh.json"
    ps.save_mesh(tris2, path)
    again = ps.load_mesh(path)
    assert again.content_hash() == tris2.content_hash()
    assert json.loads(path.read_text())["cells"]
