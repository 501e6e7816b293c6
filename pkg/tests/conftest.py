import numpy as np
import pytest
from hypothesis import settings

import polysob as ps

settings.register_profile("suite", max_examples=25, deadline=None, derandomize=True)
settings.load_profile("suite")


RIGHT_TRIANGLE_DATA = {
    "vertices": [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
    "cells": [[0, 1, 2]],
    "boundary": [
        {"edge": [0, 1], "label": "D"},
        {"edge": [1, 2], "label": "D"},
        {"edge": [2, 0], "label": "D"},
    ],
}

L_SHAPE_DATA = {
    "vertices": [
        [0, 0], [1, 0], [2, 0],
        [0, 1], [1, 1], [2, 1],
        [0, 2], [1, 2],
    ],
    "cells": [[0, 1, 4, 3], [1, 2, 5, 4], [3, 4, 7, 6]],
    "boundary": [
        {"edge": [0, 1], "label": "D"}, {"edge": [1, 2], "label": "D"},
        {"edge": [2, 5], "label": "D"}, {"edge": [5, 4], "label": "N"},
        {"edge": [4, 7], "label": "N"}, {"edge": [7, 6], "label": "D"},
        {"edge": [6, 3], "label": "D"}, {"edge": [3, 0], "label": "D"},
    ],
}


@pytest.fixture(scope="session")
def unit_square_mesh():
    return ps.generate_mesh("structured-quads", resolution=1)


@pytest.fixture(scope="session")
def right_triangle_mesh():
    return ps.mesh_from_data(RIGHT_TRIANGLE_DATA)


@pytest.fixture(scope="session")
def quads3():
    return ps.generate_mesh("structured-quads", resolution=3)


@pytest.fixture(scope="session")
def tris2():
    return ps.generate_mesh("structured-triangles", resolution=2)


@pytest.fixture(scope="session")
def l_shape_mesh():
    return ps.mesh_from_data(L_SHAPE_DATA)


def dilate_mesh(mesh, factor, rotate=0.0, shift=(0.0, 0.0)):
    data = mesh.to_data()
    pts = np.asarray(data["vertices"])
    c, s = np.cos(rotate), np.sin(rotate)
    pts = pts @ np.array([[c, s], [-s, c]]) * factor + np.asarray(shift)
    data["vertices"] = pts.tolist()
    return ps.mesh_from_data(data)
