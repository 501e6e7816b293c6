#!/usr/bin/env python3
"""Recompute the hand-derivable anchor values from first principles.

Deliberately self-contained: only the standard library, no package imports,
so the numbers here are an independent oracle for the test suite.  Prints a
JSON object to stdout.
"""
import json
import math


def shoelace(pts):
    n = len(pts)
    s = 0.0
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return s / 2.0


def centroid(pts):
    a = shoelace(pts)
    cx = cy = 0.0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        cr = x0 * y1 - x1 * y0
        cx += (x0 + x1) * cr
        cy += (y0 + y1) * cr
    return cx / (6.0 * a), cy / (6.0 * a)


def dist(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


def fan_gamma(pts):
    """Regularity parameter of the centroid fan: min over boundary edges of
    d |T| / (|F| h_K) with d = 2."""
    c = centroid(pts)
    h = max(dist(p, q) for p in pts for q in pts)
    best = math.inf
    areas = []
    for i in range(len(pts)):
        a, b = pts[i], pts[(i + 1) % len(pts)]
        t_area = abs(shoelace([c, a, b]))
        areas.append(t_area)
        best = min(best, 2.0 * t_area / (dist(a, b) * h))
    return best, areas, h


def main():
    out = {}

    square = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    tri = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]

    g_sq, _, h_sq = fan_gamma(square)
    g_tr, areas_tr, h_tr = fan_gamma(tri)
    out["gamma_unit_square"] = g_sq                       # = 1 / (2 sqrt 2)
    out["gamma_right_triangle"] = g_tr                    # = 1/6
    out["right_triangle_fan_areas"] = areas_tr            # three times 1/6

    # trace check for v = 1, q = 2 on the unit right triangle:
    # lhs^2 = perimeter, rhs^2 = C^2 * (h^{-1/2} |K|^{1/2})^2 with
    # C^2 = (d + q - 1) / gamma
    lhs_sq = 2.0 + math.sqrt(2.0)
    c_sq = (2.0 + 2.0 - 1.0) / g_tr
    rhs_sq = c_sq * (h_tr ** -0.5 * math.sqrt(0.5)) ** 2
    out["trace_ratio_right_triangle"] = math.sqrt(lhs_sq / rhs_sq)

    # and for the unit square element
    c_sq2 = 3.0 / g_sq
    out["trace_ratio_unit_square"] = math.sqrt(4.0 / (c_sq2 * (h_sq ** -0.5) ** 2))

    # explicit constant formula samples
    out["trace_constant_2_2_2_half"] = math.sqrt((2.0 + 1.0) / 0.5)
    out["trace_constant_2_4_2_1"] = math.sqrt(
        2.0 * math.pi ** 0.5 / math.gamma(2.0) ** 0.5 + 1.0
    )

    # divergence right-inverse bounds on the unit square (h = sqrt 2, rho = 1/2)
    ratio = math.sqrt(2.0) / 0.5
    out["ba_homogeneous_unit_square"] = ratio**2 * (1.0 + ratio)
    ratio_m = 2.0 * math.sqrt(2.0) / 0.45
    out["ba_mixed_convex_unit_square"] = 2.0**0.5 * ratio_m**2 * (1.0 + ratio_m)

    # geometry of the L-shape [0,2]^2 minus [1,2]^2
    lshape = [(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)]
    out["lshape_h_omega"] = max(dist(p, q) for p in lshape for q in lshape)
    out["lshape_area"] = abs(shoelace(lshape))

    # norms of simple monomials on the unit square
    out["l2_norm_x_unit_square"] = math.sqrt(1.0 / 3.0)
    out["l3_norm_x_unit_square"] = 0.25 ** (1.0 / 3.0)
    out["l1_norm_x_unit_square"] = 0.5

    # exponent sets
    out["exponents_p2_d3"] = {"p_prime": 2.0, "p_star": 6.0, "p_sharp": 4.0, "p_ostar": 3.0}
    out["exponents_p15_d2"] = {"p_prime": 3.0, "p_star": 6.0, "p_sharp": 3.0, "p_ostar": 3.0}

    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
