"""Piecewise polynomials over a polytopic mesh.

Functions are stored per element in a scaled monomial basis
((x - x_K) / h_K)^alpha centered at the element centroid, degree at most 6.
Lebesgue norms use exact Gauss rules whenever the integrand is a polynomial
(even integer powers) and locally adaptive subdivision otherwise; every
approximate evaluation carries a QuadInfo error flag that verifiers fold
into their acceptance margins.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import quadrature as quad
from .geometry import Facet, Mesh
from .quadrature import EXACT_INFO, QuadInfo, merge_info

MAX_DEGREE = 6


@lru_cache(maxsize=None)
def monomial_exponents(degree: int) -> tuple[tuple[int, int], ...]:
    """Graded-lexicographic 2D exponents up to the given total degree."""
    out = []
    for total in range(degree + 1):
        for a in range(total, -1, -1):
            out.append((a, total - a))
    return tuple(out)


def basis_size(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


@lru_cache(maxsize=None)
def gradient_operators(degree: int):
    """Coefficient maps of d/dxi and d/deta (without the 1/h_K factor)."""
    exps = monomial_exponents(degree)
    exps_lo = monomial_exponents(max(degree - 1, 0))
    index = {e: i for i, e in enumerate(exps_lo)}
    nb, nb_lo = len(exps), len(exps_lo)
    dx = np.zeros((nb_lo, nb))
    dy = np.zeros((nb_lo, nb))
    for j, (a, b) in enumerate(exps):
        if a > 0:
            dx[index[(a - 1, b)], j] = a
        if b > 0:
            dy[index[(a, b - 1)], j] = b
    return dx, dy


@lru_cache(maxsize=None)
def _exponent_arrays(degree: int):
    exps = monomial_exponents(degree)
    a = np.array([e[0] for e in exps])
    b = np.array([e[1] for e in exps])
    return a, b


def _basis_values(element, pts: np.ndarray, degree: int) -> np.ndarray:
    xi = (pts[:, 0] - element.centroid[0]) / element.diameter
    eta = (pts[:, 1] - element.centroid[1]) / element.diameter
    max_pow = degree + 1
    xi_p = np.empty((max_pow, pts.shape[0]))
    eta_p = np.empty((max_pow, pts.shape[0]))
    xi_p[0] = 1.0
    eta_p[0] = 1.0
    for m in range(1, max_pow):
        np.multiply(xi_p[m - 1], xi, out=xi_p[m])
        np.multiply(eta_p[m - 1], eta, out=eta_p[m])
    a_idx, b_idx = _exponent_arrays(degree)
    return (xi_p[a_idx] * eta_p[b_idx]).T


@dataclass
class BrokenFunction:
    """Elementwise polynomial with per-element scaled-monomial coefficients."""

    mesh: Mesh
    degree: int
    coeffs: np.ndarray           # (n_elements, basis_size(degree))

    def __post_init__(self):
        if self.degree > MAX_DEGREE:
            raise ValueError(f"degree capped at {MAX_DEGREE}")
        expected = (len(self.mesh.elements), basis_size(self.degree))
        if self.coeffs.shape != expected:
            raise ValueError(f"coefficient array must have shape {expected}")

    def evaluate(self, element_id: int, pts: np.ndarray) -> np.ndarray:
        elem = self.mesh.elements[element_id]
        return _basis_values(elem, np.atleast_2d(pts), self.degree) @ self.coeffs[element_id]

    def gradient_coeffs(self, element_id: int) -> np.ndarray:
        """(2, basis_size(degree-1)) coefficients of the gradient components."""
        dx, dy = gradient_operators(self.degree)
        h = self.mesh.elements[element_id].diameter
        c = self.coeffs[element_id]
        return np.stack([dx @ c, dy @ c]) / h

    def to_dict(self) -> dict:
        return {
            "mesh_hash": self.mesh.content_hash(),
            "degree": self.degree,
            "coeffs": self.coeffs.tolist(),
        }

    @classmethod
    def from_dict(cls, mesh: Mesh, data: dict) -> "BrokenFunction":
        if data["mesh_hash"] != mesh.content_hash():
            raise ValueError("mesh hash mismatch")
        return cls(mesh, int(data["degree"]), np.asarray(data["coeffs"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class FacetFunction:
    """1D polynomial on a facet, in the arclength parameter s in [0, length]."""

    facet: Facet
    coeffs: np.ndarray           # ascending 1D coefficients

    def values(self, s: np.ndarray) -> np.ndarray:
        return np.polynomial.polynomial.polyval(s, self.coeffs)

    def lq_norm(self, q: float, with_info: bool = False):
        val, info = _facet_abs_power(self.coeffs, self.facet.length, q)
        norm = val ** (1.0 / q) if q != math.inf else val
        return (norm, info) if with_info else norm

    def average(self) -> float:
        L = self.facet.length
        powers = L ** np.arange(len(self.coeffs))
        return float((self.coeffs * powers / (np.arange(len(self.coeffs)) + 1.0)).sum())


def _facet_abs_power(coeffs: np.ndarray, length: float, q: float):
    """(integral of |g|^q over the facet, info); max |g| for q = inf."""
    if q == math.inf:
        s = np.linspace(0.0, length, 257)
        return float(np.abs(np.polynomial.polynomial.polyval(s, coeffs)).max()), QuadInfo(
            exact=False, abs_error=0.0, levels=0, cap_hit=False
        )
    if q < 1.0:
        raise ValueError("q must be at least 1")
    if float(q).is_integer():
        return quad.abs_power_segment_integral(coeffs, length, int(q)), EXACT_INFO
    fn = lambda t: np.abs(np.polynomial.polynomial.polyval(t * length, coeffs)) ** q
    val, info = quad.adaptive_segment_integral(fn, np.zeros(2), np.array([length, 0.0]))
    return val, info


# ---------------------------------------------------------------------------
# element-level integration
# ---------------------------------------------------------------------------

def _fan_triangles(elem) -> np.ndarray:
    return np.stack([s.vertices for s in elem.sub_triangulation])


def _element_rule_matrix(mesh: Mesh, element_id: int, degree: int, exactness: int):
    """Cached (weights, basis matrix) for exact integration on one element."""
    key = ("rule", element_id, degree, exactness)
    if key not in mesh._cache:
        elem = mesh.elements[element_id]
        rule = quad.triangle_rule(exactness)
        pts_all, w_all = [], []
        for tri in _fan_triangles(elem):
            pts, w = quad.map_to_triangle(rule, tri)
            pts_all.append(pts)
            w_all.append(w)
        pts = np.vstack(pts_all)
        mesh._cache[key] = (np.concatenate(w_all), _basis_values(elem, pts, degree), pts)
    return mesh._cache[key]


def _conv2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + b.shape[0] - 1, a.shape[1] + b.shape[1] - 1))
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            if a[i, j] != 0.0:
                out[i : i + b.shape[0], j : j + b.shape[1]] += a[i, j] * b
    return out


def _slice_tensors(mesh: Mesh, element_id: int, degree: int) -> list[np.ndarray]:
    """Per fan triangle: tensor T[m, j, n] such that, for coefficients c,
    v(x(u, w)) = sum_m u^m (sum_j (T @ c)[m, j] w^j) along the Duffy-type
    slices x(u, w) = A + u (B + w (C - B) - A) of the triangle (A, B, C)."""
    key = ("slice", element_id, degree)
    if key not in mesh._cache:
        elem = mesh.elements[element_id]
        h, cen = elem.diameter, elem.centroid
        exps = monomial_exponents(degree)
        tensors = []
        for sub in elem.sub_triangulation:
            A, B, C = sub.vertices
            out = np.zeros((degree + 1, degree + 1, len(exps)))
            pow_cache = {}
            for axis in range(2):
                lin = np.zeros((2, 2))
                lin[0, 0] = (A[axis] - cen[axis]) / h
                lin[1, 0] = (B[axis] - A[axis]) / h
                lin[1, 1] = (C[axis] - B[axis]) / h
                powers = [np.ones((1, 1))]
                for _ in range(degree):
                    powers.append(_conv2(powers[-1], lin))
                pow_cache[axis] = powers
            for n, (a, b) in enumerate(exps):
                prod = _conv2(pow_cache[0][a], pow_cache[1][b])
                out[: prod.shape[0], : prod.shape[1], n] = prod
            tensors.append(out)
        mesh._cache[key] = tensors
    return mesh._cache[key]


def _element_abs_power_odd(v: BrokenFunction, element_id: int, q: int, rel_tol: float):
    """Integral of |v|^q, odd integer q, via exact root-split slice integrals.

    The inner integral along each Duffy slice is exact; only the outer slice
    parameter is integrated adaptively (its integrand is piecewise analytic
    with finitely many branch points).
    """
    elem = v.mesh.elements[element_id]
    tensors = _slice_tensors(v.mesh, element_id, v.degree)
    c = v.coeffs[element_id]
    k = v.degree
    total, info = 0.0, EXACT_INFO
    for sub, ten in zip(elem.sub_triangulation, tensors):
        M = ten.reshape((k + 1) * (k + 1), -1) @ c
        M = M.reshape(k + 1, k + 1)

        def g(w):
            W = np.vander(w, k + 1, increasing=True)
            coeffs_u = W @ M.T
            return quad.abs_power_segment_batch(coeffs_u, 1.0, q, u_weight=1)

        val, inf_i = quad.adaptive_segment_integral(
            g, np.zeros(2), np.array([1.0, 0.0]), rel_tol=rel_tol, base_exactness=14
        )
        total += val * 2.0 * sub.area
        info = merge_info(info, QuadInfo(False, inf_i.abs_error * 2.0 * sub.area,
                                         inf_i.levels, inf_i.cap_hit))
    return total, info


def _element_abs_power(v: BrokenFunction, element_id: int, q: float, rel_tol: float = quad.ADAPTIVE_RTOL):
    """(integral of |v|^q over one element, info)."""
    elem = v.mesh.elements[element_id]
    c = v.coeffs[element_id]
    if q == math.inf:
        w, B, _ = _element_rule_matrix(v.mesh, element_id, v.degree, max(2 * v.degree, 8))
        return float(np.abs(B @ c).max()), QuadInfo(exact=False)
    if float(q).is_integer() and int(q) % 2 == 0:
        w, B, _ = _element_rule_matrix(v.mesh, element_id, v.degree, v.degree * int(q))
        return float(w @ (B @ c) ** int(q)), EXACT_INFO
    if float(q).is_integer() and v.degree >= 1:
        return _element_abs_power_odd(v, element_id, int(q), rel_tol)
    if v.degree == 0:
        return abs(c[0]) ** q * elem.area, EXACT_INFO
    fn = lambda pts: np.abs(_basis_values(elem, pts, v.degree) @ c) ** q
    return quad.adaptive_triangle_integral(fn, _fan_triangles(elem), rel_tol=rel_tol)


def lq_norm(v, q: float, element: int | None = None, with_info: bool = False):
    """L^q norm of a broken or facet function.

    q must be >= 1; q = inf evaluates a max over dense quadrature nodes and
    is flagged approximate.  For even integer q the integrand is a polynomial
    and exact rules apply; otherwise adaptive subdivision runs to relative
    1e-9 with the residual error reported in the QuadInfo.
    """
    if isinstance(v, FacetFunction):
        return v.lq_norm(q, with_info=with_info)
    if q != math.inf and q < 1.0:
        raise ValueError("q must be at least 1")
    ids = range(len(v.mesh.elements)) if element is None else [element]
    if q == math.inf:
        vals_infos = [_element_abs_power(v, i, q) for i in ids]
        out = max(val for val, _ in vals_infos)
        info = QuadInfo(exact=False)
    else:
        total, info = 0.0, EXACT_INFO
        for i in ids:
            val, inf_i = _element_abs_power(v, i, q)
            total += val
            info = merge_info(info, inf_i)
        out = total ** (1.0 / q)
    return (out, info) if with_info else out


def _element_gradient_power(v: BrokenFunction, element_id: int, p: float, rel_tol: float = quad.ADAPTIVE_RTOL):
    """(integral of |grad v|_{l2}^p over one element, info)."""
    elem = v.mesh.elements[element_id]
    if v.degree == 0:
        return 0.0, EXACT_INFO
    g = v.gradient_coeffs(element_id)
    deg = v.degree - 1
    if float(p).is_integer() and int(p) % 2 == 0:
        w, B, _ = _element_rule_matrix(v.mesh, element_id, deg, 2 * deg * (int(p) // 2))
        gx, gy = B @ g[0], B @ g[1]
        return float(w @ (gx**2 + gy**2) ** (int(p) // 2)), EXACT_INFO
    if deg == 0:
        return float(g[0, 0] ** 2 + g[1, 0] ** 2) ** (p / 2.0) * elem.area, EXACT_INFO

    def fn(pts):
        B = _basis_values(elem, pts, deg)
        return ((B @ g[0]) ** 2 + (B @ g[1]) ** 2) ** (p / 2.0)

    return quad.adaptive_triangle_integral(
        fn, _fan_triangles(elem), rel_tol=rel_tol, base_exactness=6
    )


def broken_seminorm(v: BrokenFunction, p: float, element: int | None = None, with_info: bool = False):
    """L^p norm over the mesh of the pointwise l2 length of the broken gradient."""
    if p < 1.0:
        raise ValueError("p must be at least 1")
    ids = range(len(v.mesh.elements)) if element is None else [element]
    total, info = 0.0, EXACT_INFO
    for i in ids:
        val, inf_i = _element_gradient_power(v, i, p)
        total += val
        info = merge_info(info, inf_i)
    out = total ** (1.0 / p)
    return (out, info) if with_info else out


# ---------------------------------------------------------------------------
# traces, jumps, averages
# ---------------------------------------------------------------------------

def _trace_matrix(mesh: Mesh, element_id: int, facet: Facet, degree: int) -> np.ndarray:
    """Cached (degree+1, nb) map from element coefficients to facet-trace
    coefficients in the facet arclength parameter."""
    key = ("trace", element_id, facet.index, degree)
    if key not in mesh._cache:
        elem = mesh.elements[element_id]
        e0, e1 = facet.endpoints
        h, c = elem.diameter, elem.centroid
        L = facet.length
        # xi(s) = xi0 + s * dxi, eta(s) = eta0 + s * deta
        xi_lin = np.array([(e0[0] - c[0]) / h, (e1[0] - e0[0]) / (L * h)])
        eta_lin = np.array([(e0[1] - c[1]) / h, (e1[1] - e0[1]) / (L * h)])
        ppow = np.polynomial.polynomial.polypow
        pmul = np.polynomial.polynomial.polymul
        xi_powers = [np.array([1.0])] + [ppow(xi_lin, m) for m in range(1, degree + 1)]
        eta_powers = [np.array([1.0])] + [ppow(eta_lin, m) for m in range(1, degree + 1)]
        exps = monomial_exponents(degree)
        T = np.zeros((degree + 1, len(exps)))
        for j, (a, b) in enumerate(exps):
            col = pmul(xi_powers[a], eta_powers[b])
            T[: len(col), j] = col
        mesh._cache[key] = T
    return mesh._cache[key]


def trace(v: BrokenFunction, element_id: int, facet: Facet) -> np.ndarray:
    """Facet-trace coefficients of v restricted to one element."""
    return _trace_matrix(v.mesh, element_id, facet, v.degree) @ v.coeffs[element_id]


def _orientation_sign(facet: Facet, element_id: int) -> float:
    s = float(facet.element_normals[element_id] @ facet.normal)
    if abs(abs(s) - 1.0) > 1e-10:
        raise ValueError("facet normal is not aligned with the element outward normal")
    return math.copysign(1.0, s)


def jump(v: BrokenFunction, facet: Facet) -> FacetFunction:
    """Signed difference of traces across an interior facet, oriented by the
    fixed facet normal; on boundary facets the trace itself (with the same
    orientation sign).  Neumann facets are evaluated identically but callers
    exclude them from inequality sums."""
    if facet.index >= len(v.mesh.facets) or v.mesh.facets[facet.index] is not facet:
        raise ValueError("facet does not belong to the function's mesh")
    coeffs = np.zeros(v.degree + 1)
    for ei in facet.elements:
        coeffs = coeffs + _orientation_sign(facet, ei) * trace(v, ei, facet)
    return FacetFunction(facet, coeffs)


def facet_average(g: FacetFunction) -> float:
    """Mean value of a facet function (the facet projection onto constants)."""
    return g.average()


def element_average(v: BrokenFunction) -> BrokenFunction:
    """Piecewise-constant projection: per-element mean values."""
    means = np.zeros((len(v.mesh.elements), 1))
    for i, elem in enumerate(v.mesh.elements):
        w, B, _ = _element_rule_matrix(v.mesh, i, v.degree, v.degree)
        means[i, 0] = float(w @ (B @ v.coeffs[i])) / elem.area
    return BrokenFunction(v.mesh, 0, means)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

def _global_to_local(mesh: Mesh, gcoeffs: np.ndarray, degree: int) -> np.ndarray:
    """Represent a global polynomial (plain monomials x^a y^b) per element."""
    ppow = np.polynomial.polynomial.polypow
    exps = monomial_exponents(degree)
    out = np.zeros((len(mesh.elements), len(exps)))
    index = {e: i for i, e in enumerate(exps)}
    for ei, elem in enumerate(mesh.elements):
        h, c = elem.diameter, elem.centroid
        # x = cx + h xi -> expand (cx + h xi)^a (cy + h eta)^b in (xi, eta)
        for j, (a, b) in enumerate(exps):
            if gcoeffs[j] == 0.0:
                continue
            xa = ppow(np.array([c[0], h]), a) if a else np.array([1.0])
            yb = ppow(np.array([c[1], h]), b) if b else np.array([1.0])
            for ia, ca in enumerate(xa):
                for ib, cb in enumerate(yb):
                    out[ei, index[(ia, ib)]] += gcoeffs[j] * ca * cb
    return out


def sample(mesh: Mesh, kind: str, degree: int, seed: int, eps: float = 0.25) -> BrokenFunction:
    """Draw a broken function for verification campaigns.

    iid-coefficients: coefficients uniform in [-1, 1].
    conforming-plus-jumps: a global polynomial plus per-element constant
    offsets of magnitude eps (eps = 0 gives a globally continuous function).
    conforming-scaled-jumps: same, with offsets eps * h_K, the natural
    interpolation-error scaling; keeps refinement families comparable.
    cr-like: triangles only; an iid sample projected (least squares) onto the
    constraint set of continuous facet averages across interior facets and
    zero facet averages on Dirichlet facets.
    """
    if degree > MAX_DEGREE:
        raise ValueError(f"degree capped at {MAX_DEGREE}")
    rng = np.random.default_rng(seed)
    nb = basis_size(degree)
    ne = len(mesh.elements)
    if kind == "iid-coefficients":
        return BrokenFunction(mesh, degree, rng.uniform(-1.0, 1.0, size=(ne, nb)))
    if kind in ("conforming-plus-jumps", "conforming-scaled-jumps"):
        gcoeffs = rng.uniform(-1.0, 1.0, size=nb)
        coeffs = _global_to_local(mesh, gcoeffs, degree)
        offsets = eps * rng.uniform(-1.0, 1.0, size=ne)
        if kind == "conforming-scaled-jumps":
            offsets = offsets * np.array([e.diameter for e in mesh.elements])
        coeffs[:, 0] += offsets
        return BrokenFunction(mesh, degree, coeffs)
    if kind == "cr-like":
        if any(len(e.loop) != 3 for e in mesh.elements):
            raise ValueError("cr-like sampling needs a triangular mesh")
        v0 = BrokenFunction(mesh, degree, rng.uniform(-1.0, 1.0, size=(ne, nb)))
        rows = []
        for f in mesh.jump_facets:
            row = np.zeros(ne * nb)
            for ei in f.elements:
                T = _trace_matrix(mesh, ei, f, degree)
                powers = f.length ** np.arange(degree + 1)
                integral_weights = powers / (np.arange(degree + 1) + 1.0)
                row[ei * nb : (ei + 1) * nb] += _orientation_sign(f, ei) * (
                    integral_weights @ T
                )
            rows.append(row)
        R = np.asarray(rows)
        c = v0.coeffs.ravel()
        correction, *_ = np.linalg.lstsq(R, R @ c, rcond=None)
        return BrokenFunction(mesh, degree, (c - correction).reshape(ne, nb))
    raise ValueError(f"unknown sample kind {kind!r}")
