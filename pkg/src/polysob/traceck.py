"""Per-element verification of the Sobolev-trace inequalities.

Each check compares the boundary L^q norm of a piecewise polynomial against
the explicit right-hand side built from the mesh regularity parameter and the
trace constant.  Ratios above 1 + quadrature slack would falsify the
implementation (the bounds hold for the whole Sobolev class), so campaigns
record them as counterexample artifacts instead of crashing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import quadrature as quad
from .brokenfn import (
    BrokenFunction,
    _basis_values,
    _element_abs_power,
    _element_gradient_power,
    _element_rule_matrix,
    _fan_triangles,
    sample,
    trace,
)
from .exponents import derive_exponents, trace_constant
from .geometry import Mesh, SubSimplex
from .quadrature import EXACT_INFO, QuadInfo, merge_info

#: (q, s) pairs exercised by default campaigns
DEFAULT_QS_GRID = ((1.0, 1.0), (1.0, 2.0), (2.0, 2.0), (2.0, 4.0), (3.0, 3.0))


@dataclass(frozen=True)
class RTField:
    """Lowest-order Raviart-Thomas field of a sub-simplex with boundary edge.

    phi(x) = |F| / (d |T|) (x - P) with P the vertex opposite the boundary
    edge; its normal component is 1 on that edge, 0 on the other two, and
    div phi = |F| / |T|.
    """

    simplex: SubSimplex
    apex: np.ndarray
    factor: float

    def values(self, pts: np.ndarray) -> np.ndarray:
        return self.factor * (np.atleast_2d(pts) - self.apex)

    @property
    def divergence(self) -> float:
        return 2.0 * self.factor


def make_rt_field(simplex: SubSimplex) -> RTField:
    if simplex.boundary_edge is None:
        raise ValueError("sub-simplex has no boundary edge")
    e0, e1 = simplex.boundary_edge
    apex = None
    for v in simplex.vertices:
        if np.hypot(*(v - e0)) > 1e-12 and np.hypot(*(v - e1)) > 1e-12:
            apex = v
    if apex is None:
        raise ValueError("degenerate sub-simplex")
    factor = simplex.boundary_edge_length / (2.0 * simplex.area)
    return RTField(simplex, apex, factor)


def rt_divergence_identity(v: BrokenFunction, element_id: int, q: float, simplex: SubSimplex) -> float:
    """Relative defect of the divergence theorem for |v|^q times the RT field.

    Both sides are computed by independent quadratures (boundary: exact
    root-split segment rules; volume: exact rule for even q, adaptive
    otherwise), so the residual doubles as a quadrature self-test.
    """
    rt = make_rt_field(simplex)
    elem = v.mesh.elements[element_id]
    c = v.coeffs[element_id]
    tri = simplex.vertices

    # boundary side: phi . n is constant on each edge of the simplex
    boundary = 0.0
    for k in range(3):
        a, b = tri[k], tri[(k + 1) % 3]
        d = b - a
        length = float(np.hypot(*d))
        n = np.array([d[1], -d[0]]) / length
        if np.dot(n, a - simplex.vertices.mean(axis=0)) < 0:
            n = -n
        phi_n = float(rt.values(0.5 * (a + b))[0] @ n)
        coeffs_1d = _segment_poly(v, element_id, a, b)
        if float(q).is_integer():
            integral = quad.abs_power_segment_integral(coeffs_1d, length, int(q))
        else:
            fn = lambda t: np.abs(
                np.polynomial.polynomial.polyval(t * length, coeffs_1d)
            ) ** q
            integral, _ = quad.adaptive_segment_integral(fn, a, b)
        boundary += phi_n * integral

    # volume side: div(|v|^q phi) = |v|^q div phi + q |v|^{q-2} v grad v . phi
    if float(q).is_integer() and int(q) % 2 == 0:
        qi = int(q)
        deg = v.degree * qi + max(v.degree, 1)
        rule = quad.triangle_rule(deg)
        pts, w = quad.map_to_triangle(rule, tri)
        vals = _basis_values(elem, pts, v.degree) @ c
        g = v.gradient_coeffs(element_id)
        B1 = _basis_values(elem, pts, max(v.degree - 1, 0))
        grads = np.stack([B1 @ g[0], B1 @ g[1]], axis=1)
        phi = rt.values(pts)
        integrand = vals**qi * rt.divergence + qi * vals ** (qi - 1) * (grads * phi).sum(axis=1)
        volume = float(w @ integrand)
    else:
        g = v.gradient_coeffs(element_id)

        def fn(pts):
            vals = _basis_values(elem, pts, v.degree) @ c
            B1 = _basis_values(elem, pts, max(v.degree - 1, 0))
            grads = np.stack([B1 @ g[0], B1 @ g[1]], axis=1)
            phi = rt.values(pts)
            av = np.abs(vals)
            # |v|^{q-2} v = sign(v) |v|^{q-1}, safe at v = 0 for q >= 1
            term = np.sign(vals) * av ** (q - 1.0)
            return av**q * rt.divergence + q * term * (grads * phi).sum(axis=1)

        volume, _ = quad.adaptive_triangle_integral(fn, tri[None, :, :])

    return abs(boundary - volume) / max(1.0, abs(volume))


def _segment_poly(v: BrokenFunction, element_id: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Trace coefficients of v along an arbitrary segment of one element."""
    elem = v.mesh.elements[element_id]
    h, cen = elem.diameter, elem.centroid
    L = float(np.hypot(*(b - a)))
    ppow = np.polynomial.polynomial.polypow
    pmul = np.polynomial.polynomial.polymul
    xi_lin = np.array([(a[0] - cen[0]) / h, (b[0] - a[0]) / (L * h)])
    eta_lin = np.array([(a[1] - cen[1]) / h, (b[1] - a[1]) / (L * h)])
    from .brokenfn import monomial_exponents

    coeffs = np.zeros(v.degree + 1)
    xi_powers = [np.array([1.0])] + [ppow(xi_lin, m) for m in range(1, v.degree + 1)]
    eta_powers = [np.array([1.0])] + [ppow(eta_lin, m) for m in range(1, v.degree + 1)]
    for j, (aa, bb) in enumerate(monomial_exponents(v.degree)):
        cj = v.coeffs[element_id][j]
        if cj == 0.0:
            continue
        col = pmul(xi_powers[aa], eta_powers[bb])
        coeffs[: len(col)] += cj * col
    return coeffs


@dataclass
class TraceRatio:
    element: int
    sample_id: int
    variant: str
    q: float
    s: float
    lhs: float
    rhs: float
    ratio: float
    slack: float = 0.0
    flags: dict = field(default_factory=dict)


def _boundary_norm_power(v: BrokenFunction, element_id: int, q: float):
    """Integral of |v|^q over the element's whole boundary (own trace)."""
    from .brokenfn import _facet_abs_power

    elem = v.mesh.elements[element_id]
    total, info = 0.0, EXACT_INFO
    for fid in elem.facet_ids:
        facet = v.mesh.facets[fid]
        val, inf_i = _facet_abs_power(trace(v, element_id, facet), facet.length, q)
        total += val
        info = merge_info(info, inf_i)
    return total, info


def _variant_setup(mesh: Mesh, element_id: int, variant: str, q: float, s: Optional[float]):
    """(lhs exponent, volume exponent, gradient exponent, h-power factors,
    trace constant) of the chosen inequality variant on one element."""
    d = mesh.dimension
    gamma = mesh.gamma
    h = mesh.elements[element_id].diameter
    if variant == "standard":
        s = q
    if variant in ("standard", "general"):
        if s is None:
            raise ValueError("general variant needs s")
        if not (1.0 <= q <= s):
            raise ValueError("need s >= q >= 1")
        r = s / (s - q + 1.0)
        expo = 1.0 - (d / s) * (s - q)
        h_vol = h ** (-expo / q)
        h_grad = h ** (expo * (1.0 - 1.0 / q)) if q > 1.0 else 1.0
        return q, s, r, h_vol, h_grad, trace_constant(q, s, d, gamma)
    if variant == "embedding":
        if not (1.0 <= q < d):
            raise ValueError("embedding variant requires q in [1, d)")
        es = derive_exponents(q, d)
        ctr = trace_constant(es.p_sharp, es.p_star, d, gamma)
        return es.p_sharp, es.p_star, q, 1.0, 1.0, ctr
    raise ValueError(f"unknown variant {variant!r}")


def _assemble_ratio(lhs_q, s, r, h_vol, h_grad, ctr, lhs_pow, vol_pow, grad_pow,
                    lhs_info, vol_info, grad_info):
    lhs = lhs_pow ** (1.0 / lhs_q)
    term_vol = h_vol * vol_pow ** (1.0 / s)
    term_grad = h_grad * grad_pow ** (1.0 / r)
    rhs = ctr * (term_vol + term_grad)
    ratio = 0.0 if (lhs == 0.0 and rhs == 0.0) else (lhs / rhs if rhs > 0.0 else math.inf)
    info = merge_info(lhs_info, merge_info(vol_info, grad_info))
    # relative error of I^(1/a) is relerr(I)/a; the slack is the resulting
    # bound on the error of the ratio itself
    lhs_rel = lhs_info.abs_error / max(lhs_pow, 1e-300) / lhs_q
    err_vol = term_vol * vol_info.abs_error / max(vol_pow, 1e-300) / s
    err_grad = term_grad * grad_info.abs_error / max(grad_pow, 1e-300) / r
    rhs_rel = ctr * (err_vol + err_grad) / max(rhs, 1e-300)
    slack = ratio * (lhs_rel + rhs_rel)
    return lhs, rhs, ratio, slack, info


def verify_trace(
    mesh: Mesh,
    element_id: int,
    v: BrokenFunction,
    variant: str = "standard",
    q: float = 2.0,
    s: Optional[float] = None,
    sample_id: int = -1,
    quad_rtol: float = quad.ADAPTIVE_RTOL,
) -> TraceRatio:
    """Check one element against the chosen trace inequality variant.

    standard: s = q; general: any s >= q; embedding: q in [1, d) with the
    boundary norm at q-sharp and the volume norm at q-star, no diameter
    weights.  The ratio is LHS / RHS, recorded even above 1; both-zero is
    defined as ratio 0.  The propagated quadrature error bound on the ratio
    is stored in `slack`.
    """
    lhs_q, s_eff, r, h_vol, h_grad, ctr = _variant_setup(mesh, element_id, variant, q, s)
    lhs_pow, lhs_info = _boundary_norm_power(v, element_id, lhs_q)
    vol_pow, vol_info = _element_abs_power(v, element_id, s_eff, quad_rtol)
    grad_pow, grad_info = _element_gradient_power(v, element_id, r, quad_rtol)
    lhs, rhs, ratio, slack, info = _assemble_ratio(
        lhs_q, s_eff, r, h_vol, h_grad, ctr,
        lhs_pow, vol_pow, grad_pow, lhs_info, vol_info, grad_info,
    )
    return TraceRatio(
        element=element_id,
        sample_id=sample_id,
        variant=variant,
        q=q,
        s=float(s_eff),
        lhs=lhs,
        rhs=rhs,
        ratio=ratio,
        slack=slack,
        flags={"cap_hit": info.cap_hit, "exact": info.exact, "abs_error": info.abs_error},
    )


@dataclass
class CampaignSummary:
    n_records: int
    max_ratio: float
    argmax: dict
    max_slack: float
    count_above_09: int
    count_above_02: int
    violations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "max_ratio": self.max_ratio,
            "argmax": self.argmax,
            "max_slack": self.max_slack,
            "count_above_0.9": self.count_above_09,
            "count_above_0.2": self.count_above_02,
            "violations": self.violations,
        }


def summarize(records: Sequence[TraceRatio]) -> CampaignSummary:
    if not records:
        return CampaignSummary(0, 0.0, {}, 0.0, 0, 0)
    best = max(records, key=lambda r: r.ratio)
    violations = [
        {"element": r.element, "sample": r.sample_id, "q": r.q, "s": r.s, "ratio": r.ratio}
        for r in records
        if r.ratio > 1.0 + max(r.slack, 1e-12)
    ]
    return CampaignSummary(
        n_records=len(records),
        max_ratio=best.ratio,
        argmax={
            "element": best.element,
            "sample": best.sample_id,
            "q": best.q,
            "s": best.s,
            "variant": best.variant,
        },
        max_slack=max(r.slack for r in records),
        count_above_09=sum(1 for r in records if 0.9 < r.ratio <= 1.0),
        count_above_02=sum(1 for r in records if r.ratio > 0.2),
        violations=violations,
    )


def _batch_abs_power_odd(mesh, element_id, C, degree, q_int, rtol):
    """Batched slice-exact integrals of |v|^q, odd q, for all samples at once."""
    from ._batchint import batch_adaptive_segments
    from .brokenfn import _slice_tensors

    elem = mesh.elements[element_id]
    tensors = _slice_tensors(mesh, element_id, degree)
    n = C.shape[0]
    k = degree
    total = np.zeros(n)
    err = np.zeros(n)
    cap_any = np.zeros(n, dtype=bool)
    lev = 0
    for sub, ten in zip(elem.sub_triangulation, tensors):
        M = (ten.reshape((k + 1) * (k + 1), -1) @ C.T).T.reshape(n, k + 1, k + 1)

        def g(w, sid):
            W = np.empty((w.size, k + 1))
            W[:, 0] = 1.0
            for j in range(1, k + 1):
                np.multiply(W[:, j - 1], w, out=W[:, j])
            coeffs_u = np.einsum("pj,pmj->pm", W, M[sid])
            return quad.abs_power_segment_batch(coeffs_u, 1.0, q_int, u_weight=1)

        vals, errs, cap, levels = batch_adaptive_segments(g, n, rel_tol=rtol)
        total += vals * 2.0 * sub.area
        err += errs * 2.0 * sub.area
        cap_any |= cap
        lev = max(lev, levels)
    infos = [QuadInfo(False, float(err[i]), lev, bool(cap_any[i])) for i in range(n)]
    return total, infos


def _batch_gradient_power(mesh, element_id, C, degree, r, rtol):
    """Batched adaptive integrals of |grad v|^r for all samples at once."""
    from ._batchint import batch_adaptive_triangles
    from .brokenfn import gradient_operators

    elem = mesh.elements[element_id]
    dx, dy = gradient_operators(degree)
    h = elem.diameter
    GX = (C @ dx.T) / h
    GY = (C @ dy.T) / h
    deg = degree - 1
    n = C.shape[0]

    def values(pts, sid):
        B = _basis_values(elem, pts, deg)
        vx = np.einsum("pj,pj->p", B, GX[sid])
        vy = np.einsum("pj,pj->p", B, GY[sid])
        return (vx**2 + vy**2) ** (r / 2.0)

    vals, errs, cap, levels = batch_adaptive_triangles(
        values, _fan_triangles(elem), n, rel_tol=rtol
    )
    infos = [QuadInfo(False, float(errs[i]), levels, bool(cap[i])) for i in range(n)]
    return vals, infos


def _verify_trace_element_batch(
    mesh: Mesh,
    element_id: int,
    vs: Sequence[tuple[int, BrokenFunction]],
    variant: str,
    q: float,
    s: Optional[float],
    quad_rtol: float,
) -> list[TraceRatio]:
    """verify_trace for many samples of equal degree on one element.

    Follows exactly the same quadrature paths as verify_trace; the exact
    parts (even powers, root-split boundary integrals) are evaluated for the
    whole batch at once.
    """
    from .brokenfn import _trace_matrix

    lhs_q, s_eff, r, h_vol, h_grad, ctr = _variant_setup(mesh, element_id, variant, q, s)
    degree = vs[0][1].degree
    C = np.stack([v.coeffs[element_id] for _, v in vs])
    n = len(vs)
    elem = mesh.elements[element_id]

    # boundary integrals of |v|^lhs_q over all facets, batched when exact
    if float(lhs_q).is_integer():
        lhs_pow = np.zeros(n)
        for fid in elem.facet_ids:
            facet = mesh.facets[fid]
            T = _trace_matrix(mesh, element_id, facet, degree)
            lhs_pow += quad.abs_power_segment_batch(C @ T.T, facet.length, int(lhs_q))
        lhs_infos = [EXACT_INFO] * n
    else:
        pairs = [_boundary_norm_power(v, element_id, lhs_q) for _, v in vs]
        lhs_pow = np.array([p for p, _ in pairs])
        lhs_infos = [i for _, i in pairs]

    if float(s_eff).is_integer() and int(s_eff) % 2 == 0:
        w, B, _ = _element_rule_matrix(mesh, element_id, degree, degree * int(s_eff))
        vol_pow = w @ (B @ C.T) ** int(s_eff)
        vol_infos = [EXACT_INFO] * n
    elif float(s_eff).is_integer() and degree >= 1:
        vol_pow, vol_infos = _batch_abs_power_odd(mesh, element_id, C, degree, int(s_eff), quad_rtol)
    elif degree == 0:
        vol_pow = np.abs(C[:, 0]) ** s_eff * elem.area
        vol_infos = [EXACT_INFO] * n
    else:
        pairs = [_element_abs_power(v, element_id, s_eff, quad_rtol) for _, v in vs]
        vol_pow = np.array([p for p, _ in pairs])
        vol_infos = [i for _, i in pairs]

    if degree == 0:
        grad_pow = np.zeros(n)
        grad_infos = [EXACT_INFO] * n
    elif float(r).is_integer() and int(r) % 2 == 0:
        from .brokenfn import gradient_operators

        dx, dy = gradient_operators(degree)
        h = elem.diameter
        Gx = (C @ dx.T) / h
        Gy = (C @ dy.T) / h
        w, B, _ = _element_rule_matrix(mesh, element_id, degree - 1, 2 * (degree - 1) * (int(r) // 2))
        grad_pow = w @ ((B @ Gx.T) ** 2 + (B @ Gy.T) ** 2) ** (int(r) // 2)
        grad_infos = [EXACT_INFO] * n
    else:
        grad_pow, grad_infos = _batch_gradient_power(mesh, element_id, C, degree, r, quad_rtol)

    out = []
    for i, (sid, _) in enumerate(vs):
        lhs, rhs, ratio, slack, info = _assemble_ratio(
            lhs_q, s_eff, r, h_vol, h_grad, ctr,
            float(lhs_pow[i]), float(vol_pow[i]), float(grad_pow[i]),
            lhs_infos[i], vol_infos[i], grad_infos[i],
        )
        out.append(
            TraceRatio(
                element=element_id,
                sample_id=sid,
                variant=variant,
                q=q,
                s=float(s_eff),
                lhs=lhs,
                rhs=rhs,
                ratio=ratio,
                slack=slack,
                flags={"cap_hit": info.cap_hit, "exact": info.exact, "abs_error": info.abs_error},
            )
        )
    return out


def trace_campaign(
    mesh: Mesh,
    variant: str = "standard",
    degrees: Sequence[int] = (2,),
    samples_per_degree: int = 10,
    seed: int = 0,
    qs_grid: Sequence[tuple[float, float]] = ((2.0, 2.0),),
    sampler: str = "iid-coefficients",
    quad_rtol: float = quad.ADAPTIVE_RTOL,
):
    """Deterministic sweep of verify_trace over samples, elements, and (q, s).

    A genuine violation (ratio above 1 + slack) is recorded in the summary as
    a counterexample descriptor rather than raised, since it would falsify
    the implementation, not the inequality.
    """
    by_degree: dict[int, list[tuple[int, BrokenFunction]]] = {}
    sid = 0
    for degree in degrees:
        for k in range(samples_per_degree):
            v = sample(mesh, sampler, degree, seed=hash((seed, degree, k)) % 2**32)
            by_degree.setdefault(degree, []).append((sid, v))
            sid += 1
    records: list[TraceRatio] = []
    for (q, s) in qs_grid:
        for elem in mesh.elements:
            for vs in by_degree.values():
                records.extend(
                    _verify_trace_element_batch(mesh, elem.index, vs, variant, q, s, quad_rtol)
                )
    records.sort(key=lambda rec: (rec.q, rec.s, rec.sample_id, rec.element))
    return records, summarize(records)
