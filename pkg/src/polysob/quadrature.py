"""Quadrature on segments and triangles, exact and adaptive.

Exact Gauss rules are generated on demand for any polynomial exactness degree
(tensor Gauss-Legendre collapsed onto the reference triangle).  Integrands
that are odd or fractional powers of polynomials go through locally adaptive
subdivision with a Richardson-style stopping test; every adaptive result
carries an error estimate so callers can widen acceptance margins.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

REF_TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

#: default relative tolerance for adaptive integration
ADAPTIVE_RTOL = 1e-9
#: maximum number of subdivision levels before flagging
ADAPTIVE_MAX_LEVELS = 12


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights on a reference cell with a declared exactness degree."""

    nodes: np.ndarray
    weights: np.ndarray
    exactness: int


@dataclass(frozen=True)
class QuadInfo:
    """Error bookkeeping attached to an integral evaluation."""

    exact: bool
    abs_error: float = 0.0
    levels: int = 0
    cap_hit: bool = False

    def rel_error(self, value: float) -> float:
        if self.exact:
            return 0.0
        return self.abs_error / max(abs(value), 1e-300)


EXACT_INFO = QuadInfo(exact=True)


def merge_info(a: QuadInfo, b: QuadInfo) -> QuadInfo:
    if a.exact and b.exact:
        return EXACT_INFO
    return QuadInfo(
        exact=False,
        abs_error=a.abs_error + b.abs_error,
        levels=max(a.levels, b.levels),
        cap_hit=a.cap_hit or b.cap_hit,
    )


@lru_cache(maxsize=None)
def segment_rule(exactness: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1] exact for polynomials of the given degree."""
    n = max(1, exactness // 2 + 1)
    x, w = np.polynomial.legendre.leggauss(n)
    nodes = (x + 1.0) / 2.0
    weights = w / 2.0
    return QuadratureRule(nodes, weights, 2 * n - 1)


@lru_cache(maxsize=None)
def triangle_rule(exactness: int) -> QuadratureRule:
    """Collapsed tensor rule on the reference triangle, weights summing to 1/2.

    The Duffy map (u, v) -> (u, v * (1 - u)) carries a Jacobian (1 - u), so a
    degree-m polynomial needs one extra Gauss point in the u direction.
    """
    m = max(0, exactness)
    nu = m // 2 + 2               # 2*nu - 1 >= m + 1
    nv = m // 2 + 1               # 2*nv - 1 >= m
    xu, wu = np.polynomial.legendre.leggauss(nu)
    xv, wv = np.polynomial.legendre.leggauss(nv)
    u = (xu + 1.0) / 2.0
    v = (xv + 1.0) / 2.0
    wu = wu / 2.0
    wv = wv / 2.0
    U, V = np.meshgrid(u, v, indexing="ij")
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    w = (np.outer(wu * (1.0 - u), wv)).ravel()
    return QuadratureRule(np.column_stack([x, y]), w, m)


def triangle_monomial_integral(a: int, b: int) -> float:
    """Reference-triangle integral of x^a y^b, equal to a! b! / (a+b+2)!."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def map_to_triangle(rule: QuadratureRule, tri: np.ndarray):
    """Push a reference rule to a physical triangle (3, 2); weights scale by 2|T|."""
    v0, v1, v2 = tri
    pts = v0 + np.outer(rule.nodes[:, 0], v1 - v0) + np.outer(rule.nodes[:, 1], v2 - v0)
    area2 = abs((v1[0] - v0[0]) * (v2[1] - v0[1]) - (v1[1] - v0[1]) * (v2[0] - v0[0]))
    return pts, rule.weights * area2


def map_to_segment(rule: QuadratureRule, a: np.ndarray, b: np.ndarray):
    """Push a [0, 1] rule to the physical segment from a to b."""
    pts = a + np.outer(rule.nodes, b - a)
    length = float(np.hypot(*(b - a)))
    return pts, rule.weights * length


def _tri_areas(tris: np.ndarray) -> np.ndarray:
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _split4(tris: np.ndarray) -> np.ndarray:
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    mab = 0.5 * (a + b)
    mbc = 0.5 * (b + c)
    mca = 0.5 * (c + a)
    out = np.empty((tris.shape[0], 4, 3, 2))
    out[:, 0] = np.stack([a, mab, mca], axis=1)
    out[:, 1] = np.stack([mab, b, mbc], axis=1)
    out[:, 2] = np.stack([mca, mbc, c], axis=1)
    out[:, 3] = np.stack([mab, mbc, mca], axis=1)
    return out


def adaptive_triangle_integral(
    fn,
    tris: np.ndarray,
    rel_tol: float = ADAPTIVE_RTOL,
    max_levels: int = ADAPTIVE_MAX_LEVELS,
    base_exactness: int = 8,
):
    """Integrate fn over a union of triangles by locally adaptive 4-splitting.

    fn maps an (n, 2) point array to (n,) values.  Returns (value, QuadInfo);
    the error estimate is the sum of the last Richardson differences of every
    retired or capped triangle.
    """
    rule = triangle_rule(base_exactness)

    def batch(t):
        pts = (
            t[:, 0][:, None, :]
            + rule.nodes[None, :, 0, None] * (t[:, 1] - t[:, 0])[:, None, :]
            + rule.nodes[None, :, 1, None] * (t[:, 2] - t[:, 0])[:, None, :]
        )
        vals = np.asarray(fn(pts.reshape(-1, 2))).reshape(t.shape[0], -1)
        return (vals @ rule.weights) * (2.0 * _tri_areas(t))

    tris = np.asarray(tris, dtype=float).reshape(-1, 3, 2)
    total_area = float(_tri_areas(tris).sum())
    parents = tris
    parent_vals = batch(parents)
    # a single Richardson difference can cancel accidentally at integrand
    # kinks; a region only retires when its own and its parent's inherited
    # estimate (geometrically damped) both pass
    inherited = np.full(len(parents), np.inf)
    accepted = 0.0
    accepted_err = 0.0
    levels = 0
    for level in range(1, max_levels + 1):
        levels = level
        children = _split4(parents)
        child_vals = batch(children.reshape(-1, 3, 2)).reshape(-1, 4)
        child_sum = child_vals.sum(axis=1)
        err = np.maximum(np.abs(parent_vals - child_sum), inherited / 4.0)
        est_total = accepted + float(child_sum.sum())
        budget = rel_tol * max(abs(est_total), 1e-300)
        # proportional share plus a per-count floor so slowly decaying small
        # triangles retire once their contribution is globally negligible
        share = budget * _tri_areas(parents) / total_area + budget / (
            4.0 * max_levels * len(parents)
        )
        done = err <= share
        accepted += float(child_sum[done].sum())
        accepted_err += float(err[done].sum())
        if bool(done.all()):
            return accepted, QuadInfo(False, accepted_err, levels, False)
        keep = ~done
        parents = children[keep].reshape(-1, 3, 2)
        parent_vals = child_vals[keep].ravel()
        inherited = np.repeat(err[keep], 4)
    # depth cap: take the finest estimates and carry their parents' errors
    value = accepted + float(parent_vals.sum())
    return value, QuadInfo(False, accepted_err + float(err[~done].sum()), levels, True)


def adaptive_segment_integral(
    fn,
    a: np.ndarray,
    b: np.ndarray,
    rel_tol: float = ADAPTIVE_RTOL,
    max_levels: int = 2 * ADAPTIVE_MAX_LEVELS,
    base_exactness: int = 12,
):
    """1D analogue of adaptive_triangle_integral, by interval bisection.

    fn maps an (n,) array of parameters in [0, 1] to values; the result is the
    integral over the physical segment from a to b.
    """
    rule = segment_rule(base_exactness)
    length = float(np.hypot(*(np.asarray(b) - np.asarray(a))))

    def batch(lo, hi):
        t = lo[:, None] + rule.nodes[None, :] * (hi - lo)[:, None]
        vals = np.asarray(fn(t.ravel())).reshape(lo.shape[0], -1)
        return (vals @ rule.weights) * (hi - lo) * length

    lo = np.array([0.0])
    hi = np.array([1.0])
    parent_vals = batch(lo, hi)
    inherited = np.full(1, np.inf)
    accepted = 0.0
    accepted_err = 0.0
    levels = 0
    for level in range(1, max_levels + 1):
        levels = level
        mid = 0.5 * (lo + hi)
        lo2 = np.concatenate([lo, mid])
        hi2 = np.concatenate([mid, hi])
        child_vals = batch(lo2, hi2)
        child_sum = child_vals[: lo.size] + child_vals[lo.size:]
        err = np.maximum(np.abs(parent_vals - child_sum), inherited / 4.0)
        est_total = accepted + float(child_sum.sum())
        budget = rel_tol * max(abs(est_total), 1e-300)
        share = budget * (hi - lo) + budget / (4.0 * max_levels * lo.size)
        done = err <= share
        accepted += float(child_sum[done].sum())
        accepted_err += float(err[done].sum())
        if bool(done.all()):
            return accepted, QuadInfo(False, accepted_err, levels, False)
        keep = ~done
        lo = np.concatenate([lo[keep], mid[keep]])
        hi = np.concatenate([mid[keep], hi[keep]])
        parent_vals = np.concatenate([child_vals[: done.size][keep], child_vals[done.size:][keep]])
        inherited = np.concatenate([err[keep], err[keep]])
    value = accepted + float(parent_vals.sum())
    return value, QuadInfo(False, accepted_err + float(err[~done].sum()), levels, True)


def _companion_roots_batch(coeffs: np.ndarray) -> np.ndarray:
    """Roots of a batch of degree-k polynomials (N, k+1), ascending coeffs.

    Rows whose leading coefficient (nearly) vanishes are regularized; the
    spurious far-away root this introduces is harmless because callers only
    keep roots inside a bounded interval.
    """
    coeffs = np.atleast_2d(coeffs)
    n, kp1 = coeffs.shape
    k = kp1 - 1
    if k == 0:
        return np.empty((n, 0), dtype=complex)
    scale = np.max(np.abs(coeffs), axis=1)
    lead = coeffs[:, k].copy()
    bad = np.abs(lead) <= 1e-13 * np.maximum(scale, 1e-300)
    lead[bad] = np.maximum(scale[bad], 1e-300)
    comp = np.zeros((n, k, k))
    idx = np.arange(k - 1)
    comp[:, idx + 1, idx] = 1.0
    comp[:, :, k - 1] = -coeffs[:, :k] / lead[:, None]
    return np.linalg.eigvals(comp)


def _monic_batch(coeffs: np.ndarray):
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    k = coeffs.shape[1] - 1
    scale = np.max(np.abs(coeffs), axis=1)
    lead = coeffs[:, k].copy()
    bad = np.abs(lead) <= 1e-13 * np.maximum(scale, 1e-300)
    lead[bad] = np.maximum(scale[bad], 1e-300)
    return coeffs[:, :k] / lead[:, None]


def _cubic_roots_monic(c: np.ndarray) -> np.ndarray:
    """Roots of t^3 + a2 t^2 + a1 t + a0 for rows (a0, a1, a2)."""
    a0, a1, a2 = c[:, 0], c[:, 1], c[:, 2]
    p = a1 - a2**2 / 3.0
    qq = 2.0 * a2**3 / 27.0 - a2 * a1 / 3.0 + a0
    disc = np.sqrt((qq / 2.0) ** 2 + (p / 3.0) ** 3 + 0j)
    u3 = -qq / 2.0 + disc
    alt = -qq / 2.0 - disc
    use_alt = np.abs(u3) < np.abs(alt)
    u3 = np.where(use_alt, alt, u3)
    u = u3 ** (1.0 / 3.0)
    tiny = np.abs(u) <= 1e-300
    u = np.where(tiny, 1e-300, u)
    w = np.exp(2j * np.pi / 3.0)
    roots = np.stack([u * w**j - p / (3.0 * u * w**j) for j in range(3)], axis=1)
    roots = np.where(tiny[:, None], 0.0, roots)
    return roots - a2[:, None] / 3.0


def _quartic_roots_monic(c: np.ndarray) -> np.ndarray:
    """Roots of t^4 + a3 t^3 + a2 t^2 + a1 t + a0 (Ferrari factorization)."""
    a0, a1, a2, a3 = c[:, 0], c[:, 1], c[:, 2], c[:, 3]
    # depressed quartic y^4 + p y^2 + q y + r, t = y - a3/4
    p = a2 - 3.0 * a3**2 / 8.0
    q = a1 - a3 * a2 / 2.0 + a3**3 / 8.0
    r = a0 - a3 * a1 / 4.0 + a3**2 * a2 / 16.0 - 3.0 * a3**4 / 256.0
    # resolvent z^3 + 2p z^2 + (p^2 - 4r) z - q^2 = 0; alpha^2 = z
    res = np.stack([-(q**2), p**2 - 4.0 * r, 2.0 * p], axis=1)
    z = _cubic_roots_monic(res)
    z0 = z[np.arange(len(z)), np.argmax(np.abs(z), axis=1)]
    alpha = np.sqrt(z0)
    ok = np.abs(alpha) > 1e-9 * (1.0 + np.abs(p))
    alpha_safe = np.where(ok, alpha, 1.0)
    beta = (p + z0 - q / alpha_safe) / 2.0
    gamma = (p + z0 + q / alpha_safe) / 2.0
    d1 = np.sqrt(alpha_safe**2 - 4.0 * beta)
    d2 = np.sqrt(alpha_safe**2 - 4.0 * gamma)
    y = np.stack(
        [
            (-alpha_safe + d1) / 2.0,
            (-alpha_safe - d1) / 2.0,
            (alpha_safe + d2) / 2.0,
            (alpha_safe - d2) / 2.0,
        ],
        axis=1,
    )
    # biquadratic fallback when the factorization degenerates (q ~ 0)
    sq = np.sqrt(p**2 - 4.0 * r + 0j)
    y1 = np.sqrt((-p + sq) / 2.0)
    y2 = np.sqrt((-p - sq) / 2.0)
    ybi = np.stack([y1, -y1, y2, -y2], axis=1)
    y = np.where(ok[:, None], y, ybi)
    return y - a3[:, None] / 4.0


def poly_roots_batch(coeffs: np.ndarray, newton_steps: int = 1) -> np.ndarray:
    """All complex roots of a batch of real polynomials (N, k+1), ascending.

    Closed forms handle degrees up to 4 (the common case in this package);
    higher degrees fall back to batched companion eigenvalues.  A few Newton
    polish steps on the original coefficients restore full accuracy at
    simple roots; clustered roots stay approximate, which is harmless for
    sign-splitting because the integrand nearly vanishes there.
    """
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    k = coeffs.shape[1] - 1
    if k <= 0:
        return np.empty((coeffs.shape[0], 0), dtype=complex)
    if k > 4:
        return _companion_roots_batch(coeffs)
    monic = _monic_batch(coeffs)
    if k == 1:
        return (-monic[:, :1]).astype(complex)
    if k == 2:
        b, a0 = monic[:, 1], monic[:, 0]
        disc = np.sqrt(b**2 - 4.0 * a0 + 0j)
        roots = np.stack([(-b + disc) / 2.0, (-b - disc) / 2.0], axis=1)
    elif k == 3:
        roots = _cubic_roots_monic(monic)
    else:
        roots = _quartic_roots_monic(monic)
    # Newton polish against the original polynomial
    full = np.concatenate([monic, np.ones((monic.shape[0], 1))], axis=1)
    dcoef = full[:, 1:] * np.arange(1, k + 1)
    for _ in range(newton_steps):
        pv = np.zeros_like(roots)
        dv = np.zeros_like(roots)
        for m in range(k, -1, -1):
            pv = pv * roots + full[:, m, None]
        for m in range(k - 1, -1, -1):
            dv = dv * roots + dcoef[:, m, None]
        bad = np.abs(dv) <= 1e-300
        dv = np.where(bad, 1.0, dv)
        roots = roots - np.where(bad, 0.0, pv / dv)
    return roots


def abs_power_segment_batch(
    coeffs: np.ndarray, length: float, q: int, u_weight: int = 0
) -> np.ndarray:
    """Exact integrals of t^u_weight |p(t)|^q over [0, length] for a batch of
    polynomials p (N, k+1, ascending coefficients in t), integer q >= 1.

    Each row is split at the real roots of p inside (0, length); there the
    integrand has constant sign, so Gauss rules integrate t^u_weight p^q
    exactly and the absolute value moves outside the integral.  Missing pad
    breakpoints are set to `length`, producing zero-width intervals that
    contribute nothing.
    """
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    n, kp1 = coeffs.shape
    k = kp1 - 1
    rule = segment_rule(k * q + u_weight)
    gn, gw = rule.nodes, rule.weights
    roots = poly_roots_batch(coeffs)
    if roots.shape[1]:
        re, im = roots.real, roots.imag
        ok = (np.abs(im) <= 1e-8 * (1.0 + np.abs(re))) & (re > 1e-13 * length) & (
            re < length * (1.0 - 1e-13)
        )
        breaks = np.where(ok, re, length)
        breaks.sort(axis=1)
    else:
        breaks = np.empty((n, 0))
    edges = np.concatenate(
        [np.zeros((n, 1)), breaks, np.full((n, 1), length)], axis=1
    )
    lo = edges[:, :-1, None]
    width = (edges[:, 1:] - edges[:, :-1])[:, :, None]
    t = lo + width * gn[None, None, :]
    val = np.empty_like(t)
    val[:] = coeffs[:, None, k, None]
    for m in range(k - 1, -1, -1):
        val *= t
        val += coeffs[:, None, m, None]
    if q == 1:
        integrand = val
    elif q == 2:
        integrand = val * val
    elif q == 3:
        integrand = val * val * val
    else:
        integrand = val**q
    if u_weight:
        integrand = integrand * t**u_weight
    per_interval = (integrand @ gw) * width[:, :, 0]
    return np.abs(per_interval).sum(axis=1)


def _real_roots_unit(coeffs: np.ndarray, upper: float) -> np.ndarray:
    """Real roots of a 1D polynomial (ascending coeffs) inside (0, upper)."""
    c = np.asarray(coeffs, dtype=float)
    scale = np.max(np.abs(c)) if c.size else 0.0
    if scale == 0.0:
        return np.empty(0)
    c = np.trim_zeros(c, "b")
    if c.size <= 1:
        return np.empty(0)
    roots = np.polynomial.polynomial.polyroots(c)
    real = roots[np.abs(roots.imag) <= 1e-9 * max(1.0, np.abs(roots).max())].real
    eps = 1e-13 * max(1.0, upper)
    inside = real[(real > eps) & (real < upper - eps)]
    return np.unique(np.round(inside, 14))


def abs_power_segment_integral(coeffs: np.ndarray, length: float, q: int) -> float:
    """Exact integral of |v(s)|^q over [0, length] for integer q >= 1.

    v is given by ascending coefficients in the arclength parameter.  The
    segment is split at the real roots of v; on each sign-constant piece
    |v|^q integrates to |integral of v^q|, which Gauss quadrature computes
    exactly.
    """
    if q < 1 or q != int(q):
        raise ValueError("integer q >= 1 required")
    return float(abs_power_segment_batch(np.asarray(coeffs, dtype=float), length, int(q))[0])
