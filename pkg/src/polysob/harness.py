"""End-to-end verification of the broken Sobolev-Poincare inequalities.

Campaigns evaluate, per sample, the left-hand-side Lebesgue norm, the broken
gradient term, and the jump term of the selected inequality (plain or
facet-averaged, with or without facet length-scale weights), then report the
empirical two-constant fit and the worst-case single constant over the
family.  The Poincare-Steklov and Sobolev embedding constants, which enter
the assembled bounds but have no closed-form sharp values, are estimated
from below by Rayleigh-quotient maximization over rich polynomial spaces.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import quadrature as quad
from .brokenfn import (
    BrokenFunction,
    FacetFunction,
    _basis_values,
    _element_rule_matrix,
    _facet_abs_power,
    broken_seminorm,
    jump,
    lq_norm,
    monomial_exponents,
    sample,
)
from .exponents import ExponentSet, derive_exponents
from .geometry import Mesh, facet_length_scale, generate_mesh, load_mesh
from .quadrature import EXACT_INFO, merge_info

THEOREMS = ("T1.6", "T1.7", "C1.9", "C1.10")


@dataclass
class CampaignConfig:
    """Inputs of one verification campaign (see verify_sp)."""

    mesh: Mesh | str
    theorem: str = "T1.7"
    p: float = 2.0
    sampler: str = "iid-coefficients"
    degree: int = 3
    count: int = 100
    seed: int = 0
    eps: float = 0.25
    htilde_mode: str = "element-min"
    constants: Optional[dict] = None       # assembled C pairs {"c_grad":, "c_jump":}
    out_csv: Optional[str] = None
    out_json: Optional[str] = None

    def resolve_mesh(self) -> Mesh:
        if isinstance(self.mesh, Mesh):
            return self.mesh
        return resolve_mesh_spec(self.mesh)

    def validate(self) -> ExponentSet:
        if self.theorem not in THEOREMS:
            raise ValueError(f"unknown theorem id {self.theorem!r}")
        exps = derive_exponents(self.p, 2)
        if self.theorem in ("T1.6", "C1.9") and not (self.p < exps.d):
            raise ValueError("requires p < d")
        return exps


def resolve_mesh_spec(spec: str) -> Mesh:
    """Mesh from a file path or a generator descriptor like
    "structured-quads:4", "fan-polygon:6", "agglomerated:7:4",
    "split-facet:3:4", optionally suffixed "+left-dirichlet"."""
    label_rule = "all-dirichlet"
    if "+" in spec:
        spec, label_rule = spec.split("+", 1)
    parts = spec.split(":")
    kind = parts[0]
    if kind in ("structured-quads", "structured-triangles"):
        return generate_mesh(kind, resolution=int(parts[1]), label_rule=label_rule)
    if kind == "fan-polygon":
        return generate_mesh(kind, sides=int(parts[1]), label_rule=label_rule)
    if kind == "agglomerated":
        res = int(parts[2]) if len(parts) > 2 else 4
        return generate_mesh(kind, seed=int(parts[1]), resolution=res, label_rule=label_rule)
    if kind == "split-facet":
        res = int(parts[2]) if len(parts) > 2 else 4
        return generate_mesh(kind, splits=int(parts[1]), resolution=res, label_rule=label_rule)
    return load_mesh(spec)


@dataclass
class SPRecord:
    sample_id: int
    lhs: float
    grad_term: float
    jump_term: float
    ratio: float                  # lhs / (grad + jump), the single-scalar view
    flags: dict = field(default_factory=dict)


def _jump_term(
    v: BrokenFunction,
    exps: ExponentSet,
    theorem: str,
    htilde: dict[int, float],
):
    """Jump contribution of the selected inequality; sums run over interior
    and Dirichlet facets only."""
    p = exps.p
    mesh = v.mesh
    total, info = 0.0, EXACT_INFO
    for f in mesh.jump_facets:
        g = jump(v, f)
        if theorem == "T1.6":
            val, inf_i = _facet_abs_power(g.coeffs, f.length, exps.p_sharp)
            contrib = val ** (p / exps.p_sharp)
        elif theorem == "T1.7":
            val, inf_i = _facet_abs_power(g.coeffs, f.length, p)
            contrib = htilde[f.index] ** (1.0 - p) * val
        elif theorem == "C1.9":
            c = g.average()
            contrib = (abs(c) * f.length ** (1.0 / exps.p_sharp)) ** p
            inf_i = EXACT_INFO
        elif theorem == "C1.10":
            c = g.average()
            contrib = htilde[f.index] ** (1.0 - p) * abs(c) ** p * f.length
            inf_i = EXACT_INFO
        else:
            raise ValueError(theorem)
        total += contrib
        info = merge_info(info, inf_i)
    return total ** (1.0 / p), info


def nnls_two_constants(lhs: np.ndarray, grad: np.ndarray, jmp: np.ndarray):
    """Nonnegative least-squares fit lhs ~ c_grad * grad + c_jump * jump."""
    from scipy.optimize import nnls

    A = np.column_stack([grad, jmp])
    coef, _ = nnls(A, lhs)
    return float(coef[0]), float(coef[1])


def verify_sp(config: CampaignConfig):
    """Run one Sobolev-Poincare campaign; returns (records, summary dict).

    The summary carries the empirical nonnegative two-constant fit, the
    worst single-scalar constant max lhs / (grad + jump), and, when
    assembled constants are configured, the fraction of samples satisfying
    lhs <= c_grad * grad + c_jump * jump.
    """
    exps = config.validate()
    mesh = config.resolve_mesh()
    if not mesh.dirichlet_facets and not mesh.interior_facets:
        raise ValueError("mesh has neither interior nor Dirichlet facets: jump terms are empty")
    if not mesh.dirichlet_facets:
        raise ValueError("the inequalities assume a Dirichlet part of positive measure")
    htilde = facet_length_scale(mesh, config.htilde_mode)
    lhs_exp = exps.p_star if config.theorem in ("T1.6", "C1.9") else exps.p_ostar

    records: list[SPRecord] = []
    for k in range(config.count):
        v = sample(
            mesh,
            config.sampler,
            config.degree,
            seed=hash((config.seed, k)) % 2**32,
            eps=config.eps,
        )
        lhs, lhs_info = lq_norm(v, lhs_exp, with_info=True)
        grad, grad_info = broken_seminorm(v, exps.p, with_info=True)
        jmp, jmp_info = _jump_term(v, exps, config.theorem, htilde)
        denom = grad + jmp
        ratio = lhs / denom if denom > 0 else (0.0 if lhs == 0.0 else math.inf)
        info = merge_info(lhs_info, merge_info(grad_info, jmp_info))
        records.append(
            SPRecord(
                sample_id=k,
                lhs=lhs,
                grad_term=grad,
                jump_term=jmp,
                ratio=ratio,
                flags={"exact": info.exact, "cap_hit": info.cap_hit, "abs_error": info.abs_error},
            )
        )

    lhs_a = np.array([r.lhs for r in records])
    grad_a = np.array([r.grad_term for r in records])
    jmp_a = np.array([r.jump_term for r in records])
    c_grad, c_jump = nnls_two_constants(lhs_a, grad_a, jmp_a)
    finite = (grad_a + jmp_a) > 0
    worst = float((lhs_a[finite] / (grad_a + jmp_a)[finite]).max()) if finite.any() else 0.0
    summary = {
        "theorem": config.theorem,
        "p": config.p,
        "n_samples": len(records),
        "empirical_c_grad": c_grad,
        "empirical_c_jump": c_jump,
        "empirical_worst_constant": worst,
        "any_flags": any(not r.flags["exact"] for r in records),
    }
    if config.constants is not None:
        cg, cj = config.constants["c_grad"], config.constants["c_jump"]
        ok = lhs_a <= cg * grad_a + cj * jmp_a + 1e-12
        summary["assembled_fraction_satisfied"] = float(ok.mean())
    return records, summary


def refinement_study(config: CampaignConfig, mesh_specs: Sequence[str]):
    """verify_sp across a mesh family with matched samplers.

    Needs at least 3 family members; reports the per-level empirical
    worst-case constants and their max/min ratio across levels.
    """
    if len(mesh_specs) < 3:
        raise ValueError("need >= 3 resolutions")
    levels = []
    for spec in mesh_specs:
        cfg = replace(config, mesh=spec)
        _, summary = verify_sp(cfg)
        levels.append({"mesh": spec, **summary})
    worsts = [lv["empirical_worst_constant"] for lv in levels]
    return {
        "levels": levels,
        "max_over_min": max(worsts) / min(worsts) if min(worsts) > 0 else math.inf,
    }


# ---------------------------------------------------------------------------
# auxiliary-constant estimation
# ---------------------------------------------------------------------------

def _global_poly_matrices(mesh: Mesh, degree: int, h_x: float, center: np.ndarray):
    """Mass, stiffness, and mean vector of global scaled monomials on the mesh."""
    exps = monomial_exponents(degree)
    nb = len(exps)
    rule = quad.triangle_rule(2 * degree + 2)
    M = np.zeros((nb, nb))
    K = np.zeros((nb, nb))
    mean = np.zeros(nb)
    pts_all, w_all = [], []
    for elem in mesh.elements:
        for sub in elem.sub_triangulation:
            pts, w = quad.map_to_triangle(rule, sub.vertices)
            pts_all.append(pts)
            w_all.append(w)
    pts = np.vstack(pts_all)
    w = np.concatenate(w_all)
    xi = (pts[:, 0] - center[0]) / h_x
    eta = (pts[:, 1] - center[1]) / h_x
    B = np.column_stack([xi**a * eta**b for (a, b) in exps])
    Gx = np.column_stack(
        [a * xi ** max(a - 1, 0) * eta**b / h_x for (a, b) in exps]
    )
    Gy = np.column_stack(
        [b * xi**a * eta ** max(b - 1, 0) / h_x for (a, b) in exps]
    )
    M = (B * w[:, None]).T @ B
    K = (Gx * w[:, None]).T @ Gx + (Gy * w[:, None]).T @ Gy
    mean = w @ B
    return M, K, mean, (B, Gx, Gy, w)


def _grid_norm(vals: np.ndarray, w: np.ndarray, p: float) -> float:
    return float((w @ np.abs(vals) ** p) ** (1.0 / p))


def estimate_aux_constants(
    mesh: Mesh,
    p: float = 2.0,
    degree: int = 4,
    q: Optional[float] = None,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-8,
) -> dict:
    """Lower-bound estimates of the Poincare-Steklov and Sobolev embedding
    constants on the meshed domain.

    C_PS maximizes |v|_Lp / (h |grad v|_Lp) over zero-mean polynomials of the
    given degree (generalized eigensolve at p = 2, projected gradient ascent
    on a fixed quadrature grid otherwise); C_Sob maximizes the embedding
    quotient |v|_Lq / (h^{d/q - d/p + 1} ||v||_{W^{1,p}}) with the
    h-weighted Sobolev norm.  Both are lower bounds of the sharp constants
    and are flagged "estimated".
    """
    from .geometry import domain_geometry

    d = mesh.dimension
    if q is None:
        q = p
    geom = domain_geometry(mesh)
    h_x = geom.h_omega
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    center = 0.5 * (lo + hi)
    M, K, mean, grid = _global_poly_matrices(mesh, degree, h_x, center)
    B, Gx, Gy, w = grid
    nb = M.shape[0]

    out = {"h_x": h_x, "degree": degree, "provenance": "estimated"}

    # --- C_PS over zero-mean polynomials --------------------------------
    # basis change removing the mean: phi_i - mean_i / |Omega|, i >= 1
    area = mean[0]
    Z = np.eye(nb)[:, 1:]
    shift = np.zeros((nb, nb - 1))
    shift[0, :] = -mean[1:] / area
    Z = Z + shift
    Mz = Z.T @ M @ Z
    Kz = Z.T @ K @ Z
    if p == 2.0:
        import scipy.linalg as sla

        vals = sla.eigh(Mz, Kz, eigvals_only=True)
        out["c_ps"] = math.sqrt(max(vals)) / h_x
        out["c_ps_converged"] = True
    else:
        val, conv = _rayleigh_ascent(
            lambda c: _grid_norm(B @ (Z @ c), w, p),
            lambda c: h_x * _grid_norm_vec(Gx @ (Z @ c), Gy @ (Z @ c), w, p),
            nb - 1,
            seed,
            max_iter,
            tol,
        )
        out["c_ps"] = val
        out["c_ps_converged"] = conv

    # --- C_Sob for the (q, 1, p) embedding -------------------------------
    power = d / q - d / p + 1.0

    def sob_norm(c):
        lp = _grid_norm(B @ c, w, p)
        gp = _grid_norm_vec(Gx @ c, Gy @ c, w, p)
        return ((lp / h_x) ** p + gp**p) ** (1.0 / p)

    if p == 2.0 and q == 2.0:
        import scipy.linalg as sla

        N = M / h_x**2 + K
        vals = sla.eigh(M, N, eigvals_only=True)
        out["c_sob"] = math.sqrt(max(vals)) / h_x**power
        out["c_sob_converged"] = True
    else:
        val, conv = _rayleigh_ascent(
            lambda c: _grid_norm(B @ c, w, q),
            lambda c: h_x**power * sob_norm(c),
            nb,
            seed + 1,
            max_iter,
            tol,
        )
        out["c_sob"] = val
        out["c_sob_converged"] = conv
    out["q"] = q
    out["p"] = p
    return out


def _grid_norm_vec(gx: np.ndarray, gy: np.ndarray, w: np.ndarray, p: float) -> float:
    return float((w @ (gx**2 + gy**2) ** (p / 2.0)) ** (1.0 / p))


def _rayleigh_ascent(num, den, dim, seed, max_iter, tol):
    """Maximize num(c)/den(c) over the unit sphere by random-restart hill
    climbing with shrinking steps; reports (best value, converged flag)."""
    rng = np.random.default_rng(seed)
    best = 0.0
    converged = False
    for _ in range(4):
        c = rng.standard_normal(dim)
        c /= np.linalg.norm(c)
        val = num(c) / den(c)
        step = 0.5
        stall = 0
        for _ in range(max_iter):
            trial = c + step * rng.standard_normal(dim)
            trial /= np.linalg.norm(trial)
            tv = num(trial) / den(trial)
            if tv > val:
                gain = tv - val
                c, val = trial, tv
                if gain <= tol * max(val, 1e-30):
                    converged = True
                    break
                stall = 0
            else:
                stall += 1
                if stall >= 12:
                    step *= 0.5
                    stall = 0
                    if step < 1e-6:
                        converged = True
                        break
        best = max(best, val)
    return best, converged
