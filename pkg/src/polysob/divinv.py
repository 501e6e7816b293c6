"""Discrete divergence right-inverses and inf-sup identities at p = 2.

A Taylor-Hood P2/P1 pair (P2/P0 selectable) discretizes the minimal-energy
right-inverse of the divergence: minimize the squared gradient seminorm
subject to the weak divergence constraint.  The pressure Schur complement
yields the discrete inf-sup constant, whose reciprocal must match the
stability constant obtained independently by power iteration on the solve
map.  Mirror and compensated extensions realize the mixed-boundary-condition
construction, and a partition-of-unity assembly covers domains given only as
simplicial tessellations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import quadrature as quad

NODE_TOL = 1e-9


# ---------------------------------------------------------------------------
# triangulations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TriMesh:
    nodes: np.ndarray            # (n, 2)
    tris: np.ndarray             # (m, 3) CCW

    def areas(self) -> np.ndarray:
        p = self.nodes[self.tris]
        return 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
        )

    def edges(self):
        """(unique sorted edges (e, 2), per-tri edge ids (m, 3) in local order
        (0,1), (1,2), (2,0))."""
        raw = np.concatenate(
            [self.tris[:, [0, 1]], self.tris[:, [1, 2]], self.tris[:, [2, 0]]]
        )
        raw.sort(axis=1)
        uniq, inv = np.unique(raw, axis=0, return_inverse=True)
        return uniq, inv.reshape(3, -1).T

    def boundary_edge_mask(self) -> np.ndarray:
        uniq, tri_edges = self.edges()
        counts = np.bincount(tri_edges.ravel(), minlength=len(uniq))
        return counts == 1

    def boundary_node_mask(self) -> np.ndarray:
        uniq, _ = self.edges()
        mask = np.zeros(len(self.nodes), dtype=bool)
        bnd = uniq[self.boundary_edge_mask()]
        mask[bnd.ravel()] = True
        return mask

    def total_area(self) -> float:
        return float(self.areas().sum())


def _make_trimesh(nodes, tris) -> TriMesh:
    tm = TriMesh(np.asarray(nodes, dtype=float), np.asarray(tris, dtype=int))
    if (tm.areas() <= 0).any():
        raise ValueError("triangulation contains non-CCW or degenerate triangles")
    return tm


def unit_square_tri(n: int) -> TriMesh:
    return rect_tri(n, n, 0.0, 0.0, 1.0 / n)


def rect_tri(nx: int, ny: int, x0: float, y0: float, h: float) -> TriMesh:
    nodes = [[x0 + i * h, y0 + j * h] for j in range(ny + 1) for i in range(nx + 1)]
    vid = lambda i, j: j * (nx + 1) + i
    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [[a, b, c], [a, c, d]]
            else:
                tris += [[a, b, d], [b, c, d]]
    return _fix_diagonals(_make_trimesh(nodes, tris))


def l_shape_tri(n: int) -> TriMesh:
    """[0,2]^2 minus [1,2]^2 with n cells per unit length."""
    h = 1.0 / n
    nodes, index = [], {}

    def nid(i, j):
        if (i, j) not in index:
            index[(i, j)] = len(nodes)
            nodes.append([i * h, j * h])
        return index[(i, j)]

    tris = []
    for j in range(2 * n):
        for i in range(2 * n):
            if i >= n and j >= n:
                continue
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [[a, b, c], [a, c, d]]
            else:
                tris += [[a, b, d], [b, c, d]]
    return _fix_diagonals(_make_trimesh(nodes, tris))


def _fix_diagonals(tm: TriMesh) -> TriMesh:
    """Flip cell diagonals so every triangle touches an interior vertex
    (needed by the partition-of-unity construction on coarse grids)."""
    interior = ~tm.boundary_node_mask()
    tris = tm.tris.copy()
    changed = False
    m = len(tris)
    for t in range(0, m - 1, 2):
        t1, t2 = tris[t], tris[t + 1]
        quad_nodes = set(t1) | set(t2)
        if len(quad_nodes) != 4:
            continue
        if interior[t1].any() and interior[t2].any():
            continue
        shared = sorted(set(t1) & set(t2))
        others = sorted(quad_nodes - set(shared))
        alt1 = _ccw([others[0], others[1], shared[0]], tm.nodes)
        alt2 = _ccw([others[0], others[1], shared[1]], tm.nodes)
        if alt1 is None or alt2 is None:
            continue
        if interior[alt1].any() and interior[alt2].any():
            tris[t], tris[t + 1] = alt1, alt2
            changed = True
    return TriMesh(tm.nodes, tris) if changed else tm


def _ccw(tri, nodes):
    p = nodes[tri]
    a = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
    if a == 0:
        return None
    return np.asarray(tri if a > 0 else [tri[0], tri[2], tri[1]], dtype=int)


def refine_uniform(tm: TriMesh) -> TriMesh:
    uniq, tri_edges = tm.edges()
    mids = 0.5 * (tm.nodes[uniq[:, 0]] + tm.nodes[uniq[:, 1]])
    nodes = np.vstack([tm.nodes, mids])
    off = len(tm.nodes)
    t = tm.tris
    m01, m12, m20 = (off + tri_edges[:, k] for k in range(3))
    tris = np.concatenate(
        [
            np.stack([t[:, 0], m01, m20], axis=1),
            np.stack([m01, t[:, 1], m12], axis=1),
            np.stack([m20, m12, t[:, 2]], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ]
    )
    return TriMesh(nodes, tris)


def scale_trimesh(tm: TriMesh, factor: float, offset=(0.0, 0.0)) -> TriMesh:
    return TriMesh(tm.nodes * factor + np.asarray(offset), tm.tris)


# ---------------------------------------------------------------------------
# P2 / (P1 or P0) Stokes discretization
# ---------------------------------------------------------------------------

_REF_GRADS = {
    # gradients of barycentric coordinates on the reference triangle
    "lam": np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
}


def _p2_shape(uv: np.ndarray):
    """(values (n, 6), reference gradients (n, 6, 2)) of the P2 basis."""
    u, v = uv[:, 0], uv[:, 1]
    lam = np.stack([1.0 - u - v, u, v], axis=1)
    glam = _REF_GRADS["lam"]
    vals = np.empty((len(uv), 6))
    grads = np.empty((len(uv), 6, 2))
    for i in range(3):
        vals[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grads[:, i] = (4.0 * lam[:, i] - 1.0)[:, None] * glam[i]
    pairs = [(0, 1), (1, 2), (2, 0)]
    for k, (i, j) in enumerate(pairs):
        vals[:, 3 + k] = 4.0 * lam[:, i] * lam[:, j]
        grads[:, 3 + k] = 4.0 * (lam[:, i, None] * glam[j] + lam[:, j, None] * glam[i])
    return vals, grads


@dataclass
class StokesDiscretization:
    """Assembled matrices of the velocity/pressure pair on a triangulation.

    Velocity: continuous P2 vector fields, zero on the constrained boundary
    subset.  Pressure: continuous P1 (zero-mean enforced weakly) or
    discontinuous P0.  A is the gradient-energy (vector stiffness) matrix,
    B the weak divergence, M_p the pressure mass.
    """

    tm: TriMesh
    pressure_mode: str
    constrained: np.ndarray          # (n_scalar,) bool, per scalar P2 node
    n_scalar: int
    edge_nodes: np.ndarray           # (n_edges, 2) node pairs, for dof lookup
    K: sp.csr_matrix                 # scalar P2 stiffness (full)
    B: sp.csr_matrix                 # n_p x 2 n_scalar
    M_p: np.ndarray
    mean_vec: np.ndarray             # integrals of the pressure basis
    bc: str
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def free(self) -> np.ndarray:
        mask = ~np.concatenate([self.constrained, self.constrained])
        return np.nonzero(mask)[0]

    def p2_coordinates(self) -> np.ndarray:
        mids = 0.5 * (self.tm.nodes[self.edge_nodes[:, 0]] + self.tm.nodes[self.edge_nodes[:, 1]])
        return np.vstack([self.tm.nodes, mids])


def build_stokes(
    tm: TriMesh,
    bc: str | tuple = "full-dirichlet",
    pressure: str = "p1",
    validate: bool = False,
) -> StokesDiscretization:
    """Assemble the pair; bc is "full-dirichlet" or ("gamma-n", predicate)
    with predicate(edge midpoint) -> bool selecting the constrained part."""
    rule = quad.triangle_rule(4)
    vals, gref = _p2_shape(rule.nodes)
    w = rule.weights

    nodes, tris = tm.nodes, tm.tris
    uniq_edges, tri_edges = tm.edges()
    n_nodes, n_edges, n_tris = len(nodes), len(uniq_edges), len(tris)
    n_scalar = n_nodes + n_edges

    p = nodes[tris]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # (m, 2, 2)
    detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    Jinv = np.empty_like(J)
    Jinv[:, 0, 0] = J[:, 1, 1] / detJ
    Jinv[:, 0, 1] = -J[:, 0, 1] / detJ
    Jinv[:, 1, 0] = -J[:, 1, 0] / detJ
    Jinv[:, 1, 1] = J[:, 0, 0] / detJ

    # physical gradients per (tri, quad point, shape fn, component)
    gphys = np.einsum("qik,tkc->tqic", gref, Jinv)
    dofs = np.concatenate([tris, n_nodes + tri_edges], axis=1)  # (m, 6)

    K_loc = np.einsum("q,tqic,tqjc,t->tij", w, gphys, gphys, detJ)
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    K = sp.coo_matrix((K_loc.ravel(), (rows, cols)), shape=(n_scalar, n_scalar)).tocsr()

    if pressure == "p1":
        u, v = rule.nodes[:, 0], rule.nodes[:, 1]
        psi = np.stack([1.0 - u - v, u, v], axis=1)      # (q, 3)
        n_p = n_nodes
        pdofs = tris
        M_loc = np.einsum("q,qi,qj,t->tij", w, psi, psi, detJ)
        Mr = np.repeat(pdofs, 3, axis=1).ravel()
        Mc = np.tile(pdofs, (1, 3)).ravel()
        M_p = sp.coo_matrix((M_loc.ravel(), (Mr, Mc)), shape=(n_p, n_p)).toarray()
        B_loc = np.einsum("q,qi,tqjc,t->tijc", w, psi, gphys, detJ)  # (m,3,6,2)
        br = np.repeat(pdofs, 6, axis=1).ravel()
        bc_x = np.tile(dofs, (1, 3)).ravel()
        B = sp.coo_matrix(
            (B_loc[..., 0].reshape(n_tris, -1).ravel(), (br, bc_x)),
            shape=(n_p, 2 * n_scalar),
        ) + sp.coo_matrix(
            (B_loc[..., 1].reshape(n_tris, -1).ravel(), (br, bc_x + n_scalar)),
            shape=(n_p, 2 * n_scalar),
        )
        B = B.tocsr()
        mean_vec = M_p @ np.ones(n_p)
    elif pressure == "p0":
        n_p = n_tris
        areas = tm.areas()
        M_p = np.diag(areas)
        B_loc = np.einsum("q,tqjc,t->tjc", w, gphys, detJ)          # (m,6,2)
        br = np.repeat(np.arange(n_tris), 6)
        B = sp.coo_matrix(
            (B_loc[..., 0].ravel(), (br, dofs.ravel())), shape=(n_p, 2 * n_scalar)
        ) + sp.coo_matrix(
            (B_loc[..., 1].ravel(), (br, dofs.ravel() + n_scalar)),
            shape=(n_p, 2 * n_scalar),
        )
        B = B.tocsr()
        mean_vec = areas.copy()
    else:
        raise ValueError(f"unknown pressure mode {pressure!r}")

    boundary_edges = tm.boundary_edge_mask()
    constrained = np.zeros(n_scalar, dtype=bool)
    if bc == "full-dirichlet":
        constrained[: n_nodes][tm.boundary_node_mask()] = True
        constrained[n_nodes:][boundary_edges] = True
        bc_name = "full-dirichlet"
    else:
        kind, predicate = bc
        if kind != "gamma-n":
            raise ValueError(f"unknown bc {bc!r}")
        mids = 0.5 * (nodes[uniq_edges[:, 0]] + nodes[uniq_edges[:, 1]])
        sel = np.array(
            [boundary_edges[k] and bool(predicate(mids[k])) for k in range(n_edges)]
        )
        constrained[n_nodes:][sel] = True
        for k in np.nonzero(sel)[0]:
            constrained[uniq_edges[k, 0]] = True
            constrained[uniq_edges[k, 1]] = True
        bc_name = "gamma-n"

    disc = StokesDiscretization(
        tm=tm,
        pressure_mode=pressure,
        constrained=constrained,
        n_scalar=n_scalar,
        edge_nodes=uniq_edges,
        K=K,
        B=B,
        M_p=np.asarray(M_p),
        mean_vec=mean_vec,
        bc=bc_name,
    )
    if disc.free.size == 0:
        raise ValueError("singular system: no free velocity dofs")
    if validate:
        _validate_pair(disc)
    return disc


def _validate_pair(disc: StokesDiscretization) -> None:
    S = _schur(disc)
    w = np.linalg.eigvalsh(_scaled(disc, S))
    n_zero = 1 if disc.bc == "full-dirichlet" else 0
    w = np.sort(w)[n_zero:]
    if w.size == 0 or w[0] <= 1e-10:
        raise ValueError("singular system: velocity/pressure pair loses inf-sup stability")


def _scaled(disc, S):
    d = np.sqrt(np.diag(disc.M_p))
    return S / d[:, None] / d[None, :]


def _vector_stiffness(disc: StokesDiscretization) -> sp.csr_matrix:
    return sp.block_diag([disc.K, disc.K]).tocsr()


def _schur(disc: StokesDiscretization) -> np.ndarray:
    """Dense pressure Schur complement B K_ff^{-1} B^T (cached)."""
    if "schur" not in disc._cache:
        free = disc.free
        A = _vector_stiffness(disc)
        K_ff = A[free][:, free].tocsc()
        lu = splu(K_ff)
        Bf = disc.B[:, free]
        X = lu.solve(np.asarray(Bf.todense()).T)
        disc._cache["lu"] = lu
        disc._cache["Bf"] = Bf
        disc._cache["schur"] = np.asarray(Bf @ X)
    return disc._cache["schur"]


def _schur_solver(disc: StokesDiscretization) -> Callable[[np.ndarray], np.ndarray]:
    """Cholesky-based solve of S lambda = g, independent of the eigensolver.

    For full Dirichlet conditions S has the constants in its kernel; a rank-1
    regularization by the pressure mean functional makes it definite while
    agreeing with the pseudoinverse on compatible data.
    """
    if "chol" not in disc._cache:
        S = _schur(disc).copy()
        m = disc.mean_vec
        if disc.bc == "full-dirichlet":
            alpha = np.trace(S) / max(float(m @ m), 1e-300)
            S = S + alpha * np.outer(m, m)
        disc._cache["chol"] = sla.cho_factor(S)
    factor = disc._cache["chol"]
    return lambda g: sla.cho_solve(factor, g)


@dataclass
class RightInverseResult:
    v: np.ndarray
    f: np.ndarray
    seminorm: float
    f_norm: float
    ratio: float
    residual: float
    trace_max: float
    flags: dict = field(default_factory=dict)


def min_energy_right_inverse(disc: StokesDiscretization, f: np.ndarray) -> RightInverseResult:
    """Minimal-seminorm discrete field with weak divergence equal to f.

    f is a pressure-space coefficient vector; full Dirichlet conditions
    require it to have zero mean.
    """
    f = np.asarray(f, dtype=float)
    g = disc.M_p @ f
    f_norm = math.sqrt(max(float(f @ g), 0.0))
    if disc.bc == "full-dirichlet":
        if abs(float(disc.mean_vec @ f)) > 1e-9 * max(f_norm, 1e-30):
            raise ValueError("full Dirichlet conditions need zero-mean f")
    lam = _schur_solver(disc)(g)
    free = disc.free
    lu, Bf = disc._cache["lu"], disc._cache["Bf"]
    u_f = lu.solve(np.asarray((Bf.T @ lam)))
    v = np.zeros(2 * disc.n_scalar)
    v[free] = u_f
    seminorm = math.sqrt(max(float(u_f @ (Bf.T @ lam)), 0.0))
    r = Bf @ u_f - g
    residual = math.sqrt(max(float(r @ np.linalg.solve(disc.M_p, r)), 0.0))
    trace_max = _constrained_trace_max(disc, v)
    ratio = seminorm / f_norm if f_norm > 0 else 0.0
    return RightInverseResult(v, f, seminorm, f_norm, ratio, residual, trace_max)


def _constrained_trace_max(disc: StokesDiscretization, v: np.ndarray) -> float:
    mask = np.concatenate([disc.constrained, disc.constrained])
    if not mask.any():
        return 0.0
    return float(np.abs(v[mask]).max())


def seminorm_of(disc: StokesDiscretization, v: np.ndarray) -> float:
    A = _vector_stiffness(disc)
    return math.sqrt(max(float(v @ (A @ v)), 0.0))


@dataclass
class InfSupResult:
    beta: float
    eigenpressure: np.ndarray
    spectrum: np.ndarray


def infsup_constant(disc: StokesDiscretization) -> InfSupResult:
    """beta_h^2 = smallest (nonzero, for full Dirichlet) eigenvalue of the
    pressure Schur complement against the pressure mass."""
    S = _schur(disc)
    w, vecs = sla.eigh(S, disc.M_p)
    if disc.bc == "full-dirichlet":
        if w[0] > 1e-8 * max(w[-1], 1e-300):
            raise ValueError("singular system: constant pressure mode not found")
        idx = 1
    else:
        idx = 0
    if w[idx] <= 0:
        raise ValueError("singular system: nonpositive inf-sup eigenvalue")
    return InfSupResult(math.sqrt(w[idx]), vecs[:, idx], w[idx:])


def power_iteration_stability(
    disc: StokesDiscretization,
    seed: int = 0,
    tol: float = 1e-10,
    max_iter: int = 500,
    block: int = 6,
) -> tuple[float, int]:
    """sup over f of the right-inverse stability ratio, by power iteration.

    Iterates the solve map f -> S^+ (M f) on a small block with Rayleigh-Ritz
    extraction (the pressure Schur spectrum clusters near its minimum, so a
    single-vector iteration would stall); only repeated right-inverse solves
    enter, never the eigensolver.  Returns (C_BA,h, iterations).
    """
    solve = _schur_solver(disc)
    M = disc.M_p
    rng = np.random.default_rng(seed)
    n_p = M.shape[0]
    block = min(block, max(n_p - 1, 1))
    F = rng.standard_normal((n_p, block))
    total = float(disc.mean_vec.sum())

    def center(X):
        if disc.bc == "full-dirichlet":
            X = X - np.outer(np.ones(n_p), disc.mean_vec @ X) / total
        return X

    def orth_m(X):
        # Gram-Schmidt in the pressure mass inner product
        G = X.T @ (M @ X)
        L = np.linalg.cholesky(G + 1e-14 * np.trace(G) / len(G) * np.eye(len(G)))
        return X @ np.linalg.inv(L).T

    F = orth_m(center(F))
    mu_prev = 0.0
    for n_it in range(1, max_iter + 1):
        G = solve(M @ F)
        H = F.T @ (M @ G)                        # Ritz matrix of the solve map
        w, Y = sla.eigh(0.5 * (H + H.T))
        mu = float(w[-1])
        if n_it > 2 and abs(mu - mu_prev) <= tol * max(mu, 1e-300):
            return math.sqrt(mu), n_it
        mu_prev = mu
        F = orth_m(center(G @ Y[:, ::-1]))
    raise RuntimeError("power iteration stagnation: no convergence within budget")


def identity_check(
    disc: StokesDiscretization,
    seed: int = 0,
    tol: float = 1e-10,
    max_iter: int = 500,
) -> dict:
    """Verify beta_h * C_BA,h = 1 via two independent numerical routes.

    beta_h comes from the dense generalized eigensolver with Cholesky
    reduction; C_BA,h from power iteration on f -> stability ratio of the
    minimal-energy right-inverse.
    """
    beta = infsup_constant(disc).beta
    c_ba, n_it = power_iteration_stability(disc, seed=seed, tol=tol, max_iter=max_iter)
    gap = abs(beta * c_ba - 1.0)
    return {"beta": beta, "c_ba": c_ba, "gap": gap, "iterations": n_it}


# ---------------------------------------------------------------------------
# extensions with mixed boundary conditions
# ---------------------------------------------------------------------------

@dataclass
class ExtensionProblem:
    """Glued-domain construction for the mixed-boundary-condition right-inverse.

    The datum is extended to the glued domain (odd reflection on convex
    domains, a compensating constant on nonconvex ones), solved there with
    full Dirichlet conditions, and restricted back; the restricted field then
    vanishes on the homogeneous part of the boundary.
    """

    original: TriMesh
    extension: TriMesh
    glued: TriMesh
    f: np.ndarray
    f_tilde: np.ndarray
    result: RightInverseResult
    restricted_v: np.ndarray
    gamma_n_trace_max: float
    restricted_residual: float
    f_norm_sq: float
    f_tilde_norm_sq: float
    f_tilde_mean: float
    measure_factor: Optional[float] = None
    checks: dict = field(default_factory=dict)


def _merge_nodes(nodes_a: np.ndarray, nodes_b: np.ndarray, tol: float):
    """Concatenate two node sets, identifying coincident nodes of b with a."""
    nodes = [tuple(x) for x in np.round(nodes_a / tol).astype(np.int64)]
    lookup = {key: i for i, key in enumerate(nodes)}
    merged = list(map(np.asarray, nodes_a))
    map_b = np.empty(len(nodes_b), dtype=int)
    matched = 0
    for k, x in enumerate(nodes_b):
        key = tuple(np.round(x / tol).astype(np.int64))
        if key in lookup:
            map_b[k] = lookup[key]
            matched += 1
        else:
            lookup[key] = len(merged)
            merged.append(np.asarray(x))
            map_b[k] = len(merged) - 1
    return np.asarray(merged), map_b, matched


def mirror_extension(tm: TriMesh, f: np.ndarray, axis: str = "x", value: float = 0.0) -> ExtensionProblem:
    """Reflect a convex domain across the straight Dirichlet side and solve.

    The datum is oddly extended (f on the original side, -f on the mirror),
    which doubles its squared norm exactly; the restricted field vanishes on
    the rest of the boundary because that set stays inside the glued
    Dirichlet boundary.
    """
    nodes = tm.nodes
    scale = float(np.abs(nodes).max() + 1.0)
    tol = NODE_TOL * scale
    hull_fail = _convex_defect(tm) > 1e-9
    if hull_fail:
        raise ValueError("nonconvex: use nonconvex_extension")
    coord = 0 if axis == "x" else 1
    if (nodes[:, coord] < value - tol).any():
        raise ValueError("domain must lie on one side of the reflection line")
    on_line = np.abs(nodes[:, coord] - value) <= tol
    if on_line.sum() < 2:
        raise ValueError("no straight Dirichlet side on the reflection line")

    reflected = nodes.copy()
    reflected[:, coord] = 2.0 * value - reflected[:, coord]
    glued_nodes, map_b, matched = _merge_nodes(nodes, reflected, tol)
    if matched != int(on_line.sum()):
        raise ValueError("reflection produced an overlap")
    tris_b = map_b[tm.tris][:, [0, 2, 1]]           # flip orientation back to CCW
    glued = _make_trimesh(glued_nodes, np.vstack([tm.tris, tris_b]))

    f = np.asarray(f, dtype=float)
    f_tilde = np.concatenate([f, -f])
    areas = tm.areas()
    f_norm_sq = float((f**2 * areas).sum())
    f_tilde_norm_sq = float((f_tilde**2 * glued.areas()).sum())
    f_tilde_mean = float((f_tilde * glued.areas()).sum())

    disc = build_stokes(glued, "full-dirichlet", pressure="p0")
    result = min_energy_right_inverse(disc, f_tilde)

    restricted_v, gamma_n_max = _restrict_to_original(disc, result.v, tm, on_line, coord, value, tol)
    r_tri = _per_triangle_divergence_residual(disc, result.v, f_tilde)
    n_orig = len(tm.tris)
    restricted_residual = math.sqrt(float((r_tri[:n_orig] ** 2 / areas).sum()))

    return ExtensionProblem(
        original=tm,
        extension=TriMesh(glued_nodes, tris_b),
        glued=glued,
        f=f,
        f_tilde=f_tilde,
        result=result,
        restricted_v=restricted_v,
        gamma_n_trace_max=gamma_n_max,
        restricted_residual=restricted_residual,
        f_norm_sq=f_norm_sq,
        f_tilde_norm_sq=f_tilde_norm_sq,
        f_tilde_mean=f_tilde_mean,
        checks={"norm_doubling_defect": abs(f_tilde_norm_sq - 2.0 * f_norm_sq)},
    )


def _convex_defect(tm: TriMesh) -> float:
    from scipy.spatial import ConvexHull

    hull = ConvexHull(tm.nodes)
    return abs(hull.volume - tm.total_area()) / tm.total_area()


def _restrict_to_original(disc, v, tm, on_line, coord, value, tol):
    """Velocity dofs of the glued solve at the original mesh's P2 nodes, plus
    the max nodal trace on the original boundary away from the line."""
    glued_pts = disc.p2_coordinates()
    lookup = {tuple(np.round(x / tol).astype(np.int64)): i for i, x in enumerate(glued_pts)}
    orig_edges, _ = tm.edges()
    mids = 0.5 * (tm.nodes[orig_edges[:, 0]] + tm.nodes[orig_edges[:, 1]])
    orig_pts = np.vstack([tm.nodes, mids])
    idx = np.array([lookup[tuple(np.round(x / tol).astype(np.int64))] for x in orig_pts])
    n_glued = disc.n_scalar
    restricted = np.concatenate([v[idx], v[n_glued + idx]])

    bmask = tm.boundary_edge_mask()
    bnd_edges = orig_edges[bmask]
    gamma_n_nodes = []
    for k, e in zip(np.nonzero(bmask)[0], bnd_edges):
        mid = mids[k]
        if abs(mid[coord] - value) <= tol:
            continue                               # Dirichlet side of the original domain
        gamma_n_nodes += [e[0], e[1], len(tm.nodes) + k]
    if not gamma_n_nodes:
        return restricted, 0.0
    g = np.unique(gamma_n_nodes)
    n_orig = len(orig_pts)
    vals = np.concatenate([restricted[g], restricted[n_orig + g]])
    return restricted, float(np.abs(vals).max())


def _per_triangle_divergence_residual(disc, v, f) -> np.ndarray:
    """Per-triangle weak divergence defect against piecewise constants."""
    if disc.pressure_mode == "p0":
        return np.asarray(disc.B @ v - disc.M_p @ f)
    raise ValueError("per-triangle residual needs the p0 pressure mode")


def nonconvex_extension(tm: TriMesh, tm_ext: TriMesh, f: np.ndarray, p: float = 2.0) -> ExtensionProblem:
    """Fill the domain with a user-supplied extension and compensate the mean.

    The extended datum is f on the original domain and the constant
    -mean(f) |O| / |O_ext| on the extension, so it has zero mean; the
    measure factor (1 + (|O|/|O_ext|)^{p-1})^{1/p} is reported for comparison
    with the mixed-boundary-condition bound.
    """
    scale = float(np.abs(tm.nodes).max() + 1.0)
    tol = NODE_TOL * scale
    area = tm.total_area()
    area_ext = tm_ext.total_area()
    if area_ext <= 0:
        raise ValueError("extension must have positive measure")

    glued_nodes, map_b, matched = _merge_nodes(tm.nodes, tm_ext.nodes, tol)
    if matched < 2:
        raise ValueError("non-conforming glue: extension does not touch the domain")
    glued = _make_trimesh(glued_nodes, np.vstack([tm.tris, map_b[tm_ext.tris]]))
    uniq, tri_edges = glued.edges()
    counts = np.bincount(tri_edges.ravel(), minlength=len(uniq))
    if (counts > 2).any():
        raise ValueError("non-conforming glue: overlapping triangles")
    # interface edges must have become interior
    if glued.boundary_edge_mask().sum() >= tm.boundary_edge_mask().sum() + tm_ext.boundary_edge_mask().sum():
        raise ValueError("non-conforming glue: no interface edges were merged")

    f = np.asarray(f, dtype=float)
    areas = tm.areas()
    f_mean = float((f * areas).sum()) / area
    fill = -f_mean * area / area_ext
    f_tilde = np.concatenate([f, np.full(len(tm_ext.tris), fill)])
    f_norm_sq = float((f**2 * areas).sum())
    f_tilde_norm_sq = float((f_tilde**2 * glued.areas()).sum())
    f_tilde_mean = float((f_tilde * glued.areas()).sum())
    measure_factor = (1.0 + (area / area_ext) ** (p - 1.0)) ** (1.0 / p)

    disc = build_stokes(glued, "full-dirichlet", pressure="p0")
    result = min_energy_right_inverse(disc, f_tilde)

    glued_pts = disc.p2_coordinates()
    lookup = {tuple(np.round(x / tol).astype(np.int64)): i for i, x in enumerate(glued_pts)}
    orig_edges, _ = tm.edges()
    mids = 0.5 * (tm.nodes[orig_edges[:, 0]] + tm.nodes[orig_edges[:, 1]])
    orig_pts = np.vstack([tm.nodes, mids])
    idx = np.array([lookup[tuple(np.round(x / tol).astype(np.int64))] for x in orig_pts])
    restricted = np.concatenate([result.v[idx], result.v[disc.n_scalar + idx]])

    # Gamma_N = part of the original boundary that is still glued-domain boundary
    glued_scalar_bnd = np.concatenate([glued.boundary_node_mask(), glued.boundary_edge_mask()])
    orig_bnd_scalar = np.concatenate([tm.boundary_node_mask(), tm.boundary_edge_mask()])
    still_bnd = [i for i in np.nonzero(orig_bnd_scalar)[0] if glued_scalar_bnd[idx[i]]]
    n_orig = len(orig_pts)
    if still_bnd:
        g = np.asarray(still_bnd)
        gamma_n_max = float(
            np.abs(np.concatenate([restricted[g], restricted[n_orig + g]])).max()
        )
    else:
        gamma_n_max = 0.0

    r_tri = _per_triangle_divergence_residual(disc, result.v, f_tilde)
    restricted_residual = math.sqrt(float((r_tri[: len(tm.tris)] ** 2 / areas).sum()))

    return ExtensionProblem(
        original=tm,
        extension=tm_ext,
        glued=glued,
        f=f,
        f_tilde=f_tilde,
        result=result,
        restricted_v=restricted,
        gamma_n_trace_max=gamma_n_max,
        restricted_residual=restricted_residual,
        f_norm_sq=f_norm_sq,
        f_tilde_norm_sq=f_tilde_norm_sq,
        f_tilde_mean=f_tilde_mean,
        measure_factor=measure_factor,
        checks={
            "norm_bound_defect": max(
                0.0, f_tilde_norm_sq - (1.0 + area / area_ext) * f_norm_sq
            )
        },
    )


# ---------------------------------------------------------------------------
# partition-of-unity right-inverse on simplicial tessellations
# ---------------------------------------------------------------------------

@dataclass
class PatchDiagnostics:
    vertex: int
    n_triangles: int
    stability_ratio: float
    datum_norm: float
    local_residual: float


class PouRightInverse:
    """Patchwise divergence right-inverse glued over interior-vertex stars.

    Weights are the hat functions of the interior vertices normalized to sum
    to one; leftover patch masses are routed to a parent patch along a
    spanning tree through shared triangles, so the summed field reproduces
    the weak (piecewise-constant) divergence of the datum exactly up to
    solver tolerance, with zero trace on the whole boundary.  Setup factors
    the local solvers once; solve() may then be applied to many data.
    """

    def __init__(self, tm: TriMesh):
        self.refined = False
        for _ in range(2):
            interior = np.nonzero(~tm.boundary_node_mask())[0]
            covered = np.zeros(len(tm.tris), dtype=bool)
            iset = set(interior.tolist())
            for t, tri in enumerate(tm.tris):
                if any(int(v) in iset for v in tri):
                    covered[t] = True
            if len(interior) > 0 and covered.all():
                break
            tm = refine_uniform(tm)
            self.refined = True
        else:
            raise ValueError("too-coarse triangulation: no covering interior-vertex patches")
        self.tm = tm
        self.interior = interior

        # vertex stars and interior-vertex adjacency
        self.stars = {int(v): [] for v in interior}
        for t, tri in enumerate(tm.tris):
            for v in tri:
                if int(v) in self.stars:
                    self.stars[int(v)].append(t)
        uniq_edges, _ = tm.edges()
        adj = {int(v): set() for v in interior}
        for (a, b) in uniq_edges:
            a, b = int(a), int(b)
            if a in adj and b in adj:
                adj[a].add(b)
                adj[b].add(a)
        root = int(interior[0])
        parent: dict[int, Optional[int]] = {root: None}
        order = [root]
        queue = [root]
        while queue:
            v = queue.pop(0)
            for w in sorted(adj[v]):
                if w not in parent:
                    parent[w] = v
                    order.append(w)
                    queue.append(w)
        if len(order) != len(interior):
            raise ValueError("too-coarse triangulation: patch graph is disconnected")
        self.parent = parent
        self.order = order

        # transfer supports: triangles containing the tree edge (v, parent(v))
        edge_tris: dict[tuple[int, int], list[int]] = {}
        for t, tri in enumerate(tm.tris):
            for k in range(3):
                a, b = int(tri[k]), int(tri[(k + 1) % 3])
                edge_tris.setdefault((min(a, b), max(a, b)), []).append(t)
        self.transfer_tris = {
            v: edge_tris[(min(v, p), max(v, p))]
            for v, p in parent.items()
            if p is not None
        }

        # hat-weight integrals: lam[v][t] = integral over triangle t of
        # phi_v / sum of interior hats
        rule = quad.triangle_rule(6)
        bary = np.stack(
            [1.0 - rule.nodes[:, 0] - rule.nodes[:, 1], rule.nodes[:, 0], rule.nodes[:, 1]],
            axis=1,
        )
        areas = tm.areas()
        self.areas = areas
        self.lam_int: dict[int, dict[int, float]] = {int(v): {} for v in interior}
        for t, tri in enumerate(tm.tris):
            mask = np.array([int(v) in self.stars for v in tri])
            W = bary[:, mask].sum(axis=1)
            for k, v in enumerate(tri):
                if not mask[k]:
                    continue
                val = float((rule.weights * bary[:, k] / W).sum()) * 2.0 * areas[t]
                self.lam_int[int(v)][t] = val

        # factor the local full-Dirichlet solvers
        self.local: dict[int, dict] = {}
        for v in order:
            tris_local = self.stars[v]
            sub_tris = tm.tris[tris_local]
            nodes_used = np.unique(sub_tris)
            remap = {int(g): k for k, g in enumerate(nodes_used)}
            local_tm = _make_trimesh(
                tm.nodes[nodes_used], np.vectorize(lambda g: remap[int(g)])(sub_tris)
            )
            disc = build_stokes(local_tm, "full-dirichlet", pressure="p0")
            if disc.free.size == 0:
                raise ValueError(f"patch at vertex {v} has an empty velocity space")
            _schur_solver(disc)                      # factor now
            self.local[v] = {
                "tris": tris_local,
                "disc": disc,
                "nodes_used": nodes_used,
                "remap": remap,
            }

        self.global_disc = build_stokes(tm, "full-dirichlet", pressure="p0")
        self.global_K = _vector_stiffness(self.global_disc)
        self._edge_lookup = {
            (int(a), int(b)): k for k, (a, b) in enumerate(self.global_disc.edge_nodes)
        }

    @property
    def n_patches(self) -> int:
        return len(self.order)

    def solve(self, f: np.ndarray) -> tuple[RightInverseResult, list[PatchDiagnostics]]:
        tm = self.tm
        f = np.asarray(f, dtype=float)
        areas = self.areas
        mass = float((f * areas).sum())
        f_norm = math.sqrt(float((f**2 * areas).sum()))
        if abs(mass) > 1e-9 * max(f_norm, 1e-30):
            raise ValueError("partition-of-unity right-inverse needs zero-mean f")

        # mass routing along the tree (children before parents)
        a_v = {
            v: sum(f[t] * val for t, val in self.lam_int[v].items()) for v in self.order
        }
        t_v: dict[int, float] = {}
        children: dict[int, list[int]] = {v: [] for v in self.order}
        for v, p in self.parent.items():
            if p is not None:
                children[p].append(v)
        for v in reversed(self.order):
            t_v[v] = sum(t_v[c] for c in children[v]) - a_v[v]

        n_scalar = self.global_disc.n_scalar
        v_global = np.zeros(2 * n_scalar)
        diags = []
        for v in self.order:
            loc = self.local[v]
            tris_local = loc["tris"]
            rhs = np.array([f[t] * self.lam_int[v][t] for t in tris_local])
            for c in children[v]:
                s_tris = self.transfer_tris[c]
                s_area = sum(areas[t] for t in s_tris)
                for t in s_tris:
                    rhs[tris_local.index(t)] -= t_v[c] * areas[t] / s_area
            if self.parent[v] is not None:
                s_tris = self.transfer_tris[v]
                s_area = sum(areas[t] for t in s_tris)
                for t in s_tris:
                    rhs[tris_local.index(t)] += t_v[v] * areas[t] / s_area

            disc = loc["disc"]
            datum = rhs / disc.M_p.diagonal()        # P0 coefficients from integrals
            res = min_energy_right_inverse(disc, datum)
            self._scatter(v, res.v, v_global)
            diags.append(
                PatchDiagnostics(
                    vertex=v,
                    n_triangles=len(tris_local),
                    stability_ratio=res.ratio,
                    datum_norm=res.f_norm,
                    local_residual=res.residual,
                )
            )

        gd = self.global_disc
        r = np.asarray(gd.B @ v_global) - gd.M_p @ f
        residual = math.sqrt(float((r**2 / areas).sum()))
        seminorm = math.sqrt(max(float(v_global @ (self.global_K @ v_global)), 0.0))
        trace_max = _constrained_trace_max(gd, v_global)
        result = RightInverseResult(
            v=v_global,
            f=f,
            seminorm=seminorm,
            f_norm=f_norm,
            ratio=seminorm / f_norm if f_norm > 0 else 0.0,
            residual=residual,
            trace_max=trace_max,
            flags={"n_patches": self.n_patches, "n_triangles": len(tm.tris), "refined": self.refined},
        )
        return result, diags

    def _scatter(self, v: int, v_local: np.ndarray, v_global: np.ndarray) -> None:
        loc = self.local[v]
        disc_l = loc["disc"]
        nodes_used = loc["nodes_used"]
        nl = len(nodes_used)
        n_scalar_l = disc_l.n_scalar
        n_scalar_g = self.global_disc.n_scalar
        # vertex dofs
        v_global[nodes_used] += v_local[:nl]
        v_global[n_scalar_g + nodes_used] += v_local[n_scalar_l : n_scalar_l + nl]
        # edge dofs
        for k, (a, b) in enumerate(disc_l.edge_nodes):
            ga, gb = int(nodes_used[a]), int(nodes_used[b])
            gk = self._edge_lookup[(min(ga, gb), max(ga, gb))]
            v_global[len(self.tm.nodes) + gk] += v_local[nl + k]
            v_global[n_scalar_g + len(self.tm.nodes) + gk] += v_local[n_scalar_l + nl + k]


def pou_right_inverse(tm: TriMesh, f: np.ndarray):
    """One-shot partition-of-unity right-inverse (see PouRightInverse)."""
    return PouRightInverse(tm).solve(f)
