"""Command-line front end.

Exit codes: 0 success, 1 verification failure (a certified inequality or
identity violated beyond quadrature slack), 2 usage error.  A JSON config
file passed with --config overrides the command-line flags.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import divinv, harness, traceck
from .exponents import ConstantInputs, assemble_theorem_constants, derive_exponents
from .geometry import domain_geometry, facet_length_scale, mesh_stats
from .harness import CampaignConfig, estimate_aux_constants, resolve_mesh_spec, verify_sp

TRACE_CSV_COLUMNS = ["element", "sample", "q", "s", "lhs", "rhs", "ratio", "slack", "cap_hit"]
SP_CSV_COLUMNS = ["sample", "lhs", "grad_term", "jump_term", "ratio", "exact"]


class UsageError(ValueError):
    pass


def _tri_mesh_spec(spec: str) -> divinv.TriMesh:
    kind, _, n = spec.partition(":")
    if kind == "square":
        return divinv.unit_square_tri(int(n or 4))
    if kind == "lshape":
        return divinv.l_shape_tri(int(n or 2))
    raise UsageError(f"unknown triangulation spec {spec!r} (use square:N or lshape:N)")


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(rows)


def _emit(args, payload: dict):
    text = json.dumps(payload, indent=2, default=float)
    if getattr(args, "out", None):
        with open(args.out + ".json", "w") as fh:
            fh.write(text)
    print(text)


def cmd_check_mesh(args) -> int:
    mesh = resolve_mesh_spec(args.mesh)
    geom = domain_geometry(mesh, args.cgamma)
    payload = {
        "gamma": mesh.gamma,
        "h_omega": geom.h_omega,
        "rho": geom.rho,
        "rho_gamma": geom.rho_gamma,
        "convex": geom.convex,
        "n_elements": len(mesh.elements),
        "n_facets": len(mesh.facets),
        "n_interior": len(mesh.interior_facets),
        "n_dirichlet": len(mesh.dirichlet_facets),
        "n_neumann": len(mesh.neumann_facets),
        "element_diameters": [e.diameter for e in mesh.elements],
    }
    _emit(args, payload)
    return 0


def cmd_constants(args) -> int:
    mesh = resolve_mesh_spec(args.mesh)
    exps = derive_exponents(args.p, 2)
    geom = domain_geometry(mesh, args.cgamma)
    from .exponents import ba_bound_mixed

    theorem = args.theorem
    dual = (
        exps.p_star / (exps.p_star - 1.0)
        if theorem in ("T1.6", "C1.9")
        else exps.p_ostar / (exps.p_ostar - 1.0)
    )
    ext = None
    if not geom.convex:
        raise UsageError("constants for nonconvex domains need explicit extension data")
    c_ba = ba_bound_mixed(derive_exponents(dual, 2), geom, None, args.cg0)
    est_o = estimate_aux_constants(mesh, p=dual, q=exps.p_prime, degree=args.degree)
    stats = mesh_stats(mesh, args.htilde, args.p)
    c_sob = {
        (round(exps.p_prime, 12), 1, round(dual, 12), "omega"): est_o["c_sob"],
    }
    c_ps = {(round(dual, 12), "omega"): est_o["c_ps"]}
    if theorem in ("C1.9", "C1.10"):
        lhs_exp = exps.p_star if theorem == "C1.9" else exps.p_ostar
        est_k = estimate_aux_constants(mesh, p=args.p, q=lhs_exp, degree=args.degree)
        c_sob[(round(lhs_exp, 12), 1, round(args.p, 12), "element")] = est_k["c_sob"]
        c_ps[(round(args.p, 12), "element")] = est_k["c_ps"]
        if theorem == "C1.9":
            est_ps2 = estimate_aux_constants(mesh, p=lhs_exp, degree=args.degree)
            c_ps[(round(lhs_exp, 12), "element")] = est_ps2["c_ps"]
    inputs = ConstantInputs(
        exponents=exps,
        gamma=mesh.gamma,
        h_omega=geom.h_omega,
        c_ba=c_ba,
        c_sob=c_sob,
        c_ps=c_ps,
        max_h=stats["max_h"],
        max_facets=stats["max_facets"],
        max_htilde_ratio=stats["max_htilde_ratio"],
        provenance={"c_ba": "formula", "c_sob": "estimated", "c_ps": "estimated"},
    )
    table = assemble_theorem_constants(theorem, inputs)
    text = table.to_json()
    if args.out:
        with open(args.out + ".json", "w") as fh:
            fh.write(text)
    print(text)
    return 0


def cmd_verify_trace(args) -> int:
    mesh = resolve_mesh_spec(args.mesh)
    qs_grid = [(args.q, args.s if args.s is not None else args.q)]
    records, summary = traceck.trace_campaign(
        mesh,
        variant=args.variant,
        degrees=[args.degree],
        samples_per_degree=args.samples,
        seed=args.seed,
        qs_grid=qs_grid,
    )
    if args.out:
        _write_csv(
            args.out + ".csv",
            TRACE_CSV_COLUMNS,
            [
                [r.element, r.sample_id, r.q, r.s, r.lhs, r.rhs, r.ratio, r.slack, r.flags["cap_hit"]]
                for r in records
            ],
        )
    _emit(args, summary.to_dict())
    return 0 if not summary.violations else 1


def cmd_verify_sp(args) -> int:
    cfg = CampaignConfig(
        mesh=args.mesh,
        theorem=args.theorem,
        p=args.p,
        sampler=args.sampler,
        degree=args.degree,
        count=args.samples,
        seed=args.seed,
        htilde_mode=args.htilde,
    )
    records, summary = verify_sp(cfg)
    if args.out:
        _write_csv(
            args.out + ".csv",
            SP_CSV_COLUMNS,
            [
                [r.sample_id, r.lhs, r.grad_term, r.jump_term, r.ratio, r.flags["exact"]]
                for r in records
            ],
        )
    _emit(args, summary)
    frac = summary.get("assembled_fraction_satisfied")
    return 0 if frac is None or frac == 1.0 else 1


def cmd_infsup(args) -> int:
    tm = _tri_mesh_spec(args.mesh)
    disc = divinv.build_stokes(tm, "full-dirichlet", pressure=args.pressure)
    report = divinv.identity_check(disc, seed=args.seed)
    _emit(args, report)
    return 0 if report["gap"] <= 1e-8 else 1


def cmd_divinv(args) -> int:
    tm = _tri_mesh_spec(args.mesh)
    rng = np.random.default_rng(args.seed)
    f = rng.uniform(-1.0, 1.0, size=len(tm.tris))
    areas = tm.areas()
    if args.construction == "mirror":
        prob = divinv.mirror_extension(tm, f, axis="x", value=0.0)
        payload = {
            "gamma_n_trace_max": prob.gamma_n_trace_max,
            "residual": prob.result.residual,
            "norm_doubling_defect": prob.checks["norm_doubling_defect"],
            "ratio": prob.result.ratio,
        }
        ok = prob.gamma_n_trace_max <= 1e-10 and prob.result.residual <= 1e-8
    elif args.construction == "nonconvex":
        ext = _tri_mesh_spec(args.extension) if args.extension else None
        if ext is None:
            raise UsageError("nonconvex construction needs --extension")
        prob = divinv.nonconvex_extension(tm, ext, f)
        payload = {
            "f_tilde_mean": prob.f_tilde_mean,
            "measure_factor": prob.measure_factor,
            "residual": prob.result.residual,
            "ratio": prob.result.ratio,
        }
        ok = abs(prob.f_tilde_mean) <= 1e-12 and prob.result.residual <= 1e-8
    elif args.construction == "pou":
        f -= (f * areas).sum() / areas.sum()
        result, diags = divinv.pou_right_inverse(tm, f)
        payload = {
            "residual": result.residual,
            "trace_max": result.trace_max,
            "ratio": result.ratio,
            "n_patches": result.flags["n_patches"],
            "patch_ratios": [d.stability_ratio for d in diags],
        }
        ok = result.residual <= 1e-8 and result.trace_max <= 1e-10
    else:
        raise UsageError(f"unknown construction {args.construction!r}")
    _emit(args, payload)
    return 0 if ok else 1


def cmd_refine_study(args) -> int:
    cfg = CampaignConfig(
        mesh=args.mesh,
        theorem=args.theorem,
        p=args.p,
        sampler=args.sampler,
        degree=args.degree,
        count=args.samples,
        seed=args.seed,
        htilde_mode=args.htilde,
    )
    specs = [s.strip() for s in args.levels.split(",")]
    report = harness.refinement_study(cfg, specs)
    _emit(args, report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polysob")
    parser.add_argument("--config", help="JSON file whose entries override the flags")
    sub = parser.add_subparsers(dest="command", required=True)

    pm = argparse.ArgumentParser(add_help=False)
    pm.add_argument("--mesh", required=True, help="mesh file or generator descriptor")
    pm.add_argument("--seed", type=int, default=0)
    pm.add_argument("--out", help="output path prefix for CSV/JSON artifacts")

    p = sub.add_parser("check-mesh", parents=[pm])
    p.add_argument("--cgamma", type=float, default=0.9)
    p.set_defaults(fn=cmd_check_mesh)

    p = sub.add_parser("constants", parents=[pm])
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--theorem", default="T1.7", choices=harness.THEOREMS)
    p.add_argument("--cg0", type=float, default=1.0)
    p.add_argument("--cgamma", type=float, default=0.9)
    p.add_argument("--degree", type=int, default=4)
    p.add_argument("--htilde", default="element-min", choices=["facet", "element-min"])
    p.set_defaults(fn=cmd_constants)

    p = sub.add_parser("verify")
    vsub = p.add_subparsers(dest="what", required=True)

    pv = vsub.add_parser("trace", parents=[pm])
    pv.add_argument("--q", type=float, default=2.0)
    pv.add_argument("--s", type=float, default=None)
    pv.add_argument("--variant", default="standard", choices=["standard", "general", "embedding"])
    pv.add_argument("--samples", type=int, default=100)
    pv.add_argument("--degree", type=int, default=3)
    pv.set_defaults(fn=cmd_verify_trace)

    pv = vsub.add_parser("sp", parents=[pm])
    pv.add_argument("--theorem", default="T1.7", choices=harness.THEOREMS)
    pv.add_argument("--p", type=float, default=2.0)
    pv.add_argument("--samples", type=int, default=100)
    pv.add_argument("--degree", type=int, default=3)
    pv.add_argument("--sampler", default="iid-coefficients")
    pv.add_argument("--htilde", default="element-min", choices=["facet", "element-min"])
    pv.set_defaults(fn=cmd_verify_sp)

    p = sub.add_parser("infsup", parents=[pm])
    p.add_argument("--pressure", default="p1", choices=["p1", "p0"])
    p.set_defaults(fn=cmd_infsup)

    p = sub.add_parser("divinv", parents=[pm])
    p.add_argument("construction", choices=["mirror", "nonconvex", "pou"])
    p.add_argument("--extension", help="triangulation spec of the extension domain")
    p.set_defaults(fn=cmd_divinv)

    p = sub.add_parser("refine-study", parents=[pm])
    p.add_argument("--levels", required=True, help="comma-separated mesh specs")
    p.add_argument("--theorem", default="T1.7", choices=harness.THEOREMS)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--sampler", default="iid-coefficients")
    p.add_argument("--htilde", default="element-min", choices=["facet", "element-min"])
    p.set_defaults(fn=cmd_refine_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
        for key, value in overrides.items():
            setattr(args, key.replace("-", "_"), value)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
