"""Lebesgue-index arithmetic and explicit constants.

Implements the conjugate/embedding index family, the trace constant with its
Euler-Gamma factor, upper bounds for the divergence right-inverse stability
constant (homogeneous and mixed boundary conditions), and the assembled
constants C1..C8 of the broken Sobolev-Poincare bounds.  The unnamed
universal constant of the homogeneous bound (c_g0) and the Poincare-Steklov
and Sobolev embedding constants are configuration inputs; the latter two can
be estimated numerically (see harness.estimate_aux_constants) and are always
tagged with their provenance.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .geometry import DomainGeometry

INF = math.inf


def conjugate(p: float) -> float:
    """Holder conjugate, with the p = 1 <-> infinity convention."""
    if p == 1.0:
        return INF
    if p == INF:
        return 1.0
    return p / (p - 1.0)


@dataclass(frozen=True)
class ExponentSet:
    """p and its derived indices as extended reals."""

    p: float
    d: int
    p_prime: float
    p_star: float
    p_sharp: float
    one_star: float
    p_ostar: float


def derive_exponents(p: float, d: int) -> ExponentSet:
    if p < 1.0:
        raise ValueError("p must be at least 1")
    if d < 2:
        raise ValueError("d must be at least 2")
    if p < d:
        p_star = p * d / (d - p)
        p_sharp = p * (d - 1) / (d - p)
    else:
        p_star = INF
        p_sharp = INF
    one_star = d / (d - 1.0)
    return ExponentSet(
        p=float(p),
        d=int(d),
        p_prime=conjugate(p),
        p_star=p_star,
        p_sharp=p_sharp,
        one_star=one_star,
        p_ostar=p * one_star,
    )


def dual_star_exponent(p: float, d: int) -> float:
    """Closed form of the conjugate of p*: d p / (d p - d + p)."""
    return d * p / (d * p - d + p)


def trace_constant(q: float, s: float, d: int, gamma: float) -> float:
    """Explicit constant of the per-element trace bound.

    C(q, s, d, gamma) = [ d pi^{d(s-q)/(2s)} / (gamma Gamma(d/2+1)^{(s-q)/s})
                          + (q-1)/gamma ]^{1/q}
    """
    if q < 1.0 or s < q:
        raise ValueError("need s >= q >= 1")
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")
    if d < 2:
        raise ValueError("d must be at least 2")
    frac = (s - q) / s
    top = d * math.pi ** (d * frac / 2.0)
    bottom = gamma * math.gamma(d / 2.0 + 1.0) ** frac
    return (top / bottom + (q - 1.0) / gamma) ** (1.0 / q)


def ba_bound_homogeneous(eset: ExponentSet, geom: DomainGeometry, c_g0: float = 1.0) -> float:
    """Upper bound c_g0 (h/rho)^d (1 + h/rho) for the homogeneous-BC stability
    constant of the divergence right-inverse."""
    if geom.rho <= 0.0:
        raise ValueError("rho must be positive")
    ratio = geom.h_omega / geom.rho
    return c_g0 * ratio**eset.d * (1.0 + ratio)


def ba_bound_mixed(
    eset: ExponentSet,
    geom: DomainGeometry,
    ext: Optional[Mapping[str, float]] = None,
    c_g0: float = 1.0,
) -> float:
    """Mixed-boundary-condition stability bound.

    Convex domains use the reflection bound with min(rho, rho_gamma);
    nonconvex domains need extension data {h_ext, rho_ext, area, area_ext}
    and pick up the measure factor (1 + (|O|/|O_ext|)^{p-1})^{1/p}.
    """
    p = eset.p
    if geom.convex:
        r = min(geom.rho, geom.rho_gamma)
        if r <= 0.0:
            raise ValueError("rho and rho_gamma must be positive")
        ratio = 2.0 * geom.h_omega / r
        return 2.0 ** (1.0 / p) * c_g0 * ratio**eset.d * (1.0 + ratio)
    if ext is None:
        raise ValueError("nonconvex domain: extension data required")
    if ext["area_ext"] <= 0.0:
        raise ValueError("extension must have positive measure")
    ratio = ext["h_ext"] / ext["rho_ext"]
    measure = (1.0 + (ext["area"] / ext["area_ext"]) ** (p - 1.0)) ** (1.0 / p)
    return c_g0 * ratio**eset.d * (1.0 + ratio) * measure


# ---------------------------------------------------------------------------
# assembled constants
# ---------------------------------------------------------------------------

PROVENANCE = ("formula", "configured", "estimated")


@dataclass
class ConstantEntry:
    name: str
    value: float
    provenance: str
    inputs: dict = field(default_factory=dict)


class ConstantTable:
    """Named constants with provenance tags, JSON-serializable."""

    def __init__(self):
        self.entries: dict[str, ConstantEntry] = {}

    def add(self, name: str, value: float, provenance: str, inputs: Optional[dict] = None):
        if provenance not in PROVENANCE:
            raise ValueError(f"unknown provenance {provenance!r}")
        if not (value > 0.0 and math.isfinite(value)):
            raise ValueError(f"constant {name} must be positive and finite, got {value}")
        self.entries[name] = ConstantEntry(name, float(value), provenance, dict(inputs or {}))

    def __getitem__(self, name: str) -> float:
        return self.entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def to_json(self, indent: int = 2) -> str:
        payload = {
            e.name: {"value": e.value, "provenance": e.provenance, "inputs": e.inputs}
            for e in self.entries.values()
        }
        return json.dumps(payload, indent=indent)


@dataclass
class ConstantInputs:
    """Everything the C1..C8 assemblies consume.

    c_sob keys are (q, ell, p, region) and c_ps keys are (p, region) with
    region "omega" (whole domain) or "element" (uniform per-element value);
    element-level factors are evaluated at max_h, the largest element
    diameter, which is where they attain their maximum.
    """

    exponents: ExponentSet
    gamma: float
    h_omega: float
    c_ba: Optional[float] = None
    c_sob: Mapping = field(default_factory=dict)
    c_ps: Mapping = field(default_factory=dict)
    max_h: Optional[float] = None
    max_facets: Optional[int] = None
    max_htilde_ratio: Optional[float] = None
    c2: Optional[float] = None
    c4: Optional[float] = None
    provenance: Mapping[str, str] = field(default_factory=dict)

    def sob(self, q: float, ell: int, p: float, region: str) -> float:
        key = (round(q, 12), ell, round(p, 12), region)
        if key not in self.c_sob:
            raise ValueError(f"missing input constant C_Sob{key}")
        return self.c_sob[key]

    def ps(self, p: float, region: str) -> float:
        key = (round(p, 12), region)
        if key not in self.c_ps:
            raise ValueError(f"missing input constant C_PS{key}")
        return self.c_ps[key]

    def require(self, **names):
        for label, value in names.items():
            if value is None:
                raise ValueError(f"missing input constant {label}")


def c6_from_c2(c2: float, p: float) -> float:
    return 2.0 ** (1.0 - 1.0 / p) * c2


def c8_from_c4(c4: float, p: float) -> float:
    return 2.0 ** (1.0 - 1.0 / p) * c4


def _c1_c2(inp: ConstantInputs):
    ex = inp.exponents
    p, d = ex.p, ex.d
    if not (1.0 <= p < d):
        raise ValueError("requires p < d")
    s = conjugate(ex.p_star)
    inp.require(c_ba=inp.c_ba)
    c1 = (
        2.0 ** (1.0 / s)
        * inp.c_ba
        * inp.sob(ex.p_prime, 1, s, "omega")
        * (1.0 + inp.h_omega**s * inp.ps(s, "omega") ** s) ** (1.0 / s)
    )
    ctr = trace_constant(conjugate(ex.p_sharp), ex.p_prime, d, inp.gamma)
    c2 = ctr * (inp.c_ba + c1)
    return c1, c2


def _c3_c4(inp: ConstantInputs):
    ex = inp.exponents
    p, d = ex.p, ex.d
    if p <= 1.0:
        raise ValueError("constant assembly needs p > 1 (p' finite)")
    s = conjugate(ex.p_ostar)
    inp.require(c_ba=inp.c_ba, max_h=inp.max_h)
    c3 = (
        2.0 ** (1.0 / p)
        * inp.c_ba
        * inp.h_omega ** (d / ex.p_prime - d / s + 1.0)
        * inp.sob(ex.p_prime, 1, s, "omega")
        * (1.0 + inp.h_omega * inp.ps(s, "omega"))
    )
    ctr = trace_constant(ex.p_prime, ex.p_prime, d, inp.gamma)
    c4 = (
        inp.c_ba
        * ctr
        * (1.0 + inp.max_h**ex.p_prime) ** (1.0 / ex.p_prime)
        * (1.0 + inp.h_omega * inp.ps(ex.p_prime, "omega"))
    )
    return c3, c4


def _c5_c6(inp: ConstantInputs, c2: float):
    ex = inp.exponents
    p, d = ex.p, ex.d
    inp.require(max_h=inp.max_h, max_facets=inp.max_facets)
    first = inp.sob(ex.p_star, 1, p, "element") * (1.0 + inp.max_h * inp.ps(p, "element"))
    ctr = trace_constant(ex.p_sharp, ex.p_star, d, inp.gamma)
    second = (
        2.0 ** (1.0 - 1.0 / p)
        * c2
        * inp.max_facets
        * ctr
        * (1.0 + inp.sob(ex.p_star, 1, p, "element"))
        * (1.0 + inp.max_h * inp.ps(ex.p_star, "element"))
    )
    return first + second, c6_from_c2(c2, p)


def _c7_c8(inp: ConstantInputs, c4: float):
    ex = inp.exponents
    p, d = ex.p, ex.d
    inp.require(max_h=inp.max_h, max_htilde_ratio=inp.max_htilde_ratio)
    first = (
        inp.max_h ** (d / ex.p_ostar - d / p + 1.0)
        * inp.sob(ex.p_ostar, 1, p, "element")
        * (1.0 + inp.max_h * inp.ps(p, "element"))
    )
    ctr = trace_constant(p, p, d, inp.gamma)
    second = (
        2.0 ** (1.0 - 1.0 / p)
        * c4
        * inp.max_htilde_ratio
        * ctr
        * (1.0 + inp.max_h * inp.ps(p, "element"))
    )
    return first + second, c8_from_c4(c4, p)


def assemble_theorem_constants(which: str, inp: ConstantInputs) -> ConstantTable:
    """Evaluate the constant displays for one of T1.6, T1.7, C1.9, C1.10.

    The averaged variants reuse C2/C4; those may be supplied directly in the
    inputs or are assembled from their own ingredients.  Every produced entry
    records the provenance of the inputs that entered it.
    """
    table = ConstantTable()
    prov = dict(inp.provenance)

    def tag(*names):
        out = {n: prov.get(n, "configured") for n in names}
        out["gamma"] = "formula"
        return out

    if which == "T1.6":
        c1, c2 = _c1_c2(inp)
        table.add("C1", c1, "formula", tag("c_ba", "c_sob", "c_ps"))
        table.add("C2", c2, "formula", tag("c_ba", "c_sob", "c_ps"))
    elif which == "T1.7":
        c3, c4 = _c3_c4(inp)
        table.add("C3", c3, "formula", tag("c_ba", "c_sob", "c_ps"))
        table.add("C4", c4, "formula", tag("c_ba", "c_sob", "c_ps"))
    elif which == "C1.9":
        c2 = inp.c2
        src = {"c2": prov.get("c2", "configured")}
        if c2 is None:
            _, c2 = _c1_c2(inp)
            src = tag("c_ba", "c_sob", "c_ps")
        c5, c6 = _c5_c6(inp, c2)
        table.add("C5", c5, "formula", {**src, **tag("c_sob", "c_ps")})
        table.add("C6", c6, "formula", src)
    elif which == "C1.10":
        c4 = inp.c4
        src = {"c4": prov.get("c4", "configured")}
        if c4 is None:
            _, c4 = _c3_c4(inp)
            src = tag("c_ba", "c_sob", "c_ps")
        c7, c8 = _c7_c8(inp, c4)
        table.add("C7", c7, "formula", {**src, **tag("c_sob", "c_ps")})
        table.add("C8", c8, "formula", src)
    else:
        raise ValueError(f"unknown theorem id {which!r}")
    return table
