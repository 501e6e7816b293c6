"""Numerical certification of trace and broken Sobolev-Poincare inequalities
on 2D polytopic meshes, with fully explicit constants."""

from .exponents import (
    ConstantInputs,
    ConstantTable,
    ExponentSet,
    assemble_theorem_constants,
    ba_bound_homogeneous,
    ba_bound_mixed,
    c6_from_c2,
    c8_from_c4,
    derive_exponents,
    trace_constant,
)
from .geometry import (
    DomainGeometry,
    Element,
    Facet,
    Mesh,
    MeshError,
    SubSimplex,
    domain_geometry,
    facet_length_scale,
    generate_mesh,
    load_mesh,
    mesh_from_data,
    mesh_stats,
    save_mesh,
    shape_regularity,
    subtriangulate,
)
from .brokenfn import (
    BrokenFunction,
    FacetFunction,
    broken_seminorm,
    element_average,
    facet_average,
    jump,
    lq_norm,
    sample,
    trace,
)
from .traceck import (
    RTField,
    TraceRatio,
    make_rt_field,
    rt_divergence_identity,
    trace_campaign,
    verify_trace,
)
from .divinv import (
    ExtensionProblem,
    PouRightInverse,
    RightInverseResult,
    StokesDiscretization,
    TriMesh,
    build_stokes,
    identity_check,
    infsup_constant,
    l_shape_tri,
    min_energy_right_inverse,
    mirror_extension,
    nonconvex_extension,
    pou_right_inverse,
    refine_uniform,
    unit_square_tri,
)
from .harness import (
    CampaignConfig,
    SPRecord,
    estimate_aux_constants,
    refinement_study,
    resolve_mesh_spec,
    verify_sp,
)

__version__ = "0.1.0"
