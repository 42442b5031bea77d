"""Desk-scale numerics for multi-well variational problems on cylinders.

Subpackages by theme:

- potential: polynomial multi-well potentials, wells, hypothesis checks
- curve: curve energies, arc-length reparametrization, heteroclinics
- geodesic: the degenerate geodesic pseudo-distance, two routes
- cross_section: slice energy, averaged potential, constrained infima
- cylinder: truncated-cylinder fields, relaxation, trace diagnostics
- cli: batch front end with manifests and reproducible runs
"""

from .potential import (
    Box,
    PotentialSpec,
    Well,
    eval_potential,
    grad_potential,
    find_wells,
    check_hypotheses,
    shift_potential_a,
    ginzburg_landau,
    four_well,
    named_potential,
)
from .curve import (
    Curve,
    curve_energy,
    arclength_reparametrize,
    minimize_heteroclinic,
    equipartition_defect,
)
from .geodesic import (
    GridGraph,
    geod_grid_oracle,
    geod_upper,
    nondegeneracy_bound,
    verify_energy_geodesic_bound,
    total_variation_geod,
)
from .cross_section import (
    SectionGrid,
    SectionField,
    section_energy,
    section_energy_a,
    averaged_potential,
    verify_V_props,
    k_epsilon,
    k_epsilon_ladder,
)
from .cylinder import (
    CylinderGrid,
    CylinderField,
    EndCondition,
    cylinder_energy,
    relax,
    slice_diagnostics,
    jensen_check,
    holder_check,
    trace_convergence_verdict,
    make_initial,
)

__version__ = "0.1.0"
