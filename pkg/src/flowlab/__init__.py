"""Numerical laboratory for heat flow, lattice gauge flow, and reflecting
Brownian motion on flat model manifolds with boundary."""

from flowlab.geometry import (  # noqa: F401
    FlatCylinder, FlatSlab3D, FlatDisk, Mesh,
    build_mesh, laplace_beltrami, boundary_normal_derivative,
    double_manifold, geodesic_distance, volume_integrate, convexity_report,
)

from flowlab.heat import (  # noqa: F401
    TimeField, LYHReport, solve_neumann_heat, delta_field, heat_kernel,
    heat_kernel_tilde, log_hessian, lyh_check_sharp, calibrate_lyh_tolerance,
    lyh_fit_constants, kernel_decay_bound, doubling_equivalence_check,
)
from flowlab.groups import get_group  # noqa: F401
from flowlab.yang_mills import (  # noqa: F401
    LatticeConnection, FlowRun, random_connection, plaquette_curvature,
    yang_mills_energy, q_vertex_field, run_flow, zeta_functional,
    zeta_bound_constant, monotonicity_check, bochner_residual,
)
from flowlab.forms import (  # noqa: F401
    d0, d0_star, d1, d1_star, iota_nu_1form, iota_nu_2form,
    boundary_pairing, int_parts_residual, pairing_identity_residuals,
    monot_identities_check,
)
from flowlab.stochastic import (  # noqa: F401
    sample_rbm_positions, sample_exit_times, exit_tail_estimate,
    expectation_along_rbm, squared_distance_checks, halfline_exit_times,
)
from flowlab.config import ExperimentConfig, load_config  # noqa: F401
from flowlab.experiments import run_experiment, run_suite  # noqa: F401

__version__ = "0.1.0"
