"""Skeleton decompositions of continuous-state branching processes.

Library layout:

* `mechanism`: branching mechanisms psi, Lévy families, Esscher transforms,
  roots and classification.
* `joint`: the two-type mechanism pair (Psi_c, Psi_d) at a level lam, graft
  slices and the skeleton offspring law.
* `flow`: cumulant ODE flows with dense output (one-dimensional,
  two-dimensional and the skeleton generating flow).
* `sim`: Monte Carlo path generation for the CSBP, the two-type process and
  the autonomous skeleton, on counter-based random streams.
* `verify`: statistical and analytic checks of the decomposition identities.
* `cli`: the `skelsim` command.
"""

__version__ = "0.1.0"

from .errors import (
    FlowGuardError,
    InconclusiveAnalysis,
    MechanismError,
    QuadratureError,
    SchemaError,
    SimulationError,
    SkelsimError,
)
from .flow import CumulantFlow, feller_u_oracle, solve_joint, solve_skeleton_f, solve_u, u_zero_plus
from .joint import (
    Autonomy,
    GraftSlice,
    JointMechanism,
    OffspringDistribution,
    Regime,
    TwoTypeStructure,
    autonomy_check,
    graft_kernel,
    graft_rate_reconciliation,
    joint_identity_residual,
    make_joint,
    offspring_distribution,
    psi_c,
    psi_d,
    psi_d_series,
)
from .mechanism import (
    Atoms,
    BranchingMechanism,
    Compensation,
    GenericDensity,
    LevyMeasure,
    MechanismClass,
    StablePowerLaw,
    TailHint,
    TemperedPowerLaw,
    ZeroMeasure,
    argmin_location,
    classify,
    esscher,
    eval_psi,
    eval_psi_prime,
    is_immortal,
    is_nonexplosive,
    largest_root,
    levy_from_json,
    mechanism_from_json,
)
from .sim import (
    SimConfig,
    TwoTypePath,
    csbp_final_batch,
    make_stream,
    poisson_kernel,
    run_batches,
    sample_csbp_path,
    sample_poisson,
    sample_skeleton_gw,
    sample_two_type_path,
    skeleton_gw_final_batch,
    two_type_batch,
)
from .verify import (
    TestReport,
    binomial_thinning_test,
    check_generator_intertwining,
    convergence_scan,
    explosion_coupling_test,
    marginal_law_test,
    mc_laplace_joint,
    poisson_conditional_test,
    run_suites,
)
