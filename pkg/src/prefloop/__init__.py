"""prefloop: preference-feedback online optimization for dynamical plants.

Steers a stable discrete-time plant to the minimizer of a latent user
utility using only pairwise "which felt better?" comparisons, with
numerically certified stability and convergence bounds, reproducible
simulation studies, and a live human-in-the-loop session service.
"""

from .comfort import DEFAULT_ENVIRONMENT, PmvEnvironment, pmv, ppd
from .controller import (
    ControllerConfig,
    ControllerState,
    TrajectoryRecord,
    dueling_update,
    run_algebraic_variant,
    run_closed_loop,
    run_ideal_p_descent,
    sample_unit_sphere,
)
from .plant import (
    LyapunovCertificate,
    PlantDefinitionError,
    PlantModel,
    PlantState,
    compute_lyapunov_certificate,
    lipschitz_constant_of_h,
    load_plant,
    lyapunov_value,
    plant_step,
    steady_state_map,
)
from .preference import (
    CustomBlackbox,
    LatentUtility,
    LinkFunction,
    PpdComfort,
    PreferenceOracle,
    QuadraticTracking,
    ReducedUtility,
    sample_preference,
)

__version__ = "1.0.0"
