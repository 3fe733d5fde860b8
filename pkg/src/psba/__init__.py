"""Progressive-scale boundary attack toolkit.

Label-only (decision-based) blackbox optimization with projective gradient
estimation, closed-form cosine-similarity bounds, a metered decision-oracle
HTTP service, and a config-driven experiment CLI.
"""

from .attack import (
    AttackConfig,
    AttackTrajectory,
    binary_search_boundary,
    find_optimal_scale,
    geometric_step_search,
    run_attack,
    success_rate,
)
from .estimator import EstimateReport, adjusted_estimate, estimate_gradient, estimate_sensitivity
from .models import (
    AttackSpec,
    Classifier,
    LocalOracle,
    MeteredOracle,
    difference,
    make_oracle,
    sign,
    true_gradient,
)
from .projections import (
    FreqLowPassProjection,
    IdentityProjection,
    Projection,
    ScaleSchedule,
    SpatialProjection,
    SpectrumTopKProjection,
)
from .tensors import SeededRng, cosine_similarity, mse, project_onto_span, sample_unit_sphere
from .theory import BoundParams, concentration_bound, expectation_bound, gamma, hsja_bound

__version__ = "0.1.0"
