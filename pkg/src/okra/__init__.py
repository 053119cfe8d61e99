"""Online threshold-based packing for rate-constrained fractional multiple
knapsacks, with offline dual oracles, adversarial instance generators, and
an EV-charging trace simulator."""

from .core import (
    AGGREGATE,
    SEPARABLE,
    Assignment,
    Instance,
    InvalidSetupError,
    Item,
    KnapsackState,
    ParseError,
    RunResult,
    Setup,
    ValidationError,
    ValueFunction,
    general_concave_value,
    linear_value,
    load_instance,
    quadratic_value,
    save_instance,
    validate_instance,
)
from .offline import OfflineSolution, brute_force, conjugate, offline_multi, offline_single
from .ota import OnlinePolicy, fta_policy, ota_integral_policy, ota_policy, run, step
from .thresholds import (
    ThresholdFamily,
    Variant,
    fill_level,
    lambert_w,
    make_family,
    ratio_aggregate,
    ratio_no_leftover,
    ratio_relaxed,
    ratio_separable,
    ratio_single,
    threshold_price,
    utilization_for_price,
    verify_sufficient_ode,
)

__version__ = "0.1.0"
