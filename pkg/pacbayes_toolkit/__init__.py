"""PAC-Bayes Toolkit - generalisation bounds, posteriors and validity experiments."""

from pacbayes_toolkit.bounds import (
    BoundKind,
    BoundReport,
    bound_calculator,
    compute_bound,
    disable_bound,
    enable_bound,
    list_bounds,
    register_bound,
)
from pacbayes_toolkit.validity import (
    TrialContext,
    TrialOutcome,
    list_validity_trials,
    register_validity_trial,
    validity_trial,
)
