"""Jump SDE solvers, analytic grid derivatives and rank probes."""

from .analysis import (
    condition_probe,
    delta,
    derivative_additive,
    derivative_thinned,
    endpoint_functional,
    span_rank,
    span_rank_batch,
    span_vectors_batch,
    stochastic_exponent,
    tilde_delta,
)
from .catalog import CATALOG, build
from .models import AdditiveModel, ThinnedModel
from .solver import (
    PathBatch,
    Trajectory,
    delta_batch,
    grid_derivative_batch,
    sample_candidates,
    simulate_additive,
    simulate_thinned,
    solve,
)
