"""Time-stretching transformations of Poisson point measures, grid stochastic
derivatives, jump SDE solvers and Monte Carlo verification tools."""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    DegenerateInputError,
    DivergenceError,
    DomainError,
    JumpCalcError,
    ModelError,
    NumericError,
    ReportWriteError,
    SchemaError,
    SerializationError,
    UnresolvedReferenceError,
    WindowError,
)
from .grid_calculus import (
    Cell,
    DifferentialGrid,
    Functional,
    fd_derivative,
    grid_transform,
    jacobian_matrix,
    mixed_second_fd,
    nondegenerate,
)
from .point_measure import (
    AtomicSpace,
    BandSpace,
    ConfigBatch,
    Configuration,
    EnvelopeSpace,
    MarkSubset,
    count,
    integrate,
    jump_times,
    restrict,
    sample_batch,
    sample_configuration,
)
from .time_stretch import (
    GridDirection,
    SmoothStretch,
    StretchFunction,
    density,
    eval_J,
    flow,
    log_derivative_rho,
    log_jacobian,
    transform_configuration,
)
