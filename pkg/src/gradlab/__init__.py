"""Numerical laboratory for gradient flows on discretized function spaces:
spectral problems, parametrized model families with kernel diagnostics,
Lojasiewicz-rate analysis, and grow-at-stall architecture loops."""

__version__ = "0.1.0"

from .spaces import (  # noqa: F401
    Basis,
    Domain,
    Field,
    SobolevOrder,
    field_from_modes,
    inner_product,
    laplacian,
    make_euclidean,
    make_space,
    metric_sharp,
    norm,
    zero_field,
)
from .problems import (  # noqa: F401
    CoercivityReport,
    LossEval,
    Problem,
    coercivity_probe,
    custom_problem,
    nominal_loss,
    npbe_problem,
    quadratic_problem,
    residual,
)
from .architectures import (  # noqa: F401
    ArchitectureSpec,
    KernelDiagnostics,
    ParamVector,
    affine_architecture,
    curve_architecture,
    evaluate,
    jacobian,
    kernel_apply,
    monomial_architecture,
    sinusoid_architecture,
    spectral_consistency,
    spiral_architecture,
    tangent_gram,
)
from .flows import (  # noqa: F401
    FlowConfig,
    FlowEvent,
    FlowTrace,
    integrate_annealed,
    integrate_nominal,
    integrate_parametric,
    lyapunov_check,
)
from .analysis import (  # noqa: F401
    CriticalPointReport,
    CriticalPointTolerances,
    KernelDecayFit,
    LojasiewiczEstimate,
    RateClassification,
    classify_critical_point,
    classify_rate,
    estimate_lojasiewicz,
    fit_kernel_decay,
)
from .growth import (  # noqa: F401
    ExpansionEvent,
    GrowthSchedule,
    GrowthTrace,
    NestingReport,
    PruneReport,
    PruneTolerances,
    expand,
    prune_in_situ,
    run_growth_loop,
    validate_nested_family,
)
