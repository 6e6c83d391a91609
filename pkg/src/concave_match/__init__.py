"""Online bipartite matching with concave returns.

Library and CLI for running price-learning allocation policies against a
myopic baseline under uniformly random arrival orders, with a certified
concave-program solver and a reproducible Monte-Carlo harness.
"""

from .core import (
    GRAD_FLOOR,
    AllocationState,
    ArrivalOrder,
    ConfigError,
    DegenerateInstanceError,
    Instance,
    Log,
    Power,
    ScaledPower,
    UtilitySpec,
    allocate_rule,
    apply_perturbation,
    load_instance_binary,
    load_instance_csv,
    save_instance_binary,
    save_instance_csv,
    scale_instance,
    utility_eval,
    utility_grad,
    utility_grad_inverse,
)
from .solver import (
    DualSolution,
    NumericError,
    PrimalSolution,
    SolverConfig,
    brute_force_oracle,
    dual_upper_bound,
    make_dual_solution,
    solve_concave_program,
    write_trace_csv,
)
from .policies import (
    PolicyConfig,
    RunResult,
    relative_loss,
    resolve_points,
    run_dla,
    run_myopic,
    run_offline,
    run_ola,
    run_record,
)
from .datagen import (
    CategoryModel,
    GeneratorConfig,
    draw_category_model,
    gen_beta,
    gen_category,
    gen_mixed,
    gen_truncated_normal,
    generate,
    sample_permutation,
)
from .harness import (
    ConcentrationDiagnostics,
    ConditionReport,
    ExperimentConfig,
    PolicyAggregate,
    SummaryStats,
    concentration_diagnostics,
    condition_constant,
    condition_report,
    monte_carlo,
)
from .cli import emit_csv, parse_config, render_config

__version__ = "0.1.0"
