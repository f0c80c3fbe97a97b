"""sklab: a numerical laboratory for the high-temperature SK spin glass.

Four layers, importable directly from the package root:

- `vectorspace`: size-normalized inner products and quenched Gaussian
  disorder with a reproducible counter-based stream;
- `order_params`: the overlap fixed point q, the stability value, the
  replica-symmetric free energy, the gamma/rho cavity sequences, and the
  toy-model second-moment exponent;
- `cavity_recursion`: the staged modification of the interaction matrix
  that makes successive mean-field iterates measurable functions of
  Gaussian cavity readouts, with its exact algebraic self-checks;
- `sk_model`: exact small-N partition functions, Gibbs magnetizations,
  and conditionally annealed first/second moments by enumeration;
- `lab_harness`: replica experiments with statistical gates, CSV/JSON
  reports, and the `sklab` command-line front end.
"""

from .cavity_recursion import (
    CovReport,
    DegenerateStateError,
    RecursionState,
    StatRow,
    cavity_field,
    check_invariants,
    init,
    run,
    state_stats,
    step,
    zeta1_covariance_check,
)
from .lab_harness import (
    EXPERIMENTS,
    ExperimentConfig,
    ExperimentReport,
    ReportRow,
    concentration_experiment,
    load_config,
    moment_ratio_experiment,
    run_experiment,
)
from .order_params import (
    ConvergenceError,
    ModelParams,
    OrderParams,
    SequenceError,
    at_value,
    build_sequences,
    gauss_expect,
    psi,
    psi_derivative,
    rs_free_energy,
    rs_functional,
    solve_q,
    toy_exponent,
)
from .sk_model import (
    EnumerationLimitError,
    TiltedMeasure,
    chi_gap,
    conditional_first_moment,
    conditional_first_moment_factored,
    conditional_second_moment,
    f_nk,
    gibbs_magnetizations,
    hamiltonian,
    log_partition_exact,
    tap_iterate,
    tilted_measure,
)
from .vectorspace import (
    Disorder,
    inner,
    load_disorder,
    norm,
    outer,
    sample_disorder,
    save_disorder,
    symmetrize,
)

__version__ = "0.1.0"
