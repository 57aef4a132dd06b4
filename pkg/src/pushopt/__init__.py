"""Decentralized stochastic non-convex optimization over time-varying
directed networks: push-sum de-biasing, momentum variance reduction, and
gradient tracking, with analysis-side diagnostics and a reproducible
experiment harness."""

from .algo import (
    AlgoConfig,
    NumericalDivergenceError,
    RunTrace,
    SwarmState,
    init,
    run,
    step_push_asgd,
    step_push_sgd,
)
from .backend import resolve_backend
from .graph import (
    DirectedGraph,
    TopologySchedule,
    cyclic_er_rings,
    cyclic_schedule,
    directed_ring,
    er_directed,
    er_random_schedule,
    is_strongly_connected,
    mixing_matrix,
    reversed_ring,
    schedule_at,
    static_schedule,
)
from .oracle import (
    PLSineObjective,
    QuadraticObjective,
    RegLogisticObjective,
    StochasticOracle,
    global_gradient,
    global_value,
    local_gradient_exact,
    make_pl_sine,
    make_quadratic,
    make_synthetic_logistic,
    partition_dataset,
    stochastic_gradient,
)
from .runner import (
    ExperimentConfig,
    aggregate,
    fingerprint,
    rate_probe,
    run_experiment,
    sign_test_p,
)

__version__ = "0.1.0"
