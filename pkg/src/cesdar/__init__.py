"""Communication-efficient l0-penalized least squares.

A single-machine support-detection-and-root-finding solver, a simulated
M-machine cluster running the communication-efficient variant (with a
low-communication mode and exact per-message byte accounting), adaptive
sparsity tuning by HBIC, and a reproducible benchmark harness.
"""

from .config import ExperimentConfig, SolverConfig, TuningConfig
from .cluster import (
    CommLedger,
    Partition,
    SimulatedCluster,
    WorkerMessage,
    cesdar_fit,
    ecesdar_fit,
    partition,
    surrogate_root_find,
)
from .data import (
    Dataset,
    GroundTruth,
    SyntheticSpec,
    example_config,
    generate,
    generate_test,
    ingest_csv,
    load_cache,
    save_cache,
    split,
)
from .exceptions import (
    CesdarError,
    ConfigurationError,
    DegenerateColumnError,
    IngestError,
    SingularSystemError,
    WorkerUnavailableError,
)
from .metrics import (
    MetricsSummary,
    TrialResult,
    bound_check,
    discovery_rates,
    estimation_error,
    mutual_coherence,
    oracle_indicator,
    prediction_error,
    run_cell,
    src_constants,
    theory_bounds,
)
from .sdar import (
    FitResult,
    IterState,
    SparseCoefficients,
    detect_active,
    dual_and_curvature,
    esdar_fit,
    hard_threshold,
    kkt_residual,
    root_find_local,
)
from .tuning import PathPoint, acesdar_fit, hbic, max_sparsity_cap

__version__ = "0.1.0"
