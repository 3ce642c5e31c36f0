"""partmest: partitioning-based M-estimation with uniform confidence bands."""

__version__ = "0.1.0"

from .exceptions import (
    BasisMismatch,
    BoxRequired,
    CellTooSparse,
    CovarianceNotPSD,
    DataError,
    DegenerateDomain,
    DerivativeOrderTooHigh,
    InvalidP,
    LinkRangeInvalid,
    NonPositiveTuning,
    NotConverged,
    NumericalError,
    OutOfDomain,
    PartmestError,
    QuasiUniformityViolated,
    ResponseOutOfRange,
    SingularQ,
    UnsupportedOrder,
    WrongModel,
)
from .partition import Domain, Partition, build_tensor_partition, cell_geometry, locate
from .basis import Basis, BasisSpec, build_basis, check_local_basis
from .losses import (
    LINKS,
    Link,
    LossModel,
    cloglog_link,
    distribution_loss,
    huber_loss,
    identity_link,
    logistic_loss,
    logit_link,
    loss_from_dict,
    loss_to_dict,
    lp_loss,
    model_from_key,
    quantile_loss,
    tukey_loss,
)
from .solver import Dataset, FitResult, SolverOptions, auto_box_radius, fit, fit_per_cell
from .sandwich import (
    BandedMatrix,
    SandwichSet,
    bahadur_linearization,
    banded_decay_report,
    build_sandwich,
    compute_Omega,
    compute_Qhat,
    compute_Sigmahat,
)
from .inference import (
    BandResult,
    EvalGrid,
    cte_band,
    default_x_grid,
    level_band,
    marginal_effect_band,
    simulate_band,
    simulate_band_brownian_bridge,
    t_process,
)
from .streams import ENV_WORKERS, default_workers, philox_stream
from .harness import (
    DGPS,
    SCHEMA_VERSION,
    DGPSpec,
    ExperimentConfig,
    RunReport,
    cells_for_coverage,
    cells_for_rate,
    generate,
    read_csv_dataset,
    read_fit_json,
    run_bahadur,
    run_coverage,
    run_rates,
    write_band_csv,
    write_fit_json,
)
