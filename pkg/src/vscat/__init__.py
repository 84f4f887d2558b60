"""Channel gain map reconstruction from sparse power measurements.

A forward channel model built on virtual scatterers with per-sector response
coefficients, a progressive estimator for their number/positions/SRCs, GPR
inference of unmeasured coefficients, synthetic ground truth, and three
baseline reconstruction methods behind one interface.
"""

from .baselines import (
    BaselineConfig,
    issm_reconstruct,
    kpsm_reconstruct,
    kriging_reconstruct,
)
from .channel import (
    Cgm,
    ConstraintRegion,
    VirtualScattererSet,
    path_gain,
    path_power,
    predict_gain,
    predict_map,
)
from .estimation import (
    DesignMatrix,
    EstimatorConfig,
    FitReport,
    build_design,
    init_positions,
    ls_estimate_srcs,
    objective_value,
    position_gradient,
    progressive_estimate,
    refine_position,
)
from .exceptions import (
    DegenerateSystemError,
    FileFormatError,
    InvalidArgumentError,
    MissingCoefficientError,
    NumericError,
    RankDeficiencyError,
    VscatError,
)
from .geometry import (
    TX_ID,
    AodSectorization,
    Box3,
    GridMap,
    PhysicalScatterer,
    Scene,
    aod_of,
    los_visible,
    partition_region,
    sector_center,
    sector_index,
)
from .gpr import (
    GprConfig,
    GprModel,
    complete_model,
    fit_hyperparams,
    kernel,
    log_marginal_likelihood,
    make_gpr_model,
    predict_src,
    reconstruct_cgm,
    run_proposed,
)
from .metrics import ExperimentSpec, map_nmse, run_experiment
from .seeding import derive_seed
from .synth import MeasurementSet, TruthSpec, generate_truth, sample_measurements

__version__ = "0.1.0"
