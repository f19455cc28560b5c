"""Simulator and analysis library for pilot-free noncoherent over-the-air
aggregation of soft labels in federated distillation."""

from .analysis import (
    CrossoverAnalysis,
    CrossoverModel,
    ar1_acf,
    calibrate_noise,
    crossover_threshold,
    effective_samples,
    mismatch_bias,
    mismatch_bias_bound,
    scene_variance_diagonal,
    variance_bound,
    variance_bound_max_form,
)
from .channel import (
    PathlossModel,
    ReceivedEnergies,
    sample_pathloss,
    simulate_round,
    simulate_round_correlated,
    simulate_rounds,
)
from .core import (
    ChannelModel,
    DevicePopulation,
    DeviceProfile,
    RandomSource,
    RoundConfig,
    SoftLabel,
    population_from_arrays,
    validate_soft_label,
    weighted_average,
)
from .estimators import (
    AggregateResult,
    project_simplex,
    ratio_estimate,
    scene_estimate,
    scene_raw,
    top_t_truncate,
)
from .fd import (
    DatasetSpec,
    FdMetrics,
    FdProtocolConfig,
    SoftmaxClassifier,
    SyntheticDataset,
    one_shot_distill,
    pretrain_clients,
    run_fd,
    split_dataset,
)
from .montecarlo import (
    ExperimentSpec,
    LabelSpec,
    MseConstantEstimate,
    PopulationSpec,
    ResultRow,
    TrialStats,
    estimate_mse_constants,
    run_experiment,
)
from .power import (
    EnergyFrame,
    RhoReport,
    map_energies,
    min_rho,
    run_min_rho_protocol,
)

__version__ = "0.1.0"
