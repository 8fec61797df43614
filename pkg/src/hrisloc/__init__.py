"""Joint user and hybrid-RIS localization: simulator, multi-stage
estimator, and Cramer-Rao bound toolkit."""

from .errors import (
    CoincidentPoints,
    DegenerateDirections,
    DegenerateGeometry,
    DegenerateTriangle,
    HrislocError,
    MissingColumn,
    NotUnit,
    OddT,
    SingularFIM,
    SingularReducedFIM,
    StageFailure,
    WeakSignal,
)
from .geometry import (
    AnglePair,
    Rotation,
    RotationAngles,
    angles_from_direction,
    direction_global,
    direction_local,
    rotation_from_angles,
    unit_from_angles,
    wrap_angle,
)
from .scenario import (
    SPEED_OF_LIGHT,
    RadioConfig,
    Scenario,
    default_scenario,
    load_scenario,
    noise_variance,
    place_scatterers,
    save_scenario,
)
from .signal import (
    ChannelParams,
    CodebookSchedule,
    ObservationSet,
    build_schedule,
    channel_params_from_scenario,
    delay_steering,
    dump_observations,
    fixed_gain_magnitudes,
    friis_gain_magnitudes,
    load_observations,
    mean_observations,
    steering_vector,
    synthesize,
)
from .fim import (
    BoundReport,
    channel_fim,
    compute_bounds,
    constrained_crb,
    efim_channel,
    extract_bounds,
    state_crb_with_known,
    state_fim,
    state_jacobian,
)
from .estimator import (
    EstimateResult,
    estimate_bs_ris_channel,
    estimate_direct_channel,
    estimate_reflected_channel,
    estimate_rotation,
    estimate_toa,
    run_pipeline,
    separate_paths,
    solve_positions_and_clocks,
)
from .experiment import (
    MetricRow,
    SweepSpec,
    monte_carlo,
    rho_sweep_bounds,
    scatterer_study,
    write_bound_rows,
    write_metric_rows,
)

__version__ = "0.1.0"
