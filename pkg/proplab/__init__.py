from .evaluation import (
    BaselineKind,
    PredictiveDistribution,
    SweepConfig,
    baseline_predict,
    feedback_response_curve,
    predict_next,
    quadratic_score,
    training_fraction_sweep,
)
from .eventlog import EventLog, EventRecord, load_event_log, save_event_log
from .hdp import GlobalPopularity, HdpParams, estimate_beta, stick_breaking
from .inference import (
    FitConfig,
    FitResult,
    Priors,
    Q0Treatment,
    collapsed_log_posterior,
    estimate_q0_map,
    fit,
    log_posterior,
    sequence_log_likelihood,
)
from .model import (
    LearningParams,
    ModelParams,
    PropensityState,
    RewardFunction,
    apply_update,
    choice_distribution,
    grow_state,
    reward,
    sample_trajectory,
)
from .simulation import (
    Regime,
    SimConfig,
    aggregate_runs,
    classify_trajectory,
    run_seeding,
)
from .synthetic import generate_synthetic_log
from .version import __version__
