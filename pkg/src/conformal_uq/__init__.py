"""Conformal prediction sets (APS/RAPS) and baseline uncertainty measures
for classifier probability outputs."""

from .baselines import (
    EdlSummary,
    McdSummary,
    dirichlet_log_density,
    edl_kl_to_uniform,
    edl_loss,
    edl_loss_grad,
    edl_summarize,
    mcd_summarize,
)
from .conformal import (
    APS,
    RAPS,
    Calibrator,
    CoverageBound,
    PredictionSet,
    ScoringConfig,
    aps_score,
    calibrate,
    conformal_quantile,
    conformity_scores,
    coverage_bound,
    load_calibrator,
    predict_set,
    predict_sets,
    raps_score,
    save_calibrator,
    set_sizes,
    set_uncertainty,
)
from .evaluation import (
    StratifiedStats,
    alpha_sweep,
    calibration_size_sweep,
    compare_methods,
    empirical_coverage,
    histogram,
    set_size_stats,
    stratify_uncertainty,
)
from .scores import LabeledScores, predicted_label, validate_scores
from .synth import (
    OracleConfig,
    ShiftConfig,
    generate,
    generate_evidence,
    generate_mcd_stack,
    shift,
)

__version__ = "0.1.0"
