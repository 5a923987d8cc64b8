"""Selective classification by per-class one-sided decision sets."""

from .core import (
    CapacityError,
    DecisionSetFamily,
    FormatError,
    InputError,
    LabeledDataset,
    LabeledExample,
    Metrics,
    NumericError,
    REJECT,
    SelectiveDecision,
    assign,
    classify,
    evaluate,
)
from .data import (
    BlobsParams,
    MixtureParams,
    SyntheticSpec,
    ingest_csv,
    mixture_oracle_coverage,
    mixture_posterior,
    split_dataset,
    synthesize,
    two_class_mixture,
    write_csv,
)
from .evaluation import (
    ConsistencyReport,
    CurvePoint,
    consistency_check,
    coverage_error_curve,
    interpolate_coverage,
    osp_overlap,
    sr_baseline,
)
from .net import (
    BackboneSpec,
    SelectiveModel,
    deserialize,
    forward_batch,
    init_model,
    serialize,
)
from .oracle import (
    FiniteHypothesisClass,
    OracleSolution,
    PointMaskSet,
    analytic_example_coverage,
    budget_alpha_grid,
    canonical_cuts,
    default_alpha_grid,
    erm_feasibility_trend,
    overlap_mass,
    sample_analytic_example,
    solve_osp_decoupled,
    solve_osp_exact,
    solve_sc_exact,
)
from .pipeline import (
    PipelineResult,
    RunConfig,
    config_hash,
    load_config,
    run_pipeline,
    save_config,
)
from .select import (
    SelectionCriterion,
    SelectionGrid,
    SelectionResult,
    default_threshold_grid,
    evaluate_grid,
    full_mu_grid,
    harden,
    pick_coverage_constrained,
    pick_error_constrained,
    quick_mu_grid,
    select_coverage_constrained,
    select_error_constrained,
)
from .train import (
    LagrangianState,
    TrainConfig,
    TrainingLog,
    sgda_train,
    warm_start,
)

__version__ = "0.1.0"
