from harness.metrics import METRIC_NAMES, Metrics, evaluate_scores, mann_whitney_auc, summarize, trapezoid_auc
from harness.splits import Fold, fold_seed, labels_of, loso_split, stratified_folds
from harness.data import FoldArrays, SubjectFeatures, build_arrays, extract_features
from harness.model import RtgmffModel, build_model, loss_weights_for, model_grad_check
from harness.parallel import run_parallel
from harness.trainer import EpochRecord, TrainResult, evaluate, predict, train_model
from harness.tuner import (
    OuterFoldResult,
    TpeLiteSampler,
    TrialRecord,
    TuningResult,
    best_trial,
    grid_objective,
    roi_macro_f1,
    search,
    task_accuracy_objective,
    tune_outer_fold,
    tune_thresholds,
)
from harness.experiments import (
    ALPHA_GRID,
    BETA_GRID,
    VARIANTS,
    AuditReport,
    FoldRun,
    LosoResult,
    audit_leakage,
    checkpoint_fold,
    checkpoint_path,
    checkpoint_state,
    evaluate_checkpoints,
    load_resume_states,
    run_ablation,
    run_fold,
    run_loso,
    split_checkpoint,
    subject_report,
    subject_tokens,
    sweep_loss_weights,
    write_reports,
)
