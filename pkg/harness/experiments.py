# experiments.py
# Leave-one-site-out runs, leakage audit, loss-weight sweep, ablations, reports

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from asam import LossWeights, TextEmbedder
from config import TrainConfig, settings
from errors import CheckpointError, DataError
from harness.data import FoldArrays, SubjectFeatures, build_arrays, extract_features
from harness.metrics import Metrics, evaluate_scores, summarize
from harness.model import build_model, loss_weights_for
from harness.parallel import run_parallel
from harness.splits import Fold, fold_seed, loso_split
from harness.trainer import TrainResult, predict, train_model
from harness.tuner import tune_outer_fold
from rftg import AgeStats, Thresholds, demographic_vector, discretize, render_report, serialize_tokens
from storage import load_checkpoint, save_checkpoint, write_json, write_table
from storage.schemas import META_PREFIX, REPORT_SUFFIX, TOKENS_SUFFIX, ArtifactName
from synthgen import AtlasLayout, Subject

logger = logging.getLogger(__name__)

ALPHA_GRID = (0.2, 0.5, 0.8)
BETA_GRID = (0.1, 0.2, 0.3)
VARIANTS = ("full", "no_hwm", "no_asam", "no_cste", "hwm_only", "cste_only")


@dataclass
class FoldRun:
    fold: Fold
    metrics: Metrics
    probs: np.ndarray
    labels: np.ndarray
    training: TrainResult
    age_stats: AgeStats
    thresholds: Thresholds
    tuning_ids: Tuple[str, ...] = ()
    resumed_from: Optional[int] = None   # fold whose checkpoint seeded the weights


@dataclass
class AuditReport:
    fold: int
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass
class LosoResult:
    runs: List[FoldRun]
    audits: List[AuditReport]

    @property
    def summary(self) -> Dict:
        return summarize([r.metrics for r in self.runs])

    def metrics_document(self) -> Dict:
        return {
            "folds": [{
                "fold": r.fold.index,
                "test_site": r.fold.test_site,
                "n_test": len(r.fold.test),
                "best_epoch": r.training.best_epoch,
                "thresholds": [r.thresholds.tau1, r.thresholds.tau2],
                **r.metrics.to_dict(),
            } for r in self.runs],
            "summary": self.summary,
        }

    def history_document(self) -> Dict:
        return {f"fold{r.fold.index}": r.training.history_dicts() for r in self.runs}


# ====== Checkpoint metadata ======

def checkpoint_state(params: Dict[str, np.ndarray], age_stats: AgeStats, thresholds: Thresholds,
                     fold: Optional[int] = None) -> Dict[str, np.ndarray]:
    state = dict(params)
    state[f"{META_PREFIX}age_stats"] = np.array([age_stats.mean, age_stats.std])
    state[f"{META_PREFIX}thresholds"] = np.array([thresholds.tau1, thresholds.tau2, thresholds.delta])
    if fold is not None:
        state[f"{META_PREFIX}fold"] = np.array([float(fold)])
    return state


def checkpoint_fold(state: Dict[str, np.ndarray]) -> Optional[int]:
    stored = state.get(f"{META_PREFIX}fold")
    return None if stored is None else int(stored[0])


def split_checkpoint(state: Dict[str, np.ndarray]) -> Tuple[Dict[str, np.ndarray], AgeStats, Thresholds]:
    try:
        mean, std = state[f"{META_PREFIX}age_stats"]
        tau1, tau2, delta = state[f"{META_PREFIX}thresholds"]
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint lacks fold metadata: {e}") from e
    params = {k: v for k, v in state.items() if not k.startswith(META_PREFIX)}
    return params, AgeStats(mean=float(mean), std=float(std)), Thresholds(tau1=tau1, tau2=tau2, delta=delta)


def checkpoint_path(run_dir: Path, fold: int) -> Path:
    return Path(run_dir) / f"fold{fold}_{ArtifactName.CHECKPOINT.value}"


def load_resume_states(run_dir: Path, folds: Sequence[Fold],
                       cfg: TrainConfig) -> Dict[int, Tuple[Dict[str, np.ndarray], int]]:
    """Per fold: the parameters of the run directory's checkpoint for that fold, and the fold it records"""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise CheckpointError(f"resume expects a run directory with fold checkpoints: {run_dir}")
    out = {}
    for fold in folds:
        path = checkpoint_path(run_dir, fold.index)
        state = load_checkpoint(path, cfg.model)
        origin = checkpoint_fold(state)
        if origin is None:
            raise CheckpointError(f"{path} does not record the fold it was trained for")
        params, _, _ = split_checkpoint(state)
        out[fold.index] = (params, origin)
    return out


# ====== One fold ======

def fold_arrays(fold: Fold, features: Dict[str, SubjectFeatures], age_stats: AgeStats, thresholds: Thresholds,
                embedder: TextEmbedder) -> Dict[str, FoldArrays]:
    return {role: build_arrays([features[i] for i in ids], age_stats, thresholds, embedder)
            for role, ids in fold.roles().items()}


def run_fold(fold: Fold, subjects_by_id: Dict[str, Subject], features: Dict[str, SubjectFeatures],
             cfg: TrainConfig, weights: Optional[LossWeights] = None, tune: bool = False,
             initial_state: Optional[Dict[str, np.ndarray]] = None, resumed_from: Optional[int] = None) -> FoldRun:
    tag = f"fold {fold.index}"
    logger.info(f"{tag}: start (test site {fold.test_site})")
    thresholds = Thresholds(tau1=cfg.tau1, tau2=cfg.tau2, delta=cfg.tuner.delta)
    tuning_ids: Tuple[str, ...] = ()
    if tune:
        # the outer test site never enters the search
        tuning = [subjects_by_id[i] for i in fold.train + fold.val]
        tuned, _ = tune_outer_fold(fold.index, tuning, [], features, cfg, fold_seed(cfg.seed, fold.index, 3))
        thresholds = Thresholds(tau1=tuned.tau1, tau2=tuned.tau2, delta=cfg.tuner.delta)
        tuning_ids = tuned.tuning_ids

    age_stats = AgeStats.from_ages([features[i].age_years for i in fold.train])
    arrays = fold_arrays(fold, features, age_stats, thresholds, TextEmbedder(cfg.model.text_dim))
    model = build_model(cfg.model, fold_seed(cfg.seed, fold.index, 0))
    training = train_model(model, arrays["train"], arrays["val"], cfg, fold_seed(cfg.seed, fold.index, 1),
                           weights=weights, initial_state=initial_state, tag=tag)
    probs = predict(model, arrays["test"], cfg.batch_size)
    metrics = evaluate_scores(probs, arrays["test"].labels)
    logger.info(f"✅ {tag}: acc={metrics.acc:.3f} auc={metrics.auc}")
    return FoldRun(fold=fold, metrics=metrics, probs=probs, labels=arrays["test"].labels, training=training,
                   age_stats=age_stats, thresholds=thresholds, tuning_ids=tuning_ids,
                   resumed_from=resumed_from)


def audit_leakage(run: FoldRun, features: Dict[str, SubjectFeatures]) -> AuditReport:
    """Recompute every training-time statistic from the training split and compare"""
    fold = run.fold
    report = AuditReport(fold=fold.index)
    expected = AgeStats.from_ages([features[i].age_years for i in fold.train])
    if expected != run.age_stats:
        report.violations.append(f"age statistics {run.age_stats} differ from training-split {expected}")
    train = set(fold.train)
    outside = sorted(run.training.exposure - train)
    if outside:
        report.violations.append(f"train-mode forward passes saw non-training subjects {outside[:5]}")
    overlap = sorted(set(run.tuning_ids) & set(fold.test))
    if overlap:
        report.violations.append(f"threshold search used test subjects {overlap[:5]}")
    if run.resumed_from is not None and run.resumed_from != fold.index:
        report.violations.append(f"weights resumed from fold {run.resumed_from}, which trained on this test site")
    if report.ok:
        logger.info(f"Audit fold {fold.index}: clean")
    else:
        logger.error(f"Audit fold {fold.index}: {report.violations}")
    return report


# ====== LOSO ======

def run_loso(subjects: Sequence[Subject], layout: AtlasLayout, cfg: TrainConfig, out_dir: Optional[Path] = None,
             weights: Optional[LossWeights] = None, tune: bool = False, resume: Optional[Path] = None,
             features: Optional[Dict[str, SubjectFeatures]] = None, threads: Optional[int] = None) -> LosoResult:
    features = features or extract_features(subjects, layout, cfg.model)
    by_id = {s.subject_id: s for s in subjects}
    folds = loso_split(subjects, cfg.seed, cfg.val_fraction)
    resumed = load_resume_states(resume, folds, cfg) if resume is not None else {}
    jobs = [(lambda f=f: run_fold(f, by_id, features, cfg, weights, tune, *resumed.get(f.index, (None, None))))
            for f in folds]
    runs = run_parallel(jobs, threads or settings.THREADS)
    audits = [audit_leakage(r, features) for r in runs]
    bad = [a for a in audits if not a.ok]
    if bad:
        raise DataError(f"leakage audit failed for folds {[a.fold for a in bad]}: {bad[0].violations}")
    result = LosoResult(runs=runs, audits=audits)

    if out_dir is not None:
        out_dir = Path(out_dir)
        write_json(out_dir / ArtifactName.METRICS.value, result.metrics_document())
        write_json(out_dir / ArtifactName.HISTORY.value, result.history_document())
        for r in runs:
            save_checkpoint(checkpoint_path(out_dir, r.fold.index),
                            checkpoint_state(r.training.state, r.age_stats, r.thresholds, r.fold.index), cfg.model)
    summary = result.summary
    logger.info(f"✅ LOSO done: acc {summary['acc']['mean']:.3f} ± {summary['acc']['std']:.3f}, "
                f"auc {summary['auc']['mean']}")
    return result


def evaluate_checkpoints(subjects: Sequence[Subject], layout: AtlasLayout, cfg: TrainConfig,
                         run_dir: Path) -> List[Metrics]:
    """Re-evaluate each fold's stored model on its test site, with the stored fold statistics"""
    features = extract_features(subjects, layout, cfg.model)
    embedder = TextEmbedder(cfg.model.text_dim)
    out = []
    for fold in loso_split(subjects, cfg.seed, cfg.val_fraction):
        params, age_stats, thresholds = split_checkpoint(load_checkpoint(checkpoint_path(run_dir, fold.index), cfg.model))
        model = build_model(cfg.model, 0)
        model.load_state_dict(params)
        test = build_arrays([features[i] for i in fold.test], age_stats, thresholds, embedder)
        out.append(evaluate_scores(predict(model, test, cfg.batch_size), test.labels))
    return out


# ====== Sweep / ablation ======

def _mean_row(result: LosoResult) -> Dict[str, Optional[float]]:
    return {name: stats["mean"] for name, stats in result.summary.items()}


def sweep_loss_weights(subjects: Sequence[Subject], layout: AtlasLayout, cfg: TrainConfig,
                       alphas: Sequence[float] = ALPHA_GRID, betas: Sequence[float] = BETA_GRID,
                       include_zero: bool = False, out_dir: Optional[Path] = None) -> List[Dict]:
    features = extract_features(subjects, layout, cfg.model)
    cells = [(a, b) for a in alphas for b in betas]
    if include_zero:
        cells.append((0.0, 0.0))
    rows = []
    for alpha, beta in cells:
        logger.info(f"Sweep cell alpha={alpha}, beta={beta}")
        result = run_loso(subjects, layout, cfg, weights=loss_weights_for(cfg, alpha, beta), features=features)
        rows.append({"alpha": alpha, "beta": beta, **_mean_row(result)})
    if out_dir is not None:
        write_table(Path(out_dir) / ArtifactName.SWEEP.value, rows, ArtifactName.SWEEP)
    return rows


def run_ablation(subjects: Sequence[Subject], layout: AtlasLayout, cfg: TrainConfig,
                 variants: Sequence[str] = VARIANTS, out_dir: Optional[Path] = None) -> List[Dict]:
    features = extract_features(subjects, layout, cfg.model)
    rows = []
    for variant in variants:
        variant_cfg = cfg.model_copy(update={"model": cfg.model.model_copy(update={"variant": variant})})
        logger.info(f"Ablation variant {variant}")
        result = run_loso(subjects, layout, variant_cfg, features=features)
        rows.append({"variant": variant, **_mean_row(result)})
    if out_dir is not None:
        write_table(Path(out_dir) / ArtifactName.ABLATION.value, rows, ArtifactName.ABLATION)
    return rows


# ====== Reports ======

def subject_report(subject: Subject, features: SubjectFeatures, thresholds: Thresholds) -> str:
    return render_report(discretize(features.delta_bold, thresholds), subject.age_years, subject.gender)


def subject_tokens(subject: Subject, features: SubjectFeatures, thresholds: Thresholds) -> List[str]:
    # only the raw age bucket and sex reach the tokens, so no fold age statistics are needed
    demo = demographic_vector(subject.age_years, subject.gender, 0.0, 1.0)
    return serialize_tokens(discretize(features.delta_bold, thresholds), demo).tokens


def write_reports(subjects: Sequence[Subject], layout: AtlasLayout, cfg: TrainConfig, out_dir: Path,
                  subject_ids: Optional[Sequence[str]] = None) -> List[Path]:
    """Writes <id>.report.txt and <id>.tokens.json per subject; returns the report paths"""
    by_id = {s.subject_id: s for s in subjects}
    wanted = list(subject_ids) if subject_ids else sorted(by_id)
    missing = [i for i in wanted if i not in by_id]
    if missing:
        raise DataError(f"unknown subject ids: {missing}")
    chosen = [by_id[i] for i in wanted]
    features = extract_features(chosen, layout, cfg.model)
    thresholds = Thresholds(tau1=cfg.tau1, tau2=cfg.tau2, delta=cfg.tuner.delta)
    report_dir = Path(out_dir) / ArtifactName.REPORTS.value
    report_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in chosen:
        path = report_dir / f"{s.subject_id}{REPORT_SUFFIX}"
        path.write_text(subject_report(s, features[s.subject_id], thresholds), encoding="utf-8")
        tokens = subject_tokens(s, features[s.subject_id], thresholds)
        write_json(report_dir / f"{s.subject_id}{TOKENS_SUFFIX}", tokens)
        paths.append(path)
    logger.info(f"✅ {len(paths)} reports written to {report_dir}")
    return paths
