# tuner.py
# Nested-CV search over (tau1, tau2) with a TPE-lite sampler

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm
from sklearn.metrics import f1_score

from asam import TextEmbedder
from config import TrainConfig, TunerConfig
from harness.data import SubjectFeatures, build_arrays
from harness.model import build_model
from harness.parallel import run_parallel
from harness.splits import fold_seed, stratified_folds
from harness.trainer import evaluate, train_model
from rftg import AgeStats, Thresholds, strength_codes
from synthgen import Subject

logger = logging.getLogger(__name__)

# rejected draws tolerated per accepted sample before a warning
REJECTION_BUDGET = 50

Pair = Tuple[float, float]
# objective(thresholds, fit subjects, held-out subjects) -> score, higher is better
Objective = Callable[[Thresholds, Sequence[SubjectFeatures], Sequence[SubjectFeatures]], float]


@dataclass
class TrialRecord:
    outer_fold: int
    trial: int
    tau1: float
    tau2: float
    inner_scores: List[float]
    objective: float
    status: str = "ok"

    def row(self) -> dict:
        return {"outer_fold": self.outer_fold, "trial": self.trial, "tau1": self.tau1, "tau2": self.tau2,
                "objective": self.objective, "status": self.status}


@dataclass
class OuterFoldResult:
    outer_fold: int
    tau1: float
    tau2: float
    inner_objective: float
    outer_score: Optional[float]
    tuning_ids: Tuple[str, ...]
    held_out_ids: Tuple[str, ...]


@dataclass
class TuningResult:
    folds: List[OuterFoldResult]
    trials: List[TrialRecord] = field(default_factory=list)

    def best_pairs(self) -> List[Pair]:
        return [(f.tau1, f.tau2) for f in self.folds]


# ====== Kernel density helpers ======

def _scott_bandwidth(samples: np.ndarray) -> float:
    """h = 1.06 * std * n^(-1/5), std floored at 0.01"""
    n = samples.size
    if n < 2:
        return 0.1
    std = max(float(np.std(samples, ddof=1)), 0.01)
    return 1.06 * std * n ** -0.2


def _kde_density(x: np.ndarray, samples: np.ndarray, bandwidth: float) -> np.ndarray:
    return norm.pdf(x[:, None], loc=samples[None, :], scale=bandwidth).mean(axis=1) + 1e-10


# ====== Sampler ======

class TpeLiteSampler:
    """
    First startup_trials draws are uniform over the feasible region; after that the
    history is split at the objective median and candidates drawn around the good half
    are ranked by log l(x) / g(x), one axis-aligned KDE per coordinate.
    """

    def __init__(self, cfg: TunerConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.history: List[Tuple[Pair, float]] = []
        self.rejected = 0

    def feasible(self, tau1: float, tau2: float) -> bool:
        low, high = self.cfg.tau1_range
        return low <= tau1 <= high and tau1 + self.cfg.delta <= tau2 <= self.cfg.tau2_max

    def _uniform(self) -> Pair:
        low, high = self.cfg.tau1_range
        rejected = 0
        while True:
            tau1 = float(self.rng.uniform(low, high))
            tau2 = float(self.rng.uniform(low + self.cfg.delta, self.cfg.tau2_max))
            if self.feasible(tau1, tau2):
                break
            rejected += 1
        self._note_rejections(rejected)
        return tau1, tau2

    def _note_rejections(self, rejected: int):
        self.rejected += rejected
        if rejected > REJECTION_BUDGET:
            logger.warning(f"Sampler rejected {rejected} infeasible draws for one trial")

    def _guided(self) -> Pair:
        ranked = sorted(self.history, key=lambda h: -h[1])
        n_good = max(1, len(ranked) // 2)
        good = np.array([p for p, _ in ranked[:n_good]])
        bad = np.array([p for p, _ in ranked[n_good:]]) if len(ranked) > n_good else good
        bw_good = [_scott_bandwidth(good[:, k]) for k in range(2)]
        bw_bad = [_scott_bandwidth(bad[:, k]) for k in range(2)]

        low, high = self.cfg.tau1_range
        candidates, rejected = [], 0
        while len(candidates) < self.cfg.candidates:
            center = good[self.rng.integers(len(good))]
            tau1 = float(np.clip(self.rng.normal(center[0], bw_good[0]), low, high))
            tau2 = float(np.clip(self.rng.normal(center[1], bw_good[1]), low + self.cfg.delta, self.cfg.tau2_max))
            if self.feasible(tau1, tau2):
                candidates.append((tau1, tau2))
            else:
                rejected += 1
        self._note_rejections(rejected)

        cand = np.array(candidates)
        score = np.zeros(len(cand))
        for k in range(2):
            score += np.log(_kde_density(cand[:, k], good[:, k], bw_good[k]))
            score -= np.log(_kde_density(cand[:, k], bad[:, k], bw_bad[k]))
        best = cand[int(np.argmax(score))]
        return float(best[0]), float(best[1])

    def ask(self) -> Pair:
        if self.cfg.sampler == "uniform" or len(self.history) < self.cfg.startup_trials:
            return self._uniform()
        return self._guided()

    def tell(self, pair: Pair, objective: float):
        self.history.append((pair, objective))


def search(objective: Callable[[Thresholds], Tuple[float, List[float]]], cfg: TunerConfig,
           rng: np.random.Generator, outer_fold: int = 0) -> List[TrialRecord]:
    """objective(thresholds) -> (mean score, per-inner-fold scores)"""
    sampler = TpeLiteSampler(cfg, rng)
    records = []
    for trial in range(cfg.trials):
        tau1, tau2 = sampler.ask()
        mean, scores = objective(Thresholds(tau1=tau1, tau2=tau2, delta=cfg.delta))
        sampler.tell((tau1, tau2), mean)
        records.append(TrialRecord(outer_fold=outer_fold, trial=trial, tau1=tau1, tau2=tau2,
                                   inner_scores=list(scores), objective=mean))
    return records


def best_trial(records: Sequence[TrialRecord]) -> TrialRecord:
    """Highest objective; ties go to the earliest trial"""
    return max(records, key=lambda r: (r.objective, -r.trial))


# ====== Objectives ======

def roi_macro_f1(thresholds: Thresholds, fit: Sequence[SubjectFeatures],
                 held_out: Sequence[SubjectFeatures]) -> float:
    """Macro F1 of discretized strengths against the planted strength bins of the held-out subjects"""
    truth = np.concatenate([f.strength_truth for f in held_out])
    pred = np.concatenate([strength_codes(f.delta_bold, thresholds) for f in held_out])
    return float(f1_score(truth, pred, labels=[0, 1, 2], average="macro", zero_division=0))


def task_accuracy_objective(cfg: TrainConfig, seed: int) -> Objective:
    """Short-budget training of the full model; validation accuracy on the held-out inner fold"""
    embedder = TextEmbedder(cfg.model.text_dim)

    def objective(thresholds: Thresholds, fit: Sequence[SubjectFeatures],
                  held_out: Sequence[SubjectFeatures]) -> float:
        stats = AgeStats.from_ages([f.age_years for f in fit])
        train = build_arrays(fit, stats, thresholds, embedder)
        val = build_arrays(held_out, stats, thresholds, embedder)
        model = build_model(cfg.model, seed)
        train_model(model, train, val, cfg, seed, max_epochs=cfg.tuner.inner_epochs, early_stop=False,
                    tag="inner")
        return evaluate(model, val, cfg.batch_size).acc

    return objective


def objective_for(cfg: TrainConfig, seed: int) -> Objective:
    if cfg.tuner.objective == "roi_macro_f1":
        return roi_macro_f1
    return task_accuracy_objective(cfg, seed)


# ====== Nested CV ======

def tune_outer_fold(outer_fold: int, tuning: Sequence[Subject], held_out: Sequence[Subject],
                    features: Dict[str, SubjectFeatures], cfg: TrainConfig, seed: int,
                    objective: Optional[Objective] = None) -> Tuple[OuterFoldResult, List[TrialRecord]]:
    """Trials see only `tuning`; `held_out` is scored once with the chosen pair"""
    objective = objective or objective_for(cfg, seed)
    tuner = cfg.tuner
    inner = stratified_folds(tuning, tuner.inner_folds, fold_seed(seed, outer_fold, 1))
    pools = [([features[tuning[i].subject_id] for i in fit], [features[tuning[i].subject_id] for i in val])
             for fit, val in inner]

    def averaged(thresholds: Thresholds) -> Tuple[float, List[float]]:
        scores = [objective(thresholds, fit, val) for fit, val in pools]
        return float(np.mean(scores)), scores

    records = search(averaged, tuner, np.random.default_rng(fold_seed(seed, outer_fold, 2)), outer_fold)
    best = best_trial(records)
    chosen = Thresholds(tau1=best.tau1, tau2=best.tau2, delta=tuner.delta)
    fit_all = [features[s.subject_id] for s in tuning]
    outer_score = objective(chosen, fit_all, [features[s.subject_id] for s in held_out]) if held_out else None
    logger.info(f"✅ Outer fold {outer_fold}: best (tau1={best.tau1:.3f}, tau2={best.tau2:.3f}), "
                f"inner {best.objective:.4f}, outer {outer_score}")
    result = OuterFoldResult(outer_fold=outer_fold, tau1=best.tau1, tau2=best.tau2, inner_objective=best.objective,
                             outer_score=outer_score, tuning_ids=tuple(s.subject_id for s in tuning),
                             held_out_ids=tuple(s.subject_id for s in held_out))
    return result, records


def tune_thresholds(subjects: Sequence[Subject], features: Dict[str, SubjectFeatures], cfg: TrainConfig,
                    seed: int, objective: Optional[Objective] = None, threads: int = 1) -> TuningResult:
    """Outer stratified folds, each tuned on its own inner folds; run in parallel, gathered in fold order"""
    outer = stratified_folds(subjects, cfg.tuner.outer_folds, seed)
    jobs = [
        (lambda k=k, fit=fit, test=test: tune_outer_fold(
            k, [subjects[i] for i in fit], [subjects[i] for i in test], features, cfg, seed, objective))
        for k, (fit, test) in enumerate(outer)
    ]
    results = run_parallel(jobs, threads)
    trials = [r for _, records in results for r in records]
    return TuningResult(folds=[fold for fold, _ in results], trials=trials)


def grid_objective(objective: Callable[[Thresholds], float], cfg: TunerConfig, step: float = 0.01) -> np.ndarray:
    """Exhaustive lattice scan: rows (tau1, tau2, score) over every feasible lattice point"""
    low, high = cfg.tau1_range
    rows = []
    for tau1 in np.arange(low, high + step / 2, step):
        for tau2 in np.arange(tau1 + cfg.delta, cfg.tau2_max + step / 2, step):
            t1, t2 = round(float(tau1), 10), round(float(tau2), 10)
            if t2 > cfg.tau2_max + 1e-9 or t2 < t1 + cfg.delta - 1e-9:
                continue
            rows.append((t1, t2, objective(Thresholds(tau1=t1, tau2=t2, delta=cfg.delta))))
    return np.array(rows)
