import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from config import ModelConfig, apply_overrides, load_train_config, read_config_file, settings, with_thresholds
from errors import ConfigError, RtgmffError
from harness import (
    evaluate_checkpoints,
    model_grad_check,
    run_ablation,
    run_loso,
    summarize,
    sweep_loss_weights,
    tune_thresholds,
    write_reports,
)
from harness.data import extract_features
from storage import load_cohort, save_cohort, write_json, write_table
from storage.schemas import ArtifactName
from synthgen import CohortSpec, build_default_layout, generate_cohort

# --- Настройка логирования ---
logging.basicConfig(
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    level=settings.LOG_LEVEL.upper(),
    force=True
)
logger = logging.getLogger(__name__)

# toy dimensions for the standalone gradient check
GRAD_CHECK_CONFIG = ModelConfig(height=16, width=16, levels=2, token_dim=8, patch_size=4, patch_dim=8,
                                align_dim=4, text_dim=8, state_size=2, vit_layers=2, vit_heads=2,
                                ffn_expansion=2, film_hidden=4, classifier_hidden=6)


# ============================= Команда gen-data ===================================

def cmd_gen_data(args, cfg) -> int:
    data = read_config_file(args.spec) if args.spec else {}
    if args.seed is not None or settings.SEED is not None:
        data["seed"] = cfg.seed
    if args.n_subjects is not None:
        data["n_subjects"] = args.n_subjects
    if args.effect_size is not None:
        data["effect_size"] = args.effect_size
    try:
        spec = CohortSpec.model_validate(data)
    except ValueError as e:
        raise ConfigError(f"invalid cohort spec: {e}") from e
    layout = build_default_layout(cfg.model.height, cfg.model.width)
    save_cohort(args.out, spec, generate_cohort(spec), layout)
    return 0


# ============================= Команда tune-thresholds ============================

def cmd_tune(args, cfg) -> int:
    tuner = cfg.tuner.model_copy(update={k: v for k, v in {
        "trials": args.trials, "objective": args.objective, "sampler": args.sampler}.items() if v is not None})
    cfg = cfg.model_copy(update={"tuner": tuner})
    _, subjects, layout = load_cohort(args.cohort)
    features = extract_features(subjects, layout, cfg.model)
    result = tune_thresholds(subjects, features, cfg, cfg.seed, threads=args.threads or settings.THREADS)
    out = Path(args.out)
    write_table(out / ArtifactName.TRIALS.value, [t.row() for t in result.trials], ArtifactName.TRIALS)
    write_json(out / ArtifactName.THRESHOLDS.value, {
        "objective": tuner.objective,
        "folds": [{"outer_fold": f.outer_fold, "tau1": f.tau1, "tau2": f.tau2,
                   "inner_objective": f.inner_objective, "outer_score": f.outer_score} for f in result.folds],
    })
    for f in result.folds:
        print(f"outer fold {f.outer_fold}: tau1={f.tau1:.4f} tau2={f.tau2:.4f} objective={f.inner_objective:.4f}")
    return 0


# ============================= Команды train / eval ===============================

def cmd_train(args, cfg) -> int:
    _, subjects, layout = load_cohort(args.cohort)
    result = run_loso(subjects, layout, cfg, out_dir=args.out, tune=args.tune_thresholds, resume=args.resume,
                      threads=args.threads)
    summary = result.summary
    print(f"acc {summary['acc']['mean']:.4f} ± {summary['acc']['std']:.4f}  auc {summary['auc']['mean']}")
    return 0


def cmd_eval(args, cfg) -> int:
    _, subjects, layout = load_cohort(args.cohort)
    per_fold = evaluate_checkpoints(subjects, layout, cfg, args.run_dir)
    out = Path(args.out or args.run_dir)
    write_json(out / f"eval_{ArtifactName.METRICS.value}",
               {"folds": [m.to_dict() for m in per_fold], "summary": summarize(per_fold)})
    for i, m in enumerate(per_fold):
        print(f"fold {i}: acc={m.acc:.4f} sen={m.sen} spe={m.spe} auc={m.auc}")
    return 0


# ============================= Отчёты, sweep, ablation ============================

def cmd_report(args, cfg) -> int:
    if args.thresholds is not None:
        cfg = with_thresholds(cfg, *args.thresholds)
    _, subjects, layout = load_cohort(args.cohort)
    paths = write_reports(subjects, layout, cfg, args.out, args.subject)
    if len(paths) == 1:
        print(paths[0].read_text(encoding="utf-8"), end="")
    return 0


def cmd_sweep(args, cfg) -> int:
    _, subjects, layout = load_cohort(args.cohort)
    rows = sweep_loss_weights(subjects, layout, cfg, include_zero=args.include_zero, out_dir=args.out)
    for r in rows:
        print(f"alpha={r['alpha']} beta={r['beta']}: acc={r['acc']} auc={r['auc']}")
    return 0


def cmd_ablate(args, cfg) -> int:
    _, subjects, layout = load_cohort(args.cohort)
    for r in run_ablation(subjects, layout, cfg, out_dir=args.out):
        print(f"{r['variant']}: acc={r['acc']} auc={r['auc']}")
    return 0


def cmd_grad_check(args, cfg) -> int:
    report = model_grad_check(GRAD_CHECK_CONFIG, seed=cfg.seed, max_entries=args.entries)
    print(f"max relative error: {report.max_error:.3e}")
    return 0 if report.passed else 1


# ======================= --- Разбор аргументов --- ====================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML/JSON file with TrainConfig fields")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="parallel folds (default RTGMFF_THREADS)")

    parser = argparse.ArgumentParser(prog="rtgmff", description="Multimodal fMRI classifier pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic cohort")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--spec", type=Path, help="cohort spec (JSON or TOML)")
    p.add_argument("--n-subjects", type=int)
    p.add_argument("--effect-size", type=float)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("tune-thresholds", parents=[common], help="nested-CV search for (tau1, tau2)")
    p.add_argument("--cohort", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--objective", choices=["roi_macro_f1", "task_accuracy"])
    p.add_argument("--sampler", choices=["tpe", "uniform"])
    p.set_defaults(handler=cmd_tune)

    p = sub.add_parser("train", parents=[common], help="leave-one-site-out training")
    p.add_argument("--cohort", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--tune-thresholds", action="store_true")
    p.add_argument("--resume", type=Path, help="run directory; fold k warm-starts from its own fold checkpoint")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="re-evaluate stored fold checkpoints")
    p.add_argument("--cohort", type=Path, required=True)
    p.add_argument("--run-dir", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="render text reports")
    p.add_argument("--cohort", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--subject", action="append", help="subject id (repeatable; default all)")
    p.add_argument("--thresholds", nargs=2, type=float, metavar=("TAU1", "TAU2"),
                   help="strength thresholds (default from the config)")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("sweep", parents=[common], help="alpha/beta loss-weight grid")
    p.add_argument("--cohort", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--include-zero", action="store_true", help="add the alpha=beta=0 cell")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("ablate", parents=[common], help="module-combination variants")
    p.add_argument("--cohort", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("grad-check", parents=[common], help="finite-difference check of the full loss")
    p.add_argument("--entries", type=int, default=16, help="sampled entries per parameter tensor")
    p.set_defaults(handler=cmd_grad_check)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.threads is not None and args.threads < 1:
        logger.error(f"--threads must be >= 1, got {args.threads}")
        return 2
    try:
        cfg = apply_overrides(load_train_config(args.config), args.seed)
        return args.handler(args, cfg)
    except RtgmffError as e:
        logger.error(f"❌ {args.command}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
