import dataclasses
import itertools
import json
import logging
import shutil

import numpy as np
import pytest
from sklearn.metrics import roc_auc_score

from asam import TextEmbedder
from config import ModelConfig, TrainConfig, TunerConfig
from errors import CheckpointError, DataError, TrainingError
from harness import (
    AuditReport,
    FoldRun,
    TpeLiteSampler,
    audit_leakage,
    best_trial,
    build_arrays,
    build_model,
    checkpoint_fold,
    checkpoint_path,
    checkpoint_state,
    evaluate,
    evaluate_checkpoints,
    evaluate_scores,
    extract_features,
    grid_objective,
    loss_weights_for,
    loso_split,
    mann_whitney_auc,
    model_grad_check,
    predict,
    roi_macro_f1,
    run_ablation,
    run_loso,
    search,
    split_checkpoint,
    stratified_folds,
    summarize,
    sweep_loss_weights,
    train_model,
    trapezoid_auc,
    tune_thresholds,
    write_reports,
)
from harness.model import BACKBONE_GROUP, HEAD_GROUP
from main import main
from numcore import as_tensor
from rftg import AgeStats, Thresholds, discretize, parse_report, parse_tokens
from storage import load_checkpoint, read_json, read_table, save_checkpoint, save_cohort
from synthgen import CohortSpec, build_default_layout, generate_cohort

TOY = ModelConfig(height=16, width=16, levels=2, token_dim=8, patch_size=4, patch_dim=8, align_dim=4, text_dim=8,
                  state_size=2, vit_layers=2, vit_heads=2, ffn_expansion=2, film_hidden=4, classifier_hidden=6)


def toy_train_config(**overrides) -> TrainConfig:
    base = dict(max_epochs=4, early_stop_patience=2, batch_size=4, freeze_backbone_epochs=2, warmup_epochs=1,
                val_fraction=0.25, model=TOY)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def cohort():
    spec = CohortSpec(n_subjects=24, n_sites=2, timepoints=64, voxels=2, effect_size=2.0, seed=5)
    return generate_cohort(spec)


@pytest.fixture(scope="module")
def layout():
    return build_default_layout(16, 16)


@pytest.fixture(scope="module")
def features(cohort, layout):
    return extract_features(cohort, layout, TOY)


@pytest.fixture(scope="module")
def five_site_cohort():
    return generate_cohort(CohortSpec(n_subjects=50, n_sites=5, timepoints=64, voxels=2, seed=9))


# ====== Metrics ======

def test_perfect_separation_and_all_ties():
    labels = [0, 0, 1, 1]
    assert mann_whitney_auc([0.1, 0.2, 0.8, 0.9], labels) == 1.0
    assert mann_whitney_auc([0.5] * 4, labels) == 0.5


def test_auc_matches_pairwise_enumeration():
    scores = [0.9, 0.3, 0.3, 0.6, 0.1, 0.6]
    labels = [1, 0, 1, 1, 0, 0]
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    assert mann_whitney_auc(scores, labels) == wins / (len(pos) * len(neg))


def test_auc_equals_trapezoid_rule():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(4, 30))
        labels = np.zeros(n, dtype=int)
        labels[rng.permutation(n)[: int(rng.integers(1, n))]] = 1
        scores = np.round(rng.random(n), 1)  # rounding creates ties
        a = mann_whitney_auc(scores, labels)
        assert abs(a - trapezoid_auc(scores, labels)) <= 1e-12
        assert abs(a - roc_auc_score(labels, scores)) <= 1e-12


def test_confusion_identities():
    rng = np.random.default_rng(1)
    for _ in range(20):
        labels = rng.integers(0, 2, size=15)
        labels[:2] = [0, 1]
        m = evaluate_scores(rng.random(15), labels)
        assert m.total == 15
        assert m.acc == (m.tp + m.tn) / 15
        assert m.sen == m.tp / (m.tp + m.fn)
        assert m.spe == m.tn / (m.tn + m.fp)


def test_threshold_is_inclusive():
    m = evaluate_scores([0.5, 0.49], [1, 0])
    assert (m.tp, m.tn) == (1, 1)


def test_single_class_set(caplog):
    with caplog.at_level(logging.WARNING):
        m = evaluate_scores([0.7, 0.2, 0.9], [1, 1, 1])
    assert m.sen == pytest.approx(2 / 3) and m.spe is None and m.auc is None
    assert m.acc == pytest.approx(2 / 3)
    assert "Single-class" in caplog.text


def test_evaluate_shape_mismatch():
    with pytest.raises(DataError):
        evaluate_scores([0.1, 0.2], [1])


def test_summarize_skips_undefined():
    a = evaluate_scores([0.9, 0.1], [1, 0])
    b = evaluate_scores([0.9, 0.8], [1, 1])
    s = summarize([a, b])
    assert s["acc"] == {"mean": 1.0, "std": 0.0, "n": 2}
    assert s["auc"]["n"] == 1 and s["auc"]["mean"] == 1.0


# ====== Splits ======

def test_one_fold_per_site(five_site_cohort):
    folds = loso_split(five_site_cohort, seed=42)
    assert len(folds) == 5
    all_ids = {s.subject_id for s in five_site_cohort}
    for fold in folds:
        site_ids = {s.subject_id for s in five_site_cohort if s.site_id == fold.test_site}
        assert set(fold.test) == site_ids
        parts = [set(fold.train), set(fold.val), set(fold.test)]
        assert set().union(*parts) == all_ids
        assert sum(len(p) for p in parts) == len(all_ids)


def test_split_is_stratified_and_seeded(five_site_cohort):
    by_id = {s.subject_id: s for s in five_site_cohort}
    for fold in loso_split(five_site_cohort, seed=42):
        rest = [by_id[i] for i in fold.train + fold.val]
        ratio = np.mean([s.is_patient for s in rest])
        train_patients = sum(by_id[i].is_patient for i in fold.train)
        assert abs(train_patients - ratio * len(fold.train)) <= 1
    assert loso_split(five_site_cohort, seed=42) == loso_split(five_site_cohort, seed=42)
    assert loso_split(five_site_cohort, seed=42) != loso_split(five_site_cohort, seed=43)


def test_single_site_is_rejected():
    with pytest.raises(DataError, match="two sites"):
        loso_split(generate_cohort(CohortSpec(n_subjects=6, n_sites=1, timepoints=64, voxels=2)))


def test_stratified_folds_partition(five_site_cohort):
    folds = stratified_folds(five_site_cohort, 5, seed=0)
    held = sorted(i for _, test in folds for i in test)
    assert held == list(range(len(five_site_cohort)))
    with pytest.raises(DataError):
        stratified_folds(five_site_cohort[:6], 5, seed=0)


# ====== Threshold search ======

def planted_surface(th: Thresholds):
    score = -((th.tau1 - 0.15) ** 2 + (th.tau2 - 0.30) ** 2)
    return score, [score]


def test_every_trial_is_feasible():
    cfg = TunerConfig(trials=60)
    records = search(planted_surface, cfg, np.random.default_rng(0))
    assert len(records) == 60
    for r in records:
        assert r.tau2 >= r.tau1 + 0.02
        assert 0.05 <= r.tau1 <= 0.45 and r.tau2 <= 0.60


def test_planted_optimum_is_recovered():
    records = search(planted_surface, TunerConfig(trials=100), np.random.default_rng(42))
    best = best_trial(records)
    assert abs(best.tau1 - 0.15) <= 0.03 and abs(best.tau2 - 0.30) <= 0.03


def test_guided_phase_beats_uniform_on_average():
    guided = search(planted_surface, TunerConfig(trials=60), np.random.default_rng(3))
    uniform = search(planted_surface, TunerConfig(trials=60, sampler="uniform"), np.random.default_rng(3))
    assert np.mean([r.objective for r in guided[20:]]) > np.mean([r.objective for r in uniform[20:]])


def test_flat_objective():
    records = search(lambda th: (0.5, [0.5]), TunerConfig(trials=30), np.random.default_rng(1))
    assert {r.objective for r in records} == {0.5}
    best = best_trial(records)
    assert best.trial == 0 and best.tau2 >= best.tau1 + 0.02


def test_search_is_seeded():
    a = search(planted_surface, TunerConfig(trials=30), np.random.default_rng(7))
    b = search(planted_surface, TunerConfig(trials=30), np.random.default_rng(7))
    assert [(r.tau1, r.tau2) for r in a] == [(r.tau1, r.tau2) for r in b]


def test_sampler_never_returns_infeasible_pairs():
    cfg = TunerConfig(tau1_range=(0.05, 0.58), tau2_max=0.60, startup_trials=5)
    sampler = TpeLiteSampler(cfg, np.random.default_rng(0))
    for _ in range(40):
        pair = sampler.ask()
        assert sampler.feasible(*pair)
        sampler.tell(pair, -abs(pair[0] - 0.3))
    assert sampler.rejected > 0


def test_roi_f1_peaks_at_generating_thresholds(features):
    held = list(features.values())
    assert roi_macro_f1(Thresholds(tau1=0.15, tau2=0.30), [], held) > 0.99
    grid = grid_objective(lambda th: roi_macro_f1(th, [], held), TunerConfig(), step=0.01)
    best = grid[np.argmax(grid[:, 2])]
    assert abs(best[0] - 0.15) <= 0.03 and abs(best[1] - 0.30) <= 0.03


def test_nested_tuning_keeps_held_out_fold_apart(cohort, features):
    cfg = toy_train_config(tuner=TunerConfig(trials=25, outer_folds=2, inner_folds=2))
    result = tune_thresholds(cohort, features, cfg, seed=42)
    assert len(result.folds) == 2 and len(result.trials) == 50
    for fold in result.folds:
        assert not set(fold.tuning_ids) & set(fold.held_out_ids)
        assert fold.outer_score is not None
    assert all(r.tau2 >= r.tau1 + 0.02 for r in result.trials)


# ====== Model ======

def test_param_groups_partition_the_model():
    model = build_model(TOY, 0)
    groups = model.param_groups()
    ids = [id(p) for g in groups.values() for p in g]
    assert sorted(ids) == sorted(id(p) for p in model.parameters())
    head = {id(p) for p in groups[HEAD_GROUP]}
    for name, p in model.named_parameters():
        if name.startswith("head.") or ".film." in name:
            assert id(p) in head
    assert {id(p) for p in model.hwm.film.parameters()} <= head
    assert {id(p) for p in model.cste.film.parameters()} <= head


@pytest.mark.parametrize("variant", ["full", "no_hwm", "no_asam", "no_cste", "hwm_only", "cste_only"])
def test_forward_shapes(variant):
    cfg = TOY.model_copy(update={"variant": variant})
    model = build_model(cfg, 0)
    rng = np.random.default_rng(0)
    logits, z = model(rng.normal(size=(3, 3, 16, 16)), rng.normal(size=(3, 3)), rng.normal(size=(3, 8)))
    assert logits.shape == (3, 2) and z.shape == (3, 8)
    assert (model.hwm is not None) == (variant in ("full", "no_asam", "no_cste", "hwm_only"))
    assert (model.cste is not None) == (variant in ("full", "no_hwm", "no_asam", "cste_only"))
    assert model.head.use_text == (variant in ("full", "no_hwm", "no_cste"))


def test_without_encoder_z_is_mean_wavelet_token():
    model = build_model(TOY.model_copy(update={"variant": "no_cste"}), 0)
    rng = np.random.default_rng(1)
    images, demo = rng.normal(size=(2, 3, 16, 16)), rng.normal(size=(2, 3))
    _, z = model(images, demo, rng.normal(size=(2, 8)))
    tokens = model.hwm(as_tensor(images), as_tensor(demo)).tokens.data
    np.testing.assert_allclose(z.data, tokens.mean(axis=1), atol=1e-12)


@pytest.mark.parametrize("variant", ["no_asam", "hwm_only", "cste_only"])
def test_visual_only_variants_turn_off_auxiliary_losses(variant):
    cfg = toy_train_config(model=TOY.model_copy(update={"variant": variant}))
    weights = loss_weights_for(cfg)
    assert (weights.alpha, weights.beta) == (0.0, 0.0)


def test_full_model_gradients_sampled():
    report = model_grad_check(TOY, seed=0, max_entries=3)
    assert report.passed, report.summary()


@pytest.mark.slow
def test_full_model_gradients_exhaustive():
    report = model_grad_check(TOY, seed=0)
    assert report.passed, report.summary()


# ====== Training ======

@pytest.fixture(scope="module")
def fold_data(cohort, features):
    fold = loso_split(cohort, seed=42, val_fraction=0.25)[0]
    stats = AgeStats.from_ages([features[i].age_years for i in fold.train])
    embedder = TextEmbedder(TOY.text_dim)
    arrays = {role: build_arrays([features[i] for i in ids], stats, Thresholds(), embedder)
              for role, ids in fold.roles().items()}
    return fold, arrays


def test_probe_phase_freezes_backbone(fold_data):
    fold, arrays = fold_data
    cfg = toy_train_config(max_epochs=2, freeze_backbone_epochs=2)
    model = build_model(TOY, 1)
    before = {id(p): p.data.copy() for p in model.param_groups()[BACKBONE_GROUP]}
    head_before = [p.data.copy() for p in model.param_groups()[HEAD_GROUP]]
    result = train_model(model, arrays["train"], arrays["val"], cfg, seed=1, early_stop=False)
    model.load_state_dict(result.state)
    for p in model.param_groups()[BACKBONE_GROUP]:
        np.testing.assert_array_equal(p.data, before[id(p)])
    changed = [not np.array_equal(p.data, b) for p, b in zip(model.param_groups()[HEAD_GROUP], head_before)]
    assert any(changed)
    assert [r.phase for r in result.history] == ["probe", "probe"]


def test_training_is_deterministic(fold_data):
    _, arrays = fold_data
    cfg = toy_train_config()
    states = []
    for _ in range(2):
        result = train_model(build_model(TOY, 3), arrays["train"], arrays["val"], cfg, seed=3)
        states.append(result)
    a, b = states
    assert [r.val_loss for r in a.history] == [r.val_loss for r in b.history]
    for name in a.state:
        np.testing.assert_array_equal(a.state[name], b.state[name])


def test_exposure_is_training_split(fold_data):
    fold, arrays = fold_data
    result = train_model(build_model(TOY, 0), arrays["train"], arrays["val"], toy_train_config(max_epochs=2), seed=0)
    assert result.exposure == set(fold.train)


def test_non_finite_loss_aborts_with_context(fold_data):
    _, arrays = fold_data
    model = build_model(TOY, 0)
    model.head.out.bias.data[:] = np.inf
    with pytest.raises(TrainingError, match="epoch 1, batch 0"):
        train_model(model, arrays["train"], arrays["val"], toy_train_config(), seed=0)


def test_empty_training_split(fold_data):
    _, arrays = fold_data
    with pytest.raises(TrainingError, match="empty"):
        train_model(build_model(TOY, 0), arrays["train"].take([]), arrays["val"], toy_train_config(), seed=0)


def test_predict_probabilities(fold_data):
    _, arrays = fold_data
    model = build_model(TOY, 0)
    probs = predict(model, arrays["test"])
    assert probs.shape == (len(arrays["test"]),)
    assert np.all((probs >= 0) & (probs <= 1))
    assert evaluate(model, arrays["test"]).total == len(arrays["test"])


# ====== LOSO, audit, artifacts ======

def test_loso_artifacts_are_reproducible(tmp_path, cohort, layout):
    cfg = toy_train_config(max_epochs=3)
    first = run_loso(cohort, layout, cfg, out_dir=tmp_path / "a")
    run_loso(cohort, layout, cfg, out_dir=tmp_path / "b")
    for name in ("metrics.json", "history.json", "fold0_model.ckpt", "fold1_model.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert all(a.ok for a in first.audits)
    doc = read_json(tmp_path / "a" / "metrics.json")
    assert len(doc["folds"]) == 2 and doc["summary"]["acc"]["n"] == 2

    # stored models reproduce the fold metrics
    stored = evaluate_checkpoints(cohort, layout, cfg, tmp_path / "a")
    assert [m.to_dict() for m in stored] == [r.metrics.to_dict() for r in first.runs]


def test_checkpoint_carries_fold_metadata(tmp_path, cohort, layout):
    cfg = toy_train_config(max_epochs=2)
    result = run_loso(cohort, layout, cfg, out_dir=tmp_path)
    params, stats, th = split_checkpoint(load_checkpoint(checkpoint_path(tmp_path, 0), TOY))
    assert stats == result.runs[0].age_stats
    assert (th.tau1, th.tau2) == (cfg.tau1, cfg.tau2)
    assert not any(k.startswith("meta.") for k in params)
    assert checkpoint_fold(load_checkpoint(checkpoint_path(tmp_path, 1), TOY)) == 1


def test_resume_loads_each_folds_own_checkpoint(tmp_path, cohort, layout):
    cfg = toy_train_config(max_epochs=2)
    run_loso(cohort, layout, cfg, out_dir=tmp_path / "first")
    resumed = run_loso(cohort, layout, cfg, resume=tmp_path / "first")
    assert [r.resumed_from for r in resumed.runs] == [r.fold.index for r in resumed.runs] == [0, 1]
    assert all(a.ok for a in resumed.audits)


def test_cross_fold_resume_fails_the_audit(tmp_path, cohort, layout):
    cfg = toy_train_config(max_epochs=2)
    run_loso(cohort, layout, cfg, out_dir=tmp_path / "first")
    mixed = tmp_path / "mixed"
    mixed.mkdir()
    # fold 1's model trained on fold 0's test site
    shutil.copy(checkpoint_path(tmp_path / "first", 1), checkpoint_path(mixed, 0))
    shutil.copy(checkpoint_path(tmp_path / "first", 1), checkpoint_path(mixed, 1))
    with pytest.raises(DataError, match=r"leakage audit failed for folds \[0\]"):
        run_loso(cohort, layout, cfg, resume=mixed)


def test_resume_needs_a_run_directory(tmp_path, cohort, layout):
    cfg = toy_train_config(max_epochs=2)
    run_loso(cohort, layout, cfg, out_dir=tmp_path)
    with pytest.raises(CheckpointError, match="run directory"):
        run_loso(cohort, layout, cfg, resume=checkpoint_path(tmp_path, 0))
    no_origin = tmp_path / "bare"
    params, stats, th = split_checkpoint(load_checkpoint(checkpoint_path(tmp_path, 0), TOY))
    for k in (0, 1):
        save_checkpoint(checkpoint_path(no_origin, k), checkpoint_state(params, stats, th), TOY)
    with pytest.raises(CheckpointError, match="does not record the fold"):
        run_loso(cohort, layout, cfg, resume=no_origin)


def test_checkpoint_state_round_trip():
    state = checkpoint_state({"w": np.ones(2)}, AgeStats(12.0, 2.5), Thresholds(tau1=0.1, tau2=0.4))
    params, stats, th = split_checkpoint(state)
    assert list(params) == ["w"] and stats == AgeStats(12.0, 2.5) and th.tau2 == 0.4


def test_audit_flags_leaks(cohort, features):
    fold = loso_split(cohort, seed=42, val_fraction=0.25)[0]
    clean_stats = AgeStats.from_ages([features[i].age_years for i in fold.train])

    class Training:
        exposure = set(fold.train) | {fold.test[0]}

    leaky = FoldRun(fold=fold, metrics=None, probs=None, labels=None, training=Training(),
                    age_stats=AgeStats.from_ages([features[i].age_years for i in fold.train + fold.test]),
                    thresholds=Thresholds(), tuning_ids=(fold.test[1],))
    report = audit_leakage(leaky, features)
    assert isinstance(report, AuditReport) and len(report.violations) == 3

    Training.exposure = set(fold.train)
    clean = FoldRun(fold=fold, metrics=None, probs=None, labels=None, training=Training(),
                    age_stats=clean_stats, thresholds=Thresholds())
    assert audit_leakage(clean, features).ok
    assert audit_leakage(dataclasses.replace(clean, resumed_from=fold.index), features).ok
    foreign = audit_leakage(dataclasses.replace(clean, resumed_from=fold.index + 1), features)
    assert foreign.violations == [f"weights resumed from fold {fold.index + 1}, which trained on this test site"]


def test_loss_weight_sweep_rows(tmp_path, cohort, layout):
    cfg = toy_train_config(max_epochs=2)
    rows = sweep_loss_weights(cohort, layout, cfg, alphas=(0.2,), betas=(0.1, 0.3), include_zero=True,
                              out_dir=tmp_path)
    assert [(r["alpha"], r["beta"]) for r in rows] == [(0.2, 0.1), (0.2, 0.3), (0.0, 0.0)]
    table = read_table(tmp_path / "sweep.csv")
    assert list(table.columns) == ["alpha", "beta", "acc", "sen", "spe", "auc"] and len(table) == 3


def test_ablation_covers_every_module_combination(tmp_path, cohort, layout):
    rows = run_ablation(cohort, layout, toy_train_config(max_epochs=2), out_dir=tmp_path)
    assert [r["variant"] for r in rows] == ["full", "no_hwm", "no_asam", "no_cste", "hwm_only", "cste_only"]
    table = read_table(tmp_path / "ablation.csv")
    assert list(table.columns) == ["variant", "acc", "sen", "spe", "auc"] and len(table) == 6
    assert all(0.0 <= r["acc"] <= 1.0 for r in rows)


def test_reports_are_written_and_parse(tmp_path, cohort, layout):
    cfg = toy_train_config()
    paths = write_reports(cohort, layout, cfg, tmp_path, [cohort[0].subject_id, cohort[1].subject_id])
    assert [p.name for p in paths] == ["sub-0000.report.txt", "sub-0001.report.txt"]
    assert (tmp_path / "reports" / "sub-0001.tokens.json").is_file()
    parsed = parse_report(paths[0].read_text())
    assert len(parsed.clauses) == 116
    again = write_reports(cohort, layout, cfg, tmp_path / "again", [cohort[0].subject_id])
    assert again[0].read_bytes() == paths[0].read_bytes()
    with pytest.raises(DataError, match="unknown subject"):
        write_reports(cohort, layout, cfg, tmp_path, ["sub-9999"])


def test_token_file_matches_serialized_tokens(tmp_path, cohort, layout, features):
    subject = cohort[3]
    write_reports(cohort, layout, toy_train_config(), tmp_path, [subject.subject_id])
    tokens = read_json(tmp_path / "reports" / f"{subject.subject_id}.tokens.json")
    assert isinstance(tokens, list) and len(tokens) == 118
    seq = parse_tokens(tokens)
    assert seq.tokens == tokens
    assert seq.sex == ("m" if subject.gender == "male" else "f")
    assert list(seq.triplets) == discretize(features[subject.subject_id].delta_bold, Thresholds())


# ====== CLI ======

def test_cli_usage_errors():
    assert main(["no-such-command"]) == 2
    assert main(["train", "--bogus"]) == 2


def test_cli_missing_cohort(tmp_path, caplog):
    missing = tmp_path / "nowhere"
    with caplog.at_level(logging.ERROR):
        assert main(["train", "--cohort", str(missing), "--out", str(tmp_path / "run")]) == 1
    assert str(missing) in caplog.text


def test_cli_bad_config_file(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text("max_epochs = -3\n")
    assert main(["report", "--config", str(path), "--cohort", str(tmp_path), "--out", str(tmp_path)]) == 1


def test_cli_gen_data_and_report(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"n_subjects": 6, "n_sites": 2, "timepoints": 64, "voxels": 2}))
    out = tmp_path / "cohort"
    assert main(["gen-data", "--spec", str(spec), "--out", str(out), "--seed", "4"]) == 0
    assert read_json(out / "manifest.json")["seed"] == 4
    assert main(["report", "--cohort", str(out), "--out", str(tmp_path), "--subject", "sub-0002"]) == 0
    printed = capsys.readouterr().out
    assert printed == (tmp_path / "reports" / "sub-0002.report.txt").read_text()
    assert len(read_json(tmp_path / "reports" / "sub-0002.tokens.json")) == 118


@pytest.fixture
def small_cohort_dir(tmp_path):
    out = tmp_path / "cohort"
    assert main(["gen-data", "--out", str(out), "--n-subjects", "6", "--seed", "2"]) == 0
    return out


def test_cli_report_thresholds_pair(tmp_path, small_cohort_dir):
    loose, strict = tmp_path / "loose", tmp_path / "strict"
    args = ["report", "--cohort", str(small_cohort_dir), "--subject", "sub-0000", "--thresholds"]
    assert main(args + ["0.15", "0.30", "--out", str(loose)]) == 0
    assert main(args + ["0.05", "0.10", "--out", str(strict)]) == 0
    assert main(args + ["0.15", "--out", str(strict)]) == 2
    loose_tokens = read_json(loose / "reports" / "sub-0000.tokens.json")
    strict_tokens = read_json(strict / "reports" / "sub-0000.tokens.json")
    assert loose_tokens[:2] == strict_tokens[:2]
    assert loose_tokens != strict_tokens


def test_cli_report_rejects_close_thresholds(tmp_path, small_cohort_dir, caplog):
    with caplog.at_level(logging.ERROR):
        code = main(["report", "--cohort", str(small_cohort_dir), "--out", str(tmp_path / "r"),
                     "--thresholds", "0.30", "0.31"])
    assert code == 1
    assert "invalid thresholds" in caplog.text
    assert not (tmp_path / "r" / "reports").exists()


def test_cli_grad_check(capsys):
    assert main(["grad-check", "--entries", "2"]) == 0
    assert "max relative error" in capsys.readouterr().out


# ====== End-to-end ======

@pytest.mark.slow
def test_loso_learns_planted_signal(tmp_path):
    spec = CohortSpec(n_subjects=200, n_sites=5, effect_size=3.0, seed=42)
    cohort = generate_cohort(spec)
    layout = build_default_layout(64, 64)
    save_cohort(tmp_path / "cohort", spec, cohort, layout)
    result = run_loso(cohort, layout, TrainConfig(), out_dir=tmp_path / "run")
    assert result.summary["acc"]["mean"] >= 0.85
    assert result.summary["auc"]["mean"] >= 0.90


@pytest.mark.slow
def test_loso_without_signal_is_chance(tmp_path):
    cohort = generate_cohort(CohortSpec(n_subjects=200, n_sites=5, effect_size=0.0, seed=42))
    result = run_loso(cohort, build_default_layout(64, 64), TrainConfig())
    assert abs(result.summary["acc"]["mean"] - 0.5) <= 0.1


@pytest.mark.slow
def test_threshold_recovery_on_every_outer_fold():
    cohort = generate_cohort(CohortSpec(n_subjects=200, n_sites=5, seed=42))
    cfg = TrainConfig()
    features = extract_features(cohort, build_default_layout(64, 64), cfg.model)
    result = tune_thresholds(cohort, features, cfg, seed=42)
    for tau1, tau2 in result.best_pairs():
        assert abs(tau1 - 0.15) <= 0.03 and abs(tau2 - 0.30) <= 0.03
    assert all(r.tau2 >= r.tau1 + 0.02 for r in result.trials)


@pytest.mark.slow
def test_separable_cohort_reaches_high_validation_accuracy():
    cohort = generate_cohort(CohortSpec(n_subjects=200, n_sites=5, effect_size=3.0, seed=42))
    cfg = TrainConfig(max_epochs=40)
    features = extract_features(cohort, build_default_layout(64, 64), cfg.model)
    fold = loso_split(cohort, cfg.seed, cfg.val_fraction)[0]
    stats = AgeStats.from_ages([features[i].age_years for i in fold.train])
    embedder = TextEmbedder(cfg.model.text_dim)
    train = build_arrays([features[i] for i in fold.train], stats, Thresholds(), embedder)
    val = build_arrays([features[i] for i in fold.val], stats, Thresholds(), embedder)
    result = train_model(build_model(cfg.model, 0), train, val, cfg, seed=0, early_stop=False)
    assert len(result.history) <= 40
    assert max(r.val_acc for r in result.history) >= 0.9
