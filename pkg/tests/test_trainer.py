import json

import numpy as np
import pytest

from graphcfc import autodiff as ad
from graphcfc.config import TrainConfig
from graphcfc.corpus import COARSE_LABELS, GeneratorConfig, generate_synthetic, split_corpus
from graphcfc.paircc import GraphCFC
from graphcfc.trainer import (HISTORY_FIELDS, REPORT_FIELDS, STUDIES, LabelMismatch, TrainingDivergence,
                              _study_cells, evaluate, iter_batches, run_ablation, train)

DATA = GeneratorConfig(num_dialogues=10, min_len=2, max_len=4, dim_t=3, dim_a=3, dim_v=3)
CFG = TrainConfig(dim=4, layers=1, heads=1, epochs=2, batch_size=4)


@pytest.fixture(scope="module")
def splits():
    return split_corpus(generate_synthetic(DATA, 0))


def test_iter_batches_covers_order():
    chunks = list(iter_batches(list("abcde"), 2, [4, 3, 2, 1, 0]))
    assert chunks == [["e", "d"], ["c", "b"], ["a"]]


def test_training_is_deterministic(splits):
    tr, va, te = splits
    a, b = train(CFG, tr, va), train(CFG, tr, va)
    assert len(a.step_losses) == 4
    np.testing.assert_allclose(a.step_losses, b.step_losses, rtol=0, atol=1e-12)
    assert evaluate(a.model, te).to_dict() == evaluate(b.model, te).to_dict()
    c = train(CFG.replace(seed=1), tr, va)
    assert c.step_losses != a.step_losses


def test_zero_learning_rate_changes_nothing(splits):
    tr, va, _ = splits
    cfg = CFG.replace(lr=0.0, dropout=0.0, epochs=3, patience=10)
    result = train(cfg, tr, va)
    fresh = GraphCFC(cfg, tr.header.dims, tr.labels, 2)
    for name, v in fresh.params.items():
        np.testing.assert_array_equal(result.model.params[name].data, v.data)
    losses = [r["train_loss"] for r in result.history]
    assert max(losses) - min(losses) <= 1e-12


def test_best_validation_parameters_are_restored(splits):
    tr, va, _ = splits
    result = train(CFG.replace(epochs=4, lr=1e-2), tr, va)
    assert evaluate(result.model, va).weighted_f1 == result.best_valid_f1
    assert result.history[result.best_epoch - 1]["best"] == 1


def test_early_stopping_respects_patience(splits):
    tr, va, _ = splits
    result = train(CFG.replace(lr=0.0, epochs=10, patience=2), tr, va)
    assert len(result.history) == 3 and result.best_epoch == 1


def test_auxiliary_weights_stay_zero_without_auxiliary_losses(splits):
    tr, va, _ = splits
    result = train(CFG.replace(shared_loss=False, separate_loss=False), tr, va)
    for name, v in result.model.params.items():
        if name.startswith("loss.s_"):
            assert float(v.data) == 0.0


def test_divergence_reports_epoch_and_step(splits, monkeypatch):
    tr, va, _ = splits
    calls = {"n": 0}
    real = GraphCFC.loss

    def flaky(self, batch, train=False, params=None):
        calls["n"] += 1
        if calls["n"] == 3:
            return ad.const(np.array(np.nan))
        return real(self, batch, train, params)

    monkeypatch.setattr(GraphCFC, "loss", flaky)
    with pytest.raises(TrainingDivergence) as info:
        train(CFG, tr, va)
    assert (info.value.epoch, info.value.step) == (2, 1)
    assert "epoch 2, step 1" in str(info.value)


def test_split_validation(splits):
    tr, va, _ = splits
    empty = type(tr)(tr.header, [])
    with pytest.raises(ad.ContractError):
        train(CFG, empty, va)
    with pytest.raises(ad.ContractError):
        train(CFG, tr, empty)
    fine = generate_synthetic(GeneratorConfig(num_dialogues=3, min_len=2, max_len=2, dim_t=3, dim_a=3, dim_v=3,
                                              fine_labels="iemocap"), 0)
    with pytest.raises(LabelMismatch):
        train(CFG, tr, fine)


def test_evaluate_rejects_class_mismatch(splits):
    tr, va, _ = splits
    model = GraphCFC(CFG, tr.header.dims, tr.labels, 2)
    fine = generate_synthetic(GeneratorConfig(num_dialogues=2, dim_t=3, dim_a=3, dim_v=3, fine_labels="meld"), 0)
    with pytest.raises(LabelMismatch, match="expects 3"):
        evaluate(model, fine)


def test_evaluation_is_batching_invariant(splits):
    tr, _, _ = splits
    model = GraphCFC(CFG, tr.header.dims, tr.labels, 2)
    one = evaluate(model, tr, batch_size=1)
    many = evaluate(model, tr, batch_size=100)
    np.testing.assert_array_equal(one.confusion, many.confusion)


def test_history_files_and_checkpoint(splits, tmp_path):
    tr, va, te = splits
    result = train(CFG, tr, va)
    result.save(tmp_path)
    data = json.loads((tmp_path / "history.json").read_text())
    assert [e["epoch"] for e in data["epochs"]] == [1, 2]
    assert set(data["epochs"][0]) == set(HISTORY_FIELDS)
    assert data["best_epoch"] == result.best_epoch
    lines = (tmp_path / "history.csv").read_text().splitlines()
    assert [c.strip() for c in lines[0].split(",")] == list(HISTORY_FIELDS)
    assert len({line.index(",") for line in lines}) == 1
    from_disk = evaluate(tmp_path / "model.ckpt", te)
    assert from_disk.to_dict() == evaluate(result.model, te).to_dict()


def test_study_cells():
    assert [c.label for c in _study_cells("modality_subsets", {})] == ["A", "V", "T", "A+V", "A+T", "V+T", "A+V+T"]
    assert len(_study_cells("gatmlp_components", {})) == 3
    assert len(_study_cells("subspace_losses", {})) == 4
    assert len(_study_cells("embeddings", {})) == 3
    assert [c.label for c in _study_cells("window_sweep", {})] == ["(0,0)", "(2,2)", "(4,4)", "(6,6)", "(8,8)"]
    assert [c.label for c in _study_cells("skip_vs_depth", {"depths": (2,)})] == ["L=2 w skip", "L=2 w/o skip"]
    assert len(STUDIES) == 7


def test_unknown_study_raises():
    with pytest.raises(ValueError, match="unknown study"):
        run_ablation(CFG, "dropout_sweep", corpus=generate_synthetic(DATA, 0))


def test_modality_ablation_report(tmp_path):
    report = run_ablation(CFG.replace(epochs=1), "modality_subsets", corpus=generate_synthetic(DATA, 0), seeds=(0,))
    assert report.labels == ["A", "V", "T", "A+V", "A+T", "V+T", "A+V+T"]
    assert len(report.per_seed) == 7
    report.save(tmp_path)
    rows = json.loads((tmp_path / "modality_subsets.json").read_text())["rows"]
    assert [set(r) for r in rows] == [set(REPORT_FIELDS)] * 7
    assert len((tmp_path / "modality_subsets.csv").read_text().splitlines()) == 8


def test_three_emotion_report_is_three_class():
    fine = generate_synthetic(GeneratorConfig(num_dialogues=10, min_len=2, max_len=3, dim_t=3, dim_a=3, dim_v=3,
                                              fine_labels="iemocap"), 0)
    report = run_ablation(CFG.replace(epochs=1), "three_emotion", corpus=fine, seeds=(0,))
    assert report.rows[0]["num_classes"] == 3
    assert report.meta["labels"] == list(COARSE_LABELS)
    assert report.per_seed[0]["labels"] == list(COARSE_LABELS)


def test_skip_report_flags_failed_trend(monkeypatch):
    import graphcfc.trainer as trainer_mod
    real = trainer_mod.train

    def rigged(cfg, *args, **kwargs):
        result = real(cfg, *args, **kwargs)
        result.best_valid_f1 = 0.1 if cfg.skip_connection else 0.9
        return result

    monkeypatch.setattr(trainer_mod, "train", rigged)
    report = run_ablation(CFG.replace(epochs=1), "skip_vs_depth", corpus=generate_synthetic(DATA, 0), seeds=(0,),
                          depths=(1,))
    assert report.labels == ["L=1 w skip", "L=1 w/o skip"]
    assert len(report.warnings) == 1 and "L=1" in report.warnings[0]
