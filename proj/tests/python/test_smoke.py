import math

import pytest

import tabret


@pytest.fixture(scope="module")
def synth():
    spec = tabret.SyntheticSpec()
    spec.pretext_rows = 1200
    spec.downstream_rows = 400
    return tabret.generate_synthetic(spec, seed=7)


def tiny_config():
    cfg = tabret.ModelConfig()
    cfg.n_blocks = 1
    cfg.d_token = 16
    return cfg


def test_metrics_oracles():
    assert tabret.roc_auc([0.8, 0.7, 0.6, 0.5], [1, 0, 1, 0]) == 0.75
    t, df, p = tabret.welch_t([1, 2, 3], [2, 4, 6])
    assert abs(t - (-2.0 / math.sqrt(5.0 / 3.0))) < 1e-12
    assert abs(df - 50.0 / 17.0) < 1e-12
    assert abs(p - 0.2208808404940958) < 1e-9
    with pytest.raises(ValueError):
        tabret.roc_auc([], [])


def test_synthetic_and_split(synth):
    assert synth.pretext.row_count == 1200
    assert synth.downstream.schema.target == "label"
    split = tabret.split_dataset(synth.downstream, seed=1, finetune_count=100)
    assert split.test.row_count == 80
    assert split.finetune.row_count == 100
    total = (
        split.pretrain.row_count
        + split.validation.row_count
        + split.finetune.row_count
        + split.test.row_count
    )
    assert total == 400


def test_preprocessor_bounds(synth):
    prep = tabret.fit_preprocessor(synth.pretext)
    out = tabret.apply_preprocessor(prep, synth.pretext)
    for values in out.numerical.values():
        assert min(values) >= 0.0 and max(values) <= 1.0


def test_pipeline_and_checkpoint(tmp_path, synth):
    split = tabret.split_dataset(synth.pretext, seed=2, finetune_count=0)
    prep = tabret.fit_preprocessor(split.pretrain)
    train = tabret.apply_preprocessor(prep, split.pretrain)
    val = tabret.apply_preprocessor(prep, split.validation)

    model = tabret.Model(synth.pretext.schema, tiny_config(), seed=3)
    pc = tabret.PhaseConfig.defaults(tabret.Phase.PRETRAIN)
    pc.epochs = 2
    pc.warmup_epochs = 1
    pc.batch_size = 256
    result = tabret.run_pretraining(model, train, val, pc, seed=3)
    assert len(result.history) == 2
    assert all(math.isfinite(r.train_loss) for r in result.history)

    # same seed, fresh model: identical history
    model2 = tabret.Model(synth.pretext.schema, tiny_config(), seed=3)
    result2 = tabret.run_pretraining(model2, train, val, pc, seed=3)
    assert [r.train_loss for r in result.history] == [
        r.train_loss for r in result2.history
    ]

    # transfer to the downstream schema and fine-tune briefly
    dsplit = tabret.split_dataset(synth.downstream, seed=2, finetune_count=100)
    dprep = tabret.fit_preprocessor(dsplit.finetune)
    dtrain = tabret.apply_preprocessor(dprep, dsplit.finetune)
    dval = tabret.apply_preprocessor(dprep, dsplit.validation)
    dtest = tabret.apply_preprocessor(dprep, dsplit.test)

    model.extend_for_schema(synth.downstream.schema, seed=3)
    rc = tabret.PhaseConfig.defaults(tabret.Phase.RETOKENIZE)
    rc.epochs = 2
    rc.warmup_epochs = 1
    tabret.run_retokenizing(model, dtrain, dval, synth.pretext.schema, rc, seed=3)
    fc = tabret.PhaseConfig.defaults(tabret.Phase.FINETUNE)
    fc.epochs = 2
    fc.warmup_epochs = 1
    tabret.run_finetuning(model, dtrain, dval, fc, seed=3)

    scores = tabret.predict_positive_scores(model, dtest)
    auc = tabret.roc_auc(scores, dtest.categorical["label"])
    assert 0.0 <= auc <= 1.0

    base = str(tmp_path / "ckpt")
    tabret.save_checkpoint(model, base, seed=3)
    back = tabret.load_checkpoint(base)
    assert tabret.predict_positive_scores(back, dtest) == scores


def test_gradcheck_tiny_model():
    max_err, worst, per_param = tabret.gradcheck_tiny_model()
    assert max_err <= 1e-4, worst
    assert len(per_param) > 50
