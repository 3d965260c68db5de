import json

import numpy as np
import pytest
from scipy.stats import chisquare

from brat_io import parse_document
from config import TrainerConfig, parse_run_config
from errors import ConfigError, EmptyDataset, UnknownTask
from schema import builtin_schema
from trainer import (EarlyStopping, TaskSampler, BatchCursor, subsample, build_task_data, evaluate_bundle, new_bundle,
                     train_step, train_stl, train_mtl, fine_tune, train_from_config, predict_documents, pairwise_grid)
from utils.synthetic import synthetic_splits, write_synthetic_corpus, SCHEMA_OVERRIDES, SYNTHETIC_ENCODER

TINY = {'embed_dim': 8, 'bilstm_layers': 1, 'bilstm_hidden': 8, 'mlp_hidden': 16, 'mlp_layers': 1, 'dropout': 0.1}


def _data(task, train=20, dev=5, seed=3):
    splits = synthetic_splits(task, train=train, dev=dev, seed=seed)
    schema = builtin_schema(task).with_overrides(SCHEMA_OVERRIDES[task])
    return build_task_data(schema, splits['train'], splits['dev'])


def _config(**overrides):
    settings = dict(mode='STL', max_epochs=1, batch_size=4, seed=5, lr=0.01)
    settings.update(overrides)
    return TrainerConfig(**settings)


def _same_store(a, b):
    return set(a.values) == set(b.values) and all(np.array_equal(a[k], b[k]) for k in a.values)


def test_early_stopping_patience():
    stopper = EarlyStopping(3)
    stopped_at = None
    for epoch, value in enumerate([0.5, 0.6, 0.6, 0.6, 0.6], start=1):
        stopper.update(epoch, value)
        if stopper.should_stop:
            stopped_at = epoch
            break
    assert stopped_at == 5
    assert stopper.best_epoch == 2
    assert stopper.best_value == 0.6


def test_task_sampler_is_proportional():
    sampler = TaskSampler([900, 100], np.random.default_rng(0))
    draws = [sampler.draw() for _ in range(5000)]
    observed = np.bincount(draws, minlength=2)
    assert chisquare(observed, f_exp=[4500, 500]).pvalue > 0.001
    with pytest.raises(EmptyDataset):
        TaskSampler([], np.random.default_rng(0))


def test_batch_cursor_visits_everything_each_pass():
    cursor = BatchCursor(list('abcde'), 5, np.random.default_rng(1))
    assert sorted(cursor.next_batch()) == list('abcde')
    assert sorted(cursor.next_batch()) == list('abcde')
    assert len(BatchCursor(list('ab'), 8, np.random.default_rng(1)).next_batch()) == 2


def test_subsample_is_deterministic():
    items = list(range(100))
    first = subsample(items, 0.25, 7)
    assert len(first) == 25
    assert first == subsample(items, 0.25, 7)
    assert first == sorted(first)
    assert subsample(items, 1.0, 7) == items


def test_empty_training_set():
    with pytest.raises(EmptyDataset):
        build_task_data(builtin_schema('NER'), [parse_document('', '', 'empty')])


def test_train_step_updates_shared_and_own_head():
    ner, oie = _data('NER'), _data('OpenIE')
    bundle = new_bundle(TINY, [ner, oie], seed=1)
    before = bundle.copy()
    loss, stats = train_step(bundle, 'NER', ner.train[:4], _config(), np.random.default_rng(0))
    assert np.isfinite(loss)
    assert stats.spans > 0
    assert not _same_store(bundle.shared, before.shared)
    assert not _same_store(bundle.heads['NER'], before.heads['NER'])
    assert _same_store(bundle.heads['OpenIE'], before.heads['OpenIE'])
    assert bundle.shared.t == 1


def test_training_lowers_the_loss():
    ner = _data('NER')
    bundle, train_log = train_stl(_config(max_epochs=4, patience=4), ner, TINY)
    assert len(train_log.records) == 4
    assert train_log.losses[-1] < train_log.losses[0]
    record = train_log.records[0]
    assert {'phase', 'epoch', 'loss', 'dev_metric', 'spans', 'pairs', 'coref_fallback'} <= set(record)
    assert record['dev'].keys() == {'NER'}


def test_training_is_deterministic():
    ner = _data('NER')
    _, first = train_stl(_config(max_epochs=2, patience=2), ner, TINY)
    _, second = train_stl(_config(max_epochs=2, patience=2), ner, TINY)
    assert first.losses == second.losses


def test_fine_tuning_leaves_other_heads_untouched():
    ner, oie = _data('NER'), _data('OpenIE')
    joint, mtl_log = train_mtl(_config(mode='MTL'), [ner, oie], TINY)
    assert mtl_log.records[0]['task'] == 'NER,OpenIE'
    tuned, _ = fine_tune(joint, _config(), ner)
    assert _same_store(tuned.heads['OpenIE'], joint.heads['OpenIE'])
    assert not _same_store(tuned.shared, joint.shared)


def test_zero_epochs_changes_nothing():
    ner, oie = _data('NER'), _data('OpenIE')
    joint, _ = train_mtl(_config(mode='MTL'), [ner, oie], TINY)
    tuned, log = fine_tune(joint, _config(max_epochs=0), ner)
    assert log.records == []
    assert _same_store(tuned.shared, joint.shared)
    assert _same_store(tuned.heads['NER'], joint.heads['NER'])


def test_multi_task_needs_two_tasks():
    ner = _data('NER')
    with pytest.raises(ConfigError):
        train_mtl(_config(mode='MTL'), [ner], TINY)
    bundle = new_bundle(TINY, [ner], seed=1)
    with pytest.raises(UnknownTask):
        fine_tune(bundle, _config(), _data('OpenIE'))


def test_predictions_keep_documents():
    ner = _data('NER')
    bundle = new_bundle(TINY, [ner], seed=2)
    predicted = predict_documents(bundle, 'ner', ner.dev_docs)
    assert [d.doc_id for d in predicted] == [d.doc_id for d in ner.dev_docs]
    assert all(p.text == g.text for p, g in zip(predicted, ner.dev_docs))


def _run_config(tmp_path, **trainer):
    write_synthetic_corpus(tmp_path / 'data', train=10, dev=5, test=5, seed=3)
    tasks = [{'name': task, 'train': f"data/{task}/train", 'dev': f"data/{task}/dev", 'test': f"data/{task}/test",
              'overrides': SCHEMA_OVERRIDES[task]} for task in ('NER', 'OpenIE')]
    settings = {'max_epochs': 1, 'batch_size': 4}
    settings.update(trainer)
    data = {'seed': 3, 'out': 'run', 'trainer': settings, 'encoder': TINY, 'tasks': tasks}
    return parse_run_config(data, base_dir=tmp_path)


def test_train_from_config_mtl_then_fine_tune(tmp_path):
    run_config = _run_config(tmp_path, mode='MTL_FT', fine_tune_task='NER')
    report = train_from_config(run_config)
    assert report['mode'] == 'MTL_FT'
    assert report['epochs'] == 2
    assert (tmp_path / 'run' / 'model.sprl').exists()
    lines = (tmp_path / 'run' / 'train_log.jsonl').read_text(encoding='utf-8').splitlines()
    assert [json.loads(line)['phase'] for line in lines] == ['MTL', 'FT']
    assert set(report['test']) == {'NER', 'OpenIE'}
    assert 0.0 <= report['test']['NER']['value'] <= 1.0


def test_stl_config_needs_one_task(tmp_path):
    with pytest.raises(ConfigError):
        train_from_config(_run_config(tmp_path, mode='STL'))


def test_pairwise_grid(tmp_path):
    run_config = _run_config(tmp_path)
    run_config.encoder = dict(TINY, attn_layers=1, attn_heads=2)
    grid = pairwise_grid(run_config)
    assert grid['targets'] == ['NER', 'OpenIE']
    assert set(grid['matrix']['NER']) == {'OpenIE'}
    assert 0.0 <= grid['matrix']['OpenIE']['NER'] <= 1.0
    assert grid['similarity']['NER']['OpenIE'] <= 0.0
    # one source per target leaves nothing to correlate
    assert grid['pearson'] == {'NER': None, 'OpenIE': None}


# --- convergence on the full-size synthetic corpora ----------------------------

CONVERGENCE = dict(max_epochs=30, seed=13)


@pytest.fixture(scope='module')
def synthetic():
    return {task: _data(task, train=500, dev=100, seed=13) for task in ('NER', 'OpenIE')}


@pytest.fixture(scope='module')
def joint(synthetic):
    bundle, _ = train_mtl(TrainerConfig(mode='MTL', **CONVERGENCE), [synthetic['NER'], synthetic['OpenIE']],
                          SYNTHETIC_ENCODER)
    return bundle


def test_single_task_models_learn_the_grammar(synthetic):
    ner, ner_log = train_stl(TrainerConfig(**CONVERGENCE), synthetic['NER'], SYNTHETIC_ENCODER)
    assert len(ner_log.records) <= 30
    assert evaluate_bundle(ner, 'NER', synthetic['NER'].dev_docs).f1 >= 0.95
    oie, _ = train_stl(TrainerConfig(**CONVERGENCE), synthetic['OpenIE'], SYNTHETIC_ENCODER)
    report = evaluate_bundle(oie, 'OpenIE', synthetic['OpenIE'].dev_docs)
    assert report.extra['span_f1'] >= 0.95
    assert report.f1 >= 0.90


def test_joint_model_learns_both_tasks(synthetic, joint):
    for task in ('NER', 'OpenIE'):
        assert evaluate_bundle(joint, task, synthetic[task].dev_docs).value >= 0.90


def test_fine_tuning_keeps_the_joint_score(synthetic, joint):
    target = synthetic['NER']
    before = evaluate_bundle(joint, 'NER', target.dev_docs).value
    tuned, _ = fine_tune(joint, TrainerConfig(**CONVERGENCE), target)
    assert evaluate_bundle(tuned, 'NER', target.dev_docs).value >= before - 0.02
    assert _same_store(tuned.heads['OpenIE'], joint.heads['OpenIE'])
