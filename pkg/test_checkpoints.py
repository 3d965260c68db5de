import struct

import numpy as np
import pytest

from checkpoints import MAGIC, save_bundle, load_bundle, read_checkpoint
from config import TrainerConfig
from errors import CheckpointError
from schema import builtin_schema
from trainer import build_task_data, evaluate_bundle, new_bundle, train_step, train_stl
from utils.synthetic import synthetic_splits, SCHEMA_OVERRIDES

TINY = {'embed_dim': 8, 'bilstm_layers': 1, 'bilstm_hidden': 8, 'mlp_hidden': 16, 'mlp_layers': 1, 'dropout': 0.1}


def _data(task, train=20, dev=10):
    splits = synthetic_splits(task, train=train, dev=dev, seed=3)
    schema = builtin_schema(task).with_overrides(SCHEMA_OVERRIDES[task])
    return build_task_data(schema, splits['train'], splits['dev'])


def _same_store(a, b):
    return set(a.values) == set(b.values) and all(np.array_equal(a[k], b[k]) for k in a.values)


def test_round_trip_keeps_weights_and_optimizer_state(tmp_path):
    oie = _data('OpenIE')
    bundle = new_bundle(TINY, [oie], seed=2)
    train_step(bundle, 'OpenIE', oie.train[:4], TrainerConfig(seed=5, lr=0.01), np.random.default_rng(0))
    path = save_bundle(bundle, tmp_path / 'model.sprl', extra={'mode': 'STL'})
    loaded = load_bundle(path)
    for original, again in [(bundle.shared, loaded.shared), (bundle.heads['OpenIE'], loaded.heads['OpenIE'])]:
        assert _same_store(original, again)
        assert all(np.array_equal(original.m[k], again.m[k]) and np.array_equal(original.v[k], again.v[k])
                   for k in original.values)
        assert original.t == again.t
    assert loaded.schemas == bundle.schemas
    assert loaded.config.vocab == bundle.config.vocab
    instance = oie.train[0]
    assert np.array_equal(bundle.run(instance).span_logits.value, loaded.run(instance).span_logits.value)
    header, _ = read_checkpoint(path)
    assert header['extra'] == {'mode': 'STL'}


def test_reloaded_model_reproduces_the_dev_metric(tmp_path):
    oie = _data('OpenIE')
    bundle, train_log = train_stl(TrainerConfig(max_epochs=2, patience=2, batch_size=4, seed=5, lr=0.01), oie, TINY)
    before = evaluate_bundle(bundle, 'OpenIE', oie.dev_docs)
    loaded = load_bundle(save_bundle(bundle, tmp_path / 'model.sprl'))
    after = evaluate_bundle(loaded, 'OpenIE', oie.dev_docs)
    assert after.to_dict() == before.to_dict()
    best = max(record['dev_metric'] for record in train_log.records)
    assert after.value == best


def test_corrupt_checkpoints(tmp_path):
    path = save_bundle(new_bundle(TINY, [_data('NER')], seed=2), tmp_path / 'model.sprl')
    data = path.read_bytes()
    version = MAGIC + struct.pack('<I', 99) + data[8:]
    for name, blob in [('magic', b'XXXX' + data[4:]), ('short', data[:-3]), ('long', data + b'\0'),
                       ('version', version)]:
        bad = tmp_path / f"{name}.sprl"
        bad.write_bytes(blob)
        with pytest.raises(CheckpointError):
            load_bundle(bad)


def test_missing_checkpoint_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_bundle(tmp_path / 'absent.sprl')
