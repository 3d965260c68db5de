"""Training loops: single-task, joint multi-task (shared encoder) and MTL followed by fine-tuning.

All three share one epoch loop (`_fit`): sample a task, draw a batch, update the
shared encoder and that task's head, then score every task's dev set and apply
early stopping on the mean dev metric.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from brat_io import read_dataset, write_document
from errors import AnalysisError, ConfigError, DivergedLoss, EmptyDataset, NonFiniteValue, TrainingError, UnknownTask
from helpers import debug, ensure_dir, log, worker_count
from models import DatasetSummary, Prediction
from schema import builtin_schema, fit_labels, task_name, to_instances
from utils.decoders import decode, prediction_to_document
from utils.encoder import EncoderConfig, build_vocab
from utils.metrics import evaluate_documents
from utils.numerics import Graph, adam_step, clip_gradients
from utils.spanrel import LossStats, ModelBundle

CHECKPOINT_NAME = 'model.sprl'
LOG_NAME = 'train_log.jsonl'


@dataclass
class TaskData:
    schema: object
    train: list
    dev_docs: list = field(default_factory=list)
    test_docs: list = field(default_factory=list)
    summary: DatasetSummary = field(default_factory=DatasetSummary)

    @property
    def name(self):
        return self.schema.name


def _instances(docs, schema, summary=None):
    out = []
    for doc in docs:
        out.extend(to_instances(doc, schema, summary))
    return out


def subsample(instances, fraction, seed):
    """Deterministic subset of round(fraction * n) instances (at least one), in original order."""
    if fraction >= 1.0 or not instances:
        return list(instances)
    keep = max(1, int(round(fraction * len(instances))))
    picks = np.sort(np.random.default_rng(seed).choice(len(instances), size=keep, replace=False))
    return [instances[i] for i in picks]


def build_task_data(schema, train_docs, dev_docs=(), test_docs=(), train_fraction=1.0, seed=13):
    """Instances for one task; composite and subtyped labels seen in any split extend the schema."""
    schema = fit_labels(schema, list(train_docs) + list(dev_docs) + list(test_docs))
    summary = DatasetSummary(documents=len(train_docs))
    train = [i for i in _instances(train_docs, schema, summary) if _scorable(i)]
    if not train:
        raise EmptyDataset(f"{schema.name}: no training instances")
    train = subsample(train, train_fraction, seed)
    summary.sentences = len(train)
    summary.spans = sum(len(i.gold_spans) for i in train)
    summary.relations = sum(len(i.gold_relations) for i in train)
    if summary.truncated:
        log('WARN', f"{schema.name}: {summary.truncated} truncated document(s) lost {summary.dropped_spans} gold "
                    f"span(s) and {summary.dropped_relations} relation(s)")
    return TaskData(schema, train, list(dev_docs), list(test_docs), summary)


def load_task_data(spec, train_fraction=1.0, seed=13):
    """TaskData for a run-config TaskSpec: built-in schema + overrides, then the BRAT splits."""
    schema = builtin_schema(spec.name).with_overrides(spec.overrides)
    if spec.train is None:
        raise EmptyDataset(f"{schema.name}: no training directory configured")
    train_docs = read_dataset(spec.train)
    dev_docs = read_dataset(spec.dev) if spec.dev else []
    test_docs = read_dataset(spec.test) if spec.test else []
    data = build_task_data(schema, train_docs, dev_docs, test_docs, train_fraction, seed)
    log('DATA', f"{data.name}: {len(data.train)} train instances, {len(dev_docs)} dev / {len(test_docs)} test documents")
    return data


def encoder_config(settings, datas):
    """EncoderConfig from run-config encoder settings; the vocabulary comes from every task's training tokens."""
    settings = dict(settings or {})
    min_count = settings.pop('min_count', 1)
    vocab = build_vocab([inst.tokens for data in datas for inst in data.train], min_count)
    return EncoderConfig(vocab=vocab, **settings)


def new_bundle(settings, datas, seed):
    config = encoder_config(settings, datas)
    return ModelBundle(config, {data.name: data.schema for data in datas}, seed=seed)


class EarlyStopping:
    """Stop once the dev metric has not strictly improved for `patience` consecutive epochs."""

    def __init__(self, patience):
        if patience < 1:
            raise ConfigError('patience must be at least 1')
        self.patience = patience
        self.best_value = -math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch, value):
        if value > self.best_value:
            self.best_value = value
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self):
        return self.bad_epochs >= self.patience


class BatchCursor:
    """Endless shuffled passes over one task's instances."""

    def __init__(self, instances, batch_size, rng):
        self.instances = list(instances)
        self.batch_size = batch_size
        self.rng = rng
        self.order = []

    def next_batch(self):
        batch = []
        while len(batch) < self.batch_size:
            if not self.order:
                self.order = list(self.rng.permutation(len(self.instances)))
            batch.append(self.instances[self.order.pop()])
            if len(batch) == len(self.instances):
                break
        return batch


class TaskSampler:
    """Picks the task for each step with probability proportional to its training-set size."""

    def __init__(self, sizes, rng):
        sizes = np.asarray(sizes, dtype=np.float64)
        if sizes.size == 0 or sizes.sum() <= 0:
            raise EmptyDataset('no training instances in any task')
        self.p = sizes / sizes.sum()
        self.rng = rng

    def draw(self):
        if len(self.p) == 1:
            return 0
        return int(self.rng.choice(len(self.p), p=self.p))


class TrainingLog:
    """Per-epoch records, mirrored to a JSON-lines file when a path is given."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records = []
        if self.path:
            ensure_dir(self.path.parent)

    def write(self, record):
        self.records.append(record)
        if self.path:
            with open(self.path, 'a', encoding='utf-8') as fh:
                fh.write(json.dumps(record, sort_keys=True) + '\n')

    @property
    def losses(self):
        return [r['loss'] for r in self.records]


def train_step(bundle, task, batch, config, rng):
    """One Adam update of the shared encoder and `task`'s head on the batch mean loss."""
    head_store = bundle.heads[task]
    shared_grads = {name: np.zeros_like(v) for name, v in bundle.shared.values.items()}
    head_grads = {name: np.zeros_like(v) for name, v in head_store.values.items()}
    stats = LossStats()
    total = 0.0

    for instance in batch:
        g = Graph(train=True, rng=rng)
        try:
            loss, instance_stats = bundle.loss(g, instance)
            grads = g.backward(loss)
        except NonFiniteValue as e:
            raise DivergedLoss(f"{task}: {e.message}") from None
        value = float(loss.value)
        if not math.isfinite(value):
            raise DivergedLoss(f"{task}: loss became {value}")
        total += value
        stats.merge(instance_stats)
        for name, grad in g.parameter_gradients(grads, bundle.shared).items():
            shared_grads[name] += grad
        for name, grad in g.parameter_gradients(grads, head_store).items():
            head_grads[name] += grad

    scale = 1.0 / len(batch)
    for grads in (shared_grads, head_grads):
        for name in grads:
            grads[name] *= scale
    clip_gradients([shared_grads, head_grads], config.clip_norm)
    options = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2, weight_decay=config.weight_decay)
    adam_step(bundle.shared, shared_grads, frozen=bundle.encoder.frozen, **options)
    adam_step(head_store, head_grads, **options)
    return total * scale, stats


def _scorable(instance):
    """Gold-span-mode instances without gold spans have no candidates to score."""
    return instance.n > 0 and instance.candidates != ()


def predict_items(bundle, task, doc):
    """(instance, Prediction) for every instance of one document."""
    schema = bundle.schemas[task]
    items = []
    for instance in to_instances(doc, schema):
        prediction = decode(bundle.run(instance)) if _scorable(instance) else Prediction()
        items.append((instance, prediction))
    return items


def predict_document_items(bundle, task, docs):
    """predict_items for each document, in input order (documents run in parallel)."""
    task = task_name(task)
    if task not in bundle.schemas:
        raise UnknownTask(task)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(lambda doc: predict_items(bundle, task, doc), docs))


def predict_documents(bundle, task, docs, items=None):
    """Decoded predictions for each document, as BRAT documents; `items` reuses predict_document_items output."""
    task = task_name(task)
    if items is None:
        items = predict_document_items(bundle, task, docs)
    if task not in bundle.schemas:
        raise UnknownTask(task)
    schema = bundle.schemas[task]
    return [prediction_to_document(doc, doc_items, schema) for doc, doc_items in zip(docs, items)]


def evaluate_bundle(bundle, task, docs):
    task = task_name(task)
    return evaluate_documents(docs, predict_documents(bundle, task, docs), bundle.schemas[task])


def _dev_scores(bundle, datas):
    scores = {}
    for data in datas:
        if data.dev_docs:
            scores[data.name] = evaluate_bundle(bundle, data.name, data.dev_docs).value
    return scores


def _fit(bundle, datas, config, train_log, phase):
    """Shared epoch loop; returns the best bundle seen (or `bundle` itself when no epoch ran)."""
    rng = np.random.default_rng(config.seed)
    cursors = [BatchCursor(data.train, config.batch_size, rng) for data in datas]
    sampler = TaskSampler([len(data.train) for data in datas], rng)
    steps_per_epoch = math.ceil(sum(len(data.train) for data in datas) / config.batch_size)
    stopper = EarlyStopping(config.patience)
    best = bundle
    started = time.perf_counter()
    step = 0

    for epoch in range(1, config.max_epochs + 1):
        epoch_loss = 0.0
        stats = LossStats()
        for _ in range(steps_per_epoch):
            index = sampler.draw()
            loss, step_stats = train_step(bundle, datas[index].name, cursors[index].next_batch(), config, rng)
            epoch_loss += loss
            stats.merge(step_stats)
            step += 1
        epoch_loss /= steps_per_epoch

        # 1. dev metric: mean over tasks with a dev set, else the negated training loss
        dev = _dev_scores(bundle, datas)
        if dev:
            metric = float(np.mean(list(dev.values())))
        else:
            metric = -epoch_loss
            if epoch == 1:
                log('WARN', 'No dev documents; early stopping on training loss')

        # 2. early stopping with a snapshot of the best weights
        improved = stopper.update(epoch, metric)
        if improved:
            best = bundle.copy()
        record = {
            'phase': phase,
            'epoch': epoch,
            'task': ','.join(data.name for data in datas),
            'step': step,
            'loss': epoch_loss,
            'dev_metric': metric,
            'dev': dev,
            'best': improved,
            'elapsed': round(time.perf_counter() - started, 3),
        }
        record.update(stats.to_dict())
        train_log.write(record)
        log('TRAIN', f"[{phase}] epoch {epoch}: loss {epoch_loss:.4f}, dev {metric:.4f}{' *' if improved else ''}")
        if stopper.should_stop:
            log('INFO', f"Early stop after epoch {epoch}; best epoch {stopper.best_epoch} ({stopper.best_value:.4f})")
            break

    debug(f"{phase}: {step} steps")
    return best


def train_stl(config, data, encoder=None, log_path=None):
    """Single-task model; returns (best bundle, TrainingLog)."""
    train_log = TrainingLog(log_path)
    bundle = new_bundle(encoder, [data], config.seed)
    return _fit(bundle, [data], config, train_log, 'STL'), train_log


def train_mtl(config, datas, encoder=None, log_path=None):
    """Joint model over two or more tasks with one shared encoder."""
    if len(datas) < 2:
        raise ConfigError('multi-task training needs at least two tasks')
    names = [data.name for data in datas]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate tasks in multi-task run: {names}")
    train_log = TrainingLog(log_path)
    bundle = new_bundle(encoder, datas, config.seed)
    return _fit(bundle, datas, config, train_log, 'MTL'), train_log


def fine_tune(bundle, config, data, log_path=None):
    """Continue training a multi-task bundle on one task only, with fresh optimizer state."""
    if data.name not in bundle.schemas:
        raise UnknownTask(data.name)
    if bundle.schemas[data.name].span_vocab != data.schema.span_vocab \
            or bundle.schemas[data.name].relation_vocab != data.schema.relation_vocab:
        raise TrainingError(f"{data.name}: label inventory differs from the trained head")
    tuned = bundle.copy()
    tuned.shared.reset_optimizer()
    tuned.heads[data.name].reset_optimizer()
    train_log = TrainingLog(log_path)
    return _fit(tuned, [data], config, train_log, 'FT'), train_log


def _datas_for(run_config):
    trainer = run_config.trainer
    target = task_name(trainer.fine_tune_task) if trainer.fine_tune_task else None
    datas = []
    for spec in run_config.tasks:
        name = task_name(spec.name)
        fraction = trainer.train_fraction if target in (None, name) else 1.0
        datas.append(load_task_data(spec, fraction, run_config.seed))
    if not datas:
        raise ConfigError('the run config lists no tasks')
    return datas


def train_from_config(run_config):
    """Train per the run config's mode, save the checkpoint and log under `out`; returns a report dict."""
    from checkpoints import save_bundle

    trainer = run_config.trainer
    out_dir = ensure_dir(run_config.out)
    log_path = out_dir / LOG_NAME
    if log_path.exists():
        log_path.unlink()
    datas = _datas_for(run_config)

    if trainer.mode == 'STL':
        if len(datas) != 1:
            raise ConfigError(f"STL trains one task; pick one with --task ({', '.join(d.name for d in datas)})")
        bundle, train_log = train_stl(trainer, datas[0], run_config.encoder, log_path)
    else:
        bundle, train_log = train_mtl(trainer, datas, run_config.encoder, log_path)
        if trainer.mode == 'MTL_FT':
            target = task_name(trainer.fine_tune_task)
            data = next(d for d in datas if d.name == target)
            bundle, ft_log = fine_tune(bundle, trainer, data, log_path)
            train_log.records.extend(ft_log.records)

    checkpoint = save_bundle(bundle, out_dir / CHECKPOINT_NAME, extra={'mode': trainer.mode, 'seed': run_config.seed})
    report = {
        'mode': trainer.mode,
        'seed': run_config.seed,
        'checkpoint': str(checkpoint),
        'log': str(log_path),
        'epochs': len(train_log.records),
        'data': {data.name: data.summary.to_dict() for data in datas},
        'dev': {},
        'test': {},
    }
    for data in datas:
        if data.dev_docs:
            report['dev'][data.name] = evaluate_bundle(bundle, data.name, data.dev_docs).to_dict()
        if data.test_docs:
            report['test'][data.name] = evaluate_bundle(bundle, data.name, data.test_docs).to_dict()
    return report


def write_predictions(bundle, task, docs, out_dir, items=None):
    out_dir = ensure_dir(out_dir)
    predicted = predict_documents(bundle, task, docs, items)
    for doc in predicted:
        write_document(doc, out_dir)
    log('OK', f"Wrote {len(predicted)} predicted document(s) to {out_dir}")
    return predicted


def _held_out(data):
    return data.test_docs or data.dev_docs


def _relatedness(stl, target, sources, sentences):
    """Mean attention similarity between the target STL model and each source STL model on `sentences`."""
    from utils.analysis import extract_attention, mean_similarity

    target_profile = extract_attention(stl[target], sentences, target)
    return {source: mean_similarity(target_profile, extract_attention(stl[source], sentences, source))
            for source in sources if source != target}


def pairwise_grid(run_config, sources=None, targets=None):
    """STL baseline per task plus MTL+fine-tuning for every (source, target) pair.

    Returns {'sources', 'targets', 'stl': {task: value}, 'matrix': {target: {source: value}}},
    scored on each target's test split (dev when no test split is configured). With
    attention layers in the encoder, 'similarity' and 'pearson' relate each target's
    STL attention maps to its sources' and to the fine-tuned scores.
    """
    from utils.analysis import pearson_correlation

    trainer = run_config.trainer
    datas = {}
    for spec in run_config.tasks:
        name = task_name(spec.name)
        datas[name] = load_task_data(spec, 1.0, run_config.seed)
    sources = [task_name(s) for s in (sources or datas)]
    targets = [task_name(t) for t in (targets or datas)]
    for name in set(sources) | set(targets):
        if name not in datas:
            raise ConfigError(f"grid task {name} is not in the run config")
    if trainer.train_fraction < 1.0:
        for name in targets:
            data = datas[name]
            datas[name] = TaskData(data.schema, subsample(data.train, trainer.train_fraction, run_config.seed),
                                   data.dev_docs, data.test_docs, data.summary)

    # 1. single-task baselines
    stl = {}
    grid = {'sources': sources, 'targets': targets, 'stl': {}, 'matrix': {}}
    for name in dict.fromkeys(targets + sources):
        stl[name], _ = train_stl(trainer, datas[name], run_config.encoder)
    for target in targets:
        if not _held_out(datas[target]):
            raise EmptyDataset(f"{target}: no dev or test documents to score the grid on")
        grid['stl'][target] = evaluate_bundle(stl[target], target, _held_out(datas[target])).value

    # 2. pairwise MTL followed by fine-tuning on the target
    for target in targets:
        data = datas[target]
        grid['matrix'][target] = {}
        for source in sources:
            if source == target:
                continue
            joint, _ = train_mtl(trainer, [datas[source], data], run_config.encoder)
            tuned, _ = fine_tune(joint, trainer, data)
            value = evaluate_bundle(tuned, target, _held_out(data)).value
            grid['matrix'][target][source] = value
            log('INFO', f"grid {source} -> {target}: {value:.4f} (STL {grid['stl'][target]:.4f})")

    # 3. attention relatedness against the fine-tuned scores
    if run_config.encoder.get('attn_layers', 0) > 0:
        grid['similarity'], grid['pearson'] = {}, {}
        for target in targets:
            sentences = [s for doc in _held_out(datas[target]) for s in doc.sentence_tokens if s]
            similarity = _relatedness(stl, target, sources, sentences)
            grid['similarity'][target] = similarity
            names = sorted(similarity)
            try:
                grid['pearson'][target] = pearson_correlation(
                    [similarity[s] for s in names], [grid['matrix'][target][s] for s in names])
            except AnalysisError as e:
                log('WARN', f"{target}: no correlation ({e.message})")
                grid['pearson'][target] = None
    return grid
