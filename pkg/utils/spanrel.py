"""Task-agnostic span/relation scorer: enumerate, classify, prune, score pairs, and the two losses.

A ModelBundle holds one shared encoder store and one head store per task;
every task reads the same `shared` Parameters object.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from errors import UnknownTask
from models import SpanCandidate, ScoredPair
from utils.encoder import Encoder, MASK_VALUE
from utils.numerics import Graph, Parameters


def enumerate_spans(n, schema, gold_spans=None):
    """All (b, e) with e - b + 1 <= min(l, n) in (b, e) order; the gold spans in gold-span mode."""
    if schema.gold_span_mode and gold_spans is not None:
        return sorted({(b, e) for b, e in gold_spans})
    limit = schema.length_limit(n)
    return [(b, b + k) for b in range(n) for k in range(limit) if b + k < n]


def softmax_rows(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class TaskHead:
    """MLP^span (and MLP^rel for relation tasks) of one task."""

    def __init__(self, schema, config, params, rng=None):
        self.schema = schema
        self.config = config
        self.params = params
        if 'span/out/w' not in params:
            self._init_params(rng if rng is not None else np.random.default_rng(0))

    def _init_mlp(self, prefix, in_dim, out_dim, rng):
        hidden = self.config.mlp_hidden
        for layer in range(self.config.mlp_layers):
            self.params.glorot(f"{prefix}/{layer}/w", in_dim, hidden, rng)
            self.params.zeros(f"{prefix}/{layer}/b", hidden)
            in_dim = hidden
        self.params.glorot(f"{prefix}/out/w", in_dim, out_dim, rng)
        self.params.zeros(f"{prefix}/out/b", out_dim)

    def _init_params(self, rng):
        span_dim = self.config.span_dim
        self._init_mlp('span', span_dim, len(self.schema.span_vocab), rng)
        if self.schema.has_relations:
            self._init_mlp('rel', 3 * span_dim, len(self.schema.relation_vocab), rng)

    def mlp(self, g, x, prefix):
        for layer in range(self.config.mlp_layers):
            x = g.relu(g.add(g.matmul(x, g.param(self.params, f"{prefix}/{layer}/w")),
                             g.param(self.params, f"{prefix}/{layer}/b")))
            x = g.dropout(x, self.config.dropout)
        return g.add(g.matmul(x, g.param(self.params, f"{prefix}/out/w")), g.param(self.params, f"{prefix}/out/b"))


def classify_spans(g, head, z, spans):
    """Span label logits over [NEG_SPAN] + L as one (m, |L|+1) node, plus per-span candidates."""
    logits = head.mlp(g, z, 'span')
    probs = softmax_rows(logits.value)
    candidates = [
        SpanCandidate(b, e, i, z.value[i], logits.value[i], probs[i])
        for i, (b, e) in enumerate(spans)
    ]
    return logits, candidates


def prune_spans(candidates, schema, n):
    """Keep the K candidates with the lowest NEG_SPAN probability, returned in (b, e) order."""
    k = schema.keep_count(n, len(candidates))
    ranked = sorted(candidates, key=lambda c: (c.neg_prob, c.b, c.e))
    return sorted(ranked[:k], key=lambda c: (c.b, c.e))


def pair_indices(k):
    """Ordered pairs (j, k) with j != k in row-major order."""
    heads, tails = [], []
    for j in range(k):
        for t in range(k):
            if j != t:
                heads.append(j)
                tails.append(t)
    return np.array(heads, dtype=np.int64), np.array(tails, dtype=np.int64)


def pair_position(j, k, size):
    return j * (size - 1) + (k if k < j else k - 1)


def score_pairs(g, head, z, kept):
    """MLP^rel over [z_j; z_k; z_j * z_k] for all K(K-1) ordered pairs of kept spans."""
    if len(kept) < 2:
        return None, []
    heads, tails = pair_indices(len(kept))
    rows = np.array([c.index for c in kept], dtype=np.int64)
    zk = g.take(z, rows)
    zh, zt = g.take(zk, heads), g.take(zk, tails)
    features = g.concat([zh, zt, g.mul(zh, zt)], axis=-1)
    scores = head.mlp(g, features, 'rel')
    pairs = [ScoredPair(int(j), int(t), scores.value[p]) for p, (j, t) in enumerate(zip(heads, tails))]
    return scores, pairs


def cross_entropy(g, logits, gold):
    """Mean of -log softmax(logits)[i, gold[i]] over rows."""
    gold = np.asarray(gold, dtype=np.int64)
    picked = g.slice(g.log_softmax(logits, axis=-1), (np.arange(len(gold)), gold))
    return g.scale(g.mean(picked), -1.0)


def loss_pairwise(g, span_logits, span_gold, pair_scores=None, pair_gold=None):
    """Span cross-entropy over all candidates plus mean pair cross-entropy over all K(K-1) pairs."""
    loss = cross_entropy(g, span_logits, span_gold)
    if pair_scores is not None and pair_gold is not None and len(pair_gold):
        loss = g.add(loss, cross_entropy(g, pair_scores, pair_gold))
    return loss


def head_loss_from_scores(g, scores, allowed, gold):
    """Mean over rows of logsumexp(allowed scores) - logsumexp(gold scores).

    `scores` is an (K, K+1) node whose column 0 is the dummy antecedent;
    `allowed` and `gold` are boolean masks of the same shape.
    """
    allowed_mask = np.where(allowed, 0.0, MASK_VALUE)
    gold_mask = np.where(gold & allowed, 0.0, MASK_VALUE)
    total = g.logsumexp(g.add(scores, allowed_mask), axis=-1)
    correct = g.logsumexp(g.add(scores, gold_mask), axis=-1)
    return g.mean(g.sub(total, correct))


def antecedent_matrix(g, pair_scores, size, column=1):
    """(K, K+1) antecedent scores from the pair-score node: column 0 is the dummy (score 0), column k+1 is o_jk."""
    coref = g.slice(pair_scores, (slice(None), column))
    extended = g.concat([g.constant(np.zeros(1)), coref], axis=-1)
    index = np.zeros((size, size + 1), dtype=np.int64)
    allowed = np.zeros((size, size + 1), dtype=bool)
    allowed[:, 0] = True
    for j in range(size):
        for k in range(j):
            index[j, k + 1] = 1 + pair_position(j, k, size)
            allowed[j, k + 1] = True
    return g.slice(extended, index), allowed


def loss_head(g, pair_scores, kept, gold_antecedents):
    """Antecedent loss over kept spans; `gold_antecedents[j]` is a set of kept indices k < j (empty = dummy)."""
    size = len(kept)
    scores, allowed = antecedent_matrix(g, pair_scores, size)
    gold = np.zeros_like(allowed)
    for j in range(size):
        if gold_antecedents.get(j):
            for k in gold_antecedents[j]:
                gold[j, k + 1] = True
        else:
            gold[j, 0] = True
    return head_loss_from_scores(g, scores, allowed, gold)


@dataclass
class LossStats:
    spans: int = 0
    pairs: int = 0
    pruned_gold: int = 0
    fallback: int = 0
    encoder_seconds: float = 0.0
    scorer_seconds: float = 0.0

    def merge(self, other):
        self.spans += other.spans
        self.pairs += other.pairs
        self.pruned_gold += other.pruned_gold
        self.fallback += other.fallback
        self.encoder_seconds += other.encoder_seconds
        self.scorer_seconds += other.scorer_seconds
        return self

    def to_dict(self):
        return {
            'spans': self.spans,
            'pairs': self.pairs,
            'pruned_gold': self.pruned_gold,
            'coref_fallback': self.fallback,
            'encoder_seconds': round(self.encoder_seconds, 6),
            'scorer_seconds': round(self.scorer_seconds, 6),
        }


@dataclass
class ForwardResult:
    instance: object
    schema: object
    spans: list
    candidates: list
    span_logits: object
    kept: list = field(default_factory=list)
    pairs: list = field(default_factory=list)
    pair_scores: Optional[object] = None
    attention_maps: list = field(default_factory=list)
    stats: LossStats = field(default_factory=LossStats)


def _gold_clusters(instance):
    """Cluster id per gold (b, e) from the gold coreference links (union-find)."""
    parent = list(range(len(instance.gold_spans)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for h, t, _ in instance.gold_relations:
        parent[find(h)] = find(t)
    linked = {i for h, t, _ in instance.gold_relations for i in (h, t)}
    clusters = {}
    for i in linked:
        b, e, _ = instance.gold_spans[i]
        clusters[(b, e)] = find(i)
    return clusters


class ModelBundle:
    """Shared encoder parameters plus one head per task."""

    def __init__(self, config, schemas, shared=None, heads=None, seed=0):
        self.config = config
        self.schemas = dict(schemas)
        rng = np.random.default_rng(seed)
        self.shared = shared if shared is not None else Parameters()
        self.encoder = Encoder(config, self.shared, rng)
        self.heads = heads if heads is not None else {}
        self._heads = {}
        for task, schema in self.schemas.items():
            store = self.heads.setdefault(task, Parameters())
            self._heads[task] = TaskHead(schema, config, store, rng)

    @property
    def tasks(self):
        return list(self.schemas)

    def head(self, task):
        if task not in self._heads:
            raise UnknownTask(task)
        return self._heads[task]

    def copy(self):
        return ModelBundle(
            self.config, self.schemas, shared=self.shared.copy(),
            heads={task: store.copy() for task, store in self.heads.items()},
        )

    def forward(self, g, instance):
        schema = self.schemas.get(instance.task)
        if schema is None:
            raise UnknownTask(instance.task)
        head = self.head(instance.task)
        stats = LossStats()

        # 1. encode
        started = time.perf_counter()
        encoded = self.encoder.encode(g, list(instance.tokens))
        spans = enumerate_spans(instance.n, schema, instance.candidates)
        z = self.encoder.span_representation(g, encoded, spans)
        stats.encoder_seconds = time.perf_counter() - started

        # 2. classify, prune, score pairs
        started = time.perf_counter()
        span_logits, candidates = classify_spans(g, head, z, spans)
        kept, pairs, pair_scores = [], [], None
        if schema.has_relations:
            kept = prune_spans(candidates, schema, instance.n)
            pair_scores, pairs = score_pairs(g, head, z, kept)
        stats.scorer_seconds = time.perf_counter() - started
        stats.spans = len(spans)
        stats.pairs = len(pairs)
        return ForwardResult(instance, schema, spans, candidates, span_logits, kept, pairs,
                             pair_scores, encoded.attention_maps, stats)

    def loss(self, g, instance):
        """Training loss node for one instance, with pruning statistics."""
        result = self.forward(g, instance)
        schema = result.schema

        gold_label = {}
        for b, e, label in instance.gold_spans:
            gold_label.setdefault((b, e), label)
        span_gold = [gold_label.get(span, 0) for span in result.spans]

        if not schema.has_relations or result.pair_scores is None:
            if schema.has_relations:
                result.stats.pruned_gold += len(instance.gold_relations)
            return cross_entropy(g, result.span_logits, span_gold), result.stats

        kept_pos = {(c.b, c.e): i for i, c in enumerate(result.kept)}
        if schema.loss_mode.value == 'Head':
            clusters = _gold_clusters(instance)
            antecedents = {}
            for j, cand in enumerate(result.kept):
                cluster = clusters.get((cand.b, cand.e))
                if cluster is None:
                    continue
                found = {k for k, other in enumerate(result.kept[:j]) if clusters.get((other.b, other.e)) == cluster}
                if found:
                    antecedents[j] = found
                elif any(c == cluster and span < (cand.b, cand.e) for span, c in clusters.items()):
                    result.stats.fallback += 1
            loss = g.add(cross_entropy(g, result.span_logits, span_gold),
                         loss_head(g, result.pair_scores, result.kept, antecedents))
            return loss, result.stats

        size = len(result.kept)
        pair_gold = np.zeros(len(result.pairs), dtype=np.int64)
        for h, t, label in instance.gold_relations:
            hb, he, _ = instance.gold_spans[h]
            tb, te, _ = instance.gold_spans[t]
            j, k = kept_pos.get((hb, he)), kept_pos.get((tb, te))
            if j is None or k is None or j == k:
                result.stats.pruned_gold += 1
                continue
            pair_gold[pair_position(j, k, size)] = label
        loss = loss_pairwise(g, result.span_logits, span_gold, result.pair_scores, pair_gold)
        return loss, result.stats

    def run(self, instance):
        """Eval-mode forward pass (dropout off)."""
        return self.forward(Graph(train=False), instance)
