"""Token and span representations: embeddings, optional self-attention stack, stacked BiLSTM."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from errors import ConfigError, EmptySentence, IndexOutOfRange
from helpers import log

UNK = '<unk>'
MASK_VALUE = -1e30


@dataclass
class EncoderConfig:
    vocab: dict = field(default_factory=lambda: {UNK: 0})
    embed_dim: int = 100
    pretrained_vectors: Optional[str] = None
    freeze_embeddings: bool = False
    bilstm_layers: int = 3
    bilstm_hidden: int = 256
    attn_layers: int = 0
    attn_heads: int = 1
    dropout: float = 0.5
    mlp_hidden: int = 128
    mlp_layers: int = 2

    def __post_init__(self):
        if self.vocab.get(UNK) != 0:
            raise ConfigError(f"vocabulary must map {UNK} to index 0")
        if self.attn_layers > 0 and (self.attn_heads < 1 or self.embed_dim % self.attn_heads):
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by {self.attn_heads} attention heads")
        if min(self.bilstm_layers, self.bilstm_hidden, self.embed_dim, self.mlp_hidden, self.mlp_layers) < 1:
            raise ConfigError('encoder sizes must be positive')
        if not 0 <= self.dropout < 1:
            raise ConfigError('dropout must lie in [0, 1)')

    @property
    def token_dim(self):
        return self.embed_dim

    @property
    def context_dim(self):
        return 2 * self.bilstm_hidden

    @property
    def span_dim(self):
        # [z^c ; u_b ; u_e]
        return self.embed_dim + 2 * self.context_dim

    def to_dict(self):
        return asdict(self)


def build_vocab(token_lists, min_count=1):
    """Token -> index with UNK at 0; frequent tokens first, ties alphabetical."""
    counts = Counter(tok for tokens in token_lists for tok in tokens)
    ordered = sorted((t for t, c in counts.items() if c >= min_count and t != UNK),
                     key=lambda t: (-counts[t], t))
    vocab = {UNK: 0}
    for tok in ordered:
        vocab[tok] = len(vocab)
    return vocab


def load_pretrained(path, vocab, dim):
    """Rows for vocab tokens found in a text vector file ('token f1 f2 ...' per line)."""
    found = {}
    try:
        with open(path, encoding='utf-8') as fh:
            for line_no, line in enumerate(fh, start=1):
                parts = line.rstrip().split(' ')
                if len(parts) < 2 or parts[0] not in vocab:
                    continue
                if len(parts) - 1 != dim:
                    raise ConfigError(f"{path} line {line_no}: {len(parts) - 1} values, expected {dim}")
                found[vocab[parts[0]]] = np.array([float(x) for x in parts[1:]])
    except OSError as e:
        raise ConfigError(f"cannot read pretrained vectors {path}: {e}") from None
    return found


@dataclass
class EncodedSentence:
    c: object  # Node (n, d_c)
    u: object  # Node (n, d_u)
    attention_maps: list = field(default_factory=list)

    @property
    def n(self):
        return self.c.shape[0]


class Encoder:
    """Shared encoder; its weights live in the `shared` Parameters store under fixed names."""

    def __init__(self, config, params, rng=None):
        self.config = config
        self.params = params
        if 'embed' not in params:
            self._init_params(rng if rng is not None else np.random.default_rng(0))

    def _init_params(self, rng):
        cfg = self.config
        self.params.embedding('embed', len(cfg.vocab), cfg.embed_dim, rng)
        if cfg.pretrained_vectors:
            rows = load_pretrained(cfg.pretrained_vectors, cfg.vocab, cfg.embed_dim)
            for index, row in rows.items():
                self.params.values['embed'][index] = row
            log('INFO', f"Loaded {len(rows)}/{len(cfg.vocab)} pretrained vectors from {Path(cfg.pretrained_vectors).name}")
        d = cfg.embed_dim
        for layer in range(cfg.attn_layers):
            for name in ('wq', 'wk', 'wv', 'wo'):
                self.params.glorot(f"attn/{layer}/{name}", d, d, rng)
        h = cfg.bilstm_hidden
        in_dim = d
        for layer in range(cfg.bilstm_layers):
            for direction in ('fw', 'bw'):
                prefix = f"lstm/{layer}/{direction}"
                self.params.glorot(f"{prefix}/wx", in_dim, 4 * h, rng)
                self.params.glorot(f"{prefix}/wh", h, 4 * h, rng)
                bias = self.params.zeros(f"{prefix}/b", 4 * h)
                bias[h:2 * h] = 1.0  # forget gate
            in_dim = 2 * h
        self.params.zeros('span/w_attn', d)

    @property
    def frozen(self):
        return {'embed'} if self.config.freeze_embeddings else set()

    def token_ids(self, tokens):
        vocab = self.config.vocab
        return np.array([vocab.get(tok, 0) for tok in tokens], dtype=np.int64)

    def embed_tokens(self, g, tokens):
        if not tokens:
            raise EmptySentence('cannot embed an empty sentence')
        c = g.take(g.param(self.params, 'embed'), self.token_ids(tokens))
        return g.dropout(c, self.config.dropout)

    def _attention_layer(self, g, x, layer, maps):
        cfg = self.config
        d = cfg.embed_dim
        dh = d // cfg.attn_heads
        q_all = g.matmul(x, g.param(self.params, f"attn/{layer}/wq"))
        k_all = g.matmul(x, g.param(self.params, f"attn/{layer}/wk"))
        v_all = g.matmul(x, g.param(self.params, f"attn/{layer}/wv"))
        heads = []
        for head in range(cfg.attn_heads):
            cols = (slice(None), slice(head * dh, (head + 1) * dh))
            q, k, v = g.slice(q_all, cols), g.slice(k_all, cols), g.slice(v_all, cols)
            scores = g.scale(g.matmul(q, g.transpose(k)), 1.0 / math.sqrt(dh))
            attn = g.softmax(scores, axis=-1)
            maps.append(attn.value.copy())
            heads.append(g.matmul(attn, v))
        mixed = g.matmul(g.concat(heads, axis=-1), g.param(self.params, f"attn/{layer}/wo"))
        return g.add(x, g.dropout(mixed, cfg.dropout))

    def _lstm_direction(self, g, x, prefix, reverse):
        h_dim = self.config.bilstm_hidden
        n = x.shape[0]
        projected = g.add(g.matmul(x, g.param(self.params, f"{prefix}/wx")), g.param(self.params, f"{prefix}/b"))
        wh = g.param(self.params, f"{prefix}/wh")
        h = g.constant(np.zeros((1, h_dim)))
        cell = g.constant(np.zeros((1, h_dim)))
        outputs = [None] * n
        steps = range(n - 1, -1, -1) if reverse else range(n)
        for t in steps:
            gates = g.add(g.slice(projected, (slice(t, t + 1), slice(None))), g.matmul(h, wh))
            i = g.sigmoid(g.slice(gates, (slice(None), slice(0, h_dim))))
            f = g.sigmoid(g.slice(gates, (slice(None), slice(h_dim, 2 * h_dim))))
            o = g.sigmoid(g.slice(gates, (slice(None), slice(2 * h_dim, 3 * h_dim))))
            candidate = g.tanh(g.slice(gates, (slice(None), slice(3 * h_dim, 4 * h_dim))))
            cell = g.add(g.mul(f, cell), g.mul(i, candidate))
            h = g.mul(o, g.tanh(cell))
            outputs[t] = h
        return g.concat(outputs, axis=0)

    def contextualize(self, g, c):
        """Self-attention layers (if any) then the stacked BiLSTM; returns (u, attention maps)."""
        maps = []
        x = c
        for layer in range(self.config.attn_layers):
            x = self._attention_layer(g, x, layer, maps)
        for layer in range(self.config.bilstm_layers):
            if layer > 0:
                x = g.dropout(x, self.config.dropout)
            fw = self._lstm_direction(g, x, f"lstm/{layer}/fw", reverse=False)
            bw = self._lstm_direction(g, x, f"lstm/{layer}/bw", reverse=True)
            x = g.concat([fw, bw], axis=-1)
        return x, maps

    def encode(self, g, tokens):
        c = self.embed_tokens(g, tokens)
        u, maps = self.contextualize(g, c)
        return EncodedSentence(c=c, u=u, attention_maps=maps)

    def span_representation(self, g, encoded, spans):
        """z = [attention-weighted mean of c over the span ; u_b ; u_e] for every (b, e), as an (m, span_dim) node."""
        n = encoded.n
        spans = list(spans)
        for b, e in spans:
            if not 0 <= b <= e < n:
                raise IndexOutOfRange(f"span ({b}, {e}) outside a sentence of {n} tokens")
        begins = np.array([b for b, _ in spans], dtype=np.int64)
        ends = np.array([e for _, e in spans], dtype=np.int64)
        positions = np.arange(n)
        inside = (positions[None, :] >= begins[:, None]) & (positions[None, :] <= ends[:, None])
        mask = np.where(inside, 0.0, MASK_VALUE)

        scores = g.matmul(encoded.c, g.param(self.params, 'span/w_attn'))
        alpha = g.softmax(g.add(g.reshape(scores, (1, n)), mask), axis=-1)
        content = g.matmul(alpha, encoded.c)
        boundary = g.concat([g.take(encoded.u, begins), g.take(encoded.u, ends)], axis=-1)
        return g.concat([content, boundary], axis=-1)
