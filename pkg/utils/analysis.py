"""Task relatedness from attention maps: per-head similarity, heatmaps and Pearson correlation."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from errors import AnalysisError, NoAttentionLayers, SentenceSetMismatch, DegenerateVariance
from helpers import log, worker_count, ensure_dir
from utils.numerics import Graph

CELL = 48


@dataclass
class AttentionProfile:
    task: str
    layers: int
    heads: int
    sentences: list = field(default_factory=list)
    # maps[i][k]: n_i x n_i matrix of head k (layer-major) on sentence i
    maps: list = field(default_factory=list)

    @property
    def head_count(self):
        return self.layers * self.heads


def extract_attention(bundle, sentences, task=''):
    """Eval-mode forward over each sentence, recording every head's attention map."""
    config = bundle.config
    if config.attn_layers < 1:
        raise NoAttentionLayers('the encoder has no self-attention layers to read maps from')
    sentences = [tuple(s) for s in sentences]

    def run(tokens):
        graph = Graph(train=False)
        encoded = bundle.encoder.encode(graph, list(tokens))
        return encoded.attention_maps

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        maps = list(pool.map(run, sentences))
    return AttentionProfile(task or ','.join(bundle.tasks), config.attn_layers, config.attn_heads, sentences, maps)


def _check_pair(profile_a, profile_b):
    if profile_a.sentences != profile_b.sentences:
        raise SentenceSetMismatch('profiles were extracted from different sentences')
    if (profile_a.layers, profile_a.heads) != (profile_b.layers, profile_b.heads):
        raise SentenceSetMismatch(
            f"head layouts differ: {profile_a.layers}x{profile_a.heads} vs {profile_b.layers}x{profile_b.heads}")
    if not profile_a.sentences:
        raise SentenceSetMismatch('no sentences to compare')


def attention_similarity(profile_a, profile_b, head):
    """-(1/|X|) * sum over sentences of the Frobenius norm of the difference of head `head`'s maps."""
    _check_pair(profile_a, profile_b)
    if not 0 <= head < profile_a.head_count:
        raise AnalysisError(f"head {head} outside 0..{profile_a.head_count - 1}")
    total = 0.0
    for maps_a, maps_b in zip(profile_a.maps, profile_b.maps):
        total += float(np.linalg.norm(maps_a[head] - maps_b[head], 'fro'))
    return -total / len(profile_a.maps)


def similarity_grid(profile_a, profile_b):
    _check_pair(profile_a, profile_b)
    grid = np.zeros((profile_a.layers, profile_a.heads))
    for k in range(profile_a.head_count):
        grid[k // profile_a.heads, k % profile_a.heads] = attention_similarity(profile_a, profile_b, k)
    return grid


def mean_similarity(profile_a, profile_b):
    """Average of sim_k over all layers x heads."""
    return float(similarity_grid(profile_a, profile_b).mean())


def write_heatmap_csv(grid, path):
    np.savetxt(path, grid, delimiter=',', fmt='%.17g')
    return Path(path)


def read_heatmap_csv(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=',', dtype=np.float64))


def render_heatmap(grid, path, title=''):
    """PNG of the layers x heads grid; darker cells are less similar."""
    rows, cols = grid.shape
    margin = 24
    image = Image.new('RGB', (cols * CELL + margin, rows * CELL + margin + (16 if title else 0)), 'white')
    draw = ImageDraw.Draw(image)
    top = 16 if title else 0
    if title:
        draw.text((4, 2), title, fill='black')
    low = float(grid.min()) if grid.size else 0.0
    for r in range(rows):
        draw.text((4, top + margin + r * CELL + CELL // 3), str(r), fill='black')
        for c in range(cols):
            shade = 1.0 if low == 0 else 1.0 - float(grid[r, c]) / low
            tone = int(255 * shade)
            x0, y0 = margin + c * CELL, top + margin + r * CELL
            draw.rectangle([x0, y0, x0 + CELL - 1, y0 + CELL - 1], fill=(tone, tone, 255), outline='white')
            draw.text((x0 + 4, y0 + CELL // 3), f"{grid[r, c]:.2f}", fill='black' if tone > 110 else 'white')
    for c in range(cols):
        draw.text((margin + c * CELL + CELL // 2 - 3, top + 4), str(c), fill='black')
    image.save(path)
    return Path(path)


def similarity_heatmap(profile_a, profile_b, out_dir=None, stem='attention_similarity'):
    """Layers x heads grid of sim_k; with `out_dir`, also writes <stem>.csv and <stem>.png."""
    grid = similarity_grid(profile_a, profile_b)
    if out_dir is not None:
        out_dir = ensure_dir(out_dir)
        write_heatmap_csv(grid, out_dir / f"{stem}.csv")
        render_heatmap(grid, out_dir / f"{stem}.png", f"{profile_a.task} vs {profile_b.task}")
        log('OK', f"Wrote {stem}.csv and {stem}.png to {out_dir}")
    return grid


def pearson_correlation(xs, ys):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size < 2:
        raise AnalysisError(f"need two equal-length series of at least 2 values, got {xs.shape} and {ys.shape}")
    if np.std(xs) == 0 or np.std(ys) == 0:
        raise DegenerateVariance('one of the series is constant')
    return float(np.corrcoef(xs, ys)[0, 1])
