import numpy as np
import pytest

from errors import ConfigError, EmptySentence, IndexOutOfRange
from utils.encoder import EncoderConfig, Encoder, build_vocab, load_pretrained, UNK
from utils.numerics import Graph, Parameters, grad_check

TOKENS = ['the', 'cat', 'sat']


def _encoder(**overrides):
    settings = dict(vocab=build_vocab([TOKENS]), embed_dim=4, bilstm_layers=1, bilstm_hidden=3,
                    attn_layers=1, attn_heads=2, dropout=0.0, mlp_hidden=5, mlp_layers=1)
    settings.update(overrides)
    return Encoder(EncoderConfig(**settings), Parameters(), np.random.default_rng(1))


def test_vocab_is_frequency_ordered_with_unk_first():
    vocab = build_vocab([['b', 'a', 'b'], ['c']])
    assert vocab == {UNK: 0, 'b': 1, 'a': 2, 'c': 3}
    assert build_vocab([['x', 'y', 'y']], min_count=2) == {UNK: 0, 'y': 1}


def test_unknown_tokens_map_to_row_zero():
    enc = _encoder()
    assert list(enc.token_ids(['cat', 'dog'])) == [enc.config.vocab['cat'], 0]


def test_shapes():
    enc = _encoder()
    g = Graph()
    encoded = enc.encode(g, TOKENS)
    assert encoded.c.shape == (3, 4)
    assert encoded.u.shape == (3, 6)
    z = enc.span_representation(g, encoded, [(0, 0), (0, 2), (1, 2)])
    assert z.shape == (3, enc.config.span_dim)
    assert enc.config.span_dim == 4 + 4 * 3


def test_attention_maps_are_row_stochastic():
    enc = _encoder(attn_layers=2)
    encoded = enc.encode(Graph(), TOKENS)
    assert len(encoded.attention_maps) == 4
    for attn in encoded.attention_maps:
        assert attn.shape == (3, 3)
        assert np.allclose(attn.sum(axis=-1), 1.0)


def test_zero_lstm_weights_give_zero_context():
    enc = _encoder(attn_layers=0)
    for name in enc.params.names():
        if name.startswith('lstm/'):
            enc.params.values[name][...] = 0.0
    encoded = enc.encode(Graph(), TOKENS)
    assert np.array_equal(encoded.u.value, np.zeros((3, 6)))


def test_single_token_span_content_is_its_embedding():
    enc = _encoder()
    enc.params.values['span/w_attn'][:] = np.array([1.0, -2.0, 0.5, 3.0])
    g = Graph()
    encoded = enc.encode(g, TOKENS)
    z = enc.span_representation(g, encoded, [(1, 1)])
    assert np.allclose(z.value[0, :4], encoded.c.value[1])
    assert np.allclose(z.value[0, 4:10], encoded.u.value[1])
    assert np.allclose(z.value[0, 10:], encoded.u.value[1])


def test_zero_attention_vector_averages_the_span():
    enc = _encoder()
    g = Graph()
    encoded = enc.encode(g, TOKENS)
    z = enc.span_representation(g, encoded, [(0, 2)])
    assert np.allclose(z.value[0, :4], encoded.c.value.mean(axis=0))


def test_span_outside_sentence():
    enc = _encoder()
    g = Graph()
    encoded = enc.encode(g, TOKENS)
    with pytest.raises(IndexOutOfRange):
        enc.span_representation(g, encoded, [(1, 3)])


def test_empty_sentence():
    with pytest.raises(EmptySentence):
        _encoder().encode(Graph(), [])


def test_heads_must_divide_embedding():
    with pytest.raises(ConfigError):
        _encoder(attn_heads=3)
    with pytest.raises(ConfigError):
        EncoderConfig(vocab={'a': 0})


def test_frozen_embeddings():
    assert _encoder(freeze_embeddings=True).frozen == {'embed'}
    assert _encoder().frozen == set()


def test_pretrained_vectors(tmp_path):
    path = tmp_path / 'vectors.txt'
    path.write_text('cat 1 2 3 4\nzebra 0 0 0 0\n', encoding='utf-8')
    vocab = build_vocab([TOKENS])
    rows = load_pretrained(path, vocab, 4)
    assert list(rows) == [vocab['cat']]
    enc = _encoder(pretrained_vectors=str(path))
    assert np.array_equal(enc.params['embed'][vocab['cat']], [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(ConfigError):
        load_pretrained(path, vocab, 3)


def test_span_representation_gradients():
    enc = _encoder(embed_dim=2, bilstm_hidden=2, attn_heads=1)
    weights = np.random.default_rng(5).normal(size=(2, enc.config.span_dim))

    def build(g):
        encoded = enc.encode(g, TOKENS)
        z = enc.span_representation(g, encoded, [(0, 1), (1, 2)])
        return g.sum(g.mul(z, g.constant(weights)))

    assert grad_check(build, enc.params) < 1e-4
