import numpy as np
import pytest

from errors import NonScalarLoss, ShapeMismatch, NonFiniteValue, KeyMismatch
from utils.numerics import Graph, Parameters, adam_step, clip_gradients, global_norm, grad_check

RNG = np.random.default_rng(3)


def _store(**arrays):
    store = Parameters()
    for name, value in arrays.items():
        store.add(name, value)
    return store


def _check(build, store, tol=1e-6):
    assert grad_check(build, store) < tol


def test_matmul_and_add_gradients():
    store = _store(w=RNG.normal(size=(3, 4)), b=RNG.normal(size=4), x=RNG.normal(size=(2, 3)))

    def build(g):
        y = g.add(g.matmul(g.param(store, 'x'), g.param(store, 'w')), g.param(store, 'b'))
        return g.sum(g.mul(y, y))

    _check(build, store)


def test_vector_matmul_gradients():
    store = _store(w=RNG.normal(size=(3, 2)), v=RNG.normal(size=3))
    _check(lambda g: g.sum(g.tanh(g.matmul(g.param(store, 'v'), g.param(store, 'w')))), store)


@pytest.mark.parametrize('op', ['sigmoid', 'tanh', 'exp', 'relu'])
def test_elementwise_gradients(op):
    # keep relu inputs away from the kink
    x = RNG.normal(size=(3, 3))
    x[np.abs(x) < 0.1] = 0.5
    store = _store(x=x)
    _check(lambda g: g.sum(g.mul(getattr(g, op)(g.param(store, 'x')), g.constant(np.arange(9.0).reshape(3, 3)))),
           store)


def test_log_gradient():
    store = _store(x=RNG.uniform(0.5, 2.0, size=5))
    _check(lambda g: g.sum(g.log(g.param(store, 'x'))), store)


def test_softmax_family_gradients():
    store = _store(x=RNG.normal(size=(2, 5)))
    weights = RNG.normal(size=(2, 5))
    _check(lambda g: g.sum(g.mul(g.softmax(g.param(store, 'x')), g.constant(weights))), store)
    _check(lambda g: g.sum(g.mul(g.log_softmax(g.param(store, 'x')), g.constant(weights))), store)
    _check(lambda g: g.sum(g.logsumexp(g.param(store, 'x'))), store)


def test_structure_gradients():
    store = _store(a=RNG.normal(size=(2, 3)), b=RNG.normal(size=(2, 2)))

    def build(g):
        joined = g.concat([g.param(store, 'a'), g.param(store, 'b')], axis=-1)
        rows = g.take(joined, [1, 0, 1])
        picked = g.slice(rows, (np.arange(3), np.array([0, 4, 2])))
        stacked = g.stack([g.transpose(g.param(store, 'a')), g.transpose(g.param(store, 'a'))])
        return g.add(g.sum(g.mul(picked, picked)), g.mean(g.reshape(stacked, (12,))))

    _check(build, store)


def test_repeated_take_accumulates():
    store = _store(e=np.eye(3))
    g = Graph()
    loss = g.sum(g.take(g.param(store, 'e'), [0, 0, 2]))
    grads = g.parameter_gradients(g.backward(loss), store)
    assert np.array_equal(grads['e'], np.array([[2.0] * 3, [0.0] * 3, [1.0] * 3]))


def test_softmax_rows_sum_to_one():
    g = Graph()
    y = g.softmax(g.constant(RNG.normal(size=(1000, 7)) * 10))
    assert np.allclose(y.value.sum(axis=-1), 1.0, atol=1e-9)


def test_backward_needs_scalar():
    g = Graph()
    with pytest.raises(NonScalarLoss):
        g.backward(g.constant(np.ones(3)))


def test_shape_mismatch():
    g = Graph()
    with pytest.raises(ShapeMismatch):
        g.matmul(g.constant(np.ones((2, 3))), g.constant(np.ones((2, 3))))


def test_non_finite_value():
    g = Graph()
    with pytest.raises(NonFiniteValue):
        g.log(g.constant(np.array([0.0, 1.0])))


def test_dropout_is_identity_in_eval_mode():
    g = Graph(train=False)
    x = g.constant(np.ones(10))
    assert g.dropout(x, 0.5) is x
    train = Graph(train=True, rng=np.random.default_rng(0))
    y = train.dropout(train.constant(np.ones(1000)), 0.5)
    assert set(np.unique(y.value)) <= {0.0, 2.0}


def test_unused_parameters_get_zero_gradients():
    store = _store(a=np.ones(2), b=np.ones(2))
    g = Graph()
    loss = g.sum(g.param(store, 'a'))
    grads = g.parameter_gradients(g.backward(loss), store)
    assert np.array_equal(grads['b'], np.zeros(2))


def test_adam_first_step_moves_by_lr():
    store = _store(w=np.array([1.0, -1.0]))
    adam_step(store, {'w': np.array([0.5, -2.0])}, lr=0.1)
    assert np.allclose(store['w'], [0.9, -0.9], atol=1e-6)
    assert store.t == 1


def test_adam_respects_frozen_names():
    store = _store(w=np.ones(2), e=np.ones(2))
    adam_step(store, {'w': np.ones(2), 'e': np.ones(2)}, frozen={'e'})
    assert np.array_equal(store['e'], np.ones(2))
    assert not np.array_equal(store['w'], np.ones(2))


def test_adam_key_and_shape_checks():
    store = _store(w=np.ones(2))
    with pytest.raises(KeyMismatch):
        adam_step(store, {'v': np.ones(2)})
    with pytest.raises(ShapeMismatch):
        adam_step(store, {'w': np.ones(3)})


def test_clip_gradients_joint_norm():
    a, b = {'x': np.array([3.0])}, {'y': np.array([4.0])}
    norm = clip_gradients([a, b], 1.0)
    assert norm == pytest.approx(5.0)
    assert global_norm([a, b]) == pytest.approx(1.0)


def test_copy_is_independent():
    store = _store(w=np.zeros(2))
    other = store.copy()
    other.values['w'][0] = 1.0
    assert store['w'][0] == 0.0


def _weighted(g, node, rng):
    # positive weights keep every analytic gradient entry away from zero
    return g.sum(g.mul(node, g.constant(rng.uniform(0.5, 1.5, size=node.shape))))


def _away_from_zero(rng, shape):
    return rng.uniform(0.1, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _first_column(g, node):
    return g.sum(g.slice(node, (slice(None), 0)))


PRIMITIVES = {
    'add': (lambda rng: dict(a=rng.normal(size=(2, 3)), b=rng.normal(size=3)),
            lambda g, p, rng: _weighted(g, g.add(p('a'), p('b')), rng)),
    'sub': (lambda rng: dict(a=rng.normal(size=(2, 3)), b=rng.normal(size=(2, 3))),
            lambda g, p, rng: _weighted(g, g.sub(p('a'), p('b')), rng)),
    'mul': (lambda rng: dict(a=rng.normal(size=(2, 3)), b=rng.normal(size=(2, 3))),
            lambda g, p, rng: _weighted(g, g.mul(p('a'), p('b')), rng)),
    'scale': (lambda rng: dict(a=rng.normal(size=(2, 3))),
              lambda g, p, rng: _weighted(g, g.scale(p('a'), 1.7), rng)),
    'matmul': (lambda rng: dict(x=rng.normal(size=(2, 3)), w=rng.normal(size=(3, 4))),
               lambda g, p, rng: _weighted(g, g.matmul(p('x'), p('w')), rng)),
    'vector_matmul': (lambda rng: dict(v=rng.normal(size=3), w=rng.normal(size=(3, 2))),
                      lambda g, p, rng: _weighted(g, g.matmul(p('v'), p('w')), rng)),
    'transpose': (lambda rng: dict(a=rng.normal(size=(2, 3))),
                  lambda g, p, rng: _weighted(g, g.transpose(p('a')), rng)),
    'reshape': (lambda rng: dict(a=rng.normal(size=(2, 3))),
                lambda g, p, rng: _weighted(g, g.reshape(p('a'), (3, 2)), rng)),
    'concat': (lambda rng: dict(a=rng.normal(size=(2, 3)), b=rng.normal(size=(2, 2))),
               lambda g, p, rng: _weighted(g, g.concat([p('a'), p('b')], axis=-1), rng)),
    'stack': (lambda rng: dict(a=rng.normal(size=(2, 3)), b=rng.normal(size=(2, 3))),
              lambda g, p, rng: _weighted(g, g.stack([p('a'), p('b')]), rng)),
    'slice': (lambda rng: dict(a=rng.normal(size=(3, 4))),
              lambda g, p, rng: _weighted(g, g.slice(p('a'), (np.array([0, 2, 2]), np.array([1, 3, 3]))), rng)),
    'take': (lambda rng: dict(a=rng.normal(size=(4, 3))),
             lambda g, p, rng: _weighted(g, g.take(p('a'), [3, 0, 3]), rng)),
    'sum': (lambda rng: dict(a=rng.normal(size=(2, 3))),
            lambda g, p, rng: _weighted(g, g.sum(p('a'), 0), rng)),
    'mean': (lambda rng: dict(a=rng.normal(size=(2, 3))),
             lambda g, p, rng: _weighted(g, g.mean(p('a'), 1), rng)),
    'sigmoid': (lambda rng: dict(a=rng.uniform(-1.5, 1.5, size=(2, 3))),
                lambda g, p, rng: _weighted(g, g.sigmoid(p('a')), rng)),
    'tanh': (lambda rng: dict(a=rng.uniform(-1.5, 1.5, size=(2, 3))),
             lambda g, p, rng: _weighted(g, g.tanh(p('a')), rng)),
    'exp': (lambda rng: dict(a=rng.uniform(-1.5, 1.5, size=(2, 3))),
            lambda g, p, rng: _weighted(g, g.exp(p('a')), rng)),
    'relu': (lambda rng: dict(a=_away_from_zero(rng, (2, 3))),
             lambda g, p, rng: _weighted(g, g.relu(p('a')), rng)),
    'log': (lambda rng: dict(a=rng.uniform(0.5, 2.0, size=(2, 3))),
            lambda g, p, rng: _weighted(g, g.log(p('a')), rng)),
    'softmax': (lambda rng: dict(a=rng.uniform(-1.0, 1.0, size=(2, 4))),
                lambda g, p, rng: _first_column(g, g.softmax(p('a')))),
    'log_softmax': (lambda rng: dict(a=rng.uniform(-1.0, 1.0, size=(2, 4))),
                    lambda g, p, rng: _first_column(g, g.log_softmax(p('a')))),
    'logsumexp': (lambda rng: dict(a=rng.uniform(-1.0, 1.0, size=(2, 4))),
                  lambda g, p, rng: _weighted(g, g.logsumexp(p('a')), rng)),
}


@pytest.mark.parametrize('name', sorted(PRIMITIVES))
def test_primitive_gradients_over_many_seeds(name):
    make, build = PRIMITIVES[name]
    for seed in range(100):
        store = _store(**make(np.random.default_rng(seed)))
        weights_seed = 1000 + seed

        def loss(g):
            return build(g, lambda key: g.param(store, key), np.random.default_rng(weights_seed))

        assert grad_check(loss, store) < 1e-6, f"{name} seed {seed}"


def test_softmax_is_shift_invariant():
    x = RNG.normal(size=(4, 6))
    g = Graph()
    for shift in (1000.0, -1000.0, 3.5):
        assert np.allclose(g.softmax(g.constant(x + shift)).value, g.softmax(g.constant(x)).value, atol=1e-12)
        assert np.allclose(g.log_softmax(g.constant(x + shift)).value, g.log_softmax(g.constant(x)).value,
                           atol=1e-9)
        assert np.allclose(g.logsumexp(g.constant(x + shift)).value, g.logsumexp(g.constant(x)).value + shift,
                           atol=1e-9)
