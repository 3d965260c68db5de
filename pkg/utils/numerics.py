"""Dense float64 arrays with tape-based reverse-mode differentiation, parameters and Adam.

Every primitive records one Node on the Graph; insertion order is a valid
topological order, so backward is a single reverse sweep over the tape.
"""
from __future__ import annotations

import math

import numpy as np

from errors import ShapeMismatch, NonScalarLoss, NonFiniteValue, KeyMismatch

DTYPE = np.float64


class Node:
    __slots__ = ('id', 'op', 'value', 'parents', 'backward', 'param')

    def __init__(self, id, op, value, parents=(), backward=None, param=None):
        self.id = id
        self.op = op
        self.value = value
        self.parents = parents
        self.backward = backward
        self.param = param

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.id}, {self.op}, shape={self.shape})"


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _softmax(x, axis):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


class Graph:
    """Append-only record of primitive applications for one forward pass."""

    def __init__(self, train=False, rng=None):
        self.nodes = []
        self.train = train
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._params = {}

    def __len__(self):
        return len(self.nodes)

    def _record(self, op, value, parents=(), backward=None, param=None):
        value = np.asarray(value, dtype=DTYPE)
        if not np.all(np.isfinite(value)):
            raise NonFiniteValue(f"{op} produced a non-finite value")
        node = Node(len(self.nodes), op, value, tuple(parents), backward, param)
        self.nodes.append(node)
        return node

    # --- leaves ------------------------------------------------------------

    def constant(self, array):
        return self._record('const', np.array(array, dtype=DTYPE))

    def param(self, store, name):
        """Leaf bound to store[name]; one node per (store, name) per graph."""
        key = (id(store), name)
        if key not in self._params:
            self._params[key] = self._record('param', store.values[name], param=(store, name))
        return self._params[key]

    def _node(self, x):
        return x if isinstance(x, Node) else self.constant(x)

    # --- arithmetic --------------------------------------------------------

    def add(self, a, b):
        a, b = self._node(a), self._node(b)
        try:
            out = a.value + b.value
        except ValueError:
            raise ShapeMismatch(f"add {a.shape} + {b.shape}") from None
        return self._record('add', out, (a, b),
                            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    def sub(self, a, b):
        a, b = self._node(a), self._node(b)
        try:
            out = a.value - b.value
        except ValueError:
            raise ShapeMismatch(f"sub {a.shape} - {b.shape}") from None
        return self._record('sub', out, (a, b),
                            lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))

    def mul(self, a, b):
        a, b = self._node(a), self._node(b)
        try:
            out = a.value * b.value
        except ValueError:
            raise ShapeMismatch(f"mul {a.shape} * {b.shape}") from None
        return self._record('mul', out, (a, b),
                            lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))

    def scale(self, a, c):
        return self._record('scale', a.value * c, (a,), lambda g: (g * c,))

    def matmul(self, a, b):
        a, b = self._node(a), self._node(b)
        if a.value.ndim not in (1, 2) or b.value.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
            raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
        av, bv = a.value, b.value

        def backward(g):
            if av.ndim == 2 and bv.ndim == 2:
                return g @ bv.T, av.T @ g
            if av.ndim == 1 and bv.ndim == 2:
                return bv @ g, np.outer(av, g)
            if av.ndim == 2:
                return np.outer(g, bv), av.T @ g
            return g * bv, g * av

        return self._record('matmul', av @ bv, (a, b), backward)

    def transpose(self, a):
        return self._record('transpose', a.value.T, (a,), lambda g: (g.T,))

    def reshape(self, a, shape):
        old = a.shape
        try:
            out = a.value.reshape(shape)
        except ValueError:
            raise ShapeMismatch(f"reshape {old} -> {shape}") from None
        return self._record('reshape', out, (a,), lambda g: (g.reshape(old),))

    # --- structure ---------------------------------------------------------

    def concat(self, nodes, axis=-1):
        nodes = [self._node(n) for n in nodes]
        try:
            out = np.concatenate([n.value for n in nodes], axis=axis)
        except ValueError:
            raise ShapeMismatch(f"concat {[n.shape for n in nodes]} on axis {axis}") from None
        sizes = [n.shape[axis] for n in nodes]
        cuts = np.cumsum(sizes)[:-1]
        return self._record('concat', out, nodes, lambda g: tuple(np.split(g, cuts, axis=axis)))

    def stack(self, nodes):
        """Stack equally shaped nodes along a new first axis."""
        nodes = [self._node(n) for n in nodes]
        shapes = {n.shape for n in nodes}
        if len(shapes) != 1:
            raise ShapeMismatch(f"stack {sorted(shapes)}")
        out = np.stack([n.value for n in nodes])
        return self._record('stack', out, nodes, lambda g: tuple(g[i] for i in range(len(nodes))))

    def slice(self, a, key):
        """Numpy indexing (slices, ints or index arrays); repeated indices accumulate gradient."""
        try:
            out = a.value[key]
        except IndexError:
            raise ShapeMismatch(f"index {key!r} out of range for {a.shape}") from None

        def backward(g):
            grad = np.zeros_like(a.value)
            np.add.at(grad, key, g)
            return (grad,)

        return self._record('slice', np.array(out), (a,), backward)

    def take(self, a, indices):
        """Gather rows of `a` (embedding lookup); indices may be any integer array."""
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= a.shape[0]):
            raise ShapeMismatch(f"take index outside [0, {a.shape[0]})")
        return self.slice(a, indices)

    # --- nonlinearities ----------------------------------------------------

    def sigmoid(self, a):
        y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
        return self._record('sigmoid', y, (a,), lambda g: (g * y * (1.0 - y),))

    def tanh(self, a):
        y = np.tanh(a.value)
        return self._record('tanh', y, (a,), lambda g: (g * (1.0 - y * y),))

    def relu(self, a):
        mask = a.value > 0
        return self._record('relu', a.value * mask, (a,), lambda g: (g * mask,))

    def exp(self, a):
        y = np.exp(a.value)
        return self._record('exp', y, (a,), lambda g: (g * y,))

    def log(self, a):
        with np.errstate(divide='ignore', invalid='ignore'):
            y = np.log(a.value)
        return self._record('log', y, (a,), lambda g: (g / a.value,))

    def softmax(self, a, axis=-1):
        y = _softmax(a.value, axis)
        return self._record('softmax', y, (a,),
                            lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))

    def log_softmax(self, a, axis=-1):
        shifted = a.value - a.value.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        y = shifted - lse
        p = np.exp(y)
        return self._record('log_softmax', y, (a,),
                            lambda g: (g - p * g.sum(axis=axis, keepdims=True),))

    def logsumexp(self, a, axis=-1):
        m = a.value.max(axis=axis, keepdims=True)
        out = np.squeeze(m, axis=axis) + np.log(np.exp(a.value - m).sum(axis=axis))
        p = _softmax(a.value, axis)
        return self._record('logsumexp', out, (a,), lambda g: (np.expand_dims(g, axis) * p,))

    def dropout(self, a, p):
        """Inverted dropout; identity at eval time."""
        if not self.train or p <= 0:
            return a
        mask = (self.rng.random(a.shape) >= p) / (1.0 - p)
        return self._record('dropout', a.value * mask, (a,), lambda g: (g * mask,))

    # --- reductions --------------------------------------------------------

    def sum(self, a, axis=None):
        shape = a.shape

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

        return self._record('sum', a.value.sum(axis=axis), (a,), backward)

    def mean(self, a, axis=None):
        count = a.value.size if axis is None else a.shape[axis]
        return self.scale(self.sum(a, axis), 1.0 / max(count, 1))

    # --- differentiation ---------------------------------------------------

    def backward(self, loss):
        """Gradients of a scalar loss for every node it depends on, keyed by node id."""
        if loss.value.size != 1:
            raise NonScalarLoss(f"loss has shape {loss.shape}")
        grads = {loss.id: np.ones_like(loss.value)}
        for node in reversed(self.nodes[:loss.id + 1]):
            g = grads.get(node.id)
            if g is None or node.backward is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None:
                    continue
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg
        return grads

    def parameter_gradients(self, grads, store):
        """name -> gradient for every entry of `store`; zeros for parameters this graph never used."""
        out = {}
        for name, value in store.values.items():
            node = self._params.get((id(store), name))
            g = grads.get(node.id) if node is not None else None
            out[name] = np.zeros_like(value) if g is None else np.asarray(g, dtype=DTYPE).reshape(value.shape)
        return out


class Parameters:
    """Named trainable arrays with Adam moments and a step counter."""

    def __init__(self):
        self.values = {}
        self.m = {}
        self.v = {}
        self.t = 0

    def __contains__(self, name):
        return name in self.values

    def __getitem__(self, name):
        return self.values[name]

    def __len__(self):
        return len(self.values)

    def names(self):
        return list(self.values)

    def add(self, name, array):
        array = np.array(array, dtype=DTYPE)
        self.values[name] = array
        self.m[name] = np.zeros_like(array)
        self.v[name] = np.zeros_like(array)
        return array

    def glorot(self, name, fan_in, fan_out, rng):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, rng.uniform(-limit, limit, size=(fan_in, fan_out)))

    def zeros(self, name, *shape):
        return self.add(name, np.zeros(shape))

    def embedding(self, name, rows, dim, rng):
        return self.add(name, rng.normal(0.0, 1.0, size=(rows, dim)) / math.sqrt(dim))

    def copy(self):
        other = Parameters()
        other.values = {k: v.copy() for k, v in self.values.items()}
        other.m = {k: v.copy() for k, v in self.m.items()}
        other.v = {k: v.copy() for k, v in self.v.items()}
        other.t = self.t
        return other

    def reset_optimizer(self):
        self.m = {k: np.zeros_like(v) for k, v in self.values.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.values.items()}
        self.t = 0

    def size(self):
        return int(sum(v.size for v in self.values.values()))


def adam_step(params, grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0, frozen=()):
    """One bias-corrected Adam update in place, with optional decoupled weight decay. Names in `frozen` are left alone."""
    if set(grads) != set(params.values):
        missing = sorted(set(params.values) ^ set(grads))
        raise KeyMismatch(f"gradient keys differ from parameters: {missing[:5]}")
    params.t += 1
    t = params.t
    for name, theta in params.values.items():
        if name in frozen:
            continue
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, expected {theta.shape}")
        params.m[name] = beta1 * params.m[name] + (1.0 - beta1) * g
        params.v[name] = beta2 * params.v[name] + (1.0 - beta2) * g * g
        m_hat = params.m[name] / (1.0 - beta1 ** t)
        v_hat = params.v[name] / (1.0 - beta2 ** t)
        update = m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay:
            update = update + weight_decay * theta
        theta -= lr * update
    return params


def global_norm(grad_maps):
    return math.sqrt(sum(float(np.sum(g * g)) for grads in grad_maps for g in grads.values()))


def clip_gradients(grad_maps, max_norm):
    """Scale every map in place so that the joint L2 norm is at most max_norm; returns the original norm."""
    norm = global_norm(grad_maps)
    if max_norm and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for grads in grad_maps:
            for name in grads:
                grads[name] = grads[name] * factor
    return norm


def grad_check(f, params, eps=1e-4):
    """Max relative error between analytic and central-difference gradients.

    `f(graph)` must build a scalar loss node on the given eval-mode graph;
    `params` is a Parameters store or a list of them.
    """
    stores = params if isinstance(params, (list, tuple)) else [params]
    graph = Graph(train=False)
    loss = f(graph)
    grads = graph.backward(loss)
    analytic = [graph.parameter_gradients(grads, store) for store in stores]

    def evaluate():
        return float(f(Graph(train=False)).value)

    worst = 0.0
    for store, store_grads in zip(stores, analytic):
        for name, theta in store.values.items():
            flat = theta.reshape(-1)
            a_flat = store_grads[name].reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + eps
                plus = evaluate()
                flat[i] = original - eps
                minus = evaluate()
                flat[i] = original
                numeric = (plus - minus) / (2.0 * eps)
                a = a_flat[i]
                err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
                worst = max(worst, err)
    return worst
