"""
Minimal reverse-mode differentiation over numpy arrays.

A Tape records every primitive op of one forward pass as a Var holding its
value and a backward closure. Records are appended in creation order, so a
single reverse sweep over the list is a valid topological order.

Parameters live in one flat f64 vector (ParamStore); tape.param(name)
returns a leaf viewing a slice of it, and backward() gathers the leaf
gradients back into a vector aligned with that layout.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, NumericalAbort, ShapeError, TapeStateError

logger = logging.getLogger(__name__)

NORM_EPS = 1e-5
ROUNDOFF_ULPS = 32


# =====================================================
# PARAMETER STORAGE
# =====================================================

class ParamStore:
    """Flat parameter vector plus a name -> (offset, shape) layout table."""

    def __init__(self, values, layout, stats=None):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.layout = dict(layout)
        self.stats = dict(stats or {})
        self.validate()

    def validate(self):
        covered = np.zeros(self.values.size, dtype=np.int64)
        for name, (offset, shape) in self.layout.items():
            size = int(np.prod(shape))
            if offset < 0 or offset + size > self.values.size:
                raise ShapeError(f"layer '{name}' runs past the parameter vector")
            covered[offset:offset + size] += 1
        if np.any(covered != 1):
            raise ShapeError("parameter layout must cover the vector exactly once")

    @property
    def size(self):
        return self.values.size

    @property
    def names(self):
        return list(self.layout)

    def view(self, name):
        if name not in self.layout:
            raise ConfigError(f"no parameter named '{name}'")
        offset, shape = self.layout[name]
        return self.values[offset:offset + int(np.prod(shape))].reshape(shape)

    def slice_of(self, name):
        offset, shape = self.layout[name]
        return slice(offset, offset + int(np.prod(shape)))

    def set(self, name, array):
        target = self.view(name)
        array = np.asarray(array, dtype=np.float64)
        if array.shape != target.shape:
            raise ShapeError(f"'{name}' expects {target.shape}, got {array.shape}")
        target[...] = array

    def copy(self, values=None):
        stats = {k: (m.copy(), v.copy()) for k, (m, v) in self.stats.items()}
        return ParamStore(self.values.copy() if values is None else values, self.layout, stats)

    def non_finite_layers(self, vector=None):
        vector = self.values if vector is None else vector
        return [name for name in self.layout if not np.all(np.isfinite(vector[self.slice_of(name)]))]


class ParamBuilder:
    """
    Collects declared shapes, then materializes a seeded ParamStore.

    Each tensor draws from its own stream keyed by (seed, name), so adding or
    removing a layer leaves every other initial value untouched.
    """

    def __init__(self, seed=0):
        self.seed = int(seed)
        self._chunks = []
        self._layout = {}
        self._offset = 0

    def declare(self, name, shape, init='glorot'):
        if name in self._layout:
            raise ConfigError(f"parameter '{name}' declared twice")
        shape = tuple(int(s) for s in shape)
        size = int(np.prod(shape))
        if isinstance(init, np.ndarray):
            chunk = np.asarray(init, dtype=np.float64).reshape(shape)
        elif init == 'zeros':
            chunk = np.zeros(shape)
        elif init == 'glorot':
            fan_in, fan_out = (shape[-2], shape[-1]) if len(shape) >= 2 else (shape[0], shape[0])
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            rng = np.random.default_rng([self.seed, zlib.crc32(name.encode())])
            chunk = rng.uniform(-limit, limit, size=shape)
        else:
            raise ConfigError(f"unknown initializer '{init}'")
        self._layout[name] = (self._offset, shape)
        self._chunks.append(chunk.reshape(-1))
        self._offset += size
        return name

    def build(self):
        values = np.concatenate(self._chunks) if self._chunks else np.zeros(0)
        return ParamStore(values, self._layout)


# =====================================================
# LAYER SPECS
# =====================================================

@dataclass(frozen=True)
class Layer:
    in_dim: int
    out_dim: int
    activation: str = 'relu'
    normalize: bool = False

    def __post_init__(self):
        if self.activation not in ('relu', 'none'):
            raise ConfigError(f"unknown activation '{self.activation}'")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ShapeError("layer widths must be positive")


@dataclass(frozen=True)
class LayerSpec:
    layers: tuple

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a layer spec needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(f"layer widths do not chain: {prev.out_dim} -> {nxt.in_dim}")

    @classmethod
    def chain(cls, dims, normalize=False, final_activation='none'):
        """relu between hidden layers; the last layer gets final_activation."""
        dims = [int(d) for d in dims]
        if len(dims) < 2:
            raise ShapeError("chain needs at least an input and an output width")
        layers = []
        for i, (a, b) in enumerate(zip(dims, dims[1:])):
            last = i == len(dims) - 2
            layers.append(Layer(a, b, final_activation if last else 'relu', normalize and not last))
        return cls(tuple(layers))

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim


def declare_mlp(builder, prefix, spec):
    for i, layer in enumerate(spec.layers):
        builder.declare(f"{prefix}.{i}.weight", (layer.in_dim, layer.out_dim))
        builder.declare(f"{prefix}.{i}.bias", (layer.out_dim,), init='zeros')


# =====================================================
# TAPE
# =====================================================

class Var:
    def __init__(self, value, op='leaf', backward=None):
        self.value = value
        self.grad = None
        self.op = op
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Records one forward pass. training toggles batch statistics in standardize()."""

    def __init__(self, params=None, training=False):
        self.params = params
        self.training = training
        self.records = []
        self.inputs = []
        self.flops = 0
        self.consumed = False
        self._param_vars = {}

    # ---- leaves ----

    def input(self, value):
        var = Var(np.asarray(value, dtype=np.float64), op='input')
        self.inputs.append(var)
        return var

    def constant(self, value):
        return Var(np.asarray(value, dtype=np.float64), op='constant')

    def param(self, name):
        if self.params is None:
            raise ConfigError("tape has no parameter store")
        if name not in self._param_vars:
            self._param_vars[name] = Var(self.params.view(name), op=f'param:{name}')
        return self._param_vars[name]

    def lift(self, x):
        return x if isinstance(x, Var) else self.constant(x)

    def add_flops(self, count):
        self.flops += int(count)

    def _record(self, value, op, backward):
        if self.consumed:
            raise TapeStateError("tape already consumed by backward()")
        var = Var(value, op=op, backward=backward)
        self.records.append(var)
        return var

    # ---- arithmetic ----

    def linear(self, x, w, b=None):
        x, w = self.lift(x), self.lift(w)
        if x.value.shape[-1] != w.value.shape[0]:
            raise ShapeError(f"linear: input width {x.value.shape[-1]} != weight rows {w.value.shape[0]}")
        out = x.value @ w.value
        if b is not None:
            b = self.lift(b)
            out = out + b.value
        rows = int(np.prod(x.value.shape[:-1]))
        self.add_flops(2 * rows * w.value.shape[0] * w.value.shape[1])

        def backward(g):
            x.accumulate(g @ w.value.T)
            w.accumulate(x.value.reshape(-1, w.value.shape[0]).T @ g.reshape(-1, w.value.shape[1]))
            if b is not None:
                b.accumulate(g.reshape(-1, w.value.shape[1]).sum(axis=0))
        return self._record(out, 'linear', backward)

    def add(self, a, b):
        a, b = self.lift(a), self.lift(b)

        def backward(g):
            a.accumulate(_unbroadcast(g, a.value.shape))
            b.accumulate(_unbroadcast(g, b.value.shape))
        return self._record(a.value + b.value, 'add', backward)

    def sub(self, a, b):
        a, b = self.lift(a), self.lift(b)

        def backward(g):
            a.accumulate(_unbroadcast(g, a.value.shape))
            b.accumulate(-_unbroadcast(g, b.value.shape))
        return self._record(a.value - b.value, 'sub', backward)

    def mul(self, a, b):
        a, b = self.lift(a), self.lift(b)

        def backward(g):
            a.accumulate(_unbroadcast(g * b.value, a.value.shape))
            b.accumulate(_unbroadcast(g * a.value, b.value.shape))
        return self._record(a.value * b.value, 'mul', backward)

    def scale(self, a, factor):
        a = self.lift(a)
        return self._record(a.value * factor, 'scale', lambda g: a.accumulate(g * factor))

    def neg(self, a):
        return self.scale(a, -1.0)

    def relu(self, a):
        a = self.lift(a)
        active = a.value > 0
        return self._record(np.where(active, a.value, 0.0), 'relu', lambda g: a.accumulate(g * active))

    def einsum(self, spec, a, b):
        """Two-operand contraction; every operand index must survive in the output or the other operand."""
        a, b = self.lift(a), self.lift(b)
        lhs, out_sub = spec.replace(' ', '').split('->')
        a_sub, b_sub = lhs.split(',')
        for sub, other in ((a_sub, b_sub), (b_sub, a_sub)):
            if any(ch not in out_sub and ch not in other for ch in sub):
                raise ShapeError(f"einsum '{spec}' sums an index private to one operand")
        out = np.einsum(spec, a.value, b.value)
        sizes = {}
        for sub, arr in ((a_sub, a.value), (b_sub, b.value)):
            for ch, n in zip(sub, arr.shape):
                sizes[ch] = n
        self.add_flops(2 * int(np.prod(list(sizes.values()))))

        def backward(g):
            a.accumulate(np.einsum(f"{out_sub},{b_sub}->{a_sub}", g, b.value))
            b.accumulate(np.einsum(f"{out_sub},{a_sub}->{b_sub}", g, a.value))
        return self._record(out, 'einsum', backward)

    # ---- normalization / pooling ----

    def softmax(self, a, axis=-1, mask=None):
        """Stable softmax along axis; masked-out slots get probability 0."""
        a = self.lift(a)
        y = softmax(a.value, axis=axis, mask=mask)
        self.add_flops(3 * a.value.size)

        def backward(g):
            a.accumulate(y * (g - np.sum(g * y, axis=axis, keepdims=True)))
        return self._record(y, 'softmax', backward)

    def maxpool(self, x, mask=None):
        """Max over axis 1 of an (M, k, C) tensor, valid slots only, first index on ties."""
        x = self.lift(x)
        vals = x.value if mask is None else np.where(mask[:, :, None], x.value, -np.inf)
        arg = np.argmax(vals, axis=1)
        out = np.take_along_axis(x.value, arg[:, None, :], axis=1)[:, 0, :]

        def backward(g):
            gx = np.zeros_like(x.value)
            np.put_along_axis(gx, arg[:, None, :], g[:, None, :], axis=1)
            x.accumulate(gx)
        var = self._record(out, 'maxpool', backward)
        var.argmax = arg
        return var

    def meanpool(self, x, mask=None):
        x = self.lift(x)
        w = np.ones(x.value.shape[:2]) if mask is None else mask.astype(np.float64)
        counts = w.sum(axis=1, keepdims=True)
        out = np.einsum('mk,mkc->mc', w, x.value) / counts

        def backward(g):
            x.accumulate((w / counts)[:, :, None] * g[:, None, :])
        return self._record(out, 'meanpool', backward)

    def standardize(self, x, name):
        """
        Per-feature standardization over every leading axis.

        While training, batch statistics are used and stored under name in
        params.stats; otherwise the stored statistics are applied as constants.
        """
        x = self.lift(x)
        width = x.value.shape[-1]
        flat = x.value.reshape(-1, width)
        stored = None if self.params is None else self.params.stats.get(name)
        if self.training or stored is None:
            mean, var = flat.mean(axis=0), flat.var(axis=0)
            if self.training and self.params is not None:
                self.params.stats[name] = (mean.copy(), var.copy())
            batch = True
        else:
            mean, var = stored
            batch = False
        inv = 1.0 / np.sqrt(var + NORM_EPS)
        xhat = (flat - mean) * inv
        rows = flat.shape[0]

        def backward(g):
            g2 = g.reshape(-1, width)
            if batch:
                gx = inv / rows * (rows * g2 - g2.sum(axis=0) - xhat * (g2 * xhat).sum(axis=0))
            else:
                gx = g2 * inv
            x.accumulate(gx.reshape(x.value.shape))
        return self._record(xhat.reshape(x.value.shape), 'standardize', backward)

    # ---- indexing / shape ----

    def gather(self, x, index):
        """Rows of x picked by an integer index array of any shape."""
        x = self.lift(x)
        index = np.asarray(index, dtype=np.int64)

        def backward(g):
            gx = np.zeros_like(x.value)
            np.add.at(gx, index, g)
            x.accumulate(gx)
        return self._record(x.value[index], 'gather', backward)

    def scatter_mean(self, src, index, mask, size):
        """
        Mean of src[m, j] over every valid (m, j) with index[m, j] == t, for t < size.

        Accumulation runs region-major, slot-minor. Targets never hit stay zero.
        """
        src = self.lift(src)
        out, counts = scatter_mean(src.value, index, mask, size)
        safe = np.where(counts > 0, counts, 1.0)

        def backward(g):
            per_target = g / safe[:, None]
            gs = per_target[index] * mask[:, :, None]
            src.accumulate(gs)
        var = self._record(out, 'scatter_mean', backward)
        var.counts = counts
        return var

    def concat(self, parts, axis=-1):
        parts = [self.lift(p) for p in parts]
        out = np.concatenate([p.value for p in parts], axis=axis)
        bounds = np.cumsum([p.value.shape[axis] for p in parts])[:-1]

        def backward(g):
            for p, piece in zip(parts, np.split(g, bounds, axis=axis)):
                p.accumulate(piece)
        return self._record(out, 'concat', backward)

    def reshape(self, a, shape):
        a = self.lift(a)
        return self._record(a.value.reshape(shape), 'reshape', lambda g: a.accumulate(g.reshape(a.value.shape)))

    def sum(self, a):
        a = self.lift(a)
        return self._record(np.asarray(a.value.sum()), 'sum', lambda g: a.accumulate(np.full(a.value.shape, g)))

    # ---- losses ----

    def cross_entropy(self, logits, labels):
        logits = self.lift(logits)
        labels = np.asarray(labels, dtype=np.int64)
        shifted = logits.value - logits.value.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        rows = np.arange(labels.shape[0])
        loss = -log_probs[rows, labels].mean()

        def backward(g):
            grad = np.exp(log_probs)
            grad[rows, labels] -= 1.0
            logits.accumulate(grad * (g / labels.shape[0]))
        return self._record(np.asarray(loss), 'cross_entropy', backward)

    def mse(self, pred, target):
        pred = self.lift(pred)
        diff = pred.value - np.asarray(target, dtype=np.float64)
        return self._record(
            np.asarray(np.mean(diff * diff)), 'mse',
            lambda g: pred.accumulate(g * 2.0 * diff / diff.size),
        )


# =====================================================
# BACKWARD / OPTIMIZER
# =====================================================

@dataclass
class Gradients:
    params: np.ndarray
    inputs: list = field(default_factory=list)


def backward(tape, out, out_grad=None):
    """Reverse sweep over the tape; returns gradients aligned with tape.params and tape.inputs."""
    if tape.consumed:
        raise TapeStateError("backward() called twice on one tape")
    if out_grad is None:
        out_grad = np.ones_like(out.value)
    out_grad = np.asarray(out_grad, dtype=np.float64)
    if out_grad.shape != out.value.shape:
        raise ShapeError(f"out_grad shape {out_grad.shape} != output shape {out.value.shape}")
    out.grad = out_grad.copy()
    for var in reversed(tape.records):
        if var.grad is not None:
            var._backward(var.grad)
    tape.consumed = True

    size = 0 if tape.params is None else tape.params.size
    flat = np.zeros(size)
    for name, var in tape._param_vars.items():
        if var.grad is not None:
            flat[tape.params.slice_of(name)] += var.grad.reshape(-1)
    inputs = [np.zeros_like(v.value) if v.grad is None else v.grad for v in tape.inputs]
    return Gradients(params=flat, inputs=inputs)


def sgd_step(params, grads, lr, momentum=0.0, velocity=None):
    """Classic momentum: v <- mu*v + g; theta <- theta - lr*v. Returns (new params, velocity)."""
    g = grads.params if isinstance(grads, Gradients) else np.asarray(grads, dtype=np.float64)
    if g.shape != params.values.shape:
        raise ShapeError(f"gradient length {g.size} != parameter count {params.size}")
    if not np.all(np.isfinite(g)):
        bad = params.non_finite_layers(g)
        logger.error("Non-finite gradient in layers: %s", ', '.join(bad))
        raise NumericalAbort("non-finite gradient", diagnostics={'layers': bad})
    velocity = np.zeros_like(g) if velocity is None else velocity
    velocity = momentum * velocity + g
    return params.copy(values=params.values - lr * velocity), velocity


# =====================================================
# NUMPY HELPERS
# =====================================================

def softmax(x, axis=-1, mask=None):
    x = np.asarray(x, dtype=np.float64)
    if mask is not None:
        mask = np.broadcast_to(mask, x.shape)
        x = np.where(mask, x, -np.inf)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def maxpool_rows(x, valid=None):
    """Columnwise max over the first `valid` rows -> (values, argmax rows)."""
    x = np.asarray(x, dtype=np.float64)
    valid = x.shape[0] if valid is None else int(valid)
    arg = np.argmax(x[:valid], axis=0)
    return x[arg, np.arange(x.shape[1])], arg


def scatter_mean(src, index, mask, size):
    out = np.zeros((size, src.shape[-1]))
    counts = np.zeros(size)
    flat_index = index[mask]
    np.add.at(out, flat_index, src[mask])
    np.add.at(counts, flat_index, 1.0)
    hit = counts > 0
    out[hit] /= counts[hit, None]
    return out, counts


# =====================================================
# MLP
# =====================================================

def mlp_forward(spec, params, x, tape=None, prefix='mlp'):
    """Affine -> (standardize) -> activation per layer; returns the output Var."""
    tape = Tape(params) if tape is None else tape
    h = tape.lift(x)
    if h.value.shape[-1] != spec.in_dim:
        raise ShapeError(f"{prefix}: input width {h.value.shape[-1]} != {spec.in_dim}")
    for i, layer in enumerate(spec.layers):
        h = tape.linear(h, tape.param(f"{prefix}.{i}.weight"), tape.param(f"{prefix}.{i}.bias"))
        if layer.normalize:
            h = tape.standardize(h, f"{prefix}.{i}")
        if layer.activation == 'relu':
            h = tape.relu(h)
    return h


# =====================================================
# GRADIENT CHECK
# =====================================================

@dataclass
class GradientCheck:
    max_rel_error: float
    checked: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray

    def passed(self, tol=1e-5):
        return self.max_rel_error < tol


def gradient_check(forward, params, n_samples=100, seed=0, h_scale=1e-6, floor=1e-8, training=False):
    """
    Compare reverse-mode gradients with central differences.

    forward(tape) builds the output Var on a fresh tape; the scalar checked is
    sum(out * R) for a seeded random R. A difference only counts beyond the
    round-off the central difference itself carries (a few ulps of the
    objective's magnitude divided by the step); what remains is divided by
    max(|analytic|, |numeric|, floor).
    """
    rng = np.random.default_rng(seed)
    tape = Tape(params, training=training)
    out = forward(tape)
    weights = rng.standard_normal(out.value.shape)
    analytic_all = backward(tape, out, weights).params
    scale = float(np.sum(np.abs(out.value * weights)))

    def objective(values):
        shifted = params.copy(values=values)
        return float(np.sum(forward(Tape(shifted, training=training)).value * weights))

    idx = np.sort(rng.choice(params.size, size=min(n_samples, params.size), replace=False))
    numeric = np.empty(idx.size)
    roundoff = np.empty(idx.size)
    for n, i in enumerate(idx):
        h = h_scale * max(1.0, abs(params.values[i]))
        plus, minus = params.values.copy(), params.values.copy()
        plus[i] += h
        minus[i] -= h
        numeric[n] = (objective(plus) - objective(minus)) / (2 * h)
        roundoff[n] = ROUNDOFF_ULPS * np.finfo(np.float64).eps * scale / h
    analytic = analytic_all[idx]
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    excess = np.maximum(np.abs(analytic - numeric) - roundoff, 0.0)
    rel = excess / denom
    return GradientCheck(float(rel.max(initial=0.0)), idx, analytic, numeric)
