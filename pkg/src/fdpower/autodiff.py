"""Minimal reverse-mode differentiation over float64 numpy arrays.

Just enough machinery for two small MLPs, gather/scatter message passing,
the rate-based loss, and Adam: a Var wraps an ndarray and records a closure
that routes the output adjoint back to its inputs; backward() runs the
closures in reverse topological order.  Everything is 64-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, DomainError, NumericsError, ShapeError

CHECKPOINT_VERSION = 1


def segment_sum_np(values: np.ndarray, segments: np.ndarray, num_segments: int) -> np.ndarray:
    """Sum rows of values into num_segments bins, accumulating in array order.

    The accumulation order within a bin is the order rows appear in values,
    which callers exploit to make floating-point sums reproducible.
    """
    if values.shape[0] == 0:
        return np.zeros((num_segments,) + values.shape[1:])
    if values.ndim == 1:
        return np.bincount(segments, weights=values, minlength=num_segments)
    out = np.empty((num_segments, values.shape[1]))
    for c in range(values.shape[1]):
        out[:, c] = np.bincount(segments, weights=values[:, c], minlength=num_segments)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum an adjoint down to the shape of the operand it belongs to."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Var:
    """Node in the computation trace: a value plus how to push adjoints back."""

    __slots__ = ("value", "grad", "_backward", "_prev", "_backward_done")

    def __init__(self, value, _prev=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._backward = None
        self._prev = _prev
        self._backward_done = False

    @property
    def shape(self):
        return self.value.shape

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, seed=None) -> None:
        """Push adjoints from this node to every ancestor.

        Each trace can be walked once; a second call on the same node is an
        error because intermediate adjoints have already been consumed.
        """
        if self._backward_done:
            raise NumericsError("backward() already ran on this trace")
        self._backward_done = True
        topo: list[Var] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.ones_like(self.value) if seed is None else seed)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Arithmetic sugar; every operand is coerced to a Var.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value + b.value, (a, b))

    def back(g):
        a._accum(_unbroadcast(g, a.value.shape))
        b._accum(_unbroadcast(g, b.value.shape))

    out._backward = back
    return out


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value - b.value, (a, b))

    def back(g):
        a._accum(_unbroadcast(g, a.value.shape))
        b._accum(-_unbroadcast(g, b.value.shape))

    out._backward = back
    return out


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value * b.value, (a, b))

    def back(g):
        a._accum(_unbroadcast(g * b.value, a.value.shape))
        b._accum(_unbroadcast(g * a.value, b.value.shape))

    out._backward = back
    return out


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value / b.value, (a, b))

    def back(g):
        a._accum(_unbroadcast(g / b.value, a.value.shape))
        b._accum(_unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    out._backward = back
    return out


def neg(a) -> Var:
    a = as_var(a)
    out = Var(-a.value, (a,))
    out._backward = lambda g: a._accum(-g)
    return out


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(np.matmul(a.value, b.value), (a, b))

    def back(g):
        a._accum(np.matmul(g, np.swapaxes(b.value, -1, -2)))
        b._accum(np.matmul(np.swapaxes(a.value, -1, -2), g))

    out._backward = back
    return out


def relu(a) -> Var:
    a = as_var(a)
    out = Var(np.maximum(a.value, 0.0), (a,))
    out._backward = lambda g: a._accum(g * (a.value > 0.0))
    return out


def _logistic_np(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def logistic(a) -> Var:
    a = as_var(a)
    s = _logistic_np(a.value)
    out = Var(s, (a,))
    out._backward = lambda g: a._accum(g * s * (1.0 - s))
    return out


def log1p(a) -> Var:
    a = as_var(a)
    out = Var(np.log1p(a.value), (a,))
    out._backward = lambda g: a._accum(g / (1.0 + a.value))
    return out


def powc(a, exponent: float) -> Var:
    """Elementwise a**c for constant c; gradient clamped to 0 at a == 0."""
    a = as_var(a)
    out = Var(np.power(a.value, exponent), (a,))

    def back(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(a.value > 0.0, exponent * np.power(a.value, exponent - 1.0), 0.0)
        a._accum(g * d)

    out._backward = back
    return out


def concat_cols(*parts) -> Var:
    parts = [as_var(p) for p in parts]
    out = Var(np.concatenate([p.value for p in parts], axis=1), tuple(parts))
    widths = [p.value.shape[1] for p in parts]

    def back(g):
        at = 0
        for p, w in zip(parts, widths):
            p._accum(g[:, at:at + w])
            at += w

    out._backward = back
    return out


def gather_rows(a, idx: np.ndarray) -> Var:
    a = as_var(a)
    out = Var(a.value[idx], (a,))
    out._backward = lambda g: a._accum(segment_sum_np(g, idx, a.value.shape[0]))
    return out


def segment_sum(a, segments: np.ndarray, num_segments: int) -> Var:
    a = as_var(a)
    out = Var(segment_sum_np(a.value, segments, num_segments), (a,))
    out._backward = lambda g: a._accum(g[segments])
    return out


def reshape(a, shape) -> Var:
    a = as_var(a)
    out = Var(a.value.reshape(shape), (a,))
    out._backward = lambda g: a._accum(g.reshape(a.value.shape))
    return out


def sum_all(a) -> Var:
    a = as_var(a)
    out = Var(a.value.sum(), (a,))
    out._backward = lambda g: a._accum(np.broadcast_to(g, a.value.shape))
    return out


# ---------------------------------------------------------------------------
# MLPs
# ---------------------------------------------------------------------------

OUTPUT_ACTIVATIONS = ("identity", "logistic")


@dataclass
class MlpSpec:
    """Fully connected net: widths[0] inputs through affine+ReLU layers."""

    layer_widths: tuple
    output_activation: str = "identity"

    def __post_init__(self):
        self.layer_widths = tuple(int(w) for w in self.layer_widths)
        if len(self.layer_widths) < 2 or any(w < 1 for w in self.layer_widths):
            raise ShapeError(f"need >= 2 positive widths, got {self.layer_widths}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ShapeError(f"unknown output activation {self.output_activation!r}")

    def param_names(self, prefix: str) -> list[str]:
        names = []
        for i in range(len(self.layer_widths) - 1):
            names += [f"{prefix}.W{i}", f"{prefix}.b{i}"]
        return names


def init_mlp_params(spec: MlpSpec, rng: np.random.Generator, prefix: str) -> dict:
    """Glorot-uniform weights, zero biases."""
    params = {}
    for i, (n_in, n_out) in enumerate(zip(spec.layer_widths, spec.layer_widths[1:])):
        limit = np.sqrt(6.0 / (n_in + n_out))
        params[f"{prefix}.W{i}"] = rng.uniform(-limit, limit, size=(n_in, n_out))
        params[f"{prefix}.b{i}"] = np.zeros((1, n_out))
    return params


def mlp_apply(spec: MlpSpec, params: dict, x, prefix: str):
    """Apply the MLP; works on Vars (traced) and plain ndarrays alike."""
    traced = isinstance(x, Var) or any(isinstance(p, Var) for p in params.values())
    width_in = x.shape[-1]
    if width_in != spec.layer_widths[0]:
        raise ShapeError(f"input width {width_in} != {spec.layer_widths[0]}")
    n_layers = len(spec.layer_widths) - 1
    for i in range(n_layers):
        w, b = params[f"{prefix}.W{i}"], params[f"{prefix}.b{i}"]
        if traced:
            x = matmul(x, w) + b
            if i < n_layers - 1:
                x = relu(x)
            elif spec.output_activation == "logistic":
                x = logistic(x)
        else:
            x = x @ w + b
            if i < n_layers - 1:
                np.maximum(x, 0.0, out=x)
            elif spec.output_activation == "logistic":
                x = _logistic_np(x)
    return x


# ---------------------------------------------------------------------------
# Parameters and Adam
# ---------------------------------------------------------------------------

@dataclass
class ParamStore:
    """Learnable arrays plus Adam moment accumulators and step counter."""

    params: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def ensure_moments(self) -> None:
        for name, val in self.params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(val)
                self.v[name] = np.zeros_like(val)

    def copy(self) -> "ParamStore":
        return ParamStore(
            params={k: v.copy() for k, v in self.params.items()},
            m={k: v.copy() for k, v in self.m.items()},
            v={k: v.copy() for k, v in self.v.items()},
            step=self.step,
        )


def adam_step(
    store: ParamStore,
    grads: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    """One bias-corrected Adam update, in place; returns the store."""
    store.ensure_moments()
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for parameter {name!r}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        if name not in store.params:
            raise ShapeError(f"gradient for unknown parameter {name!r}")
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        store.params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store


def make_param_vars(store: ParamStore) -> dict:
    """Fresh leaf Vars for one forward/backward trace."""
    return {name: Var(val) for name, val in store.params.items()}


# ---------------------------------------------------------------------------
# Checkpoints: binary npz holding every array, exact round-trip.
# ---------------------------------------------------------------------------

def save_checkpoint(store: ParamStore, path, extra: dict | None = None) -> None:
    payload = {
        "__version__": np.asarray(CHECKPOINT_VERSION),
        "__step__": np.asarray(store.step),
    }
    for name, val in store.params.items():
        payload[f"p::{name}"] = val
    store.ensure_moments()
    for name in store.params:
        payload[f"m::{name}"] = store.m[name]
        payload[f"v::{name}"] = store.v[name]
    for name, val in (extra or {}).items():
        payload[f"x::{name}"] = np.asarray(val)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    version = int(arrays.pop("__version__", np.asarray(-1)))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    store = ParamStore(step=int(arrays.pop("__step__")))
    extra = {}
    for key, val in arrays.items():
        kind, _, name = key.partition("::")
        if kind == "p":
            store.params[name] = val
        elif kind == "m":
            store.m[name] = val
        elif kind == "v":
            store.v[name] = val
        elif kind == "x":
            extra[name] = val
        else:
            raise CheckpointError(f"unrecognized checkpoint entry {key!r}")
    missing = set(store.params) - set(store.m)
    if missing:
        raise CheckpointError(f"checkpoint missing moments for {sorted(missing)}")
    return store, extra
