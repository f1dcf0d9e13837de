"""Float64 tensors with reverse-mode autodiff, MLPs, and AdamW.

Everything else in the package builds on this module. A Tensor wraps a
contiguous float64 numpy array and, when gradients are requested,
records the operation that produced it so the graph can be replayed
backwards. The primitive set is deliberately closed (affine maps,
tanh/gelu, exp/log/cos/sin, square, reductions, indexing, concat,
clamp) so that gradient coverage is testable against central finite
differences, which is the oracle used throughout the test suite.

Every public operation checks its output for NaN/Inf and raises
NumericalFailure naming the offending primitive, so a diverging run
fails loudly at the first bad intermediate instead of training on
garbage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

__all__ = [
    "InputError",
    "NumericalFailure",
    "Tensor",
    "as_tensor",
    "concat",
    "MlpSpec",
    "ParamStore",
    "init_mlp_params",
    "mlp_forward",
    "grad",
    "finite_diff_check",
    "AdamWState",
    "adamw_step",
    "philox_stream",
]


class InputError(ValueError):
    """Input rejected: wrong shape, wrong range, or wrong kind."""


class NumericalFailure(ArithmeticError):
    """A computation produced NaN/Inf or an irrecoverably bad value."""


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _make(data, op, parents):
    """Wrap raw op output, check finiteness, and link parents if any need grads."""
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NumericalFailure(f"non-finite values produced by '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = tuple(parents) if out.requires_grad else ()
    out._bw = None
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode autodiff.

    data is always contiguous float64; grad is filled in by backward().
    Operations between a Tensor and plain numbers/arrays treat the plain
    side as a constant.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        if not np.all(np.isfinite(self.data)):
            raise NumericalFailure("non-finite values in tensor construction")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._bw = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def detach(self):
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._bw = None
        return out

    def _acc(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # ---- arithmetic -------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = _make(self.data + other.data, "add", (self, other))
        if out.requires_grad:
            def bw(g, a=self, b=other):
                a._acc(_unbroadcast(g, a.data.shape))
                b._acc(_unbroadcast(g, b.data.shape))
            out._bw = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _make(-self.data, "neg", (self,))
        if out.requires_grad:
            def bw(g, a=self):
                a._acc(-g)
            out._bw = bw
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = _make(self.data * other.data, "mul", (self, other))
        if out.requires_grad:
            def bw(g, a=self, b=other):
                a._acc(_unbroadcast(g * b.data, a.data.shape))
                b._acc(_unbroadcast(g * a.data, b.data.shape))
            out._bw = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = _make(self.data / other.data, "div", (self, other))
        if out.requires_grad:
            def bw(g, a=self, b=other, od=out.data):
                a._acc(_unbroadcast(g / b.data, a.data.shape))
                b._acc(_unbroadcast(-g * od / b.data, b.data.shape))
            out._bw = bw
        return out

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def matmul(self, other):
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise InputError("matmul supports 2-D operands only")
        if self.data.shape[1] != other.data.shape[0]:
            raise InputError(
                f"matmul shape mismatch: {self.data.shape} @ {other.data.shape}"
            )
        out = _make(self.data @ other.data, "matmul", (self, other))
        if out.requires_grad:
            def bw(g, a=self, b=other):
                a._acc(g @ b.data.T)
                b._acc(a.data.T @ g)
            out._bw = bw
        return out

    __matmul__ = matmul

    # ---- elementwise nonlinearities ---------------------------------

    def exp(self):
        d = np.exp(self.data)
        out = _make(d, "exp", (self,))
        if out.requires_grad:
            def bw(g, a=self, d=d):
                a._acc(g * d)
            out._bw = bw
        return out

    def log(self):
        out = _make(np.log(self.data), "log", (self,))
        if out.requires_grad:
            def bw(g, a=self):
                a._acc(g / a.data)
            out._bw = bw
        return out

    def tanh(self):
        d = np.tanh(self.data)
        out = _make(d, "tanh", (self,))
        if out.requires_grad:
            def bw(g, a=self, d=d):
                a._acc(g * (1.0 - d * d))
            out._bw = bw
        return out

    def gelu(self):
        # Exact erf form: gelu(x) = x * Phi(x).
        x = self.data
        phi_cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        out = _make(x * phi_cdf, "gelu", (self,))
        if out.requires_grad:
            def bw(g, a=self, x=x, phi_cdf=phi_cdf):
                pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
                a._acc(g * (phi_cdf + x * pdf))
            out._bw = bw
        return out

    def cos(self):
        out = _make(np.cos(self.data), "cos", (self,))
        if out.requires_grad:
            def bw(g, a=self):
                a._acc(-g * np.sin(a.data))
            out._bw = bw
        return out

    def sin(self):
        out = _make(np.sin(self.data), "sin", (self,))
        if out.requires_grad:
            def bw(g, a=self):
                a._acc(g * np.cos(a.data))
            out._bw = bw
        return out

    def square(self):
        out = _make(self.data * self.data, "square", (self,))
        if out.requires_grad:
            def bw(g, a=self):
                a._acc(g * 2.0 * a.data)
            out._bw = bw
        return out

    def clamp(self, lo, hi):
        # Gradient passes through the closed interval, zero outside.
        out = _make(np.clip(self.data, lo, hi), "clamp", (self,))
        if out.requires_grad:
            def bw(g, a=self, lo=lo, hi=hi):
                mask = (a.data >= lo) & (a.data <= hi)
                a._acc(g * mask)
            out._bw = bw
        return out

    # ---- reductions and shape ops -----------------------------------

    def sum(self, axis=None, keepdims=False):
        out = _make(self.data.sum(axis=axis, keepdims=keepdims), "sum", (self,))
        if out.requires_grad:
            def bw(g, a=self, axis=axis, keepdims=keepdims):
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                a._acc(np.broadcast_to(g, a.data.shape).copy())
            out._bw = bw
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[ax] for ax in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _make(self.data.reshape(shape), "reshape", (self,))
        if out.requires_grad:
            def bw(g, a=self):
                a._acc(g.reshape(a.data.shape))
            out._bw = bw
        return out

    def __getitem__(self, idx):
        out = _make(self.data[idx], "index", (self,))
        if out.requires_grad:
            def bw(g, a=self, idx=idx):
                gz = np.zeros_like(a.data)
                np.add.at(gz, idx, g)
                a._acc(gz)
            out._bw = bw
        return out

    def gather_last(self, idx):
        """Pick one entry per row along the last axis: out[n] = self[n, idx[n]]."""
        idx = np.asarray(idx)
        if self.data.ndim != 2:
            raise InputError("gather_last expects a 2-D tensor")
        if idx.shape != (self.data.shape[0],):
            raise InputError("gather_last index shape mismatch")
        rows = np.arange(self.data.shape[0])
        out = _make(self.data[rows, idx], "gather_last", (self,))
        if out.requires_grad:
            def bw(g, a=self, rows=rows, idx=idx):
                gz = np.zeros_like(a.data)
                np.add.at(gz, (rows, idx), g)
                a._acc(gz)
            out._bw = bw
        return out

    def logsumexp(self, axis=-1):
        """Stabilized log-sum-exp along an axis; the max shift carries no gradient."""
        m = np.max(self.data, axis=axis, keepdims=True)
        shifted = self - Tensor(m)
        lse = shifted.exp().sum(axis=axis).log()
        return lse + Tensor(np.squeeze(m, axis=axis))

    # ---- backward ----------------------------------------------------

    def backward(self):
        if self.data.shape != ():
            raise InputError("backward requires a scalar tensor")
        if not self.requires_grad:
            raise InputError("backward on a tensor with no graph")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bw is not None and node.grad is not None:
                node._bw(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis=-1):
    """Concatenate tensors along an axis; gradients split back by extent."""
    tensors = [as_tensor(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), "concat", tensors)
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        def bw(g, parts=tensors, sizes=sizes, axis=axis):
            offsets = np.cumsum([0] + sizes)
            for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._acc(g[tuple(sl)])
        out._bw = bw
    return out


# ---- MLPs ------------------------------------------------------------


@dataclass(frozen=True)
class MlpSpec:
    """Shape and activation of a plain fully connected network.

    hidden_dims lists the hidden layer widths in order; activation is
    applied between affine layers and never after the last one.
    """

    input_dim: int
    hidden_dims: tuple
    output_dim: int
    activation: str = "tanh"
    final_activation: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise InputError("all MLP dims must be >= 1")
        if self.activation not in ("tanh", "gelu"):
            raise InputError(f"unsupported activation '{self.activation}'")
        if self.final_activation != "none":
            raise InputError("only final_activation='none' is supported")

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def n_layers(self):
        return len(self.hidden_dims) + 1


class ParamStore:
    """Named parameter slots. The name set freezes after construction.

    Values are Tensors with requires_grad=True; shapes never change
    once a slot is added.
    """

    def __init__(self):
        self._slots = {}
        self._frozen = False

    def add(self, name, array):
        if self._frozen:
            raise InputError("ParamStore is frozen; cannot add slots")
        if name in self._slots:
            raise InputError(f"duplicate parameter name '{name}'")
        t = Tensor(np.array(array, dtype=np.float64), requires_grad=True)
        self._slots[name] = t
        return t

    def freeze(self):
        self._frozen = True
        return self

    def __getitem__(self, name):
        return self._slots[name]

    def __contains__(self, name):
        return name in self._slots

    def names(self):
        return list(self._slots.keys())

    def items(self):
        return self._slots.items()

    def zero_grad(self):
        for t in self._slots.values():
            t.grad = None

    def n_params(self):
        return sum(t.data.size for t in self._slots.values())

    def copy(self):
        other = ParamStore()
        for name, t in self._slots.items():
            other.add(name, t.data.copy())
        if self._frozen:
            other.freeze()
        return other

    def load_from(self, other):
        """Copy values in from a store with the identical slot layout."""
        if set(other._slots) != set(self._slots):
            raise InputError("parameter name sets differ")
        for name, t in self._slots.items():
            src = other._slots[name].data
            if src.shape != t.data.shape:
                raise InputError(f"shape mismatch for '{name}'")
            t.data[...] = src


def init_mlp_params(spec, rng, store=None, prefix=""):
    """Create weight/bias slots for an MLP.

    Hidden layers use Xavier-uniform for tanh and He-normal for gelu;
    the output layer is Xavier-uniform; biases start at zero, which
    also puts any log-variance heads at unit variance.
    """
    if store is None:
        store = ParamStore()
    dims = spec.layer_dims
    for i in range(spec.n_layers):
        fan_in, fan_out = dims[i], dims[i + 1]
        is_output = i == spec.n_layers - 1
        if (not is_output) and spec.activation == "gelu":
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        store.add(f"{prefix}w{i}", w)
        store.add(f"{prefix}b{i}", np.zeros(fan_out))
    return store


def mlp_forward(spec, params, x, prefix=""):
    """Run the affine/activation chain of `spec` on a [batch, in] tensor."""
    x = as_tensor(x)
    if x.data.ndim != 2 or x.data.shape[1] != spec.input_dim:
        raise InputError(
            f"mlp_forward expected [batch, {spec.input_dim}], got {x.data.shape}"
        )
    h = x
    for i in range(spec.n_layers):
        h = h.matmul(params[f"{prefix}w{i}"]) + params[f"{prefix}b{i}"]
        if i < spec.n_layers - 1:
            h = h.tanh() if spec.activation == "tanh" else h.gelu()
    return h


# ---- gradients -------------------------------------------------------


def grad(loss_fn, params):
    """Exact reverse-mode gradients of a scalar loss w.r.t. every slot.

    Returns a dict mapping parameter name to a float64 array shaped
    like the parameter.
    """
    params.zero_grad()
    out = loss_fn(params)
    if not isinstance(out, Tensor) or out.data.shape != ():
        raise InputError("loss_fn must return a scalar Tensor")
    out.backward()
    return {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }


def finite_diff_check(loss_fn, params, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    Relative error per entry is |analytic - numeric| divided by
    (|analytic| + |numeric| + 1e-12).
    """
    if step <= 0:
        raise InputError("step must be positive")
    analytic = grad(loss_fn, params)
    worst = 0.0
    for name, t in params.items():
        p = t.data
        g = analytic[name]
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            lp = loss_fn(params).item()
            p[idx] = orig - step
            lm = loss_fn(params).item()
            p[idx] = orig
            numeric = (lp - lm) / (2.0 * step)
            rel = abs(g[idx] - numeric) / (abs(g[idx]) + abs(numeric) + 1e-12)
            worst = max(worst, rel)
    return worst


# ---- AdamW -----------------------------------------------------------


@dataclass
class AdamWState:
    """Moment buffers and hyperparameters for decoupled weight decay AdamW."""

    lr: float
    weight_decay: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, lr, weight_decay, beta1=0.9, beta2=0.999, eps=1e-8):
        st = cls(lr=lr, weight_decay=weight_decay, beta1=beta1, beta2=beta2, eps=eps)
        for name, t in params.items():
            st.m[name] = np.zeros_like(t.data)
            st.v[name] = np.zeros_like(t.data)
        return st


def adamw_step(params, grads, state):
    """One AdamW update with bias correction and decoupled weight decay.

    Mutates params and state in place and returns them.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise InputError(f"gradient shape mismatch for '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= state.lr * (m_hat / (np.sqrt(v_hat) + state.eps)
                              + state.weight_decay * p.data)
    return params, state


# ---- seeding ---------------------------------------------------------

# Named Philox streams so every consumer of randomness in the package is
# independent and replayable from (seed, stream, index).
_STREAM_IDS = {
    "process": 1,
    "data": 2,
    "init": 3,
    "noise": 4,
    "proj": 5,
    "mask": 6,
    "shuffle": 7,
    "probe": 8,
    "eval": 9,
}


def philox_stream(seed, stream, index=0):
    """Counter-based generator for a named stream of a run seed."""
    if stream not in _STREAM_IDS:
        raise InputError(f"unknown stream '{stream}'")
    if seed < 0 or index < 0:
        raise InputError("seed and index must be nonnegative")
    key = np.array(
        [np.uint64(seed), (np.uint64(_STREAM_IDS[stream]) << np.uint64(32))
         | np.uint64(index & 0xFFFFFFFF)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))
