"""Dense real tensors with reverse-mode automatic differentiation and Adam.

Every operation records its parents and one vector-Jacobian product per
parent; backward() walks the recorded graph once in reverse topological
order.  Arrays are 64-bit floats by default (32-bit selectable) so finite
difference checks are meaningful.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording, e.g. for validation passes."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy array plus optional gradient and autodiff bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjps")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjps: tuple = ()

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- graph construction --------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents, vjps) -> "Tensor":
        tracked = _grad_enabled and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=tracked)
        if tracked:
            out._parents = tuple(parents)
            out._vjps = tuple(vjps)
        return out

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        o = self._coerce(other)
        data = self.data + o.data
        return Tensor._make(
            data,
            (self, o),
            (lambda g: _unbroadcast(g, self.shape), lambda g: _unbroadcast(g, o.shape)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), (lambda g: -g,))

    def __sub__(self, other):
        o = self._coerce(other)
        data = self.data - o.data
        return Tensor._make(
            data,
            (self, o),
            (lambda g: _unbroadcast(g, self.shape), lambda g: _unbroadcast(-g, o.shape)),
        )

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        o = self._coerce(other)
        data = self.data * o.data
        return Tensor._make(
            data,
            (self, o),
            (
                lambda g: _unbroadcast(g * o.data, self.shape),
                lambda g: _unbroadcast(g * self.data, o.shape),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        data = self.data / o.data
        return Tensor._make(
            data,
            (self, o),
            (
                lambda g: _unbroadcast(g / o.data, self.shape),
                lambda g: _unbroadcast(-g * self.data / (o.data * o.data), o.shape),
            ),
        )

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent: float):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        data = self.data**exponent
        return Tensor._make(
            data,
            (self,),
            (lambda g: g * exponent * self.data ** (exponent - 1),),
        )

    def __matmul__(self, other):
        o = self._coerce(other)
        if self.ndim < 2 or o.ndim < 2:
            raise ValueError("matmul requires tensors with at least 2 dimensions")
        if self.shape[-1] != o.shape[-2]:
            raise ValueError(f"matmul shape mismatch: {self.shape} @ {o.shape}")
        data = self.data @ o.data
        return Tensor._make(
            data,
            (self, o),
            (
                lambda g: _unbroadcast(g @ np.swapaxes(o.data, -1, -2), self.shape),
                lambda g: _unbroadcast(np.swapaxes(self.data, -1, -2) @ g, o.shape),
            ),
        )

    # -- shape ops -------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.shape
        return Tensor._make(
            self.data.reshape(shape), (self,), (lambda g: g.reshape(orig),)
        )

    def swapaxes(self, a: int, b: int):
        return Tensor._make(
            np.swapaxes(self.data, a, b), (self,), (lambda g: np.swapaxes(g, a, b),)
        )

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        data = self.data.sum(axis=axis, keepdims=keepdims)
        shape, nd = self.shape, self.ndim

        def vjp(g):
            if axis is None:
                return np.broadcast_to(g, shape).astype(g.dtype, copy=False)
            axes = axis if isinstance(axis, tuple) else (axis,)
            if not keepdims:
                g = np.expand_dims(g, [a % nd for a in axes])
            return np.broadcast_to(g, shape)

        return Tensor._make(data, (self,), (vjp,))

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    # -- elementwise nonlinearities ---------------------------------------

    def exp(self):
        data = np.exp(self.data)
        return Tensor._make(data, (self,), (lambda g: g * data,))

    def log(self):
        return Tensor._make(np.log(self.data), (self,), (lambda g: g / self.data,))

    def relu(self):
        data = np.maximum(self.data, 0.0)
        return Tensor._make(data, (self,), (lambda g: g * (self.data > 0),))

    def maximum(self, floor: float):
        """Elementwise max with a constant; gradient flows where data > floor."""
        data = np.maximum(self.data, floor)
        return Tensor._make(data, (self,), (lambda g: g * (self.data > floor),))

    # -- backward ----------------------------------------------------------

    def backward(self) -> None:
        """Reverse accumulation from a scalar; fills .grad on leaf tensors."""
        if self.shape != ():
            raise ValueError("backward() requires a scalar (shape ()) tensor")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones((), dtype=self.dtype)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, vjp in zip(node._parents, node._vjps):
                if not parent.requires_grad:
                    continue
                contrib = vjp(g)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over axes that were broadcast in the forward pass."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, shifted by the row max for stability."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (g - (g * y).sum(axis=-1, keepdims=True)) * y

    return Tensor._make(y, (x,), (vjp,))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (1/d norm), then
    scale and shift."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return xc * inv * gain + bias


def relu(x: Tensor) -> Tensor:
    return x.relu()


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero elements w.p. rate, scale survivors by 1/(1-rate).

    Identity in inference mode.  The caller provides the generator so masks
    are deterministic per site.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return Tensor._make(x.data * mask, (x,), (lambda g: g * mask,))


def concat_last_axis(parts: list[Tensor]) -> Tensor:
    """Concatenate along the last axis; gradient slices back per part."""
    data = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def make_vjp(i):
        return lambda g: g[..., offsets[i] : offsets[i + 1]]

    return Tensor._make(data, tuple(parts), tuple(make_vjp(i) for i in range(len(parts))))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return a @ b


# -- Adam ------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment estimates and the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    *,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    decay_names: frozenset[str] | set[str] = frozenset(),
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One decoupled-weight-decay Adam step over named parameters.

    Weight decay (p <- p - lr*wd*p) applies only to names in decay_names,
    never to biases or normalization parameters; the bias-corrected Adam
    update follows.
    """
    if lr < 0:
        raise ValueError("lr must be >= 0")
    t = state.t + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        base = p - lr * weight_decay * p if name in decay_names else p
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params[name] = base - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(new_m, new_v, t)
