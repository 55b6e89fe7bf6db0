"""
This module provides the dense-array math used by every model component: a small
reverse-mode automatic differentiation engine over float64 numpy arrays.

Each operation takes `Node` inputs (plain arrays are lifted to constants), computes its
value eagerly and, when gradients are enabled and any input requires them, records a
backward closure. `Node.backward()` walks the recorded graph in reverse topological order
and accumulates gradients into every reachable node.
"""

import contextlib
import threading
from collections.abc import Callable, Iterator, Mapping, Sequence

import numpy as np

from errors import ConfigError, OrthrosError

# Dense float64 array; every value and gradient in the engine has this type.
Array = np.ndarray

BackwardFn = Callable[[Array], Sequence[Array | None]]

_grad_state = threading.local()


class DimensionError(OrthrosError):
    """Raised when operand shapes are incompatible."""


class NumericError(OrthrosError):
    """Raised when a computation meets NaN or non-finite values it cannot handle."""


def grad_enabled() -> bool:
    """Returns whether operations on the current thread record a backward graph."""
    return getattr(_grad_state, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """
    Disables graph recording on the current thread for the duration of the block.
    Values are still computed; results are constants.
    """
    previous = grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Node:
    """
    A value in the computation graph together with its (lazily materialized) gradient.
    """

    __slots__ = ("backward_fn", "grad", "parents", "requires_grad", "value")

    # Makes numpy defer to the reflected Node operators for `array + node`.
    __array_ufunc__ = None

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        backward_fn: BackwardFn | None = None,
        requires_grad: bool = False,
    ):
        self.value: Array = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Node(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Node):
            raise DimensionError("Division is only supported by constants.")
        return scale(self, 1.0 / float(other))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Array | None = None) -> None:
        """
        Runs reverse-mode differentiation from this node.

        Args:
            grad (Array | None): Seed gradient; defaults to ones (a scalar loss gets 1.0).
        """
        order = _topological_order(self)
        seed = np.ones_like(self.value) if grad is None else np.asarray(grad, dtype=np.float64)
        if seed.shape != self.shape:
            raise DimensionError(f"Seed gradient shape {seed.shape} does not match value shape {self.shape}.")
        self.grad = seed if self.grad is None else self.grad + seed

        for node in reversed(order):
            if node.backward_fn is None or node.grad is None:
                continue
            parent_grads = node.backward_fn(node.grad)
            for parent, parent_grad in zip(node.parents, parent_grads, strict=True):
                if parent_grad is None or not parent.requires_grad:
                    continue
                parent.grad = parent_grad if parent.grad is None else parent.grad + parent_grad

        for node in order:
            if node.grad is None:
                node.grad = np.zeros_like(node.value)


def _topological_order(root: Node) -> list[Node]:
    """Returns the nodes reachable from `root` that require gradients, parents first."""
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_node(x) -> Node:
    """Lifts arrays and scalars to constant nodes; nodes are returned unchanged."""
    return x if isinstance(x, Node) else Node(x)


def parameter(value) -> Node:
    """Creates a leaf node whose gradient is accumulated by `backward()`."""
    return Node(np.array(value, dtype=np.float64), requires_grad=True)


def make_node(value: Array, parents: Sequence[Node], backward_fn: BackwardFn) -> Node:
    """
    Wraps the result of a custom operation. The backward closure is only recorded when
    gradients are enabled and at least one parent requires them.
    """
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Node(value, parents, backward_fn, requires_grad=True)
    return Node(value)


def detach(x: Node) -> Node:
    """Returns a constant holding the value of `x`; no gradient flows back through it."""
    return Node(as_node(x).value)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sums `grad` over the axes that broadcasting expanded to reach its shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return make_node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return make_node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return make_node(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def scale(x, factor: float) -> Node:
    x = as_node(x)
    return make_node(x.value * factor, (x,), lambda g: (g * factor,))


def matmul(a, b) -> Node:
    """Batched matrix product over the last two axes, with numpy broadcasting of the rest."""
    a, b = as_node(a), as_node(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned.")

    def backward(g):
        grad_a = _unbroadcast(np.matmul(g, np.swapaxes(b.value, -1, -2)), a.shape)
        grad_b = _unbroadcast(np.matmul(np.swapaxes(a.value, -1, -2), g), b.shape)
        return grad_a, grad_b

    return make_node(np.matmul(a.value, b.value), (a, b), backward)


def affine(x, w, b) -> Node:
    """
    Computes y = x·w + b over the last axis of `x`.

    Args:
        x (Node): Input of shape [..., D_in].
        w (Node): Weight of shape [D_in, D_out].
        b (Node): Bias of shape [D_out].

    Returns:
        Node: Output of shape [..., D_out].

    Raises:
        DimensionError: If the inner dimensions or the bias shape do not match.
    """
    x, w, b = as_node(x), as_node(w), as_node(b)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"affine: input shape {x.shape} is incompatible with weight shape {w.shape}.")
    if b.shape != (w.shape[1],):
        raise DimensionError(f"affine: bias shape {b.shape} is incompatible with weight shape {w.shape}.")

    lead = x.shape[:-1]
    x2d = x.value.reshape(-1, w.shape[0])
    value = (x2d @ w.value + b.value).reshape(*lead, w.shape[1])

    def backward(g):
        g2d = g.reshape(-1, w.shape[1])
        return (
            (g2d @ w.value.T).reshape(x.shape),
            x2d.T @ g2d,
            g2d.sum(axis=0),
        )

    return make_node(value, (x, w, b), backward)


def reshape(x, shape: Sequence[int]) -> Node:
    x = as_node(x)
    return make_node(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes: Sequence[int]) -> Node:
    x = as_node(x)
    inverse = np.argsort(axes)
    return make_node(x.value.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def gather(x, index) -> Node:
    """
    Advanced indexing `x[index]` with a scatter-add backward pass. Used for embedding
    lookup, gold-label selection and relative-position shifting.
    """
    x = as_node(x)

    def backward(g):
        grad = np.zeros_like(x.value)
        np.add.at(grad, index, g)
        return (grad,)

    return make_node(x.value[index], (x,), backward)


def sum(x, axis=None, keepdims: bool = False) -> Node:
    x = as_node(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return make_node(x.value.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Node:
    x = as_node(x)
    count = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def exp(x) -> Node:
    x = as_node(x)
    value = np.exp(x.value)
    return make_node(value, (x,), lambda g: (g * value,))


def log(x) -> Node:
    x = as_node(x)
    return make_node(np.log(x.value), (x,), lambda g: (g / x.value,))


def relu(x) -> Node:
    x = as_node(x)
    active = x.value > 0
    return make_node(x.value * active, (x,), lambda g: (g * active,))


def sigmoid(x) -> Node:
    x = as_node(x)
    value = _sigmoid(x.value)
    return make_node(value, (x,), lambda g: (g * value * (1.0 - value),))


def silu(x) -> Node:
    """Swish activation x·σ(x)."""
    x = as_node(x)
    sig = _sigmoid(x.value)
    return make_node(x.value * sig, (x,), lambda g: (g * (sig + x.value * sig * (1.0 - sig)),))


def glu(x, axis: int = -1) -> Node:
    """Gated linear unit: first half of `axis` gated by the sigmoid of the second half."""
    x = as_node(x)
    if x.shape[axis] % 2:
        raise DimensionError(f"glu: axis {axis} of shape {x.shape} must have even size.")
    a, b = np.split(x.value, 2, axis=axis)
    gate = _sigmoid(b)

    def backward(g):
        return (np.concatenate([g * gate, g * a * gate * (1.0 - gate)], axis=axis),)

    return make_node(a * gate, (x,), backward)


def _sigmoid(v: Array) -> Array:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def _check_nan(x: Node, op: str) -> None:
    if np.isnan(x.value).any():
        raise NumericError(f"{op}: input of shape {x.shape} contains NaN.")


def softmax(x, axis: int = -1) -> Node:
    """
    Numerically stabilized softmax along `axis`.

    Raises:
        NumericError: If the input contains NaN.
    """
    x = as_node(x)
    _check_nan(x, "softmax")
    shifted = np.exp(x.value - x.value.max(axis=axis, keepdims=True))
    value = shifted / shifted.sum(axis=axis, keepdims=True)

    def backward(g):
        return (value * (g - (g * value).sum(axis=axis, keepdims=True)),)

    return make_node(value, (x,), backward)


def log_softmax(x, axis: int = -1) -> Node:
    x = as_node(x)
    _check_nan(x, "log_softmax")
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    value = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(value) * g.sum(axis=axis, keepdims=True),)

    return make_node(value, (x,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Node:
    """
    Normalizes every position of `x` over its last axis, then applies the affine
    transform `gamma`, `beta`.
    """
    x, gamma, beta = as_node(x), as_node(gamma), as_node(beta)
    dim = x.shape[-1]
    if gamma.shape != (dim,) or beta.shape != (dim,):
        raise DimensionError(f"layer_norm: input shape {x.shape} vs gamma {gamma.shape} / beta {beta.shape}.")

    centered = x.value - x.value.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std

    def backward(g):
        g_normed = g * gamma.value
        grad_x = inv_std * (
            g_normed
            - g_normed.mean(axis=-1, keepdims=True)
            - normed * (g_normed * normed).mean(axis=-1, keepdims=True)
        )
        lead_axes = tuple(range(g.ndim - 1))
        return grad_x, (g * normed).sum(axis=lead_axes), g.sum(axis=lead_axes)

    return make_node(normed * gamma.value + beta.value, (x, gamma, beta), backward)


def depthwise_conv1d(x, kernel) -> Node:
    """
    Per-channel 1-D cross-correlation along time with "same" zero padding.

    Args:
        x (Node): Input of shape [B, U, D].
        kernel (Node): Kernel of shape [K, D], K odd.

    Returns:
        Node: Output of shape [B, U, D].

    Raises:
        ConfigError: If K is even.
        DimensionError: If the channel counts differ.
    """
    x, kernel = as_node(x), as_node(kernel)
    width = kernel.shape[0]
    if width % 2 == 0:
        raise ConfigError(f"depthwise_conv1d: kernel size must be odd, got {width}.")
    if x.ndim != 3 or kernel.ndim != 2 or kernel.shape[1] != x.shape[2]:
        raise DimensionError(f"depthwise_conv1d: input shape {x.shape} vs kernel shape {kernel.shape}.")

    pad = width // 2
    frames = x.shape[1]
    padded = np.pad(x.value, ((0, 0), (pad, pad), (0, 0)))
    value = np.zeros_like(x.value)
    for k in range(width):
        value += padded[:, k : k + frames, :] * kernel.value[k]

    def backward(g):
        grad_padded = np.zeros_like(padded)
        grad_kernel = np.zeros_like(kernel.value)
        for k in range(width):
            grad_padded[:, k : k + frames, :] += g * kernel.value[k]
            grad_kernel[k] = (g * padded[:, k : k + frames, :]).sum(axis=(0, 1))
        return grad_padded[:, pad : pad + frames, :], grad_kernel

    return make_node(value, (x, kernel), backward)


def conv1d_strided(x, w, b, stride: int = 2) -> Node:
    """
    Full 1-D convolution over time with "same"-style padding and a stride, used by the
    subsampling frontend. Output length is ceil(U / stride) for odd kernels.

    Args:
        x (Node): Input of shape [B, U, C_in].
        w (Node): Weight of shape [K, C_in, C_out].
        b (Node): Bias of shape [C_out].
        stride (int): Time stride.
    """
    x, w, b = as_node(x), as_node(w), as_node(b)
    width, c_in, c_out = w.shape
    if width % 2 == 0:
        raise ConfigError(f"conv1d_strided: kernel size must be odd, got {width}.")
    if x.ndim != 3 or x.shape[2] != c_in or b.shape != (c_out,):
        raise DimensionError(f"conv1d_strided: input shape {x.shape} vs weight {w.shape} / bias {b.shape}.")

    pad = width // 2
    batch, frames, _ = x.shape
    out_frames = (frames + 2 * pad - width) // stride + 1
    padded = np.pad(x.value, ((0, 0), (pad, pad), (0, 0)))
    taps = [slice(k, k + stride * (out_frames - 1) + 1, stride) for k in range(width)]
    value = np.broadcast_to(b.value, (batch, out_frames, c_out)).copy()
    for k, tap in enumerate(taps):
        value += padded[:, tap, :] @ w.value[k]

    def backward(g):
        grad_padded = np.zeros_like(padded)
        grad_w = np.zeros_like(w.value)
        g2d = g.reshape(-1, c_out)
        for k, tap in enumerate(taps):
            grad_padded[:, tap, :] += g @ w.value[k].T
            grad_w[k] = padded[:, tap, :].reshape(-1, c_in).T @ g2d
        return grad_padded[:, pad : pad + frames, :], grad_w, g2d.sum(axis=0)

    return make_node(value, (x, w, b), backward)


def dropout(x, rate: float, rng: np.random.Generator | None) -> Node:
    """
    Inverted dropout. Identity when `rng` is None (evaluation) or `rate` is zero.
    """
    x = as_node(x)
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


def grad_check(
    f: Callable[[], Node],
    params: Sequence[Node] | Mapping[str, Node],
    eps: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-5,
) -> float:
    """
    Compares reverse-mode gradients of a scalar function against central finite differences.

    Args:
        f (Callable[[], Node]): Deterministic function of the current parameter values.
        params (Sequence[Node] | Mapping[str, Node]): Leaf nodes to differentiate.
        eps (float): Finite-difference step.
        max_entries (int | None): If given, at most this many randomly chosen entries per parameter are checked.
        seed (int): Seed for the entry subsampling.
        floor (float): Lower bound of the relative-error denominator.

    Returns:
        float: Maximum relative error |analytic - numeric| / max(|analytic| + |numeric|, floor).

    Raises:
        NumericError: If `f` is not finite at the point or any perturbation.
    """
    nodes = list(params.values()) if isinstance(params, Mapping) else list(params)
    for node in nodes:
        node.value = np.ascontiguousarray(node.value)
        node.grad = None

    out = f()
    _require_finite(out)
    out.backward()
    analytic = [np.zeros_like(n.value) if n.grad is None else n.grad.copy() for n in nodes]

    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for node, grad in zip(nodes, analytic, strict=True):
            flat = node.value.reshape(-1)
            entries = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
            for i in entries:
                original = flat[i]
                flat[i] = original + eps
                plus = _require_finite(f())
                flat[i] = original - eps
                minus = _require_finite(f())
                flat[i] = original
                numeric = (plus - minus) / (2.0 * eps)
                exact = grad.reshape(-1)[i]
                worst = max(worst, abs(exact - numeric) / max(abs(exact) + abs(numeric), floor))
    return worst


def _require_finite(out: Node) -> float:
    if out.value.size != 1:
        raise DimensionError(f"grad_check: function must return a scalar, got shape {out.shape}.")
    value = float(out.value)
    if not np.isfinite(value):
        raise NumericError(f"grad_check: function value {value} is not finite.")
    return value
