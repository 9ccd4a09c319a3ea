"""Dense float64 arrays with reverse-mode gradients.

Implements exactly the operations the model needs (dense and conv layers,
pooling, row normalisation, softmax losses, attention arithmetic) plus a
central-difference oracle used to validate every analytic gradient.
Everything runs at 64-bit precision on plain numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Array = np.ndarray


def as_f64(x) -> Array:
    return np.asarray(x, dtype=np.float64)


def require_finite(name: str, arr: Array) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in '{name}'")


class Tensor:
    """Node in a dynamically-built computation graph.

    `data` is always a float64 ndarray. Leaves created with
    `requires_grad=True` accumulate gradients in `.grad` after
    `backward()` on a scalar result.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (),
                 backward: Callable[[Array], None] | None = None, name: str | None = None):
        self.data = as_f64(data)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def _label(self) -> str:
        return self.name or f"tensor{self.data.shape}"

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if id(parent) in grads:
                        grads[id(parent)] += pg
                    else:
                        grads[id(parent)] = pg

    def __repr__(self) -> str:
        return f"Tensor(name={self.name!r}, shape={self.data.shape})"


def leaf(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def _needs_graph(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def _wants_grad(t: Tensor) -> bool:
    return t.requires_grad or bool(t._parents)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape` (undo numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bwd(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    if not _needs_graph(a, b):
        return constant(out_data)
    return Tensor(out_data, parents=(a, b), backward=bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def bwd(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape)))

    if not _needs_graph(a, b):
        return constant(out_data)
    return Tensor(out_data, parents=(a, b), backward=bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bwd(g):
        return ((a, _unbroadcast(g * b.data, a.data.shape)),
                (b, _unbroadcast(g * a.data, b.data.shape)))

    if not _needs_graph(a, b):
        return constant(out_data)
    return Tensor(out_data, parents=(a, b), backward=bwd)


def scale(a: Tensor, c: float) -> Tensor:
    out_data = a.data * c

    def bwd(g):
        return ((a, g * c),)

    if not _needs_graph(a):
        return constant(out_data)
    return Tensor(out_data, parents=(a,), backward=bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a._label()} "
                         f"{a.data.shape} @ {b._label()} {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"shape mismatch in matmul: {a._label()} {a.data.shape} "
                         f"@ {b._label()} {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        out = []
        if _wants_grad(a):
            out.append((a, g @ b.data.T))
        if _wants_grad(b):
            out.append((b, a.data.T @ g))
        return tuple(out)

    if not _needs_graph(a, b):
        return constant(out_data)
    return Tensor(out_data, parents=(a, b), backward=bwd)


def transpose(a: Tensor) -> Tensor:
    out_data = a.data.T

    def bwd(g):
        return ((a, g.T),)

    if not _needs_graph(a):
        return constant(out_data)
    return Tensor(out_data, parents=(a,), backward=bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    out_data = a.data * mask

    def bwd(g):
        return ((a, g * mask),)

    if not _needs_graph(a):
        return constant(out_data)
    return Tensor(out_data, parents=(a,), backward=bwd)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bwd(g):
        return ((a, g * (1.0 - out_data * out_data)),)

    if not _needs_graph(a):
        return constant(out_data)
    return Tensor(out_data, parents=(a,), backward=bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out_data = a.data.reshape(shape)

    def bwd(g):
        return ((a, g.reshape(a.data.shape)),)

    if not _needs_graph(a):
        return constant(out_data)
    return Tensor(out_data, parents=(a,), backward=bwd)


def concat_rows(parts: Iterable[Tensor]) -> Tensor:
    parts = tuple(parts)
    out_data = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple((p, g[offsets[i]:offsets[i + 1]]) for i, p in enumerate(parts))

    if not _needs_graph(*parts):
        return constant(out_data)
    return Tensor(out_data, parents=parts, backward=bwd)


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    out_data = a.data[idx]

    def bwd(g):
        da = np.zeros_like(a.data)
        np.add.at(da, idx, g)
        return ((a, da),)

    if not _needs_graph(a):
        return constant(out_data)
    return Tensor(out_data, parents=(a,), backward=bwd)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over axis 0, keeping a leading singleton axis."""
    n = a.data.shape[0]
    out_data = a.data.mean(axis=0, keepdims=True)

    def bwd(g):
        return ((a, np.broadcast_to(g / n, a.data.shape).copy()),)

    if not _needs_graph(a):
        return constant(out_data)
    return Tensor(out_data, parents=(a,), backward=bwd)


def sum_all(a: Tensor) -> Tensor:
    out_data = np.asarray(a.data.sum())

    def bwd(g):
        return ((a, np.broadcast_to(g, a.data.shape).copy()),)

    if not _needs_graph(a):
        return constant(out_data)
    return Tensor(out_data, parents=(a,), backward=bwd)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


def l2_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalise the last axis to unit l2 norm. Raises on (near-)zero slices."""
    norms = np.linalg.norm(a.data, axis=-1, keepdims=True)
    if np.any(norms <= eps):
        bad = int(np.argmin(norms.reshape(-1)))
        raise ValueError(f"cannot l2-normalize {a._label()}: slice {bad} has zero norm")
    out_data = a.data / norms

    def bwd(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        return ((a, (g - out_data * dot) / norms),)

    if not _needs_graph(a):
        return constant(out_data)
    return Tensor(out_data, parents=(a,), backward=bwd)


def row_softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by row-max subtraction."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        return ((a, (g - dot) * out_data),)

    if not _needs_graph(a):
        return constant(out_data)
    return Tensor(out_data, parents=(a,), backward=bwd)


def softmax_cross_entropy(logits: Tensor, target_probs: Array) -> Tensor:
    """Mean cross-entropy between soft targets and softmax(logits).

    Targets are constants (one-hot labels or teacher distributions); only
    the logits receive gradient. Uses the fused log-sum-exp form, so no
    probability clamping is needed here.
    """
    t = as_f64(target_probs)
    if t.shape != logits.data.shape:
        raise ValueError(f"target shape {t.shape} does not match logits "
                         f"{logits._label()} {logits.data.shape}")
    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True)) + zmax
    per_row = (lse.squeeze(-1) - (t * z).sum(axis=-1))
    n = per_row.size
    out_data = np.asarray(per_row.mean())
    probs = np.exp(z - lse)

    def bwd(g):
        return ((logits, (probs - t) * (g / n)),)

    if not _needs_graph(logits):
        return constant(out_data)
    return Tensor(out_data, parents=(logits,), backward=bwd)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d convolution, NHWC layout, kernel (kh, kw, cin, cout)."""
    if x.data.ndim != 4:
        raise ValueError(f"conv2d input {x._label()} must be NHWC, got shape {x.data.shape}")
    kh, kw, cin, cout = w.data.shape
    if x.data.shape[3] != cin:
        raise ValueError(f"conv2d channel mismatch: input {x._label()} has "
                         f"{x.data.shape[3]} channels, kernel {w._label()} expects {cin}")
    n, h, ww_ = x.data.shape[:3]
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    # win: (n, ho, wo, cin, kh, kw) -> cols (n*ho*wo, kh*kw*cin)
    ho, wo = win.shape[1], win.shape[2]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out_data = (cols @ wmat + b.data).reshape(n, ho, wo, cout)

    def bwd(g):
        gf = g.reshape(n * ho * wo, cout)
        out = []
        if _wants_grad(w):
            out.append((w, (cols.T @ gf).reshape(w.data.shape)))
        if _wants_grad(b):
            out.append((b, gf.sum(axis=0)))
        if _wants_grad(x):
            dcols = (gf @ wmat.T).reshape(n, ho, wo, kh, kw, cin)
            dxp = np.zeros_like(xp)
            for u in range(kh):
                for v in range(kw):
                    dxp[:, u:u + ho * stride:stride, v:v + wo * stride:stride, :] += dcols[:, :, :, u, v, :]
            dx = dxp[:, pad:pad + h, pad:pad + ww_, :] if pad else dxp
            out.append((x, dx))
        return tuple(out)

    if not _needs_graph(x, w, b):
        return constant(out_data)
    return Tensor(out_data, parents=(x, w, b), backward=bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """NHWC -> NC by averaging over the spatial axes."""
    if x.data.ndim != 4:
        raise ValueError(f"global_avg_pool expects NHWC, got {x.data.shape}")
    n, h, w_, c = x.data.shape
    out_data = x.data.mean(axis=(1, 2))

    def bwd(g):
        dx = np.broadcast_to(g[:, None, None, :] / (h * w_), x.data.shape).copy()
        return ((x, dx),)

    if not _needs_graph(x):
        return constant(out_data)
    return Tensor(out_data, parents=(x,), backward=bwd)


class ParameterSet:
    """Named float64 arrays with matching gradient buffers.

    Single-writer: training code mutates entries in place; concurrent
    readers must work from a `copy()`.
    """

    def __init__(self, entries: Mapping[str, Array] | None = None):
        self.entries: dict[str, Array] = {}
        self.grads: dict[str, Array] = {}
        if entries:
            for name, arr in entries.items():
                self.add(name, arr)

    def add(self, name: str, arr) -> None:
        if name in self.entries:
            raise ValueError(f"parameter '{name}' already exists")
        arr = as_f64(arr).copy()
        self.entries[name] = arr
        self.grads[name] = np.zeros_like(arr)

    def replace(self, name: str, arr) -> None:
        arr = as_f64(arr).copy()
        self.entries[name] = arr
        self.grads[name] = np.zeros_like(arr)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.entries)

    def names(self) -> list[str]:
        return list(self.entries)

    def leaves(self, trainable: Callable[[str], bool] | None = None) -> dict[str, Tensor]:
        """Graph leaves for every parameter; `trainable(name)` gates gradients."""
        out = {}
        for name, arr in self.entries.items():
            req = True if trainable is None else bool(trainable(name))
            out[name] = leaf(arr, requires_grad=req, name=name)
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParameterSet):
            return NotImplemented
        if self.entries.keys() != other.entries.keys():
            return False
        return all(np.array_equal(self.entries[k], other.entries[k]) for k in self.entries)


@dataclass
class GradientSet:
    """Per-parameter gradient arrays for one loss (or a merged pair)."""
    values: dict[str, Array]
    tag: str = "merged"

    def __add__(self, other: "GradientSet") -> "GradientSet":
        if self.values.keys() != other.values.keys():
            raise ValueError("cannot add gradient sets with different keys")
        return GradientSet({k: self.values[k] + other.values[k] for k in self.values},
                           tag="merged")


LossFn = Callable[[Mapping[str, Tensor]], Tensor]


def forward_backward(loss_fn: LossFn, params: ParameterSet,
                     trainable: Callable[[str], bool] | None = None,
                     tag: str = "merged") -> tuple[float, GradientSet]:
    """Evaluate `loss_fn` over graph leaves for `params` and backpropagate.

    Returns the scalar loss and a GradientSet covering every parameter
    (zeros for parameters the loss does not touch or that are frozen).
    """
    leaves = params.leaves(trainable)
    out = loss_fn(leaves)
    if not isinstance(out, Tensor):
        raise TypeError("loss_fn must return a Tensor")
    if out.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {out.data.shape}")
    loss = float(out.data)
    if not np.isfinite(loss):
        raise ValueError("loss is not finite")
    out.backward()
    values = {}
    for name, t in leaves.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        require_finite(f"grad[{name}]", g)
        values[name] = g
    return loss, GradientSet(values, tag=tag)


def finite_difference(loss_fn: LossFn, params: ParameterSet, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    The loss function must be deterministic; two baseline evaluations are
    compared to catch hidden randomness.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    def evaluate() -> float:
        out = loss_fn(params.leaves(lambda _: False))
        return float(out.data)

    l0 = evaluate()
    l1 = evaluate()
    if l0 != l1:
        raise ValueError(f"loss_fn is not deterministic: {l0!r} != {l1!r}")

    _, analytic = forward_backward(loss_fn, params)
    worst = 0.0
    for name, arr in params.entries.items():
        flat = arr.reshape(-1)
        ag = analytic.values[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = evaluate()
            flat[i] = orig - eps
            lm = evaluate()
            flat[i] = orig
            fd = (lp - lm) / (2.0 * eps)
            err = abs(ag[i] - fd) / (abs(fd) + 1e-12)
            if err > worst:
                worst = err
    return worst
