"""Dense tensors, the forward operators, reverse-mode gradients, and Adam.

A Tensor wraps a float64 ndarray plus an optional gradient slot. Operators
record their inputs and a backward closure on the output tensor; calling
``backward()`` on a scalar loss replays the recorded graph in reverse
topological order. Gradients are only propagated along paths that can reach
a trainable leaf, so frozen parameters (and the input image) never receive
a gradient and whole frozen subgraphs are skipped.

Shapes follow the channels-last convention: images/feature maps (H, W, C),
convolution kernels (K, K, C, F), dense weights (N, M).
"""

from __future__ import annotations

import numpy as np

from . import backend
from .rng import RngState


class ShapeError(ValueError):
    """Operand shapes violate an operator's contract."""


class Tensor:
    __slots__ = ("data", "grad", "trainable", "name", "_parents", "_backward_fn", "_needs_grad")

    def __init__(self, data, trainable: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.trainable = trainable
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._needs_grad = trainable

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, trainable={self.trainable})"

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def detached(self) -> "Tensor":
        return Tensor(self.data.copy(), trainable=self.trainable, name=self.name)

    def backward(self) -> None:
        """Propagate d(self)/d(leaf) into the grad slot of every trainable
        tensor reachable through the recorded graph."""
        if self._backward_fn is None:
            raise RuntimeError("backward() called on a tensor with no recorded forward pass")
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar loss tensor")
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
                if p._needs_grad and p._backward_fn is not None:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            node._backward_fn(node.grad)


def _result(data, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    out._needs_grad = any(p._needs_grad for p in parents)
    if out._needs_grad:
        out._parents = parents
        out._backward_fn = backward_fn
    # a tensor produced by an op is never a leaf, even when grads are pruned
    if out._backward_fn is None:
        out._backward_fn = lambda g: None
        out._parents = parents
    return out


# ---------------------------------------------------------------------------
# forward operators

def conv2d_valid(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Valid (unpadded) stride-1 convolution of an (H,W,C) map with (K,K,C,F)
    kernels plus a per-filter bias."""
    if x.data.ndim != 3 or w.data.ndim != 4 or b.data.ndim != 1:
        raise ShapeError(
            f"conv2d_valid expects input (H,W,C), kernels (K,K,C,F), bias (F,); "
            f"got {x.shape}, {w.shape}, {b.shape}"
        )
    H, W, C = x.shape
    K1, K2, Ck, F = w.shape
    if K1 != K2:
        raise ShapeError(f"kernels must be square, got {K1}x{K2}")
    if Ck != C:
        raise ShapeError(f"kernel channels ({Ck}) do not match input channels ({C})")
    if K1 > H or K1 > W:
        raise ShapeError(f"kernel {K1}x{K1} exceeds input extent {H}x{W}")
    if b.shape != (F,):
        raise ShapeError(f"bias shape {b.shape} does not match filter count {F}")
    k = backend.kernels()
    y = k.conv2d_forward(x.data, w.data, b.data)

    def backward_fn(gy: np.ndarray) -> None:
        if x._needs_grad or w._needs_grad or b._needs_grad:
            gx, gw, gb = backend.kernels().conv2d_backward(x.data, w.data, gy)
            if x._needs_grad:
                x.accumulate_grad(gx)
            if w._needs_grad:
                w.accumulate_grad(gw)
            if b._needs_grad:
                b.accumulate_grad(gb)

    return _result(y, (x, w, b), backward_fn)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 stride-2 max pooling with floor semantics."""
    if x.data.ndim != 3:
        raise ShapeError(f"maxpool2d expects (H,W,C), got {x.shape}")
    H, W, _ = x.shape
    if H < 2 or W < 2:
        raise ShapeError(f"input {H}x{W} is smaller than the 2x2 pooling window")
    k = backend.kernels()
    y = k.maxpool2_forward(x.data)

    def backward_fn(gy: np.ndarray) -> None:
        if x._needs_grad:
            x.accumulate_grad(backend.kernels().maxpool2_backward(x.data, gy))

    return _result(y, (x,), backward_fn)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map x @ w + b for a length-N vector and (N, M) weights."""
    if x.data.ndim != 1 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError(
            f"dense expects input (N,), weights (N,M), bias (M,); "
            f"got {x.shape}, {w.shape}, {b.shape}"
        )
    if w.shape[0] != x.shape[0]:
        raise ShapeError(f"weight rows ({w.shape[0]}) do not match input length ({x.shape[0]})")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"bias shape {b.shape} does not match output width {w.shape[1]}")
    y = x.data @ w.data + b.data

    def backward_fn(gy: np.ndarray) -> None:
        if x._needs_grad:
            x.accumulate_grad(w.data @ gy)
        if w._needs_grad:
            w.accumulate_grad(np.outer(x.data, gy))
        if b._needs_grad:
            b.accumulate_grad(gy)

    return _result(y, (x, w, b), backward_fn)


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0.0)

    def backward_fn(gy: np.ndarray) -> None:
        if x._needs_grad:
            x.accumulate_grad(gy * (x.data > 0.0))

    return _result(y, (x,), backward_fn)


def flatten(x: Tensor) -> Tensor:
    shape = x.data.shape
    y = x.data.reshape(-1)

    def backward_fn(gy: np.ndarray) -> None:
        if x._needs_grad:
            x.accumulate_grad(gy.reshape(shape))

    return _result(y, (x,), backward_fn)


def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax of a length-M vector (max subtraction)."""
    if x.data.ndim != 1 or x.data.size < 1:
        raise ShapeError(f"softmax expects a non-empty vector, got shape {x.shape}")
    z = x.data - x.data.max()
    e = np.exp(z)
    s = e / e.sum()

    def backward_fn(gy: np.ndarray) -> None:
        if x._needs_grad:
            x.accumulate_grad(s * (gy - np.dot(gy, s)))

    return _result(s, (x,), backward_fn)


def dropout(x: Tensor, rate: float, rng: RngState | None, training: bool) -> Tensor:
    """Inverted dropout: zero each element with probability `rate` and scale
    survivors by 1/(1-rate) in training mode; identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout requires an RngState")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) >= rate) / keep
    y = x.data * mask

    def backward_fn(gy: np.ndarray) -> None:
        if x._needs_grad:
            x.accumulate_grad(gy * mask)

    return _result(y, (x,), backward_fn)


_CE_EPS = 1e-12


def cross_entropy(predicted: Tensor, target: np.ndarray | Tensor) -> Tensor:
    """Categorical cross-entropy -sum(t * ln(max(p, eps))) against a one-hot
    target. The target is a constant (never receives a gradient)."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    p = predicted.data
    if p.ndim != 1 or t.shape != p.shape:
        raise ShapeError(f"prediction {p.shape} and target {t.shape} lengths differ")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"predicted vector sums to {p.sum()!r}, not 1")
    if not (np.count_nonzero(t) == 1 and np.isclose(t.max(), 1.0)):
        raise ValueError("target must be one-hot")
    clamped = np.maximum(p, _CE_EPS)
    loss = -np.sum(t * np.log(clamped))

    def backward_fn(gy: np.ndarray) -> None:
        if predicted._needs_grad:
            g = np.where(p > _CE_EPS, -t / clamped, 0.0)
            predicted.accumulate_grad(float(gy) * g)

    return _result(loss, (predicted,), backward_fn)


# ---------------------------------------------------------------------------
# Adam

class AdamState:
    """First/second moment accumulators and the shared step counter."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-7):
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """One Adam update (with bias correction) over the trainable params.

    Params with no accumulated gradient are treated as having zero gradient.
    Non-trainable params are never touched.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        if not p.trainable:
            continue
        if p.data.shape != state.m[name].shape:
            raise ShapeError(f"Adam state for {name!r} does not match parameter shape")
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
