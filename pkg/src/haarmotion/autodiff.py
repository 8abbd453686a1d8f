"""Reverse-mode differentiation over the op set the spectrum network needs.

Every node is a dense 2D matrix.  A forward call builds the computation
graph on the fly (define-by-run); ``backward`` walks it once in reverse
topological order.  Each op's backward maps the upstream gradient to
per-parent gradients; the driver sums fan-in contributions pass-locally and
then adds the result into ``Value.grad``, so running backward twice doubles
every gradient exactly.

Ops that mix rows (``transpose`` and the fixed linear maps) take a ``blocks``
argument: the matrix is then treated as that many independent sub-matrices
stacked along the row axis, which is how batches are pushed through the
network without leaving 2D land.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import transforms


class Value:
    """A matrix node: data, an additively-updated gradient, and its backward."""

    __slots__ = ("data", "_grad", "_parents", "_backward")

    def __init__(self, data, _parents: tuple = (), _backward: Callable | None = None):
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"Value data must be 2D, got shape {data.shape}")
        self.data = data
        self._grad = None  # zeros, materialized on first touch
        self._parents = _parents
        self._backward = _backward

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value: np.ndarray) -> None:
        self._grad = value

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __repr__(self):
        return f"Value(shape={self.data.shape})"


class AffineParams:
    """Learnable map row -> row @ W.T + b, with W out x in and b kept 1 x out."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64).reshape(1, -1)
        if weight.ndim != 2 or bias.shape[1] != weight.shape[0]:
            raise ValueError(
                f"inconsistent affine shapes: W {weight.shape}, b {bias.shape}"
            )
        self.weight = Value(weight)
        self.bias = Value(bias)

    @property
    def out_dim(self) -> int:
        return self.weight.data.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.data.shape[1]

    def values(self) -> list[Value]:
        return [self.weight, self.bias]


class LayerNormParams:
    """Gain/shift for per-row normalization; eps keeps the scale finite."""

    def __init__(self, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5):
        gamma = np.asarray(gamma, dtype=np.float64).reshape(1, -1)
        beta = np.asarray(beta, dtype=np.float64).reshape(1, -1)
        if gamma.shape != beta.shape:
            raise ValueError(f"gamma {gamma.shape} and beta {beta.shape} differ")
        if not eps > 0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.gamma = Value(gamma)
        self.beta = Value(beta)
        self.eps = float(eps)

    @property
    def width(self) -> int:
        return self.gamma.data.shape[1]

    def values(self) -> list[Value]:
        return [self.gamma, self.beta]


def affine(x: Value, p: AffineParams) -> Value:
    if x.data.shape[1] != p.in_dim:
        raise ValueError(
            f"affine input width {x.data.shape[1]} != weight fan-in {p.in_dim}"
        )
    w, b = p.weight, p.bias
    xd, wd = x.data, w.data

    def _backward(g):
        return g @ wd, g.T @ xd, g.sum(axis=0, keepdims=True)

    return Value(xd @ wd.T + b.data, _parents=(x, w, b), _backward=_backward)


def layer_norm(x: Value, p: LayerNormParams, eps: float | None = None) -> Value:
    """Normalize each row to zero mean / unit variance (population, divisor n),
    then scale by gamma and shift by beta.

    ``eps`` overrides the params' epsilon; passing 0 is allowed here so the
    guard behaviour is testable, but a zero-variance row then has no finite
    scale and the op raises rather than emit non-finite values.
    """
    n = x.data.shape[1]
    if n == 0:
        raise ValueError("cannot layer-normalize zero-width rows")
    if n != p.width:
        raise ValueError(f"row width {n} != layer-norm width {p.width}")
    e = p.eps if eps is None else float(eps)
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        inv = 1.0 / np.sqrt(var + e)
    if not np.isfinite(inv).all() and np.isfinite(x.data).all():
        # the division itself blew up: zero-variance row with eps=0
        # (non-finite inputs are left to propagate to downstream checks)
        raise FloatingPointError(
            "layer-norm scale is non-finite (zero-variance row with eps=0)"
        )
    xhat = centered * inv
    gamma, beta = p.gamma, p.beta
    gd = gamma.data

    def _backward(g):
        gy = g * gd
        # d/dx of (x - mu) * inv: remove the mean and the xhat component of
        # the upstream signal, then rescale.
        dx = inv * (
            gy
            - gy.mean(axis=1, keepdims=True)
            - xhat * (gy * xhat).mean(axis=1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return Value(xhat * gd + beta.data, _parents=(x, gamma, beta), _backward=_backward)


def add(x: Value, y: Value) -> Value:
    if x.data.shape != y.data.shape:
        raise ValueError(f"add shape mismatch: {x.data.shape} vs {y.data.shape}")
    return Value(x.data + y.data, _parents=(x, y), _backward=lambda g: (g, g))


def transpose(x: Value, blocks: int = 1) -> Value:
    rows, cols = x.data.shape
    if rows % blocks:
        raise ValueError(f"{rows} rows do not split into {blocks} blocks")
    sub = rows // blocks
    out = x.data.reshape(blocks, sub, cols).swapaxes(1, 2).reshape(blocks * cols, sub)

    def _backward(g):
        return (g.reshape(blocks, cols, sub).swapaxes(1, 2).reshape(rows, cols),)

    return Value(out, _parents=(x,), _backward=_backward)


def slice_rows(x: Value, start: int, stop: int) -> Value:
    rows = x.data.shape[0]
    if not (0 <= start <= stop <= rows):
        raise ValueError(f"row slice [{start}:{stop}] out of range for {rows} rows")

    def _backward(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return Value(x.data[start:stop].copy(), _parents=(x,), _backward=_backward)


def sum_all(x: Value) -> Value:
    """Reduce to a 1x1 scalar; the reduction used by the gradient harness."""

    def _backward(g):
        return (np.full_like(x.data, g[0, 0]),)

    return Value([[x.data.sum()]], _parents=(x,), _backward=_backward)


FIXED_KINDS = ("dct", "idct", "haar_in", "haar_out")


def fixed_linear(x: Value, kind: str, *, pad: int = 0, blocks: int = 1) -> Value:
    """Apply a constant linear map; backward is its adjoint, no parameters.

    dct/idct act along the per-block row axis.  haar_in zero-pads an odd
    column count before zooming; haar_out crops ``pad`` columns after the
    inverse zoom (the pad recorded by the matching zoom-in).
    """
    rows, cols = x.data.shape
    if rows % blocks:
        raise ValueError(f"{rows} rows do not split into {blocks} blocks")
    sub = rows // blocks

    if kind in ("dct", "idct"):
        d = transforms.dct_matrix(sub)
        mat = d if kind == "dct" else d.T

        def fwd(a):
            return np.matmul(mat, a.reshape(blocks, sub, cols)).reshape(rows, cols)

        def adj(g):
            return np.matmul(mat.T, g.reshape(blocks, sub, cols)).reshape(rows, cols)

    elif kind == "haar_in":
        pad = cols % 2

        def fwd(a):
            if pad:
                a = np.concatenate((a, np.zeros((a.shape[0], 1))), axis=1)
            return transforms.zoom_in_matrix(a, blocks=blocks)

        def adj(g):
            back = transforms.zoom_out_matrix(g, blocks=blocks)
            return back[:, : back.shape[1] - pad] if pad else back

    elif kind == "haar_out":
        crop = pad

        def fwd(a):
            back = transforms.zoom_out_matrix(a, blocks=blocks)
            return back[:, : back.shape[1] - crop] if crop else back

        def adj(g):
            if crop:
                g = np.concatenate((g, np.zeros((g.shape[0], crop))), axis=1)
            return transforms.zoom_in_matrix(g, blocks=blocks)

    else:
        raise ValueError(f"unknown fixed map {kind!r}; expected one of {FIXED_KINDS}")

    return Value(fwd(x.data), _parents=(x,), _backward=lambda g: (adj(g),))


def _topo_order(out: Value) -> list[Value]:
    order: list[Value] = []
    seen: set[int] = set()
    stack: list[tuple[Value, bool]] = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    return order


def backward(out: Value, seed: np.ndarray | float | None = None) -> None:
    """Accumulate d(out)/d(node), weighted by ``seed``, into every node's grad.

    ``seed`` defaults to 1 for a 1x1 output and must be given otherwise.
    """
    if seed is None:
        if out.data.shape != (1, 1):
            raise ValueError("backward from a non-scalar output needs a seed")
        seed = 1.0
    seed = np.broadcast_to(np.asarray(seed, dtype=np.float64), out.data.shape)

    flowing: dict[int, np.ndarray] = {id(out): np.array(seed)}
    for node in reversed(_topo_order(out)):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node._grad is None:
            node._grad = g.copy()
        else:
            node._grad += g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            acc = flowing.get(id(parent))
            flowing[id(parent)] = pg if acc is None else acc + pg


def zero_grads(values: Iterable[Value]) -> None:
    for v in values:
        v._grad = None  # rematerialized as zeros on next touch


def grad_check(
    f: Callable[[], Value],
    leaves: Sequence[Value],
    step: float = 1e-6,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds its graph from the leaves' current data and returns a 1x1
    Value.  Error metric per coordinate: |analytic - fd| / max(1, |analytic|).
    When ``max_coords`` is set, that many coordinates per leaf are sampled.
    """
    out = f()
    if out.data.shape != (1, 1):
        raise ValueError("grad_check needs a scalar-valued composite")
    zero_grads(leaves)
    backward(out)
    analytic = [leaf.grad.copy() for leaf in leaves]

    worst = 0.0
    for leaf, ana in zip(leaves, analytic):
        flat = leaf.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            plus = flat[i]  # rounded value actually applied
            up = f().data[0, 0]
            flat[i] = orig - step
            minus = flat[i]
            down = f().data[0, 0]
            flat[i] = orig
            fd = (up - down) / (plus - minus)
            a = ana.reshape(-1)[i]
            worst = max(worst, abs(a - fd) / max(1.0, abs(a)))
    return worst
