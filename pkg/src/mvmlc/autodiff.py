"""Reverse-mode automatic differentiation on dense float64 arrays.

Every op returns a :class:`Tensor` holding the forward value plus a closure
that routes the output gradient to the op's parents; :func:`backward` walks
the graph in reverse topological order. Matrices are plain numpy arrays,
64-bit floats, row-major. Only the primitives the training pipeline needs
are implemented, and every op verifies that its output is finite so a
diverging run fails loudly with the offending op named.
"""
from __future__ import annotations

import numpy as np

_LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Incompatible operand shapes: a configuration error, not a data issue."""


class DivergenceError(RuntimeError):
    """A non-finite value appeared during a forward or backward pass."""


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A node in the differentiation graph."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "requires_grad")

    def __init__(self, value, parents=(), backward_fn=None, op="const",
                 requires_grad=False):
        self.value = _as_f64(value)
        if not np.all(np.isfinite(self.value)):
            raise DivergenceError(f"non-finite value produced by op '{op}'")
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.value.reshape(()))

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.value.shape})"


class Parameter(Tensor):
    """Trainable leaf: named, with a persistent gradient accumulator."""

    __slots__ = ("name",)

    def __init__(self, value, name: str):
        super().__init__(value, op="param", requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def constant(value, op="const") -> Tensor:
    return Tensor(value, op=op)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Populate gradients of every reachable parameter of a scalar loss."""
    if loss.value.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.value)
    for node in reversed(topo):
        if node.backward_fn is not None and node.grad is not None:
            if not np.all(np.isfinite(node.grad)):
                raise DivergenceError(f"non-finite gradient at op '{node.op}'")
            node.backward_fn(node.grad)
        if not isinstance(node, Parameter):
            node.grad = None  # free intermediates as we go


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.value + b.value

    def bw(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    return Tensor(out, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.value - b.value

    def bw(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(-g, b.value.shape))

    return Tensor(out, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.value * b.value

    def bw(g):
        _accum(a, _unbroadcast(g * b.value, a.value.shape))
        _accum(b, _unbroadcast(g * a.value, b.value.shape))

    return Tensor(out, (a, b), bw, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.value.shape} @ {b.value.shape}")
    out = a.value @ b.value

    def bw(g):
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    return Tensor(out, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.value.ndim != 2:
        raise ShapeError("transpose expects a 2-D operand")
    out = a.value.T

    def bw(g):
        _accum(a, g.T)

    return Tensor(out, (a,), bw, "transpose")


def scale_shift(a: Tensor, scale: float = 1.0, shift: float = 0.0) -> Tensor:
    """Elementwise scale*a + shift with python-float coefficients."""
    out = scale * a.value + shift

    def bw(g):
        _accum(a, scale * g)

    return Tensor(out, (a,), bw, "scale_shift")


def neg(a: Tensor) -> Tensor:
    return scale_shift(a, -1.0)


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.value

    def bw(g):
        _accum(a, -g * out * out)

    return Tensor(out, (a,), bw, "reciprocal")


def maximum_scalar(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); subgradient 0 where the floor is active."""
    out = np.maximum(a.value, floor)

    def bw(g):
        _accum(a, g * (a.value > floor))

    return Tensor(out, (a,), bw, "maximum_scalar")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; zero gradient outside the open interval."""
    out = np.clip(a.value, lo, hi)

    def bw(g):
        _accum(a, g * ((a.value > lo) & (a.value < hi)))

    return Tensor(out, (a,), bw, "clip")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.value)

    def bw(g):
        _accum(a, g * out)

    return Tensor(out, (a,), bw, "exp")


def log(a: Tensor, floor: float | None = None) -> Tensor:
    """Natural log. `floor` clamps the argument from below (loss ops only)."""
    if floor is None:
        with np.errstate(divide="ignore", invalid="ignore"):
            out_val = np.log(a.value)

        def bw(g):
            _accum(a, g / a.value)
    else:
        out_val = np.log(np.maximum(a.value, floor))

        def bw(g):
            _accum(a, g * (a.value > floor) / np.maximum(a.value, floor))

    return Tensor(out_val, (a,), bw, "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.value)

    def bw(g):
        _accum(a, g / (2.0 * out))

    return Tensor(out, (a,), bw, "sqrt")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.value)

    def bw(g):
        _accum(a, g * out * (1.0 - out))

    return Tensor(out, (a,), bw, "sigmoid")


def softplus(a: Tensor) -> Tensor:
    x = a.value
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def bw(g):
        _accum(a, g * _sigmoid(x))

    return Tensor(out, (a,), bw, "softplus")


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.value, 0.0)

    def bw(g):
        _accum(a, g * (a.value > 0))

    return Tensor(out, (a,), bw, "relu")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    out = np.where(a.value > 0, a.value, slope * a.value)

    def bw(g):
        _accum(a, g * np.where(a.value > 0, 1.0, slope))

    return Tensor(out, (a,), bw, "leaky_relu")


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.value.shape).copy())

    return Tensor(out, (a,), bw, "sum")


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.value.size if axis is None else a.value.shape[axis]
    out = a.value.mean(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g / count, a.value.shape).copy())

    return Tensor(out, (a,), bw, "mean")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return Tensor(out, tuple(tensors), bw, "concat")


def reshape(a: Tensor, shape) -> Tensor:
    out = a.value.reshape(shape)

    def bw(g):
        _accum(a, g.reshape(a.value.shape))

    return Tensor(out, (a,), bw, "reshape")


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    if a.value.ndim != 2:
        raise ShapeError("slice_cols expects a 2-D operand")
    out = a.value[:, lo:hi]

    def bw(g):
        buf = np.zeros_like(a.value)
        buf[:, lo:hi] = g
        _accum(a, buf)

    return Tensor(out, (a,), bw, "slice_cols")


def permute_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Row gather out[i] = a[index[i]]; backward scatters with accumulation."""
    index = np.asarray(index, dtype=np.intp)
    out = a.value[index]

    def bw(g):
        buf = np.zeros_like(a.value)
        np.add.at(buf, index, g)
        _accum(a, buf)

    return Tensor(out, (a,), bw, "permute_rows")


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Normalize each row to unit L2 norm; all-zero rows stay zero."""
    if a.value.ndim != 2:
        raise ShapeError("l2_normalize_rows expects a 2-D operand")
    r = np.sqrt((a.value * a.value).sum(axis=1, keepdims=True))
    safe_r = np.where(r > 0, r, 1.0)
    out = a.value / safe_r

    def bw(g):
        q = (out * g).sum(axis=1, keepdims=True)
        gx = (g - out * q) / safe_r
        _accum(a, np.where(r > 0, gx, 0.0))

    return Tensor(out, (a,), bw, "l2_normalize_rows")


def masked_softmax(logits: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise softmax restricted to `mask`; excluded entries output 0.

    Rows with an empty mask produce all-zero rows. The max-shift keeps the
    exponentials bounded regardless of logit scale.
    """
    if logits.value.ndim != 2:
        raise ShapeError("masked_softmax expects a 2-D operand")
    m = np.asarray(mask, dtype=bool)
    if m.shape != logits.value.shape:
        raise ShapeError("mask shape must match logits shape")
    shifted = np.where(m, logits.value, -np.inf)
    rowmax = shifted.max(axis=1, keepdims=True)
    rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    e = np.exp(shifted - rowmax)
    s = e.sum(axis=1, keepdims=True)
    out = e / np.where(s > 0, s, 1.0)

    def bw(g):
        q = (g * out).sum(axis=1, keepdims=True)
        _accum(logits, out * (g - q))

    return Tensor(out, (logits,), bw, "masked_softmax")


# ---------------------------------------------------------------------------
# random streams and parameter initialisation
# ---------------------------------------------------------------------------

class RngStream:
    """Deterministic random stream keyed by (seed, stream id).

    Two streams constructed with the same key produce bit-identical draw
    sequences on every platform (PCG64 under a fixed seed sequence).
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream id must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.seed, self.stream])))

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape, dtype=np.float64)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integer(self, low: int, high: int) -> int:
        """One draw, uniform on the inclusive range [low, high]."""
        return int(self._gen.integers(low, high + 1))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)


def init_uniform(rng: RngStream, fan_in: int, shape, name: str) -> Parameter:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Parameter(rng.uniform(-bound, bound, shape), name)


# ---------------------------------------------------------------------------
# training-facing services
# ---------------------------------------------------------------------------

def zero_gradients(params) -> None:
    for p in params:
        p.grad[...] = 0.0


def forward_backward(graph_fn, params) -> float:
    """Evaluate a scalar-loss graph and populate parameter gradients.

    `graph_fn` rebuilds the graph from the parameters' current values and
    returns the loss tensor; composing it from the primitives above is what
    makes the gradients exact.
    """
    zero_gradients(params)
    loss = graph_fn()
    backward(loss)
    return loss.item()


def sgd_step(params, learning_rate: float) -> None:
    """Plain gradient-descent update; gradients are reset afterwards."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise DivergenceError(f"non-finite gradient for parameter '{p.name}'")
    for p in params:
        p.value -= learning_rate * p.grad
        p.grad[...] = 0.0


class ParamCheck:
    """Per-parameter finite-difference comparison result."""

    def __init__(self, name, max_rel_err, worst_index, n_failed, n_entries,
                 nonfinite):
        self.name = name
        self.max_rel_err = max_rel_err
        self.worst_index = worst_index
        self.n_failed = n_failed
        self.n_entries = n_entries
        self.nonfinite = nonfinite

    def passed(self, tolerance: float) -> bool:
        return self.n_failed == 0 and not self.nonfinite


class GradCheckReport:
    def __init__(self, checks, step, tolerance):
        self.checks = checks
        self.step = step
        self.tolerance = tolerance

    @property
    def passed(self) -> bool:
        return all(c.passed(self.tolerance) for c in self.checks)

    @property
    def max_rel_err(self) -> float:
        return max((c.max_rel_err for c in self.checks), default=0.0)

    def format(self) -> str:
        lines = []
        for c in self.checks:
            status = "ok" if c.passed(self.tolerance) else "FAIL"
            extra = " nonfinite" if c.nonfinite else ""
            lines.append(f"{status:4s} {c.name:40s} max_rel_err={c.max_rel_err:.3e} "
                         f"({c.n_failed}/{c.n_entries} entries over tol){extra}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} "
                     f"max_rel_err={self.max_rel_err:.3e} tol={self.tolerance:g}")
        return "\n".join(lines)


def grad_check(graph_fn, params, step: float = 1e-5,
               tolerance: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Per entry the relative error is |analytic - fd| / max(1, |fd|); a
    non-finite difference is flagged rather than silently passed. `graph_fn`
    must be deterministic: any sampled noise has to be frozen beforehand.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    forward_backward(graph_fn, params)
    analytic = {p.name: p.grad.copy() for p in params}

    checks = []
    for p in params:
        a = analytic[p.name]
        rel = np.zeros_like(a)
        nonfinite = False
        flat_val = p.value.reshape(-1)
        flat_rel = rel.reshape(-1)
        flat_a = a.reshape(-1)
        for i in range(flat_val.size):
            orig = flat_val[i]
            flat_val[i] = orig + step
            f_plus = graph_fn().item()
            flat_val[i] = orig - step
            f_minus = graph_fn().item()
            flat_val[i] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            if not np.isfinite(fd):
                nonfinite = True
                flat_rel[i] = np.inf
            else:
                flat_rel[i] = abs(flat_a[i] - fd) / max(1.0, abs(fd))
        worst = int(np.argmax(flat_rel))
        n_failed = int(np.sum(flat_rel > tolerance))
        checks.append(ParamCheck(p.name, float(flat_rel[worst]),
                                 np.unravel_index(worst, p.value.shape),
                                 n_failed, flat_val.size, nonfinite))
    return GradCheckReport(checks, step, tolerance)
