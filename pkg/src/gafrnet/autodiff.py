"""Dense 2-D arrays with a small reverse-mode tape.

Every value on a tape is a ``Var`` wrapping a float64 ``(rows, cols)`` array.
Trainable arrays live in ``Param`` objects; a tape binds them as leaves via
``Tape.param`` and ``backward`` accumulates into ``Param.grad``.

The primitive set is deliberately small: matmul, add, mul, exp, log,
leaky_relu, elu, sigmoid, softmax_groups, gather_rows, scatter_sum_rows,
square, scale.  Broadcasting is limited to row vectors ``(1, c)``, column
vectors ``(r, 1)`` and scalars ``(1, 1)`` on the second operand of add/mul.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not conform to the op's arity rules."""


class NumericError(FloatingPointError):
    """An op produced NaN or Inf."""

    def __init__(self, op: str):
        super().__init__(f"non-finite value produced by '{op}'")
        self.op = op


class ContractError(ValueError):
    pass


def as_array2(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got {a.ndim}")
    return a


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = as_array2(self.value).copy()
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)


class Var:
    __slots__ = ("value", "index", "param")

    def __init__(self, value: np.ndarray, index: int, param: Param | None = None):
        self.value = value
        self.index = index
        self.param = param

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(#{self.index}, shape={self.shape})"


def segment_reduce(values: np.ndarray, idx: np.ndarray, n: int, op=np.add, fill=0.0) -> np.ndarray:
    """Row-wise reduction of ``values`` into ``n`` buckets given by ``idx``.

    Equivalent to ``op.at(out, idx, values)`` but sort-based; the stable sort
    fixes the summation order, so results are reproducible.
    """
    out = np.full((n, values.shape[1]), fill)
    if idx.size == 0:
        return out
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    starts = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]])
    out[sidx[starts]] = op.reduceat(values[order], starts, axis=0)
    return out


def _broadcast_ok(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return b == a or b == (1, 1) or b == (1, a[1]) or b == (a[0], 1)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1:
        g = g.sum(axis=1, keepdims=True)
    return g


class Tape:
    """Ordered record of primitive applications.

    Each record is ``(output index, input indices, vjp)`` where ``vjp`` maps
    the output adjoint to a tuple of input adjoints.
    """

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.records: list[tuple[int, tuple[int, ...], Callable | None]] = []
        self.ops: list[str] = []
        self.params: dict[int, Param] = {}
        self._bound: dict[int, Var] = {}

    def _push(self, op: str, value: np.ndarray, inputs: Sequence[Var], vjp) -> Var:
        if not np.all(np.isfinite(value)):
            raise NumericError(op)
        idx = len(self.values)
        self.values.append(value)
        self.records.append((idx, tuple(v.index for v in inputs), vjp))
        self.ops.append(op)
        return Var(value, idx)

    def inputs_of(self, op: str) -> list[np.ndarray]:
        """Input values of every recorded application of ``op``."""
        return [self.values[r[1][0]] for r, name in zip(self.records, self.ops) if name == op]

    def _check(self, *vs: Var) -> None:
        for v in vs:
            if v.index >= len(self.values) or self.values[v.index] is not v.value:
                raise ContractError(f"{v!r} was not recorded on this tape")

    # leaves

    def param(self, p: Param) -> Var:
        """Leaf for ``p``; binding the same Param twice returns the same leaf."""
        if id(p) in self._bound:
            return self._bound[id(p)]
        v = self._push("param", p.value, (), None)
        v.param = p
        self.params[v.index] = p
        self._bound[id(p)] = v
        return v

    def const(self, x) -> Var:
        return self._push("const", as_array2(x), (), None)

    # primitives

    def matmul(self, a: Var, b: Var) -> Var:
        self._check(a, b)
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
        A, B = a.value, b.value
        return self._push("matmul", A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))

    def add(self, a: Var, b: Var) -> Var:
        self._check(a, b)
        if not _broadcast_ok(a.shape, b.shape):
            raise DimensionError(f"add: {a.shape} + {b.shape}")
        bs = b.shape
        return self._push("add", a.value + b.value, (a, b), lambda g: (g, _unbroadcast(g, bs)))

    def mul(self, a: Var, b: Var) -> Var:
        self._check(a, b)
        if not _broadcast_ok(a.shape, b.shape):
            raise DimensionError(f"mul: {a.shape} * {b.shape}")
        A, B = a.value, b.value
        return self._push(
            "mul", A * B, (a, b), lambda g: (g * B, _unbroadcast(g * A, B.shape))
        )

    def exp(self, a: Var) -> Var:
        self._check(a)
        with np.errstate(over="ignore"):
            out = np.exp(a.value)
        return self._push("exp", out, (a,), lambda g: (g * out,))

    def log(self, a: Var) -> Var:
        self._check(a)
        A = a.value
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(A)
        return self._push("log", out, (a,), lambda g: (g / A,))

    def leaky_relu(self, a: Var, slope: float = 0.2) -> Var:
        self._check(a)
        d = np.where(a.value > 0, 1.0, slope)
        return self._push("leaky_relu", a.value * d, (a,), lambda g: (g * d,))

    def elu(self, a: Var) -> Var:
        self._check(a)
        A = a.value
        neg = np.expm1(np.minimum(A, 0.0))
        out = np.where(A > 0, A, neg)
        d = np.where(A > 0, 1.0, neg + 1.0)
        return self._push("elu", out, (a,), lambda g: (g * d,))

    def sigmoid(self, a: Var) -> Var:
        self._check(a)
        A = a.value
        # split by sign so exp never overflows
        e = np.exp(-np.abs(A))
        out = np.where(A >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return self._push("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))

    def softmax_groups(self, a: Var, groups: np.ndarray, n_groups: int) -> Var:
        """Softmax over the rows that share a group id, independently per column."""
        self._check(a)
        groups = np.asarray(groups, dtype=np.int64)
        if groups.shape != (a.shape[0],):
            raise DimensionError(f"softmax_groups: {groups.shape} ids for {a.shape[0]} rows")
        A = a.value
        gmax = segment_reduce(A, groups, n_groups, np.maximum, -np.inf)
        e = np.exp(A - gmax[groups])
        den = segment_reduce(e, groups, n_groups)
        out = e / den[groups]

        def vjp(g):
            s = segment_reduce(g * out, groups, n_groups)
            return (out * (g - s[groups]),)

        return self._push("softmax_groups", out, (a,), vjp)

    def gather_rows(self, a: Var, idx: np.ndarray) -> Var:
        self._check(a)
        idx = np.asarray(idx, dtype=np.int64)
        n = a.shape[0]
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise DimensionError(f"gather_rows: index out of range for {n} rows")

        def vjp(g):
            return (segment_reduce(g, idx, n),)

        return self._push("gather_rows", a.value[idx], (a,), vjp)

    def scatter_sum_rows(self, a: Var, idx: np.ndarray, n: int) -> Var:
        self._check(a)
        idx = np.asarray(idx, dtype=np.int64)
        if idx.shape != (a.shape[0],):
            raise DimensionError(f"scatter_sum_rows: {idx.shape} ids for {a.shape[0]} rows")
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise DimensionError(f"scatter_sum_rows: target out of range for {n} rows")
        out = segment_reduce(a.value, idx, n)
        return self._push("scatter_sum_rows", out, (a,), lambda g: (g[idx],))

    def square(self, a: Var) -> Var:
        self._check(a)
        A = a.value
        return self._push("square", A * A, (a,), lambda g: (2.0 * A * g,))

    def scale(self, a: Var, c: float) -> Var:
        self._check(a)
        c = float(c)
        return self._push("scale", a.value * c, (a,), lambda g: (g * c,))

    # composites built only from the primitives above

    def sum(self, a: Var) -> Var:
        left = self.const(np.ones((1, a.shape[0])))
        right = self.const(np.ones((a.shape[1], 1)))
        return self.matmul(self.matmul(left, a), right)

    def sum_cols(self, a: Var) -> Var:
        return self.matmul(a, self.const(np.ones((a.shape[1], 1))))

    def concat_cols(self, parts: Sequence[Var]) -> Var:
        total = sum(p.shape[1] for p in parts)
        out = None
        offset = 0
        for p in parts:
            sel = np.zeros((p.shape[1], total))
            sel[np.arange(p.shape[1]), offset + np.arange(p.shape[1])] = 1.0
            offset += p.shape[1]
            term = self.matmul(p, self.const(sel))
            out = term if out is None else self.add(out, term)
        return out


def backward(tape: Tape, loss: Var) -> None:
    """Accumulate dloss/dparam into every Param bound on ``tape``."""
    tape._check(loss)
    if loss.shape != (1, 1):
        raise ContractError(f"loss must be a 1x1 scalar, got {loss.shape}")
    adj: list[np.ndarray | None] = [None] * len(tape.values)
    adj[loss.index] = np.ones((1, 1))
    for out, inputs, vjp in reversed(tape.records):
        g = adj[out]
        if g is None or vjp is None:
            continue
        for i, gi in zip(inputs, vjp(g)):
            adj[i] = gi if adj[i] is None else adj[i] + gi
    for idx, p in tape.params.items():
        if adj[idx] is not None:
            p.grad = p.grad + adj[idx]


def zero_grads(params: Iterable[Param]) -> None:
    for p in params:
        p.zero_grad()


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    probes: int
    passed: bool


def gradcheck(
    loss_fn: Callable[[Tape], Var],
    params: Sequence[Param],
    probe_count: int = 5,
    step: float = 1e-4,
    tolerance: float = 1e-4,
    rng: np.random.Generator | None = None,
    post_backward: Callable[[Sequence[Param]], None] | None = None,
) -> list[ParamCheck]:
    """Compare analytic gradients against central differences.

    ``loss_fn`` builds the loss on the tape it is given and must be
    deterministic in the param values.  ``post_backward`` may tamper with the
    analytic grads before comparison (used as a negative control).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    zero_grads(params)
    tape = Tape()
    backward(tape, loss_fn(tape))
    if post_backward is not None:
        post_backward(params)
    analytic = {id(p): p.grad.copy() for p in params}

    def f() -> float:
        return float(loss_fn(Tape()).value[0, 0])

    report = []
    for p in params:
        size = p.value.size
        coords = rng.choice(size, size=min(probe_count, size), replace=False)
        worst = 0.0
        for flat in coords:
            ij = np.unravel_index(flat, p.value.shape)
            orig = p.value[ij]
            p.value[ij] = orig + step
            fp = f()
            p.value[ij] = orig - step
            fm = f()
            p.value[ij] = orig
            num = (fp - fm) / (2.0 * step)
            ana = analytic[id(p)][ij]
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, rel)
        report.append(ParamCheck(p.name, worst, len(coords), worst < tolerance))
    return report
