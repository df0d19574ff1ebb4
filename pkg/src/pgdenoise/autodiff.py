"""Reverse-mode tape over numpy arrays plus second-order forward-mode duals.

Two differentiation styles live here:

* ``Tape`` / ``Var`` record array-valued operations and produce exact
  gradients of a scalar loss with respect to any leaf (reverse sweep).
* ``Dual2`` carries value, first and second directional derivatives with
  respect to a small set of tracked inputs (forward propagation).

The two compose: a ``Dual2`` whose payloads are ``Var`` nodes yields input
derivatives that are themselves differentiable with respect to parameters,
which is what PDE residual losses need during training.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import AutodiffError, ConfigurationError

Array = np.ndarray


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class _Node:
    __slots__ = ("value", "parents", "vjps", "op")

    def __init__(self, value, parents, vjps, op):
        self.value = value
        self.parents = parents
        self.vjps = vjps
        self.op = op


class Tape:
    """Append-only record of array operations; single-threaded builder."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[_Node] = []

    def leaf(self, value) -> "Var":
        return self._push(np.asarray(value, dtype=np.float64), (), (), "leaf")

    def _push(self, value, parents, vjps, op) -> "Var":
        self.nodes.append(_Node(value, parents, vjps, op))
        return Var(self, len(self.nodes) - 1, value)


def _value(x):
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=np.float64)


class Var:
    """Handle to one tape node. Supports numpy-style arithmetic."""

    __slots__ = ("tape", "idx", "value")
    __array_ufunc__ = None  # force numpy to defer to our reflected ops

    def __init__(self, tape: Tape, idx: int, value):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={self.value.shape})"

    # -- binary arithmetic -------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual2):
            return NotImplemented
        if isinstance(other, Var):
            a, b = self.value, other.value
            return self.tape._push(
                a + b,
                (self.idx, other.idx),
                (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
                "add",
            )
        b = _value(other)
        a = self.value
        return self.tape._push(
            a + b, (self.idx,), (lambda g: _unbroadcast(g, a.shape),), "add"
        )

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual2):
            return NotImplemented
        if isinstance(other, Var):
            a, b = self.value, other.value
            return self.tape._push(
                a - b,
                (self.idx, other.idx),
                (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
                "sub",
            )
        b = _value(other)
        a = self.value
        return self.tape._push(
            a - b, (self.idx,), (lambda g: _unbroadcast(g, a.shape),), "sub"
        )

    def __rsub__(self, other):
        b = _value(other)
        a = self.value
        return self.tape._push(
            b - a, (self.idx,), (lambda g: _unbroadcast(-g, a.shape),), "rsub"
        )

    def __mul__(self, other):
        if isinstance(other, Dual2):
            return NotImplemented
        if isinstance(other, Var):
            a, b = self.value, other.value
            return self.tape._push(
                a * b,
                (self.idx, other.idx),
                (
                    lambda g: _unbroadcast(g * b, a.shape),
                    lambda g: _unbroadcast(g * a, b.shape),
                ),
                "mul",
            )
        b = _value(other)
        a = self.value
        return self.tape._push(
            a * b, (self.idx,), (lambda g: _unbroadcast(g * b, a.shape),), "mul"
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual2):
            return NotImplemented
        if isinstance(other, Var):
            a, b = self.value, other.value
            inv = 1.0 / b
            return self.tape._push(
                a * inv,
                (self.idx, other.idx),
                (
                    lambda g: _unbroadcast(g * inv, a.shape),
                    lambda g: _unbroadcast(-g * a * inv * inv, b.shape),
                ),
                "div",
            )
        b = _value(other)
        a = self.value
        inv = 1.0 / b
        return self.tape._push(
            a * inv, (self.idx,), (lambda g: _unbroadcast(g * inv, a.shape),), "div"
        )

    def __rtruediv__(self, other):
        b = _value(other)
        a = self.value
        inv = 1.0 / a
        val = b * inv
        return self.tape._push(
            val, (self.idx,), (lambda g: _unbroadcast(-g * val * inv, a.shape),), "rdiv"
        )

    def __neg__(self):
        a = self.value
        return self.tape._push(-a, (self.idx,), (lambda g: -g,), "neg")

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("Var exponent must be a plain number")
        a = self.value
        return self.tape._push(
            a**p,
            (self.idx,),
            (lambda g: g * p * a ** (p - 1),),
            "pow",
        )

    def __matmul__(self, other):
        a = self.value
        if isinstance(other, Var):
            b = other.value
            return self.tape._push(
                a @ b,
                (self.idx, other.idx),
                (lambda g: g @ b.T, lambda g: a.T @ g),
                "matmul",
            )
        b = _value(other)
        return self.tape._push(a @ b, (self.idx,), (lambda g: g @ b.T,), "matmul")

    def __rmatmul__(self, other):
        a = _value(other)
        b = self.value
        return self.tape._push(a @ b, (self.idx,), (lambda g: a.T @ g,), "rmatmul")

    # -- shape ops ----------------------------------------------------------

    def __getitem__(self, key):
        a = self.value
        val = a[key]

        def vjp(g, key=key, shape=a.shape):
            out = np.zeros(shape)
            out[key] = g
            return out

        return self.tape._push(val, (self.idx,), (vjp,), "getitem")

    def reshape(self, *shape):
        a = self.value
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return self.tape._push(
            a.reshape(shape), (self.idx,), (lambda g: g.reshape(a.shape),), "reshape"
        )

    def sum(self, axis=None):
        a = self.value
        if axis is None:
            return self.tape._push(
                np.asarray(a.sum()),
                (self.idx,),
                (lambda g: np.broadcast_to(g, a.shape).copy(),),
                "sum",
            )

        def vjp(g, axis=axis, shape=a.shape):
            return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

        return self.tape._push(a.sum(axis=axis), (self.idx,), (vjp,), "sum")

    def mean(self, axis=None):
        a = self.value
        if axis is None:
            n = a.size
            return self.tape._push(
                np.asarray(a.mean()),
                (self.idx,),
                (lambda g: np.broadcast_to(g / n, a.shape).copy(),),
                "mean",
            )
        n = a.shape[axis]

        def vjp(g, axis=axis, shape=a.shape, n=n):
            return np.broadcast_to(np.expand_dims(g / n, axis), shape).copy()

        return self.tape._push(a.mean(axis=axis), (self.idx,), (vjp,), "mean")

    # -- elementwise transcendentals -----------------------------------------

    def sin(self):
        a = self.value
        return self.tape._push(np.sin(a), (self.idx,), (lambda g: g * np.cos(a),), "sin")

    def cos(self):
        a = self.value
        return self.tape._push(np.cos(a), (self.idx,), (lambda g: -g * np.sin(a),), "cos")

    def tanh(self):
        a = self.value
        t = np.tanh(a)
        return self.tape._push(t, (self.idx,), (lambda g: g * (1.0 - t * t),), "tanh")

    def exp(self):
        e = np.exp(self.value)
        return self.tape._push(e, (self.idx,), (lambda g: g * e,), "exp")

    def log(self):
        a = self.value
        return self.tape._push(np.log(a), (self.idx,), (lambda g: g / a,), "log")

    def sqrt(self):
        s = np.sqrt(self.value)
        return self.tape._push(s, (self.idx,), (lambda g: g * 0.5 / s,), "sqrt")


def concat_cols(cols: Sequence) -> "Var | Array | Dual2":
    """Stack 1-D columns (and/or (n, k) blocks) into an (n, d) matrix.

    Accepts plain arrays, ``Var`` columns, and ``Dual2`` columns; the result
    is promoted to the richest type present.
    """
    if any(isinstance(c, Dual2) for c in cols):
        k, cross_keys = _dual_directions(cols)
        vals = [c.val if isinstance(c, Dual2) else c for c in cols]
        val = concat_cols(vals)
        n = _value(val).shape[0]

        def comp(select):
            parts = []
            for c in cols:
                width = _col_width(c.val if isinstance(c, Dual2) else c)
                p = select(c) if isinstance(c, Dual2) else None
                if p is None:
                    parts.append(np.zeros((n, width)) if width > 1 else np.zeros(n))
                else:
                    parts.append(p)
            return concat_cols(parts)

        grad = tuple(comp(lambda c, d=d: c.grad[d]) for d in range(k))
        hess = tuple(comp(lambda c, d=d: c.hess[d]) for d in range(k))
        cross = None
        if cross_keys is not None:
            cross = {
                key: comp(lambda c, key=key: (c.cross or {}).get(key))
                for key in cross_keys
            }
        return Dual2(val, grad, hess, cross)

    tape = None
    for c in cols:
        if isinstance(c, Var):
            tape = c.tape
            break
    arrs = [_value(c) for c in cols]
    widths = [1 if a.ndim == 1 else a.shape[1] for a in arrs]
    if tape is None:
        return np.column_stack(arrs)

    value = np.column_stack(arrs)
    parents = []
    vjps = []
    offset = 0
    for c, a, w in zip(cols, arrs, widths):
        if isinstance(c, Var):
            parents.append(c.idx)
            if a.ndim == 1:
                vjps.append(lambda g, j=offset: g[:, j])
            else:
                vjps.append(lambda g, j=offset, w=w: g[:, j : j + w])
        offset += w
    return tape._push(value, tuple(parents), tuple(vjps), "concat_cols")


def _col_width(payload) -> int:
    v = _value(payload)
    return 1 if v.ndim == 1 else v.shape[1]


def _dual_directions(cols):
    k = None
    cross_keys = None
    for c in cols:
        if isinstance(c, Dual2):
            if k is None:
                k = len(c.grad)
                cross_keys = tuple(c.cross.keys()) if c.cross is not None else None
            elif len(c.grad) != k:
                raise ConfigurationError("mixed Dual2 direction counts in concat")
    return k, cross_keys


# -- generic elementwise functions (array | Var | Dual2) ----------------------


def _lift_unary(x, rule):
    """Apply a unary rule v -> (f(v), f'(v), f''(v)) to a Dual2 payload.

    The rule shares subexpressions (e.g. tanh is evaluated once), which
    matters when payloads are tape nodes.
    """
    fv, d1, d2 = rule(x.val)
    grad = tuple(d1 * g for g in x.grad)
    if x.hess is not None:
        hess = tuple(d2 * g * g + d1 * h for g, h in zip(x.grad, x.hess))
        cross = None
        if x.cross is not None:
            cross = {
                (i, j): d2 * x.grad[i] * x.grad[j] + d1 * c
                for (i, j), c in x.cross.items()
            }
    else:
        hess, cross = None, None
    return Dual2(fv, grad, hess, cross)


def _rule_sin(v):
    if isinstance(v, Var):
        s, c = v.sin(), v.cos()
    else:
        v = np.asarray(v, dtype=np.float64)
        s, c = np.sin(v), np.cos(v)
    return s, c, -s


def _rule_cos(v):
    s, c, _ = _rule_sin(v)
    return c, -s, -c


def _rule_tanh(v):
    t = v.tanh() if isinstance(v, Var) else np.tanh(np.asarray(v, dtype=np.float64))
    d1 = 1.0 - t * t
    return t, d1, -2.0 * t * d1


def _rule_exp(v):
    e = v.exp() if isinstance(v, Var) else np.exp(np.asarray(v, dtype=np.float64))
    return e, e, e


def _rule_log(v):
    if isinstance(v, Var):
        inv = 1.0 / v
        return v.log(), inv, -inv * inv
    v = np.asarray(v, dtype=np.float64)
    return np.log(v), 1.0 / v, -1.0 / (v * v)


def _rule_sqrt(v):
    s = v.sqrt() if isinstance(v, Var) else np.sqrt(np.asarray(v, dtype=np.float64))
    d1 = 0.5 / s
    return s, d1, -0.5 * d1 / s


def sin(x):
    if isinstance(x, Dual2):
        return _lift_unary(x, _rule_sin)
    return x.sin() if isinstance(x, Var) else np.sin(np.asarray(x, dtype=np.float64))


def cos(x):
    if isinstance(x, Dual2):
        return _lift_unary(x, _rule_cos)
    return x.cos() if isinstance(x, Var) else np.cos(np.asarray(x, dtype=np.float64))


def tanh(x):
    if isinstance(x, Dual2):
        return _lift_unary(x, _rule_tanh)
    return x.tanh() if isinstance(x, Var) else np.tanh(np.asarray(x, dtype=np.float64))


def exp(x):
    if isinstance(x, Dual2):
        return _lift_unary(x, _rule_exp)
    return x.exp() if isinstance(x, Var) else np.exp(np.asarray(x, dtype=np.float64))


def log(x):
    if isinstance(x, Dual2):
        return _lift_unary(x, _rule_log)
    return x.log() if isinstance(x, Var) else np.log(np.asarray(x, dtype=np.float64))


def sqrt(x):
    if isinstance(x, Dual2):
        return _lift_unary(x, _rule_sqrt)
    return x.sqrt() if isinstance(x, Var) else np.sqrt(np.asarray(x, dtype=np.float64))


class Dual2:
    """Value with first and second directional derivatives along tracked inputs.

    ``grad[d]`` and ``hess[d]`` hold d/ds and d^2/ds^2 along direction ``d``;
    ``cross[(i, j)]`` (optional, i < j) holds mixed second derivatives.
    Payloads may be arrays or ``Var`` nodes.
    """

    __slots__ = ("val", "grad", "hess", "cross")
    __array_ufunc__ = None

    def __init__(self, val, grad, hess, cross=None):
        self.val = val
        self.grad = tuple(grad)
        self.hess = tuple(hess) if hess is not None else None
        self.cross = cross

    @staticmethod
    def seed(value, direction: int, n_directions: int, with_cross: bool = False):
        value = np.asarray(value, dtype=np.float64)
        zeros = lambda: np.zeros_like(value)
        grad = tuple(
            np.ones_like(value) if d == direction else zeros()
            for d in range(n_directions)
        )
        hess = tuple(zeros() for _ in range(n_directions))
        cross = None
        if with_cross:
            cross = {
                (i, j): zeros()
                for i in range(n_directions)
                for j in range(i + 1, n_directions)
            }
        return Dual2(value, grad, hess, cross)

    @staticmethod
    def constant(value, n_directions: int, with_cross: bool = False):
        d = Dual2.seed(np.asarray(value, dtype=np.float64), -1, n_directions, with_cross)
        return d

    def _promote(self, other) -> "Dual2":
        if isinstance(other, Dual2):
            return other
        k = len(self.grad)
        shape = _value(self.val).shape
        z = np.zeros(shape) if shape else np.zeros(())
        cross = None
        if self.cross is not None:
            cross = {key: z for key in self.cross}
        return Dual2(other, tuple(z for _ in range(k)), tuple(z for _ in range(k)), cross)

    def __add__(self, other):
        o = self._promote(other)
        cross = None
        if self.cross is not None:
            cross = {k: self.cross[k] + o.cross[k] for k in self.cross}
        return Dual2(
            self.val + o.val,
            tuple(a + b for a, b in zip(self.grad, o.grad)),
            tuple(a + b for a, b in zip(self.hess, o.hess)),
            cross,
        )

    __radd__ = __add__

    def __sub__(self, other):
        o = self._promote(other)
        cross = None
        if self.cross is not None:
            cross = {k: self.cross[k] - o.cross[k] for k in self.cross}
        return Dual2(
            self.val - o.val,
            tuple(a - b for a, b in zip(self.grad, o.grad)),
            tuple(a - b for a, b in zip(self.hess, o.hess)),
            cross,
        )

    def __rsub__(self, other):
        return self._promote(other).__sub__(self)

    def __neg__(self):
        cross = None
        if self.cross is not None:
            cross = {k: -v for k, v in self.cross.items()}
        return Dual2(
            -self.val,
            tuple(-g for g in self.grad),
            tuple(-h for h in self.hess),
            cross,
        )

    def __mul__(self, other):
        o = self._promote(other)
        a, b = self.val, o.val
        grad = tuple(ga * b + a * gb for ga, gb in zip(self.grad, o.grad))
        hess = tuple(
            ha * b + 2.0 * ga * gb + a * hb
            for ga, gb, ha, hb in zip(self.grad, o.grad, self.hess, o.hess)
        )
        cross = None
        if self.cross is not None:
            cross = {
                (i, j): self.cross[(i, j)] * b
                + self.grad[i] * o.grad[j]
                + self.grad[j] * o.grad[i]
                + a * o.cross[(i, j)]
                for (i, j) in self.cross
            }
        return Dual2(a * b, grad, hess, cross)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._promote(other)
        w = self.val / o.val
        inv = 1.0 / o.val
        grad = tuple((ga - w * gb) * inv for ga, gb in zip(self.grad, o.grad))
        hess = tuple(
            (ha - 2.0 * gw * gb - w * hb) * inv
            for ha, gb, hb, gw in zip(self.hess, o.grad, o.hess, grad)
        )
        cross = None
        if self.cross is not None:
            cross = {}
            for (i, j) in self.cross:
                cross[(i, j)] = (
                    self.cross[(i, j)]
                    - grad[i] * o.grad[j]
                    - grad[j] * o.grad[i]
                    - w * o.cross[(i, j)]
                ) * inv
        return Dual2(w, grad, hess, cross)

    def __rtruediv__(self, other):
        return self._promote(other).__truediv__(self)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("Dual2 exponent must be a plain number")
        v = self.val
        fp = p * v ** (p - 1)
        fpp = p * (p - 1) * v ** (p - 2)
        grad = tuple(fp * g for g in self.grad)
        hess = tuple(fpp * g * g + fp * h for g, h in zip(self.grad, self.hess))
        cross = None
        if self.cross is not None:
            cross = {
                (i, j): fpp * self.grad[i] * self.grad[j] + fp * c
                for (i, j), c in self.cross.items()
            }
        return Dual2(v**p, grad, hess, cross)

    def __matmul__(self, other):
        if isinstance(other, Dual2):
            raise ConfigurationError("Dual2 @ Dual2 is not needed and not supported")
        cross = None
        if self.cross is not None:
            cross = {k: v @ other for k, v in self.cross.items()}
        return Dual2(
            self.val @ other,
            tuple(g @ other for g in self.grad),
            tuple(h @ other for h in self.hess),
            cross,
        )

    def reshape(self, *shape):
        def r(p):
            return p.reshape(*shape)

        cross = None
        if self.cross is not None:
            cross = {k: r(v) for k, v in self.cross.items()}
        return Dual2(r(self.val), tuple(r(g) for g in self.grad), tuple(r(h) for h in self.hess), cross)


def dual2_eval(
    f: Callable,
    columns: Sequence,
    seeds: Sequence[int],
    with_cross: bool = False,
) -> Dual2:
    """Evaluate ``f`` on input columns, tracking derivatives along ``seeds``.

    ``columns`` is a list of 1-D payloads (arrays or Vars); ``seeds`` names
    the column indices to differentiate against, in direction order. Returns
    a ``Dual2`` whose grad/hess follow that order.
    """
    n_cols = len(columns)
    for s in seeds:
        if not (0 <= s < n_cols):
            raise ConfigurationError(
                f"seed index {s} out of range for {n_cols} input columns"
            )
    k = len(seeds)
    lifted = []
    for i, col in enumerate(columns):
        if i in seeds:
            d = list(seeds).index(i)
            lifted.append(Dual2.seed(_value(col), d, k, with_cross))
        else:
            lifted.append(col)
    out = f(lifted)
    if not isinstance(out, Dual2):
        # function was constant along all seeded directions
        v = _value(out)
        z = np.zeros_like(v)
        cross = None
        if with_cross:
            cross = {(i, j): z for i in range(k) for j in range(i + 1, k)}
        return Dual2(out, tuple(z for _ in range(k)), tuple(z for _ in range(k)), cross)
    return out


def grad(loss: Var, wrt: Sequence[Var]) -> list[Array]:
    """Reverse sweep from a scalar loss; returns gradients for each leaf in wrt."""
    if not isinstance(loss, Var):
        raise ConfigurationError("loss must be a tape Var")
    if loss.value.size != 1:
        raise ConfigurationError("loss must be scalar")
    nodes = loss.tape.nodes
    if not np.isfinite(loss.value):
        # locate the first offender only when something actually went wrong
        for i in range(loss.idx + 1):
            if np.isnan(nodes[i].value).any():
                raise AutodiffError(
                    f"NaN in forward value at node {i} (op '{nodes[i].op}')"
                )
        raise AutodiffError("non-finite loss value")
    adjoint: list = [None] * (loss.idx + 1)
    adjoint[loss.idx] = np.ones_like(loss.value)
    for i in range(loss.idx, -1, -1):
        g = adjoint[i]
        if g is None:
            continue
        node = nodes[i]
        if not node.parents:
            continue  # leaf: keep its adjoint for extraction below
        for p, vjp in zip(node.parents, node.vjps):
            contrib = vjp(g)
            if adjoint[p] is None:
                adjoint[p] = contrib
            else:
                adjoint[p] = adjoint[p] + contrib
        adjoint[i] = None  # free intermediate storage
    out = []
    for w in wrt:
        g = adjoint[w.idx] if w.idx <= loss.idx else None
        out.append(np.zeros_like(w.value) if g is None else np.asarray(g))
    return out


def grad_params(loss: Var, params: Var) -> Array:
    """Gradient of a scalar tape output with respect to one parameter leaf."""
    return grad(loss, [params])[0]
