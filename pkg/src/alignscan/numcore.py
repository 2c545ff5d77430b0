"""Dense float64 tensors with reverse-mode automatic differentiation.

The numeric substrate of the package: every array is a row-major float64
``numpy.ndarray``, and :class:`Var` wraps one together with a dynamically
recorded operation tape so that any scalar output can be differentiated with
respect to any leaf. The tape is rebuilt on every forward pass; there is no
graph compilation.

Broadcasting is deliberately restricted to two cases, equal shapes and
scalar-with-tensor, so that silent shape bugs cannot hide behind numpy's
general broadcasting. Every public operation validates that its result is
finite and raises :class:`~alignscan.errors.NumericError` otherwise.

Every analytic gradient in the package is validated against the central
finite-difference oracle in :func:`grad_check`.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, ParameterError

Array = np.ndarray


def as_array(x) -> Array:
    """Coerce to a float64 ndarray (copies only when needed)."""
    return np.asarray(x, dtype=np.float64)


def _checked(data: Array, ctx: str) -> Array:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{ctx} produced non-finite values")
    return data


def _accum(v: "Var", g: Array) -> None:
    if v.grad is None:
        v.grad = np.zeros_like(v.data)
    v.grad += g


def _binary_mode(a_shape: tuple, b_shape: tuple, op: str) -> str:
    """Classify a binary op as 'equal', 'a_scalar' or 'b_scalar'.

    Anything else is a dimension error: only scalar-with-tensor and
    equal-shape broadcasting are supported.
    """
    if a_shape == b_shape:
        return "equal"
    if int(np.prod(a_shape)) == 1:
        return "a_scalar"
    if int(np.prod(b_shape)) == 1:
        return "b_scalar"
    raise DimensionError(f"{op}: incompatible shapes {a_shape} and {b_shape}")


def _reduce_to(g: Array, shape: tuple) -> Array:
    """Sum a broadcast gradient back down to the scalar operand's shape."""
    return np.sum(g).reshape(shape) if g.shape != shape else g


class Var:
    """A float64 array plus the tape entry that produced it.

    ``backward()`` on a size-1 output walks the recorded graph in reverse
    topological order and accumulates ``grad`` (same shape as ``data``) on
    every node reached, leaves included.
    """

    __slots__ = ("data", "grad", "_parents", "_vjp")

    def __init__(self, data, _parents: tuple = (), _vjp: Callable[[Array], None] | None = None):
        self.data = as_array(data)
        self.grad: Array | None = None
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError(f"item: tensor has shape {self.shape}, not a scalar")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Var(shape={self.shape})"

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other) -> "Var":
        other = wrap(other)
        mode = _binary_mode(self.shape, other.shape, "add")
        out = Var(self.data + other.data, (self, other))

        def vjp(g: Array) -> None:
            _accum(self, _reduce_to(g, self.shape) if mode == "a_scalar" else g)
            _accum(other, _reduce_to(g, other.shape) if mode == "b_scalar" else g)

        out._vjp = vjp
        return out

    def __sub__(self, other) -> "Var":
        other = wrap(other)
        mode = _binary_mode(self.shape, other.shape, "sub")
        out = Var(self.data - other.data, (self, other))

        def vjp(g: Array) -> None:
            _accum(self, _reduce_to(g, self.shape) if mode == "a_scalar" else g)
            _accum(other, _reduce_to(-g, other.shape) if mode == "b_scalar" else -g)

        out._vjp = vjp
        return out

    def __mul__(self, other) -> "Var":
        other = wrap(other)
        mode = _binary_mode(self.shape, other.shape, "mul")
        out = Var(_checked(self.data * other.data, "mul"), (self, other))

        def vjp(g: Array) -> None:
            ga = g * other.data
            gb = g * self.data
            _accum(self, _reduce_to(ga, self.shape) if mode == "a_scalar" else ga)
            _accum(other, _reduce_to(gb, other.shape) if mode == "b_scalar" else gb)

        out._vjp = vjp
        return out

    def __neg__(self) -> "Var":
        return self.scale(-1.0)

    def __radd__(self, other) -> "Var":
        return self + other

    def __rmul__(self, other) -> "Var":
        return self * other

    def __rsub__(self, other) -> "Var":
        return wrap(other) - self

    def scale(self, c: float) -> "Var":
        """Multiply by a plain python scalar."""
        c = float(c)
        out = Var(_checked(self.data * c, "scale"), (self,))
        out._vjp = lambda g: _accum(self, g * c)
        return out

    def matmul(self, other) -> "Var":
        other = wrap(other)
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2:
            raise DimensionError(f"matmul: operands must be 2-D, got {a.shape} and {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
        out = Var(_checked(a @ b, "matmul"), (self, other))

        def vjp(g: Array) -> None:
            _accum(self, g @ b.T)
            _accum(other, a.T @ g)

        out._vjp = vjp
        return out

    def __matmul__(self, other) -> "Var":
        return self.matmul(other)

    def transpose(self) -> "Var":
        out = Var(self.data.T.copy(), (self,))
        out._vjp = lambda g: _accum(self, g.T)
        return out

    @property
    def T(self) -> "Var":
        return self.transpose()

    # -- pointwise nonlinearities --------------------------------------

    def exp(self) -> "Var":
        e = _checked(np.exp(self.data), "exp")
        out = Var(e, (self,))
        out._vjp = lambda g: _accum(self, g * e)
        return out

    def log(self) -> "Var":
        out = Var(_checked(np.log(self.data), "log"), (self,))
        out._vjp = lambda g: _accum(self, g / self.data)
        return out

    def softplus(self) -> "Var":
        out = Var(np.logaddexp(0.0, self.data), (self,))
        out._vjp = lambda g: _accum(self, g * _sigmoid(self.data))
        return out

    def sigmoid(self) -> "Var":
        s = _sigmoid(self.data)
        out = Var(s, (self,))
        out._vjp = lambda g: _accum(self, g * s * (1.0 - s))
        return out

    def silu(self) -> "Var":
        s = _sigmoid(self.data)
        out = Var(self.data * s, (self,))
        out._vjp = lambda g: _accum(self, g * (s + self.data * s * (1.0 - s)))
        return out

    def pow(self, p: float) -> "Var":
        p = float(p)
        out = Var(_checked(self.data**p, "pow"), (self,))
        out._vjp = lambda g: _accum(self, g * p * self.data ** (p - 1.0))
        return out

    def clip_min(self, lo: float) -> "Var":
        """Clamp below at ``lo``; subgradient is zero on the clamped set."""
        mask = self.data > lo
        out = Var(np.where(mask, self.data, lo), (self,))
        out._vjp = lambda g: _accum(self, g * mask)
        return out

    # -- reductions ----------------------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = True) -> "Var":
        out = Var(np.sum(self.data, axis=axis, keepdims=keepdims), (self,))
        shape = self.shape

        def vjp(g: Array) -> None:
            if not keepdims and axis is not None:
                g = np.expand_dims(g, axis)
            _accum(self, np.broadcast_to(g, shape))

        out._vjp = vjp
        return out

    def mean(self, axis: int | None = None, keepdims: bool = True) -> "Var":
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims).scale(1.0 / n)

    # -- backward ------------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this size-1 output on every upstream node."""
        if self.size != 1:
            raise DimensionError(f"backward: output must be a scalar, got shape {self.shape}")
        order: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)


def wrap(x) -> Var:
    """Lift a scalar/array to a leaf Var; Vars pass through untouched."""
    return x if isinstance(x, Var) else Var(x)


def _sigmoid(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def matmul(a, b) -> Var:
    """Matrix product of two 2-D tensors; differentiable."""
    return wrap(a).matmul(b)


_UNARY = {"exp": Var.exp, "softplus": Var.softplus, "silu": Var.silu}
_BINARY = {"add": Var.__add__, "mul": Var.__mul__, "sub": Var.__sub__}


def elementwise(op: str, *inputs) -> Var:
    """Dispatch a pointwise operation by name.

    ``op`` is one of ``add``, ``mul``, ``sub`` (two tensors, equal-shape or
    scalar-with-tensor), ``exp``, ``softplus``, ``silu`` (one tensor), or
    ``scale`` (tensor and a python float).
    """
    if op in _UNARY:
        if len(inputs) != 1:
            raise ParameterError(f"elementwise '{op}' takes 1 input, got {len(inputs)}")
        return _UNARY[op](wrap(inputs[0]))
    if op in _BINARY:
        if len(inputs) != 2:
            raise ParameterError(f"elementwise '{op}' takes 2 inputs, got {len(inputs)}")
        return _BINARY[op](wrap(inputs[0]), wrap(inputs[1]))
    if op == "scale":
        if len(inputs) != 2:
            raise ParameterError("elementwise 'scale' takes a tensor and a scalar")
        return wrap(inputs[0]).scale(inputs[1])
    raise ParameterError(f"unknown elementwise op '{op}'")


def concat_rows(parts: Sequence[Var]) -> Var:
    """Stack 2-D tensors with equal column counts along axis 0; differentiable."""
    parts = [wrap(p) for p in parts]
    if not parts:
        raise DimensionError("concat_rows: need at least one tensor")
    d = parts[0].shape[1]
    for p in parts:
        if p.data.ndim != 2 or p.shape[1] != d:
            raise DimensionError(f"concat_rows: expected (*, {d}) blocks, got {p.shape}")
    out = Var(np.concatenate([p.data for p in parts], axis=0), tuple(parts))
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def vjp(g: Array) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[lo:hi])

    out._vjp = vjp
    return out


# -- gradient checking -------------------------------------------------


@dataclass
class GradCheckReport:
    """Outcome of an analytic-vs-finite-difference comparison."""

    max_rel_err: float
    per_leaf: list[float]
    eps: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def grad_check(
    f: Callable[..., Var],
    leaves: Iterable[Var],
    eps: float = 1e-5,
    tol: float = 1e-5,
) -> GradCheckReport:
    """Compare the tape gradient of ``f(*leaves)`` against central differences.

    The oracle is (f(x+eps) - f(x-eps)) / (2 eps) evaluated independently per
    leaf coordinate; it never touches the tape. The relative error of
    coordinate g is |analytic - numeric| / max(|analytic|, |numeric|, 1), and
    the check passes when the maximum over all coordinates is <= ``tol``.
    """
    if eps <= 0:
        raise ParameterError(f"grad_check: eps must be positive, got {eps}")
    leaves = list(leaves)
    for leaf in leaves:
        leaf.grad = None
    out = f(*leaves)
    if out.size != 1:
        raise DimensionError(f"grad_check: f must return a scalar, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NumericError("grad_check: f is not finite at the evaluation point")
    out.backward()
    analytic = [np.zeros_like(l.data) if l.grad is None else l.grad.copy() for l in leaves]

    def value() -> float:
        v = f(*leaves).data
        if not np.isfinite(v).all():
            raise NumericError("grad_check: f is not finite at a perturbed point")
        return float(v.reshape(()))

    per_leaf: list[float] = []
    for leaf, a in zip(leaves, analytic):
        flat = leaf.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            f_hi = value()
            flat[i] = keep - eps
            f_lo = value()
            flat[i] = keep
            numeric = (f_hi - f_lo) / (2.0 * eps)
            ana = a.reshape(-1)[i]
            rel = abs(ana - numeric) / max(abs(ana), abs(numeric), 1.0)
            worst = max(worst, rel)
        per_leaf.append(worst)
    max_rel = max(per_leaf) if per_leaf else 0.0
    return GradCheckReport(max_rel_err=max_rel, per_leaf=per_leaf, eps=eps, tol=tol)


# -- seeded randomness -------------------------------------------------


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator: a fixed algorithm, identical streams on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def component_seed(root_seed: int, component: str) -> int:
    """Derive a per-component seed from one root seed.

    Scheme: SeedSequence entropy = [root_seed, crc32(component name)]. Every
    source of randomness in the package draws from a component seed so that a
    single root seed fixes the whole run.
    """
    tag = zlib.crc32(component.encode("utf-8"))
    ss = np.random.SeedSequence([int(root_seed), tag])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
