"""Reverse-mode differentiation tape.

Every primitive runs in one of two modes. If any input is a :class:`Var`, the
result is recorded on that variable's tape and a :class:`Var` is returned.
If all inputs are plain arrays, the same forward rule runs eagerly and an
array is returned. Both modes share one forward implementation, so a taped
evaluation and an eager evaluation of the same expression agree bit-exactly.

Evaluation order is fixed: nodes are appended in call order and adjoints are
accumulated in strictly decreasing node order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError, TapeError


def as_tensor(x) -> np.ndarray:
    """Return ``x`` as a read-only, C-contiguous float64 array."""
    arr = np.array(x, dtype=np.float64, copy=True, order="C")
    arr.flags.writeable = False
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    if arr.dtype != np.float64:
        arr = arr.astype(np.float64)
    if arr.flags.writeable:
        arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Primitive:
    kind: str
    forward: Callable[..., np.ndarray]
    # vjp(g, out, inputs, attrs, needs) -> one gradient (or None) per input
    vjp: Callable[..., tuple]


PRIMITIVES: dict[str, Primitive] = {}


def register(kind: str, forward, vjp) -> Primitive:
    prim = Primitive(kind, forward, vjp)
    PRIMITIVES[kind] = prim
    return prim


def _run_forward(prim: Primitive, values: Sequence[np.ndarray], attrs: Mapping) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):  # reported below as NonFiniteError
        out = prim.forward(*values, **attrs)
    out = _freeze(np.asarray(out))
    if not np.all(np.isfinite(out)):
        shapes = ", ".join(str(v.shape) for v in values)
        raise NonFiniteError(f"{prim.kind}: non-finite output for inputs of shape {shapes}")
    return out


@dataclass(eq=False, slots=True)
class Node:
    kind: str
    inputs: tuple[int, ...]
    attrs: dict
    value: np.ndarray
    name: str | None = None
    requires_grad: bool = False


class Var:
    """Handle to a node on a :class:`Tape`."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def is_leaf(self) -> bool:
        return self.tape.nodes[self.index].kind == "leaf"

    def __repr__(self):
        node = self.tape.nodes[self.index]
        return f"Var(#{self.index} {node.kind} shape={self.shape})"


@dataclass(eq=False)
class Tape:
    nodes: list[Node] = field(default_factory=list)

    def leaf(self, value, name: str | None = None, requires_grad: bool = True) -> Var:
        arr = as_tensor(value)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"leaf {name or len(self.nodes)}: non-finite entries")
        self.nodes.append(Node("leaf", (), {}, arr, name, requires_grad))
        return Var(self, len(self.nodes) - 1)

    def constant(self, value, name: str | None = None) -> Var:
        return self.leaf(value, name=name, requires_grad=False)

    def record(self, prim: Primitive, inputs: Sequence[Var], attrs: Mapping) -> Var:
        values = [v.value for v in inputs]
        out = _run_forward(prim, values, attrs)
        self.nodes.append(Node(prim.kind, tuple(v.index for v in inputs), dict(attrs), out))
        return Var(self, len(self.nodes) - 1)

    def __len__(self):
        return len(self.nodes)

    def _check_own(self, v: Var, what: str):
        if not isinstance(v, Var) or v.tape is not self:
            raise TapeError(f"{what} is not a variable on this tape")

    def backward(self, root: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
        """Gradients of the scalar ``root`` with respect to each leaf in ``wrt``.

        Returns one array per entry of ``wrt``, shaped like that leaf.
        """
        self._check_own(root, "root")
        if root.value.size != 1:
            raise TapeError(f"backward needs a scalar root, got shape {root.shape}")
        wrt = list(wrt)
        for w in wrt:
            self._check_own(w, "gradient target")
            if not w.is_leaf:
                raise TapeError(f"gradient target #{w.index} is not a leaf")
        targets = {w.index for w in wrt}

        n = root.index + 1
        needs = [False] * n
        for i in range(n):
            node = self.nodes[i]
            if node.kind == "leaf":
                needs[i] = i in targets
            else:
                needs[i] = any(needs[j] for j in node.inputs)

        adjoints: dict[int, np.ndarray] = {root.index: np.ones_like(root.value)}
        for i in range(root.index, -1, -1):
            node = self.nodes[i]
            g = adjoints.get(i)
            if g is None or node.kind == "leaf" or not needs[i]:
                continue
            prim = PRIMITIVES[node.kind]
            in_vals = [self.nodes[j].value for j in node.inputs]
            in_needs = [needs[j] for j in node.inputs]
            grads = prim.vjp(g, node.value, in_vals, node.attrs, in_needs)
            for j, gj, need in zip(node.inputs, grads, in_needs):
                if not need or gj is None:
                    continue
                gj = np.asarray(gj, dtype=np.float64)
                if gj.shape != self.nodes[j].value.shape:
                    raise ShapeError(
                        f"{node.kind}: adjoint shape {gj.shape} does not match input "
                        f"shape {self.nodes[j].value.shape}"
                    )
                prev = adjoints.get(j)
                adjoints[j] = gj if prev is None else prev + gj
        return [adjoints.get(w.index, np.zeros_like(w.value)).copy() for w in wrt]

    def replay(self) -> bool:
        """Recompute every node from the leaves; True if all values match bit-exactly."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.kind == "leaf":
                values.append(node.value)
                continue
            prim = PRIMITIVES[node.kind]
            out = _run_forward(prim, [values[j] for j in node.inputs], node.attrs)
            if out.shape != node.value.shape or not np.array_equal(out, node.value):
                return False
            values.append(out)
        return True


def apply(kind: str, inputs: Sequence, **attrs):
    """Run primitive ``kind``: record it if any input is a Var, else evaluate eagerly."""
    prim = PRIMITIVES[kind]
    tape = None
    for x in inputs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise TapeError(f"{kind}: inputs live on different tapes")
    if tape is None:
        return _run_forward(prim, [x if _is_frozen(x) else as_tensor(x) for x in inputs], attrs)
    vars_ = [x if isinstance(x, Var) else tape.constant(x) for x in inputs]
    return tape.record(prim, vars_, attrs)


def _is_frozen(x) -> bool:
    return isinstance(x, np.ndarray) and x.dtype == np.float64 and not x.flags.writeable


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def evaluate(expression: Callable[..., Var], leaves: Mapping[str, np.ndarray]):
    """Build a fresh tape with named leaves and evaluate ``expression(**leaves)``.

    Returns ``(tape, root, leaf_vars)``.
    """
    tape = Tape()
    leaf_vars = {name: tape.leaf(value, name=name) for name, value in leaves.items()}
    root = expression(**leaf_vars)
    if not isinstance(root, Var):
        raise TapeError("expression did not produce a taped value")
    return tape, root, leaf_vars


def grad_check(
    expression: Callable[..., Var],
    leaves: Mapping[str, np.ndarray],
    perturbation: float = 1e-6,
) -> float:
    """Worst relative error between backward() and central finite differences.

    The error is normwise: ``max|g_ad - g_fd| / max(|g_ad|, |g_fd|)`` with the
    maxima taken over every entry of every leaf.
    """
    if not 1e-8 <= perturbation <= 1e-4:
        raise ValueError(f"perturbation must lie in [1e-8, 1e-4], got {perturbation}")
    tape, root, leaf_vars = evaluate(expression, leaves)
    names = list(leaf_vars)
    analytic = dict(zip(names, tape.backward(root, [leaf_vars[k] for k in names])))

    base = {k: np.array(v, dtype=np.float64) for k, v in leaves.items()}
    worst_diff = 0.0
    scale = 0.0
    for name in names:
        x = base[name]
        fd = np.zeros(x.shape)
        flat = x.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + perturbation
            f_plus = float(expression(**base))
            flat[i] = orig - perturbation
            f_minus = float(expression(**base))
            flat[i] = orig
            fd_flat[i] = (f_plus - f_minus) / (2.0 * perturbation)
        ad = analytic[name]
        if ad.size:
            worst_diff = max(worst_diff, float(np.max(np.abs(ad - fd))))
            scale = max(scale, float(np.max(np.abs(ad))), float(np.max(np.abs(fd))))
    if scale == 0.0:
        return worst_diff
    return worst_diff / scale
