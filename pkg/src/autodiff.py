"""
Reverse-Mode Automatic Differentiation
Scalar computation tapes used to differentiate every calibration loss
"""

import math
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import DomainError


class OpKind(str, Enum):
    """Operations a tape can record"""

    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    NEG = "neg"
    LN = "ln"
    EXP = "exp"
    SIN = "sin"
    COS = "cos"
    SQRT = "sqrt"
    TANH = "tanh"
    SOFTPLUS = "softplus"
    SQUARE = "square"
    ABS = "abs"
    RELU = "relu"


BINARY_KINDS = frozenset({OpKind.ADD, OpKind.SUB, OpKind.MUL, OpKind.DIV})


def _softplus(x: float) -> float:
    # log(1 + e^x) without overflowing for large |x|
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _evaluate_unary(kind: OpKind, x: float) -> Tuple[float, float]:
    """Primal value and local partial of a unary op"""
    if kind is OpKind.NEG:
        return -x, -1.0
    if kind is OpKind.LN:
        if not x > 0.0:
            raise DomainError(f"ln of non-positive value {x!r}", x)
        return math.log(x), 1.0 / x
    if kind is OpKind.EXP:
        try:
            e = math.exp(x)
        except OverflowError:
            raise DomainError(f"exp overflow at {x!r}", x) from None
        return e, e
    if kind is OpKind.SIN:
        return math.sin(x), math.cos(x)
    if kind is OpKind.COS:
        return math.cos(x), -math.sin(x)
    if kind is OpKind.SQRT:
        if not x > 0.0:
            raise DomainError(f"sqrt of non-positive value {x!r}", x)
        r = math.sqrt(x)
        return r, 0.5 / r
    if kind is OpKind.TANH:
        t = math.tanh(x)
        return t, 1.0 - t * t
    if kind is OpKind.SOFTPLUS:
        return _softplus(x), _sigmoid(x)
    if kind is OpKind.SQUARE:
        return x * x, 2.0 * x
    if kind is OpKind.ABS:
        # subgradient 0 at the kink
        return abs(x), (1.0 if x > 0.0 else -1.0 if x < 0.0 else 0.0)
    if kind is OpKind.RELU:
        return (x, 1.0) if x > 0.0 else (0.0, 0.0)
    raise ValueError(f"{kind} is not a unary op")


def _evaluate_binary(kind: OpKind, a: float, b: float) -> Tuple[float, float, float]:
    """Primal value and the partials with respect to both operands"""
    if kind is OpKind.ADD:
        return a + b, 1.0, 1.0
    if kind is OpKind.SUB:
        return a - b, 1.0, -1.0
    if kind is OpKind.MUL:
        return a * b, b, a
    if kind is OpKind.DIV:
        if b == 0.0:
            raise DomainError(f"division of {a!r} by zero", b)
        return a / b, 1.0 / b, -a / (b * b)
    raise ValueError(f"{kind} is not a binary op")


class NodeRef:
    """
    Handle to one node of a tape.

    Arithmetic with other nodes or plain numbers records new nodes on the same
    tape, so loss formulas can be written as ordinary expressions.
    """

    __slots__ = ("tape", "index")
    # numpy scalars must defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> float:
        return self.tape.value(self)

    def __repr__(self) -> str:
        return f"NodeRef({self.index}, value={self.value!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, NodeRef) and other.tape is self.tape and other.index == self.index

    def __hash__(self) -> int:
        return hash((id(self.tape), self.index))

    def __add__(self, other):
        return self.tape._binary(OpKind.ADD, self, other)

    def __radd__(self, other):
        return self.tape._binary(OpKind.ADD, self, other)

    def __sub__(self, other):
        return self.tape._binary(OpKind.SUB, self, other)

    def __rsub__(self, other):
        return self.tape.apply(OpKind.ADD, [-self], aux=float(other))

    def __mul__(self, other):
        return self.tape._binary(OpKind.MUL, self, other)

    def __rmul__(self, other):
        return self.tape._binary(OpKind.MUL, self, other)

    def __truediv__(self, other):
        return self.tape._binary(OpKind.DIV, self, other)

    def __rtruediv__(self, other):
        return self.tape.apply(OpKind.DIV, [self.tape.leaf(float(other)), self])

    def __neg__(self):
        return self.tape.apply(OpKind.NEG, [self])

    def __pos__(self):
        return self


Scalar = Union[float, NodeRef]


class GradientVector:
    """Adjoints d(root)/d(leaf) for every leaf recorded before the root"""

    def __init__(self, tape: "Tape", adjoints: Dict[int, float]):
        self._tape = tape
        self._adjoints = adjoints

    def __getitem__(self, leaf: NodeRef) -> float:
        return self._adjoints[leaf.index]

    def __contains__(self, leaf: NodeRef) -> bool:
        return leaf.index in self._adjoints

    def __len__(self) -> int:
        return len(self._adjoints)

    def items(self):
        return ((NodeRef(self._tape, i), g) for i, g in self._adjoints.items())

    def wrt(self, leaves: Sequence[NodeRef]) -> np.ndarray:
        """Gradient restricted to ``leaves``, in their order"""
        return np.array([self._adjoints[leaf.index] for leaf in leaves], dtype=np.float64)


class Tape:
    """
    Append-only record of scalar operations.

    Every node stores its op kind, operand indices, primal value and local
    partials. Operands always precede the node, so one reverse sweep over the
    list computes all adjoints. A tape serves a single loss evaluation and is
    rebuilt per minibatch.
    """

    def __init__(self):
        self._kinds: List[Optional[OpKind]] = []
        self._operands: List[Tuple[int, ...]] = []
        self._values: List[float] = []
        self._partials: List[Tuple[float, ...]] = []
        self._aux: List[Optional[float]] = []

    def __len__(self) -> int:
        return len(self._values)

    def _push(self, kind, operands, value, partials, aux=None) -> NodeRef:
        self._kinds.append(kind)
        self._operands.append(operands)
        self._values.append(value)
        self._partials.append(partials)
        self._aux.append(aux)
        return NodeRef(self, len(self._values) - 1)

    def _check(self, node: NodeRef) -> int:
        if node.tape is not self or not 0 <= node.index < len(self._values):
            raise ValueError(f"node {node.index} does not belong to this tape")
        return node.index

    def leaf(self, value: float) -> NodeRef:
        """Record an input node holding ``value`` (NaN propagates as IEEE says)"""
        return self._push(None, (), float(value), ())

    def leaves(self, values: Iterable[float]) -> List[NodeRef]:
        return [self.leaf(v) for v in values]

    def is_leaf(self, node: NodeRef) -> bool:
        return self._kinds[self._check(node)] is None

    def value(self, node: NodeRef) -> float:
        return self._values[self._check(node)]

    def apply(self, kind: OpKind, operands: Sequence[NodeRef], aux: Optional[float] = None) -> NodeRef:
        """
        Record ``kind`` applied to ``operands``.

        Args:
            kind: Operation to record
            operands: One node for unary ops; two nodes, or one node plus
                ``aux``, for binary ops
            aux: Constant right-hand operand of a binary op

        Returns:
            Reference to the new node

        Raises:
            DomainError: ln/sqrt of a non-positive value or division by zero
        """
        kind = OpKind(kind)
        indices = tuple(self._check(node) for node in operands)
        if kind in BINARY_KINDS:
            if len(indices) == 2 and aux is None:
                value, da, db = _evaluate_binary(kind, self._values[indices[0]], self._values[indices[1]])
                return self._push(kind, indices, value, (da, db))
            if len(indices) == 1 and aux is not None:
                value, da, _ = _evaluate_binary(kind, self._values[indices[0]], float(aux))
                return self._push(kind, indices, value, (da,), float(aux))
            raise ValueError(f"{kind.value} takes two operands or one operand and aux")
        if len(indices) != 1 or aux is not None:
            raise ValueError(f"{kind.value} takes exactly one operand")
        value, d = _evaluate_unary(kind, self._values[indices[0]])
        return self._push(kind, indices, value, (d,))

    def _binary(self, kind: OpKind, node: NodeRef, other) -> NodeRef:
        if isinstance(other, NodeRef):
            return self.apply(kind, [node, other])
        return self.apply(kind, [node], aux=float(other))

    def backward(self, root: NodeRef) -> GradientVector:
        """
        Single reverse sweep from ``root``.

        Args:
            root: Scalar output node

        Returns:
            GradientVector with an adjoint for every leaf recorded before the root
        """
        top = self._check(root)
        adjoints = [0.0] * (top + 1)
        adjoints[top] = 1.0
        operands = self._operands
        partials = self._partials
        for i in range(top, -1, -1):
            adj = adjoints[i]
            if adj == 0.0:
                continue
            for j, p in zip(operands[i], partials[i]):
                adjoints[j] += adj * p
        leaves = {i: adjoints[i] for i in range(top + 1) if self._kinds[i] is None}
        return GradientVector(self, leaves)

    def reevaluate(self) -> List[float]:
        """Recompute every primal from the leaves; must reproduce the stored values"""
        values: List[float] = []
        for kind, ops, aux, stored in zip(self._kinds, self._operands, self._aux, self._values):
            if kind is None:
                values.append(stored)
            elif kind in BINARY_KINDS:
                b = values[ops[1]] if aux is None else aux
                values.append(_evaluate_binary(kind, values[ops[0]], b)[0])
            else:
                values.append(_evaluate_unary(kind, values[ops[0]])[0])
        return values

    def clear(self):
        self.__init__()


def _unary(kind: OpKind, x: Scalar) -> Scalar:
    if isinstance(x, NodeRef):
        return x.tape.apply(kind, [x])
    return _evaluate_unary(kind, float(x))[0]


def ln(x: Scalar) -> Scalar:
    return _unary(OpKind.LN, x)


def exp(x: Scalar) -> Scalar:
    return _unary(OpKind.EXP, x)


def sin(x: Scalar) -> Scalar:
    return _unary(OpKind.SIN, x)


def cos(x: Scalar) -> Scalar:
    return _unary(OpKind.COS, x)


def sqrt(x: Scalar) -> Scalar:
    return _unary(OpKind.SQRT, x)


def tanh(x: Scalar) -> Scalar:
    return _unary(OpKind.TANH, x)


def softplus(x: Scalar) -> Scalar:
    return _unary(OpKind.SOFTPLUS, x)


def square(x: Scalar) -> Scalar:
    return _unary(OpKind.SQUARE, x)


def absolute(x: Scalar) -> Scalar:
    return _unary(OpKind.ABS, x)


def relu(x: Scalar) -> Scalar:
    return _unary(OpKind.RELU, x)


def value_of(x: Scalar) -> float:
    """Primal value of a node, or the number itself"""
    return x.value if isinstance(x, NodeRef) else float(x)


def sum_nodes(terms: Iterable[Scalar]) -> Scalar:
    """Left-to-right sum; stays a plain float when no term is a node"""
    total: Scalar = 0.0
    for term in terms:
        total = term + total if isinstance(term, NodeRef) else total + term
    return total
