"""Small expression language for building multi-qubit operators.

Expressions are weighted sums of tensor products of the named single-qubit
operators ``I, X, Y, Z, SP, SM`` (``SP``/``SM`` are the raising/lowering
operators ``(X + iY)/2`` and ``(X - iY)/2``). The tensor product is written
``@`` (the unicode sign is also accepted), scalar weights use ``*``, and the
constants ``i`` (imaginary unit) and ``pi`` are available, e.g.::

    "2*pi*0.01 * Z@Z"        two-qubit ZZ coupling, 2*pi*10 MHz in rad/ns
    "(SP+SM)@I"              X drive on qubit 1
    "i*(SP-SM)@I"            -Y drive on qubit 1

Qubit order in the result follows the expression left to right.
"""

from __future__ import annotations

import ast
import math

import numpy as np

SINGLE_QUBIT_OPS = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "SP": np.array([[0, 1], [0, 0]], dtype=complex),
    "SM": np.array([[0, 0], [1, 0]], dtype=complex),
}

_SCALARS = {"i": 1j, "j": 1j, "pi": math.pi}


class OperatorExprError(ValueError):
    """Raised for syntax errors or ill-typed operator expressions."""


def _eval_node(node):
    if isinstance(node, ast.Expression):
        return _eval_node(node.body)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, (int, float, complex)):
            return complex(node.value)
        raise OperatorExprError(f"unsupported literal {node.value!r}")
    if isinstance(node, ast.Name):
        if node.id in SINGLE_QUBIT_OPS:
            return SINGLE_QUBIT_OPS[node.id].copy()
        if node.id in _SCALARS:
            return complex(_SCALARS[node.id])
        raise OperatorExprError(
            f"unknown operator name {node.id!r} (expected one of "
            f"{sorted(SINGLE_QUBIT_OPS)} or {sorted(_SCALARS)})"
        )
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        val = _eval_node(node.operand)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.BinOp):
        left = _eval_node(node.left)
        right = _eval_node(node.right)
        return _apply_binop(node.op, left, right)
    raise OperatorExprError(f"unsupported syntax element {ast.dump(node)}")


def _is_matrix(v) -> bool:
    return isinstance(v, np.ndarray)


def _apply_binop(op, left, right):
    if isinstance(op, ast.MatMult):
        if not (_is_matrix(left) and _is_matrix(right)):
            raise OperatorExprError("@ is the tensor product and needs operators on both sides")
        return np.kron(left, right)
    if isinstance(op, ast.Mult):
        if _is_matrix(left) and _is_matrix(right):
            raise OperatorExprError("* multiplies by scalars; use @ for tensor products")
        return left * right
    if isinstance(op, ast.Div):
        if _is_matrix(right):
            raise OperatorExprError("cannot divide by an operator")
        return left / right
    if isinstance(op, (ast.Add, ast.Sub)):
        if _is_matrix(left) != _is_matrix(right):
            raise OperatorExprError("cannot add a scalar to an operator")
        if _is_matrix(left) and left.shape != right.shape:
            raise OperatorExprError(
                f"inconsistent qubit counts across terms: {left.shape[0]} vs {right.shape[0]} dims"
            )
        return left + right if isinstance(op, ast.Add) else left - right
    raise OperatorExprError(f"unsupported operator {type(op).__name__}")


def build_operator(expr: str, hermitize: bool = False) -> np.ndarray:
    """Evaluate an operator expression to a dense complex matrix.

    Parameters
    ----------
    expr : str
        Expression in the grammar described in the module docstring.
    hermitize : bool
        If true, return ``(A + A^dag)/2`` instead of ``A``.

    Raises
    ------
    OperatorExprError
        On unknown names, scalar/operator type errors, or mismatched
        qubit counts between summed terms.
    """
    text = expr.replace("⊗", "@").replace("−", "-")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise OperatorExprError(f"cannot parse operator expression {expr!r}: {exc}") from exc
    value = _eval_node(tree)
    if not _is_matrix(value):
        raise OperatorExprError(f"expression {expr!r} evaluates to a scalar, not an operator")
    if hermitize:
        value = 0.5 * (value + value.conj().T)
    return value


_CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)
_CZ = np.diag([1, 1, 1, -1]).astype(complex)

NAMED_GATES = {
    "cnot": _CNOT,
    "cz": _CZ,
    "identity2": np.eye(2, dtype=complex),
    "identity4": np.eye(4, dtype=complex),
}


def named_gate(name: str, phase: float = 0.0) -> np.ndarray:
    """A standard gate by name, multiplied by the global phase ``exp(i*phase)``.

    The phase matters when the error metric is not phase-invariant: e.g. the
    raw CNOT has determinant -1 and cannot be reached exactly by traceless
    Hamiltonians, while ``exp(i*pi/4)*CNOT`` lies in SU(4).
    """
    key = name.lower()
    if key not in NAMED_GATES:
        raise ValueError(f"unknown gate {name!r}; known: {sorted(NAMED_GATES)}")
    return np.exp(1j * phase) * NAMED_GATES[key]
