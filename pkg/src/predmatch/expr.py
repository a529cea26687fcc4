"""A small arithmetic grammar for user log-priors.

EBNF::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = [ "+" | "-" ] power ;
    power   = atom [ ("^" | "**") unary ] ;
    atom    = number | "theta" digit { digit } | "pi"
            | func "(" expr ")" | "pow" "(" expr "," expr ")" | "(" expr ")" ;
    func    = "log" | "exp" | "sqrt" ;

The expression is the log prior lambda(theta) up to an additive constant,
e.g. ``-log(theta2)`` for the right Haar prior of a location-scale model.
Parsing uses Python's ``ast`` with a whitelist of node types, so nothing
outside the grammar can be evaluated.
"""

from __future__ import annotations

import ast
import re

import numpy as np

from .errors import ConfigError
from .family import PriorField
from .numerics import DEFAULT_CONFIG, NumericsConfig

_FUNCS = {"log": np.log, "exp": np.exp, "sqrt": np.sqrt}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power}
_THETA = re.compile(r"theta([1-9][0-9]*)\Z")


class PriorExpression:
    """Compiled log-prior expression over theta1..thetap."""

    def __init__(self, text: str, p: int | None = None, line: int | None = None, column: int = 0):
        self.text = text
        self._line = line
        self._col0 = column
        src = text.replace("^", "**")
        try:
            tree = ast.parse(src, mode="eval")
        except SyntaxError as exc:
            raise self._error(f"syntax error in prior expression {text!r}", exc.offset or 1) from None
        self.indices = set()
        self._tree = tree.body
        self._check(self._tree)
        self.max_index = max(self.indices) if self.indices else 0
        if p is not None and self.max_index > p:
            raise self._error(f"prior expression uses theta{self.max_index} but the family has {p} parameters", 1)

    def _error(self, msg, col):
        if self._line is None:
            return ConfigError(f"{msg} (column {col})")
        return ConfigError(msg, self._line, self._col0 + col)

    def _check(self, node):
        col = getattr(node, "col_offset", 0) + 1
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise self._error(f"operator {type(node.op).__name__} not allowed", col)
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise self._error("only unary + and - are allowed", col)
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.keywords:
                raise self._error("only log, exp, sqrt and pow calls are allowed", col)
            name = node.func.id
            nargs = 2 if name == "pow" else 1
            if name not in _FUNCS and name != "pow":
                raise self._error(f"unknown function {name!r}", col)
            if len(node.args) != nargs:
                raise self._error(f"{name} takes {nargs} argument(s)", col)
            for a in node.args:
                self._check(a)
        elif isinstance(node, ast.Name):
            m = _THETA.match(node.id)
            if m:
                self.indices.add(int(m.group(1)))
            elif node.id != "pi":
                raise self._error(f"unknown name {node.id!r} (use theta1, theta2, ... or pi)", col)
        elif isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise self._error("only numeric constants are allowed", col)
        else:
            raise self._error(f"{type(node).__name__} not allowed in a prior expression", col)

    def _eval(self, node, th):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, th), self._eval(node.right, th))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, th)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call):
            args = [self._eval(a, th) for a in node.args]
            if node.func.id == "pow":
                return np.power(args[0], args[1])
            return _FUNCS[node.func.id](args[0])
        if isinstance(node, ast.Name):
            if node.id == "pi":
                return np.pi
            return th[..., int(node.id[5:]) - 1]
        return float(node.value)

    def __call__(self, theta):
        th = np.asarray(theta, dtype=float)
        with np.errstate(all="ignore"):
            v = self._eval(self._tree, th)
        return np.broadcast_to(np.asarray(v, dtype=float), th.shape[:-1]).copy() if th.ndim > 1 else float(v)

    def __repr__(self):
        return f"PriorExpression({self.text!r})"


def prior_from_expression(text: str, p: int | None = None, name: str | None = None,
                          cfg: NumericsConfig = DEFAULT_CONFIG, line: int | None = None,
                          column: int = 0) -> PriorField:
    """PriorField for a log-prior expression, with a finite-difference gradient."""
    expr = PriorExpression(text, p, line, column)
    return PriorField.from_log_prior(name or text, expr, cfg)
