"""Integer expression mini-language shared by models and queries.

Grammar (lowest to highest precedence)::

    expr    := or
    or      := and ('||' and)*
    and     := eq ('&&' eq)*
    eq      := rel (('==' | '!=') rel)*
    rel     := add (('<' | '<=' | '>' | '>=') add)*
    add     := mul (('+' | '-') mul)*
    mul     := unary (('*' | '/') unary)*
    unary   := ('-' | '!') unary | postfix
    postfix := atom ('[' expr ']' | '(' args ')' | '.' NAME)*
    atom    := INT | NUMBER | 'true' | 'false' | NAME | '(' expr ')'

Calls and member access only appear in queries (``Train(0).Cross``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union


class ExprError(ValueError):
    """Syntax error inside an expression string."""

    def __init__(self, message: str, text: str = "", column: int | None = None):
        self.text = text
        self.column = column
        where = f" at column {column}" if column is not None else ""
        super().__init__(f"{message}{where}: {text!r}" if text else message)


@dataclass(frozen=True)
class Lit:
    value: Union[int, bool, float]


@dataclass(frozen=True)
class Name:
    id: str


@dataclass(frozen=True)
class Index:
    base: "Expr"
    index: "Expr"


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Member:
    """``Inst(args).member`` or ``Inst.member`` (args is None without parens)."""

    instance: str
    args: tuple | None
    member: str


@dataclass(frozen=True)
class Param:
    """Site of an inline parameter placeholder; the name keys the parameter space."""

    name: str


Expr = Union[Lit, Name, Index, Unary, Binary, Member, Param]

COMPARISONS = ("<", "<=", ">", ">=", "==", "!=")
FLIP = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "==": "==", "!=": "!="}
NEGATE = {"<": ">=", "<=": ">", ">": "<=", ">=": "<", "==": "!=", "!=": "=="}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*|\.\d+|\d+)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>:=|<>|<=|>=|==|!=|&&|\|\||[-+*/<>!()\[\].,=]))"
)

_BINARY_LEVELS = [
    ("||",),
    ("&&",),
    ("==", "!="),
    ("<", "<=", ">", ">="),
    ("+", "-"),
    ("*", "/"),
]


def tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            col = pos + (len(text[pos:]) - len(text[pos:].lstrip())) + 1
            raise ExprError("unexpected character", text, col)
        kind = m.lastgroup
        value = m.group(kind)
        tokens.append((kind, value, m.start(kind) + 1))
        pos = m.end()
    tokens.append(("end", "", n + 1))
    return tokens


class Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.pos = 0

    @property
    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.pos]

    def at(self, *values: str) -> bool:
        kind, value, _ = self.peek
        return kind in ("op", "name") and value in values

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value: str) -> None:
        kind, got, col = self.take()
        if got != value or kind == "end":
            raise ExprError(f"expected {value!r}, found {got or 'end of input'!r}", self.text, col)

    def fail(self, message: str):
        raise ExprError(message, self.text, self.peek[2])

    def finish(self) -> None:
        if self.peek[0] != "end":
            self.fail(f"unexpected {self.peek[1]!r}")

    def expr(self, level: int = 0) -> Expr:
        if level == len(_BINARY_LEVELS):
            return self.unary()
        left = self.expr(level + 1)
        ops = _BINARY_LEVELS[level]
        while self.peek[0] == "op" and self.peek[1] in ops:
            op = self.take()[1]
            left = Binary(op, left, self.expr(level + 1))
        return left

    def unary(self) -> Expr:
        if self.peek[0] == "op" and self.peek[1] in ("-", "!"):
            op = self.take()[1]
            operand = self.unary()
            if op == "-" and isinstance(operand, Lit) and not isinstance(operand.value, bool):
                return Lit(-operand.value)
            return Unary(op, operand)
        return self.postfix()

    def postfix(self) -> Expr:
        node = self.atom()
        while True:
            if self.at("["):
                self.take()
                index = self.expr()
                self.expect("]")
                node = Index(node, index)
            elif self.at("(") and isinstance(node, Name):
                self.take()
                args = []
                if not self.at(")"):
                    args.append(self.expr())
                    while self.at(","):
                        self.take()
                        args.append(self.expr())
                self.expect(")")
                if not self.at("."):
                    self.fail("expected '.' after instance arguments")
                self.take()
                member = self.take()
                if member[0] != "name":
                    raise ExprError("expected member name", self.text, member[2])
                node = Member(node.id, tuple(args), member[1])
            elif self.at(".") and isinstance(node, Name):
                self.take()
                member = self.take()
                if member[0] != "name":
                    raise ExprError("expected member name", self.text, member[2])
                node = Member(node.id, None, member[1])
            else:
                return node

    def atom(self) -> Expr:
        kind, value, col = self.take()
        if kind == "num":
            return Lit(float(value)) if "." in value else Lit(int(value))
        if kind == "name":
            if value == "true":
                return Lit(True)
            if value == "false":
                return Lit(False)
            return Name(value)
        if kind == "op" and value == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        raise ExprError(f"unexpected {value or 'end of input'!r}", self.text, col)


def parse_expr(text: str) -> Expr:
    if not isinstance(text, str):
        raise ExprError(f"expression must be a string, got {type(text).__name__}")
    p = Parser(text)
    node = p.expr()
    p.finish()
    return node


def parse_assignment(text: str) -> tuple[Expr, Expr]:
    """Parse ``lhs := rhs`` (``=`` accepted as well)."""
    p = Parser(text)
    lhs = p.postfix()
    if not isinstance(lhs, (Name, Index)):
        p.fail("left-hand side must be a variable")
    if not p.at(":=", "="):
        p.fail("expected ':='")
    p.take()
    rhs = p.expr()
    p.finish()
    return lhs, rhs


_PREC = {op: i for i, ops in enumerate(_BINARY_LEVELS) for op in ops}


def unparse(node: Expr, parent: int = -1) -> str:
    """Inverse of :func:`parse_expr` up to redundant parentheses."""
    if isinstance(node, Lit):
        if isinstance(node.value, bool):
            return "true" if node.value else "false"
        if node.value < 0:
            return f"({node.value})" if parent >= 0 else str(node.value)
        return repr(node.value)
    if isinstance(node, Name):
        return node.id
    if isinstance(node, Param):
        raise TypeError("placeholders are serialized by the model writer")
    if isinstance(node, Index):
        return f"{unparse(node.base, 99)}[{unparse(node.index)}]"
    if isinstance(node, Member):
        if node.args is None:
            return f"{node.instance}.{node.member}"
        args = ", ".join(unparse(a) for a in node.args)
        return f"{node.instance}({args}).{node.member}"
    if isinstance(node, Unary):
        s = f"{node.op}{unparse(node.operand, 98)}"
        return f"({s})" if parent >= 98 else s
    if isinstance(node, Binary):
        prec = _PREC[node.op]
        s = f"{unparse(node.left, prec)} {node.op} {unparse(node.right, prec + 1)}"
        return f"({s})" if prec < parent else s
    raise TypeError(f"not an expression: {node!r}")


def names(node: Expr) -> set[str]:
    """Bare identifiers referenced by an expression."""
    out: set[str] = set()
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Name):
            out.add(n.id)
        elif isinstance(n, Index):
            stack += [n.base, n.index]
        elif isinstance(n, Unary):
            stack.append(n.operand)
        elif isinstance(n, Binary):
            stack += [n.left, n.right]
        elif isinstance(n, Member) and n.args:
            stack += list(n.args)
    return out


def c_div(a: int, b: int) -> int:
    """Integer division truncating toward zero; traps on a zero divisor."""
    if b == 0:
        raise ZeroDivisionError("integer division by zero")
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def apply_binary(op: str, a, b):
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return c_div(a, b)
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    if op == "==":
        return a == b
    if op == "!=":
        return a != b
    if op == "&&":
        return bool(a) and bool(b)
    if op == "||":
        return bool(a) or bool(b)
    raise ValueError(f"unknown operator {op!r}")


def apply_unary(op: str, a):
    if op == "-":
        return -a
    if op == "!":
        return not a
    raise ValueError(f"unknown operator {op!r}")
