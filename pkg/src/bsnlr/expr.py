"""Tokenizer, Pratt parser and printer for mean-function expressions.

Grammar: numbers, identifiers, binary ``+ - * / ^`` with the usual
precedence (``^`` binds tightest and is right-associative), unary minus,
parentheses and the one-argument functions in ``FUNCTIONS``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Union

FUNCTIONS = ("exp", "log", "sqrt", "sinh", "cosh", "tanh")


class ModelError(ValueError):
    """Base class for problems with a model expression."""


class ModelSyntaxError(ModelError):
    def __init__(self, message: str, pos: int, text: str = ""):
        self.pos = pos
        self.text = text
        where = f" at position {pos}"
        if text:
            where += f"\n  {text}\n  {' ' * pos}^"
        super().__init__(message + where)


class UnknownIdentifierError(ModelError):
    def __init__(self, name: str, pos: int):
        self.name = name
        self.pos = pos
        super().__init__(f"unknown identifier {name!r} at position {pos}")


class ArityError(ModelError):
    pass


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Name:
    id: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Name, Neg, BinOp, Call]


@dataclass(frozen=True)
class Token:
    kind: str  # "num", "name", "op", "end"
    text: str
    pos: int


_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),])"
    r")"
)


def tokenize(text: str) -> Iterator[Token]:
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            yield Token("end", "", pos)
            return
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.lastgroup is None:
            raise ModelSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        start = m.start(m.lastgroup)
        yield Token(m.lastgroup, m.group(m.lastgroup), start)
        pos = m.end()


# left binding powers
_INFIX = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_PREFIX_MINUS = 30


class _Parser:
    def __init__(self, text: str, names: dict[str, str]):
        self.text = text
        self.names = names
        self.tokens = list(tokenize(text))
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> Token:
        if self.tok.text != text:
            found = self.tok.text or "end of input"
            raise ModelSyntaxError(f"expected {text!r}, found {found!r}", self.tok.pos, self.text)
        return self.advance()

    def parse(self) -> Node:
        if self.tok.kind == "end":
            raise ModelSyntaxError("empty expression", 0, self.text)
        node = self.expression(0)
        if self.tok.kind != "end":
            raise ModelSyntaxError(f"unexpected token {self.tok.text!r}", self.tok.pos, self.text)
        return node

    def expression(self, rbp: int) -> Node:
        left = self.nud(self.advance())
        while self.tok.kind == "op" and _INFIX.get(self.tok.text, -1) > rbp:
            op = self.advance().text
            lbp = _INFIX[op]
            right = self.expression(lbp - 1 if op == "^" else lbp)
            left = BinOp(op, left, right)
        return left

    def nud(self, tok: Token) -> Node:
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "name":
            if tok.text in FUNCTIONS:
                return self.call(tok)
            if self.tok.text == "(":
                raise ModelSyntaxError(f"unknown function {tok.text!r}", tok.pos, self.text)
            if tok.text not in self.names:
                raise UnknownIdentifierError(tok.text, tok.pos)
            return Name(tok.text)
        if tok.text == "-":
            return Neg(self.expression(_PREFIX_MINUS))
        if tok.text == "+":
            return self.expression(_PREFIX_MINUS)
        if tok.text == "(":
            node = self.expression(0)
            self.expect(")")
            return node
        found = tok.text or "end of input"
        raise ModelSyntaxError(f"unexpected {found!r}", tok.pos, self.text)

    def call(self, tok: Token) -> Node:
        self.expect("(")
        if self.tok.text == ")":
            raise ArityError(f"{tok.text}() takes exactly one argument, got 0 (position {tok.pos})")
        arg = self.expression(0)
        nargs = 1
        while self.tok.text == ",":
            self.advance()
            self.expression(0)
            nargs += 1
        if nargs != 1:
            raise ArityError(f"{tok.text}() takes exactly one argument, got {nargs} (position {tok.pos})")
        self.expect(")")
        return Call(tok.text, arg)


def parse(text: str, params, covariates) -> Node:
    """Parse ``text`` resolving identifiers against ``params`` and ``covariates``."""
    names: dict[str, str] = {}
    for kind, group in (("param", params), ("covariate", covariates)):
        for name in group:
            if name in FUNCTIONS:
                raise ModelError(f"{name!r} is a reserved function name")
            if name in names:
                raise ModelError(f"{name!r} declared more than once")
            names[name] = kind
    return _Parser(text, names).parse()


def to_text(node: Node) -> str:
    """Fully parenthesised text; ``parse(to_text(a)) == a`` structurally."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Name):
        return node.id
    if isinstance(node, Neg):
        return f"(-{to_text(node.operand)})"
    if isinstance(node, Call):
        return f"{node.func}({to_text(node.arg)})"
    return f"({to_text(node.left)} {node.op} {to_text(node.right)})"


def identifiers(node: Node) -> set[str]:
    if isinstance(node, Name):
        return {node.id}
    if isinstance(node, Num):
        return set()
    if isinstance(node, (Neg, Call)):
        return identifiers(node.operand if isinstance(node, Neg) else node.arg)
    return identifiers(node.left) | identifiers(node.right)


def is_affine(node: Node, params) -> bool:
    """Structural test: is the expression affine in every parameter?"""
    return _degree(node, frozenset(params)) <= 1


def _degree(node: Node, params: frozenset) -> int:
    # 0 constant in the parameters, 1 affine, 2 anything nonlinear
    if isinstance(node, Num):
        return 0
    if isinstance(node, Name):
        return 1 if node.id in params else 0
    if isinstance(node, Neg):
        return _degree(node.operand, params)
    if isinstance(node, Call):
        return 0 if _degree(node.arg, params) == 0 else 2
    a, b = _degree(node.left, params), _degree(node.right, params)
    if node.op in "+-":
        return max(a, b)
    if node.op == "*":
        return min(a + b, 2)
    if node.op == "/":
        return a if b == 0 else 2
    return 0 if a == b == 0 else 2
