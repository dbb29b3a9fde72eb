"""A small navigation and predicate language over model elements.

Grammar (EBNF)::

    expr       = or_expr ;
    or_expr    = and_expr , { "or" , and_expr } ;
    and_expr   = not_expr , { "and" , not_expr } ;
    not_expr   = "not" , not_expr | comparison ;
    comparison = operand , [ cmp_op , operand ] ;
    cmp_op     = "=" | "==" | "!=" | "<>" | "≠" | "<" | "<=" | "≤" | ">" | ">=" | "≥" ;
    operand    = [ "-" ] , primary ;
    primary    = number | string | "true" | "false" | "null"
               | aggregate , "(" , expr , ")"
               | path | "(" , expr , ")" ;
    aggregate  = "count" | "sum" | "min" | "max" ;
    path       = ident , { "." , ident | "[" , integer , "]" } ;

Navigating ``a.b`` over a list maps ``b`` over its items and flattens the
result. A missing segment yields ``NULL``; ``NULL`` is falsy and every
comparison involving it is false.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from datetime import datetime
from functools import lru_cache
from typing import Any, Union

from pydantic import BaseModel


class ParseError(ValueError):
    def __init__(self, message: str, source: str = "", pos: int = 0):
        self.source = source
        self.pos = pos
        super().__init__(f"{message} at offset {pos} in {source!r}" if source else message)


class TypeMismatch(TypeError):
    pass


class _Null:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __bool__(self) -> bool:
        return False

    def __repr__(self) -> str:
        return "NULL"


NULL = _Null()


@dataclass(frozen=True)
class Literal:
    value: Any


@dataclass(frozen=True)
class Path:
    segments: tuple[Union[str, int], ...]


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Node"


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class Compare:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class BoolOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Not:
    operand: "Node"


Node = Union[Literal, Path, Call, Neg, Compare, BoolOp, Not]

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)
  | (?P<str>"(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*')
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|!=|==|<>|[=<>≤≥≠().\[\],-])
    """,
    re.VERBOSE,
)

_CMP = {"=": "=", "==": "=", "!=": "!=", "<>": "!=", "≠": "!=", "<": "<", "<=": "<=",
        "≤": "<=", ">": ">", ">=": ">=", "≥": ">="}
AGGREGATES = ("count", "sum", "min", "max")
_KEYWORDS = {"and", "or", "not", "true", "false", "null"}


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    out, pos = [], 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise ParseError(f"unexpected character {src[pos]!r}", src, pos)
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), pos))
        pos = m.end()
    out.append(("end", "", len(src)))
    return out


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.toks[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> None:
        kind, val, pos = self.take()
        if val != text:
            raise ParseError(f"expected {text!r}, found {val or 'end of input'!r}", self.src, pos)

    def is_kw(self, word: str) -> bool:
        kind, val, _ = self.peek()
        return kind == "ident" and val == word

    def parse(self) -> Node:
        node = self.or_expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {val!r}", self.src, pos)
        return node

    def or_expr(self) -> Node:
        node = self.and_expr()
        while self.is_kw("or"):
            self.take()
            node = BoolOp("or", node, self.and_expr())
        return node

    def and_expr(self) -> Node:
        node = self.not_expr()
        while self.is_kw("and"):
            self.take()
            node = BoolOp("and", node, self.not_expr())
        return node

    def not_expr(self) -> Node:
        if self.is_kw("not"):
            self.take()
            return Not(self.not_expr())
        return self.comparison()

    def comparison(self) -> Node:
        left = self.operand()
        kind, val, _ = self.peek()
        if kind == "op" and val in _CMP:
            self.take()
            return Compare(_CMP[val], left, self.operand())
        return left

    def operand(self) -> Node:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Neg(self.primary())
        return self.primary()

    def primary(self) -> Node:
        kind, val, pos = self.take()
        if kind == "num":
            return Literal(float(val) if any(c in val for c in ".eE") else int(val))
        if kind == "str":
            return Literal(re.sub(r"\\(.)", r"\1", val[1:-1]))
        if kind == "op" and val == "(":
            node = self.or_expr()
            self.expect(")")
            return node
        if kind == "ident":
            if val == "true":
                return Literal(True)
            if val == "false":
                return Literal(False)
            if val == "null":
                return Literal(NULL)
            if val in AGGREGATES and self.peek()[1] == "(":
                self.take()
                arg = self.or_expr()
                self.expect(")")
                return Call(val, arg)
            if val in _KEYWORDS:
                raise ParseError(f"unexpected keyword {val!r}", self.src, pos)
            return self.path(val)
        raise ParseError(f"unexpected {val or 'end of input'!r}", self.src, pos)

    def path(self, first: str) -> Path:
        segs: list[Union[str, int]] = [first]
        while True:
            kind, val, pos = self.peek()
            if kind == "op" and val == ".":
                self.take()
                kind, val, pos = self.take()
                if kind != "ident":
                    raise ParseError("expected a name after '.'", self.src, pos)
                segs.append(val)
            elif kind == "op" and val == "[":
                self.take()
                kind, val, pos = self.take()
                if kind != "num" or not val.isdigit():
                    raise ParseError("expected an integer index", self.src, pos)
                segs.append(int(val))
                self.expect("]")
            else:
                return Path(tuple(segs))


@lru_cache(maxsize=1024)
def parse(source: str) -> Node:
    return _Parser(source).parse()


# -- evaluation ---------------------------------------------------------------

def _field_name(model: BaseModel, segment: str) -> str | None:
    fields = type(model).model_fields
    if segment in fields:
        return segment
    for name, info in fields.items():
        if info.alias == segment:
            return name
    return None


def _get(value: Any, segment: str) -> Any:
    if isinstance(value, BaseModel):
        name = _field_name(value, segment)
        return NULL if name is None else _plain(getattr(value, name))
    if isinstance(value, dict):
        return _plain(value[segment]) if segment in value else NULL
    return NULL


def _plain(value: Any) -> Any:
    if value is None:
        return NULL
    if isinstance(value, tuple):
        return list(value)
    return value


def _navigate(value: Any, segment: Union[str, int]) -> Any:
    if value is NULL:
        return NULL
    if isinstance(segment, int):
        if isinstance(value, list) and 0 <= segment < len(value):
            return _plain(value[segment])
        return NULL
    if isinstance(value, list):
        out = []
        for item in value:
            r = _navigate(item, segment)
            if r is NULL:
                continue
            if isinstance(r, list):
                out.extend(r)
            else:
                out.append(r)
        return out
    return _get(value, segment)


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _items(v: Any) -> list:
    if v is NULL:
        return []
    return v if isinstance(v, list) else [v]


def _aggregate(fn: str, value: Any) -> Any:
    items = _items(value)
    if fn == "count":
        return len(items)
    if not all(_is_number(x) for x in items):
        raise TypeMismatch(f"{fn}() over non-numeric values")
    if fn == "sum":
        return math.fsum(items) if any(isinstance(x, float) for x in items) else sum(items)
    if not items:
        return NULL
    return min(items) if fn == "min" else max(items)


def _compare(op: str, a: Any, b: Any) -> bool:
    if a is NULL or b is NULL:
        return False
    if op in ("=", "!="):
        if _is_number(a) and _is_number(b):
            eq = a == b
        elif type(a) is type(b) or (isinstance(a, datetime) and isinstance(b, datetime)):
            eq = a == b
        else:
            eq = False
        return eq if op == "=" else not eq
    ordered = (_is_number(a) and _is_number(b)) or (isinstance(a, str) and isinstance(b, str)) or (
        isinstance(a, datetime) and isinstance(b, datetime))
    if not ordered:
        raise TypeMismatch(f"cannot order {type(a).__name__} and {type(b).__name__}")
    return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[op]


def _eval(node: Node, root: Any) -> Any:
    if isinstance(node, Literal):
        return node.value
    if isinstance(node, Path):
        value = _plain(root)
        for seg in node.segments:
            value = _navigate(value, seg)
        return value
    if isinstance(node, Call):
        return _aggregate(node.fn, _eval(node.arg, root))
    if isinstance(node, Neg):
        v = _eval(node.operand, root)
        if v is NULL:
            return NULL
        if not _is_number(v):
            raise TypeMismatch("unary minus on a non-number")
        return -v
    if isinstance(node, Compare):
        return _compare(node.op, _eval(node.left, root), _eval(node.right, root))
    if isinstance(node, BoolOp):
        left = bool(_eval(node.left, root))
        if node.op == "and":
            return left and bool(_eval(node.right, root))
        return left or bool(_eval(node.right, root))
    if isinstance(node, Not):
        return not bool(_eval(node.operand, root))
    raise TypeError(f"unknown node {node!r}")


def eval_query(expr: str | Node, root: Any) -> Any:
    """Evaluate ``expr`` against a model element or a plain JSON-like document.

    Returns a scalar, a boolean, a list, or ``NULL``.
    """
    node = parse(expr) if isinstance(expr, str) else node_or_raise(expr)
    return _eval(node, root)


def node_or_raise(node: Any) -> Node:
    if not isinstance(node, (Literal, Path, Call, Neg, Compare, BoolOp, Not)):
        raise TypeError(f"not a query node: {node!r}")
    return node
