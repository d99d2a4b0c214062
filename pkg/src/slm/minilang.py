"""Recursive-descent parser and canonical printer for a small Java-like language.

Grammar::

    unit     ::= method*
    method   ::= "fn" NAME "(" [NAME ("," NAME)*] ")" block
    block    ::= "{" stmt* "}"
    stmt     ::= "var" NAME "=" expr ";"
               | "if" "(" expr ")" block ["else" (block | if-stmt)]
               | "for" "(" simple ";" expr ";" simple ")" block
               | "while" "(" expr ")" block
               | "return" [expr] ";"
               | simple ";"
    simple   ::= "var" NAME "=" expr | expr ["=" expr]
    expr     ::= or ["?" expr ":" expr]
    or       ::= and ("||" and)*
    and      ::= cmp ("&&" cmp)*
    cmp      ::= add ((">" | "<" | ">=" | "<=" | "==" | "!=") add)*
    add      ::= mul (("+" | "-") mul)*
    mul      ::= unary (("*" | "/") unary)*
    unary    ::= ("!" | "-") unary | postfix
    postfix  ::= primary ("." NAME | "(" [expr ("," expr)*] ")" | "[" expr "]")*
    primary  ::= NAME | INT | STR | "(" expr ")" | "/*HOLE*/"
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .ast_core import HOLE, AstNode, EOS_NODE, EOS_TOK, SUBTOKEN

KEYWORDS = frozenset(("fn", "var", "if", "else", "for", "while", "return"))

BINARY_OPS = {
    "||": "Or", "&&": "And",
    ">": "Greater", "<": "Less", ">=": "GreaterEq", "<=": "LessEq",
    "==": "Equals", "!=": "NotEquals",
    "+": "Plus", "-": "Minus", "*": "Times", "/": "Divide",
}
OP_TEXT = {v: k for k, v in BINARY_OPS.items()}
_LEVELS = (("||",), ("&&",), (">", "<", ">=", "<=", "==", "!="), ("+", "-"), ("*", "/"))

PRECEDENCE = {"Ternary": 1, "Or": 2, "And": 3, "Not": 7, "Neg": 7,
              "Call": 8, "FieldAccess": 8, "Index": 8}
for _k in ("Greater", "Less", "GreaterEq", "LessEq", "Equals", "NotEquals"):
    PRECEDENCE[_k] = 4
PRECEDENCE.update(Plus=5, Minus=5, Times=6, Divide=6)

HOLE_MARKER = "/*HOLE*/"

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<hole>/\*HOLE\*/)
  | (?P<comment>//[^\n]*|/\*.*?\*/)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<int>[0-9]+)
  | (?P<str>"[^"\n]*")
  | (?P<op>==|!=|>=|<=|&&|\|\||[-+*/<>=!?:.,;()\[\]{}])
""", re.VERBOSE | re.DOTALL)


class ParseError(SyntaxError):
    """Syntax error carrying ``line``, ``col`` and the expected-token set."""

    def __init__(self, msg: str, line: int, col: int, expected=()):
        self.line, self.col = line, col
        self.expected = frozenset(expected)
        exp = f" (expected one of: {', '.join(sorted(self.expected))})" if self.expected else ""
        super().__init__(f"{line}:{col}: {msg}{exp}")


class PrintError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    kind: str  # name | kw | int | str | op | hole | eof
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    out = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        tok = m.group()
        col = pos - line_start + 1
        if kind == "name" and tok in KEYWORDS:
            kind = "kw"
        if kind not in ("ws", "comment"):
            out.append(Token(kind, tok, line, col))
        nl = tok.count("\n")
        if nl:
            line += nl
            line_start = pos + tok.rfind("\n") + 1
        pos = m.end()
    out.append(Token("eof", "", line, pos - line_start + 1))
    return out


@dataclass
class SourceUnit:
    text: str
    methods: list[AstNode]
    line_spans: list[tuple[int, int]]


class _Parser:
    def __init__(self, text: str, allow_hole: bool = False):
        self.toks = tokenize(text)
        self.i = 0
        self.allow_hole = allow_hole

    @property
    def cur(self) -> Token:
        return self.toks[self.i]

    def at(self, *texts: str) -> bool:
        t = self.cur
        return t.kind in ("op", "kw") and t.text in texts

    def fail(self, expected):
        t = self.cur
        what = "end of input" if t.kind == "eof" else repr(t.text)
        raise ParseError(f"unexpected {what}", t.line, t.col, expected)

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail([text])
        t = self.cur
        self.i += 1
        return t

    def name(self) -> AstNode:
        if self.cur.kind != "name":
            self.fail(["NAME"])
        t = self.cur
        self.i += 1
        return AstNode("NAME", t.text)

    # -- declarations / statements

    def unit(self) -> tuple[list[AstNode], list[tuple[int, int]]]:
        methods, spans = [], []
        while self.cur.kind != "eof":
            start = self.cur.line
            methods.append(self.method())
            spans.append((start, self.toks[self.i - 1].line))
        return methods, spans

    def method(self) -> AstNode:
        self.expect("fn")
        kids = [self.name()]
        self.expect("(")
        if not self.at(")"):
            kids.append(AstNode("Param", None, (self.name(),)))
            while self.at(","):
                self.i += 1
                kids.append(AstNode("Param", None, (self.name(),)))
        self.expect(")")
        kids.append(self.block())
        return AstNode("Method", None, tuple(kids))

    def block(self) -> AstNode:
        self.expect("{")
        stmts = []
        while not self.at("}"):
            if self.cur.kind == "eof":
                self.fail(["}"])
            stmts.append(self.statement())
        self.i += 1
        return AstNode("Block", None, tuple(stmts))

    def statement(self) -> AstNode:
        if self.at("if"):
            return self.if_stmt()
        if self.at("while"):
            self.i += 1
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            return AstNode("While", None, (cond, self.block()))
        if self.at("for"):
            self.i += 1
            self.expect("(")
            init = self.simple()
            self.expect(";")
            cond = self.expr()
            self.expect(";")
            update = self.simple()
            self.expect(")")
            return AstNode("For", None, (init, cond, update, self.block()))
        if self.at("return"):
            self.i += 1
            if self.at(";"):
                self.i += 1
                return AstNode("Return")
            e = self.expr()
            self.expect(";")
            return AstNode("Return", None, (e,))
        s = self.simple()
        self.expect(";")
        return s

    def if_stmt(self) -> AstNode:
        self.expect("if")
        self.expect("(")
        cond = self.expr()
        self.expect(")")
        kids = [cond, self.block()]
        if self.at("else"):
            self.i += 1
            kids.append(self.if_stmt() if self.at("if") else self.block())
        return AstNode("If", None, tuple(kids))

    def simple(self) -> AstNode:
        if self.at("var"):
            self.i += 1
            n = self.name()
            self.expect("=")
            return AstNode("VarDecl", None, (n, self.expr()))
        e = self.expr()
        if self.at("="):
            self.i += 1
            return AstNode("Assign", None, (e, self.expr()))
        return AstNode("ExprStmt", None, (e,))

    # -- expressions

    def expr(self) -> AstNode:
        cond = self.binary(0)
        if self.at("?"):
            self.i += 1
            a = self.expr()
            self.expect(":")
            b = self.expr()
            return AstNode("Ternary", None, (cond, a, b))
        return cond

    def binary(self, level: int) -> AstNode:
        if level == len(_LEVELS):
            return self.unary()
        left = self.binary(level + 1)
        while self.at(*_LEVELS[level]):
            op = self.cur.text
            self.i += 1
            right = self.binary(level + 1)
            left = AstNode(BINARY_OPS[op], None, (left, right))
        return left

    def unary(self) -> AstNode:
        if self.at("!"):
            self.i += 1
            return AstNode("Not", None, (self.unary(),))
        if self.at("-"):
            self.i += 1
            return AstNode("Neg", None, (self.unary(),))
        return self.postfix()

    def postfix(self) -> AstNode:
        e = self.primary()
        while True:
            if self.at("."):
                self.i += 1
                e = AstNode("FieldAccess", None, (e, self.name()))
            elif self.at("("):
                self.i += 1
                args = []
                if not self.at(")"):
                    args.append(self.expr())
                    while self.at(","):
                        self.i += 1
                        args.append(self.expr())
                self.expect(")")
                e = AstNode("Call", None, (e, AstNode("ArgList", None, tuple(args))))
            elif self.at("["):
                self.i += 1
                idx = self.expr()
                self.expect("]")
                e = AstNode("Index", None, (e, idx))
            else:
                return e

    def primary(self) -> AstNode:
        t = self.cur
        if t.kind == "name":
            self.i += 1
            return AstNode("NAME", t.text)
        if t.kind == "int":
            self.i += 1
            return AstNode("INT", t.text)
        if t.kind == "str":
            self.i += 1
            return AstNode("STR", t.text[1:-1])
        if t.kind == "hole" and self.allow_hole:
            self.i += 1
            return AstNode(HOLE)
        if self.at("("):
            self.i += 1
            e = self.expr()
            self.expect(")")
            return e
        self.fail(["NAME", "INT", "STR", "(", "!", "-"])


def parse(text: str, allow_hole: bool = False) -> SourceUnit:
    p = _Parser(text, allow_hole)
    methods, spans = p.unit()
    return SourceUnit(text, methods, spans)


def parse_method(text: str, allow_hole: bool = False) -> AstNode:
    p = _Parser(text, allow_hole)
    m = p.method()
    if p.cur.kind != "eof":
        p.fail(["end of input"])
    return m


def parse_expression(text: str, allow_hole: bool = False) -> AstNode:
    p = _Parser(text, allow_hole)
    e = p.expr()
    if p.cur.kind != "eof":
        p.fail(["end of input"])
    return e


# ---------------------------------------------------------------------------
# printing

_INDENT = "  "


def _name_text(n: AstNode) -> str:
    if n.kind != "NAME" or not n.value or n.children:
        raise PrintError(f"expected a NAME leaf, got {n.kind}")
    return n.value


def print_expr(n: AstNode, min_prec: int = 0) -> str:
    k = n.kind
    kids = n.children
    if k in (HOLE,):
        raise PrintError("tree contains a HOLE")
    if k in (EOS_NODE, EOS_TOK, SUBTOKEN):
        raise PrintError(f"tree contains {k}; strip EOS nodes first")
    if k == "NAME":
        return _name_text(n)
    if k == "INT":
        if not n.value or not n.value.isdigit() or kids:
            raise PrintError(f"bad INT literal {n.value!r}")
        return n.value
    if k == "STR":
        if n.value is None or '"' in n.value or "\n" in n.value or kids:
            raise PrintError(f"bad STR literal {n.value!r}")
        return f'"{n.value}"'
    prec = PRECEDENCE.get(k)
    if prec is None:
        raise PrintError(f"{k} is not an expression")
    if k in OP_TEXT:
        if len(kids) != 2:
            raise PrintError(f"{k} needs 2 operands, has {len(kids)}")
        s = f"{print_expr(kids[0], prec)} {OP_TEXT[k]} {print_expr(kids[1], prec + 1)}"
    elif k == "Ternary":
        if len(kids) != 3:
            raise PrintError("Ternary needs 3 operands")
        s = f"{print_expr(kids[0], 2)} ? {print_expr(kids[1])} : {print_expr(kids[2])}"
    elif k in ("Not", "Neg"):
        if len(kids) != 1:
            raise PrintError(f"{k} needs 1 operand")
        s = ("!" if k == "Not" else "-") + print_expr(kids[0], prec)
    elif k == "FieldAccess":
        if len(kids) != 2:
            raise PrintError("FieldAccess needs 2 children")
        s = f"{print_expr(kids[0], prec)}.{_name_text(kids[1])}"
    elif k == "Index":
        if len(kids) != 2:
            raise PrintError("Index needs 2 children")
        s = f"{print_expr(kids[0], prec)}[{print_expr(kids[1])}]"
    else:  # Call
        if len(kids) != 2 or kids[1].kind != "ArgList":
            raise PrintError("Call needs a callee and an ArgList")
        args = ", ".join(print_expr(a) for a in kids[1].children)
        s = f"{print_expr(kids[0], prec)}({args})"
    return f"({s})" if prec < min_prec else s


def _simple(n: AstNode) -> str:
    if n.kind == "VarDecl":
        if len(n.children) != 2:
            raise PrintError("VarDecl needs 2 children")
        return f"var {_name_text(n.children[0])} = {print_expr(n.children[1])}"
    if n.kind == "Assign":
        if len(n.children) != 2:
            raise PrintError("Assign needs 2 children")
        return f"{print_expr(n.children[0])} = {print_expr(n.children[1])}"
    if n.kind == "ExprStmt":
        if len(n.children) != 1:
            raise PrintError("ExprStmt needs 1 child")
        return print_expr(n.children[0])
    raise PrintError(f"{n.kind} is not a simple statement")


def _block_lines(n: AstNode, depth: int) -> list[str]:
    if n.kind != "Block":
        raise PrintError(f"expected Block, got {n.kind}")
    out = []
    for s in n.children:
        out.extend(_stmt_lines(s, depth))
    return out


def _if_lines(n: AstNode, depth: int, head: str) -> list[str]:
    kids = n.children
    if len(kids) not in (2, 3):
        raise PrintError("If needs 2 or 3 children")
    pad = _INDENT * depth
    lines = [f"{head}if ({print_expr(kids[0])}) {{"]
    lines += _block_lines(kids[1], depth + 1)
    if len(kids) == 3:
        if kids[2].kind == "If":
            sub = _if_lines(kids[2], depth, f"{pad}}} else ")
            return lines + sub
        lines.append(f"{pad}}} else {{")
        lines += _block_lines(kids[2], depth + 1)
    lines.append(f"{pad}}}")
    return lines


def _stmt_lines(n: AstNode, depth: int) -> list[str]:
    pad = _INDENT * depth
    k, kids = n.kind, n.children
    if k == "If":
        return _if_lines(n, depth, pad)
    if k == "While":
        if len(kids) != 2:
            raise PrintError("While needs 2 children")
        return [f"{pad}while ({print_expr(kids[0])}) {{", *_block_lines(kids[1], depth + 1), f"{pad}}}"]
    if k == "For":
        if len(kids) != 4:
            raise PrintError("For needs 4 children")
        head = f"{pad}for ({_simple(kids[0])}; {print_expr(kids[1])}; {_simple(kids[2])}) {{"
        return [head, *_block_lines(kids[3], depth + 1), f"{pad}}}"]
    if k == "Return":
        if len(kids) > 1:
            raise PrintError("Return takes at most 1 child")
        return [f"{pad}return {print_expr(kids[0])};" if kids else f"{pad}return;"]
    return [f"{pad}{_simple(n)};"]


def print_method(n: AstNode) -> str:
    if n.kind != "Method" or len(n.children) < 2:
        raise PrintError("expected Method(NAME, Param*, Block)")
    params = []
    for p in n.children[1:-1]:
        if p.kind != "Param" or len(p.children) != 1:
            raise PrintError("malformed Param")
        params.append(_name_text(p.children[0]))
    head = f"fn {_name_text(n.children[0])}({', '.join(params)}) {{"
    return "\n".join([head, *_block_lines(n.children[-1], 1), "}"])


def print_tree(n: AstNode) -> str:
    """Canonical text of a method, statement or expression tree."""
    if n.kind == "Method":
        return print_method(n)
    if n.kind == "Block":
        return "\n".join(["{", *_block_lines(n, 1), "}"])
    if n.kind in ("If", "While", "For", "Return", "VarDecl", "Assign", "ExprStmt"):
        return "\n".join(_stmt_lines(n, 0))
    return print_expr(n)


def print_unit(methods) -> str:
    return "\n\n".join(print_method(m) for m in methods) + "\n"


def line_count(method: AstNode) -> int:
    return print_method(method).count("\n") + 1
