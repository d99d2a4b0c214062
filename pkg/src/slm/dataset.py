"""Example extraction, a seeded synthetic corpus and method-level splits.

An example masks one expression subtree of a method with a HOLE. Extraction
drops methods whose name contains "test", methods longer than 20 printed
lines, single-node targets, and targets whose token sequence already
appears contiguously in the rest of the method.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ast_core import EXPRESSION_KINDS, HOLE, AstNode, from_obj, number_tree, replace_subtree, to_obj
from .minilang import KEYWORDS, line_count, parse, print_tree, print_unit, tokenize

MAX_LINES = 20
HOLE_PLACEHOLDER = "__hole__"


@dataclass
class Example:
    id: str
    method_id: int
    context: AstNode   # DFS-numbered, exactly one HOLE
    hole_parent: int
    hole_index: int
    target: AstNode    # plain (unaugmented) subtree

    def hole_id(self) -> int:
        return next(n.id for n in self.context.walk() if n.kind == HOLE)

    def reinsert(self) -> AstNode:
        return replace_subtree(self.context, self.hole_id(), self.target)

    def to_obj(self) -> dict:
        return {"id": self.id, "methodId": self.method_id, "context": to_obj(self.context),
                "holeSite": [self.hole_parent, self.hole_index], "target": to_obj(self.target)}

    @classmethod
    def from_obj(cls, o: dict) -> "Example":
        ctx = from_obj(o["context"])
        parent, index = o["holeSite"]
        return cls(o["id"], o["methodId"], ctx, parent, index, from_obj(o["target"]))


@dataclass
class ExtractStats:
    methods: int = 0
    test_methods: int = 0
    long_methods: int = 0
    single_node: int = 0
    as_is: int = 0
    examples: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def method_name(m: AstNode) -> str:
    return m.children[0].value if m.children and m.children[0].kind == "NAME" else ""


def _token_texts(text: str) -> list[str]:
    return [t.text for t in tokenize(text) if t.kind != "eof"]


def _contains(seq: list[str], sub: list[str]) -> bool:
    n = len(sub)
    first = sub[0]
    return any(seq[i] == first and seq[i:i + n] == sub for i in range(len(seq) - n + 1))


def extract_examples(methods, method_ids=None, stats: ExtractStats | None = None) -> list[Example]:
    """One example per qualifying expression subtree, ordered by (method id, node id)."""
    stats = stats if stats is not None else ExtractStats()
    out = []
    for mi, m in enumerate(methods):
        mid = method_ids[mi] if method_ids is not None else mi
        stats.methods += 1
        if "test" in method_name(m).lower():
            stats.test_methods += 1
            continue
        if line_count(m) > MAX_LINES:
            stats.long_methods += 1
            continue
        m = number_tree(m)
        parent_of = {c.id: (n, j) for n in m.walk() for j, c in enumerate(n.children)}
        for n in m.walk():
            if n.kind not in EXPRESSION_KINDS or n.id not in parent_of:
                continue
            if n.size() <= 1:
                stats.single_node += 1
                continue
            target = number_tree(n)
            rest = _token_texts(print_tree(replace_subtree(m, n.id, AstNode("NAME", HOLE_PLACEHOLDER))))
            if _contains(rest, _token_texts(print_tree(target))):
                stats.as_is += 1
                continue
            ctx = number_tree(replace_subtree(m, n.id, AstNode(HOLE)))
            hole = next(x for x in ctx.walk() if x.kind == HOLE)
            par = next(x for x in ctx.walk() if any(c is hole for c in x.children))
            out.append(Example(f"{mid}:{n.id}", mid, ctx, par.id, hole.child_index, target))
    stats.examples += len(out)
    return out


def copy_signal(examples) -> float:
    """Fraction of examples whose target shares a terminal token with its context."""
    if not examples:
        return 0.0
    hits = 0
    for ex in examples:
        ctx = {(n.kind, n.value) for n in ex.context.walk() if n.is_terminal}
        if any((n.kind, n.value) in ctx for n in ex.target.walk() if n.is_terminal):
            hits += 1
    return hits / len(examples)


# ---------------------------------------------------------------------------
# splits and I/O


class SplitError(ValueError):
    pass


def split(examples, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Train/dev/test split at method granularity."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    mids = sorted({ex.method_id for ex in examples})
    order = np.random.default_rng(seed).permutation(len(mids))
    n = len(mids)
    c1 = int(round(ratios[0] * n))
    c2 = c1 + int(round(ratios[1] * n))
    which = {}
    for rank, i in enumerate(order):
        which[mids[i]] = 0 if rank < c1 else (1 if rank < c2 else 2)
    parts = ([], [], [])
    for ex in examples:
        parts[which[ex.method_id]].append(ex)
    return parts


def write_examples(path, examples) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps(ex.to_obj(), separators=(",", ":")) + "\n")


def read_examples(path) -> list[Example]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                out.append(Example.from_obj(json.loads(line)))
    return out


# ---------------------------------------------------------------------------
# synthetic corpus


class InfeasibleSpec(ValueError):
    pass


_ONSETS = ("b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z",
           "br", "ch", "cl", "dr", "fl", "gr", "pl", "pr", "sh", "st", "tr")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ea", "oo")
_CODAS = ("", "", "n", "r", "s", "t", "l", "m", "x", "nd", "rk", "st")
_VERBS = ("get", "set", "compute", "find", "load", "make", "check", "update", "count", "build")
_FIELDS = ("length", "size", "count", "value", "next", "first")


@dataclass
class CorpusSpec:
    seed: int = 1
    method_count: int = 100
    max_depth: int = 3
    word_pool: int = 400
    vars_per_method: tuple = (2, 4)
    statements: tuple = (2, 5)
    # relative weights of expression forms when depth allows
    expr_weights: dict = field(default_factory=lambda: {
        "name": 6.0, "int": 2.0, "str": 0.3, "arith": 2.0, "cmp": 2.0, "logic": 0.6, "not": 0.3,
        "call": 1.2, "field": 1.0, "index": 0.8})
    stmt_weights: dict = field(default_factory=lambda: {
        "var": 3.0, "assign": 2.0, "if": 2.0, "for": 0.8, "while": 0.6, "call": 1.0, "return": 1.0,
        "loop_sum": 1.0, "incr": 1.0})


def _pseudo_words(rng, n: int) -> list[str]:
    words, seen = [], set()
    while len(words) < n:
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(int(rng.integers(1, 3))))
        w += rng.choice(_CODAS)
        if w not in seen and len(w) >= 2 and w not in KEYWORDS and "test" not in w:
            seen.add(w)
            words.append(w)
    return words


class _Gen:
    def __init__(self, spec: CorpusSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.words = _pseudo_words(self.rng, spec.word_pool)
        # Zipf-like word frequencies: a few common subtokens, a long tail
        w = 1.0 / np.arange(1, len(self.words) + 1)
        self.word_p = w / w.sum()
        self.funcs = [self.ident(verb=True) for _ in range(24)]

    def pick(self, weights: dict) -> str:
        keys = list(weights)
        p = np.array([weights[k] for k in keys], float)
        return keys[int(self.rng.choice(len(keys), p=p / p.sum()))]

    def word(self) -> str:
        return str(self.words[int(self.rng.choice(len(self.words), p=self.word_p))])

    def ident(self, verb: bool = False, rare: bool = False) -> str:
        """Camel-case identifier; ``rare`` draws its words uniformly from the pool."""
        n = int(self.rng.integers(1, 4))
        parts = [str(self.rng.choice(_VERBS))] if verb else []
        pick = (lambda: str(self.rng.choice(self.words))) if rare else self.word
        parts += [pick() for _ in range(n - (1 if verb else 0) or 1)]
        return parts[0] + "".join(p.capitalize() for p in parts[1:])

    def expr(self, vars_: list[str], depth: int) -> str:
        w = dict(self.spec.expr_weights)
        if depth <= 1:
            w = {k: v for k, v in w.items() if k in ("name", "int", "str")}
        kind = self.pick(w)
        r = self.rng
        if kind == "name":
            return str(r.choice(vars_))
        if kind == "int":
            return str(int(r.choice([0, 1, 2, 3, 5, 10, 16, 42, 55, 100])))
        if kind == "str":
            return f'"{self.word()}"'
        sub = depth - 1
        if kind == "arith":
            return f"{self.atom(vars_, sub)} {r.choice(['+', '-', '*', '/'])} {self.atom(vars_, sub)}"
        if kind == "cmp":
            return f"{self.atom(vars_, sub)} {r.choice(['>', '<', '>=', '<=', '==', '!='])} {self.atom(vars_, sub)}"
        if kind == "logic":
            return f"{self.atom(vars_, sub)} {r.choice(['&&', '||'])} {self.atom(vars_, sub)}"
        if kind == "not":
            return f"!{self.atom(vars_, sub)}"
        if kind == "call":
            args = ", ".join(self.expr(vars_, sub) for _ in range(int(r.integers(0, 3))))
            return f"{r.choice(self.funcs)}({args})"
        if kind == "field":
            return f"{r.choice(vars_)}.{r.choice(_FIELDS)}"
        return f"{r.choice(vars_)}[{self.expr(vars_, sub)}]"

    def atom(self, vars_, depth) -> str:
        e = self.expr(vars_, depth)
        return e if all(c not in e for c in " ?") else f"({e})"

    def cond(self, vars_) -> str:
        return f"{self.atom(vars_, 2)} {self.rng.choice(['>', '<', '==', '!='])} {self.atom(vars_, 2)}"

    def stmts(self, vars_: list[str], n: int, indent: str, depth: int) -> list[str]:
        out = []
        md = self.spec.max_depth
        for _ in range(n):
            w = dict(self.spec.stmt_weights)
            if depth >= 2:
                for k in ("if", "for", "while", "loop_sum"):
                    w.pop(k)
            kind = self.pick(w)
            r = self.rng
            if kind == "var":
                v = self.ident()
                out.append(f"{indent}var {v} = {self.expr(vars_, md)};")
                vars_.append(v)
            elif kind == "assign":
                out.append(f"{indent}{r.choice(vars_)} = {self.expr(vars_, md)};")
            elif kind == "call":
                out.append(f"{indent}{r.choice(self.funcs)}({self.expr(vars_, md - 1)});")
            elif kind == "loop_sum":
                # accumulate idiom over a fresh array and accumulator
                xs, acc = self.ident(rare=True), self.ident(rare=True)
                i = str(r.choice(["i", "j", "k", "idx"]))
                if acc == xs or acc in vars_ or xs in vars_:
                    continue
                out.append(f"{indent}var {acc} = 0;")
                out.append(f"{indent}for (var {i} = 0; {i} < {xs}.length; {i} = {i} + 1) {{")
                out.append(f"{indent}  {acc} = {acc} + {xs}[{i}];")
                out.append(f"{indent}}}")
                vars_.append(acc)
            elif kind == "incr":
                v = str(r.choice(vars_))
                out.append(f"{indent}{v} = {v} {r.choice(['+', '-'])} {int(r.choice([1, 1, 1, 2]))};")
            elif kind == "return":
                out.append(f"{indent}return {self.expr(vars_, md)};")
            elif kind == "if":
                out.append(f"{indent}if ({self.cond(vars_)}) {{")
                out += self.stmts(list(vars_), int(r.integers(1, 3)), indent + "  ", depth + 1)
                out.append(f"{indent}}}")
            elif kind == "for":
                i = str(r.choice(["i", "j", "k", "idx"]))
                bound = self.atom(vars_, 2)
                out.append(f"{indent}for (var {i} = 0; {i} < {bound}; {i} = {i} + 1) {{")
                out += self.stmts(list(vars_) + [i], int(r.integers(1, 3)), indent + "  ", depth + 1)
                out.append(f"{indent}}}")
            else:
                out.append(f"{indent}while ({self.cond(vars_)}) {{")
                out += self.stmts(list(vars_), int(r.integers(1, 3)), indent + "  ", depth + 1)
                out.append(f"{indent}}}")
        return out

    def method(self) -> str:
        lo, hi = self.spec.vars_per_method
        params = []
        while len(params) < int(self.rng.integers(lo, hi + 1)):
            v = self.ident()
            if v not in params:
                params.append(v)
        lo, hi = self.spec.statements
        name = self.ident(verb=True)
        body = self.stmts(list(params), int(self.rng.integers(lo, hi + 1)), "  ", 0)
        return "\n".join([f"fn {name}({', '.join(params)}) {{", *body, "}"])


def gen_synthetic_corpus(spec: CorpusSpec) -> list[AstNode]:
    """Seeded random methods in canonical form; the same spec gives the same corpus."""
    if spec.max_depth < 2:
        raise InfeasibleSpec("max_depth must be at least 2")
    if spec.method_count < 0 or spec.word_pool < 1:
        raise InfeasibleSpec("method_count must be >= 0 and word_pool >= 1")
    g = _Gen(spec)
    methods = []
    while len(methods) < spec.method_count:
        methods.extend(parse(g.method()).methods)
    return methods


def corpus_text(methods) -> str:
    return print_unit(methods)


def read_corpus(path) -> list[AstNode]:
    return parse(Path(path).read_text(encoding="utf-8")).methods
