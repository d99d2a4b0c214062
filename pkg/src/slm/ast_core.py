"""AST data model, subtoken splitting, EOS augmentation and JSON I/O.

Trees are immutable: ``AstNode`` is a frozen dataclass whose equality
ignores ``id`` and ``child_index``, so ``a == b`` is structural equality.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Iterator

KIND_VERSION = 1

NONTERMINALS = (
    "Method", "Param", "Block", "VarDecl", "Assign", "ExprStmt", "If", "For",
    "While", "Return", "Call", "ArgList", "FieldAccess", "Index", "Ternary",
    "Not", "Neg", "Plus", "Minus", "Times", "Divide", "Greater", "Less",
    "GreaterEq", "LessEq", "Equals", "NotEquals", "And", "Or",
)
TERMINALS = ("NAME", "INT", "STR")
SUBTOKEN = "SUBTOKEN"
EOS_NODE = "EOS_NODE"
EOS_TOK = "EOS_TOK"
HOLE = "HOLE"

KINDS = NONTERMINALS + TERMINALS + (SUBTOKEN, EOS_NODE, EOS_TOK, HOLE)
_KIND_SET = frozenset(KINDS)

# kinds a node-prediction step may emit
NODE_KINDS = NONTERMINALS + TERMINALS + (EOS_NODE,)

EXPRESSION_KINDS = frozenset((
    "Call", "FieldAccess", "Index", "Ternary", "Not", "Neg", "Plus", "Minus",
    "Times", "Divide", "Greater", "Less", "GreaterEq", "LessEq", "Equals",
    "NotEquals", "And", "Or", "NAME", "INT", "STR",
))


class AstError(ValueError):
    pass


class InvalidToken(AstError):
    pass


class AlreadyAugmented(AstError):
    pass


class DeserializeError(AstError):
    pass


@dataclass(frozen=True)
class AstNode:
    kind: str
    value: str | None = None
    children: tuple["AstNode", ...] = ()
    id: int = field(default=-1, compare=False)
    child_index: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.kind not in _KIND_SET:
            raise AstError(f"unknown kind {self.kind!r}")
        if not isinstance(self.children, tuple):
            object.__setattr__(self, "children", tuple(self.children))

    @property
    def is_terminal(self) -> bool:
        return self.kind in TERMINALS

    def walk(self) -> Iterator["AstNode"]:
        stack = [self]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(reversed(n.children))

    def size(self) -> int:
        return sum(1 for _ in self.walk())

    def __repr__(self):
        if self.value is not None:
            head = f"{self.kind}({self.value!r}"
            return head + (", " + ", ".join(map(repr, self.children)) + ")" if self.children else ")")
        return f"{self.kind}({', '.join(map(repr, self.children))})"


def node(kind: str, *children: AstNode, value: str | None = None) -> AstNode:
    return AstNode(kind, value, tuple(children))


def name(v: str) -> AstNode:
    return AstNode("NAME", v)


def int_lit(v) -> AstNode:
    return AstNode("INT", str(v))


def str_lit(v: str) -> AstNode:
    return AstNode("STR", v)


# ---------------------------------------------------------------------------
# subtokens

_PIECE = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|[0-9]+")


@dataclass(frozen=True)
class SubtokenSeq:
    parts: tuple[str, ...]
    terminator_present: bool = False

    def __iter__(self):
        return iter(self.parts)

    def __len__(self):
        return len(self.parts)


def split_subtokens(value: str) -> SubtokenSeq:
    """Split an identifier at camel-case, digit and underscore boundaries.

    >>> split_subtokens("parseHTTPRequest2").parts
    ('parse', 'http', 'request', '2')
    """
    if not value:
        raise InvalidToken("empty token")
    if any(c.isspace() for c in value):
        raise InvalidToken(f"whitespace in token {value!r}")
    parts: list[str] = []
    for chunk in value.split("_"):
        pieces = _PIECE.findall(chunk)
        if sum(map(len, pieces)) != len(chunk):
            raise InvalidToken(f"unsupported characters in {value!r}")
        parts.extend(p.lower() for p in pieces)
    if not parts:
        raise InvalidToken(f"no subtokens in {value!r}")
    return SubtokenSeq(tuple(parts))


def casing_mask(value: str) -> tuple[tuple[bool, ...], tuple[int, ...]]:
    """Uppercase flags of the non-underscore characters plus underscore offsets."""
    upper = tuple(c.isupper() for c in value if c != "_")
    unders = tuple(i for i, c in enumerate(value) if c == "_")
    return upper, unders


def join_subtokens(parts, mask=None) -> str:
    """Inverse of :func:`split_subtokens`.

    With a ``mask`` from :func:`casing_mask` the original spelling is restored;
    without one the canonical camel-case form is produced.
    """
    parts = list(parts)
    if mask is not None:
        upper, unders = mask
        chars = [c.upper() if u else c for c, u in zip("".join(parts), upper)]
        for pos in unders:
            chars.insert(pos, "_")
        return "".join(chars)
    text = parts[0] + "".join(p[:1].upper() + p[1:] for p in parts[1:])
    try:
        if split_subtokens(text).parts == tuple(parts):
            return text
    except InvalidToken:
        pass
    return "_".join(parts)


def terminal_parts(n: AstNode) -> tuple[str, ...]:
    """Subtoken decomposition of a plain terminal node."""
    if n.kind == "NAME":
        return split_subtokens(n.value).parts
    # literals stay atomic
    return (n.value,)


# ---------------------------------------------------------------------------
# numbering, augmentation, traversal


def number_tree(tree: AstNode, start: int = 0) -> AstNode:
    """Return a copy with DFS-preorder ids from ``start`` and child indices."""
    counter = [start]

    def go(n: AstNode, idx: int) -> AstNode:
        nid = counter[0]
        counter[0] += 1
        kids = []
        for j, c in enumerate(n.children):
            kids.append(go(c, j))
        return AstNode(n.kind, n.value, tuple(kids), nid, idx)

    return go(tree, tree.child_index if tree.id >= 0 else 0)


def is_numbered(tree: AstNode) -> bool:
    return all(n.id >= 0 for n in tree.walk())


def is_augmented(tree: AstNode) -> bool:
    return any(n.kind in (EOS_NODE, EOS_TOK, SUBTOKEN) for n in tree.walk())


def subtoken_chain(parts, first_id: int = -1) -> AstNode:
    """Chain ``p1 -> p2 -> ... -> EOS_TOK``; ids increase along the chain."""
    parts = list(parts)
    k = len(parts)
    nid = (lambda j: first_id + j) if first_id >= 0 else (lambda j: -1)
    chain = AstNode(EOS_TOK, None, (), nid(k), 0)
    for j in range(k - 1, -1, -1):
        chain = AstNode(SUBTOKEN, parts[j], (chain,), nid(j), 0)
    return chain


def augment_tree(tree: AstNode) -> AstNode:
    """Add EOS_NODE under every nonterminal and expand terminal values.

    Terminal ``NAME("toLowerCase")`` becomes ``NAME -> to -> lower -> case ->
    EOS_TOK``. Existing ids are kept; new nodes get ids above the maximum.
    """
    if is_augmented(tree):
        raise AlreadyAugmented("tree already contains EOS/subtoken nodes")
    if not is_numbered(tree):
        tree = number_tree(tree)
    next_id = [max(n.id for n in tree.walk()) + 1]

    def fresh() -> int:
        next_id[0] += 1
        return next_id[0] - 1

    def go(n: AstNode) -> AstNode:
        if n.kind == HOLE:
            return n
        if n.kind in TERMINALS:
            if not n.value:
                raise InvalidToken(f"terminal {n.kind} without value")
            parts = terminal_parts(n)
            chain_id = next_id[0]
            next_id[0] += len(parts) + 1
            return AstNode(n.kind, None, (subtoken_chain(parts, chain_id),), n.id, n.child_index)
        kids = [go(c) for c in n.children]
        kids.append(AstNode(EOS_NODE, None, (), fresh(), len(kids)))
        return AstNode(n.kind, None, tuple(kids), n.id, n.child_index)

    return go(tree)


def chain_parts(terminal: AstNode) -> tuple[tuple[str, ...], bool]:
    """Subtoken values under an augmented terminal and whether EOS_TOK closes it."""
    parts = []
    cur = terminal.children[0] if terminal.children else None
    while cur is not None and cur.kind == SUBTOKEN:
        parts.append(cur.value)
        cur = cur.children[0] if cur.children else None
    return tuple(parts), cur is not None and cur.kind == EOS_TOK


def strip_eos(tree: AstNode) -> AstNode:
    """Inverse of :func:`augment_tree`; identifiers come back in canonical camel case."""

    def go(n: AstNode) -> AstNode:
        if n.kind in TERMINALS:
            if n.value is not None and not n.children:
                return AstNode(n.kind, n.value, (), n.id, n.child_index)
            parts, _ = chain_parts(n)
            if not parts:
                raise AstError(f"terminal {n.kind} has an empty subtoken chain")
            value = join_subtokens(parts) if n.kind == "NAME" else "".join(parts)
            return AstNode(n.kind, value, (), n.id, n.child_index)
        kids = tuple(go(c) for c in n.children if c.kind != EOS_NODE)
        return AstNode(n.kind, n.value, kids, n.id, n.child_index)

    return go(tree)


def dfs_order(tree: AstNode) -> list[AstNode]:
    return list(tree.walk())


def leaves(tree: AstNode) -> list[AstNode]:
    return [n for n in tree.walk() if not n.children]


def erase_values(tree: AstNode) -> AstNode:
    """Tree shape with every terminal value dropped (used by tree@k)."""
    if tree.kind in TERMINALS:
        return AstNode(tree.kind)
    return AstNode(tree.kind, None, tuple(erase_values(c) for c in tree.children if c.kind != EOS_NODE))


def signature(tree: AstNode):
    """Hashable canonical form comparing terminals by their subtoken parts."""
    if tree.kind in TERMINALS:
        if tree.value is not None:
            return (tree.kind, terminal_parts(tree))
        return (tree.kind, chain_parts(tree)[0])
    return (tree.kind, tuple(signature(c) for c in tree.children if c.kind != EOS_NODE))


def replace_subtree(tree: AstNode, target_id: int, new: AstNode) -> AstNode:
    """Return ``tree`` with the node whose id is ``target_id`` swapped for ``new``."""

    def go(n: AstNode) -> AstNode:
        if n.id == target_id:
            return replace(new, child_index=n.child_index)
        if not n.children:
            return n
        return replace(n, children=tuple(go(c) for c in n.children))

    return go(tree)


def find(tree: AstNode, node_id: int) -> AstNode | None:
    for n in tree.walk():
        if n.id == node_id:
            return n
    return None


# ---------------------------------------------------------------------------
# JSON


def to_obj(tree: AstNode) -> dict:
    obj: dict = {"kind": tree.kind}
    if tree.value is not None:
        obj["value"] = tree.value
    obj["children"] = [to_obj(c) for c in tree.children]
    return obj


def to_json(tree: AstNode) -> str:
    return json.dumps(to_obj(tree), separators=(",", ":"))


def from_obj(obj) -> AstNode:
    seen_ids: set[int] = set()

    def go(o, path: str) -> AstNode:
        if not isinstance(o, dict):
            raise DeserializeError(f"{path}: expected object, got {type(o).__name__}")
        extra = set(o) - {"kind", "value", "children", "id"}
        if extra:
            raise DeserializeError(f"{path}: unexpected keys {sorted(extra)}")
        kind = o.get("kind")
        if kind not in _KIND_SET:
            raise DeserializeError(f"{path}: unknown kind {kind!r}")
        value = o.get("value")
        if value is not None and not isinstance(value, str):
            raise DeserializeError(f"{path}: value must be a string")
        if "id" in o:
            if o["id"] in seen_ids:
                raise DeserializeError(f"{path}: duplicate id {o['id']}")
            seen_ids.add(o["id"])
        kids = o.get("children")
        if not isinstance(kids, list):
            raise DeserializeError(f"{path}: children must be a list")
        return AstNode(kind, value, tuple(go(c, f"{path}.children[{j}]") for j, c in enumerate(kids)))

    return number_tree(go(obj, "$"))


def from_json(text: str) -> AstNode:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise DeserializeError(f"$: malformed JSON ({e})") from None
    return from_obj(obj)
