"""Top-k evaluation metrics over candidate lists.

* exact: candidate equals gold including every terminal's subtokens;
* tree: equal once terminal values are erased;
* one-token diff: the token sequences have equal length and differ in at
  most one token;
* one-subtoken diff: as one-token diff, and the differing token (if any)
  has as many subtokens as gold's with at most one of them different.

Identifier tokens are compared by their subtoken parts, so spelling
variants of the same subtokens (``HTTPServer`` / ``httpServer``) are equal.
Candidates may be plain or augmented trees.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ast_core import EOS_NODE, TERMINALS, AstNode, InvalidToken, chain_parts, erase_values, signature, split_subtokens
from .minilang import ParseError, PrintError, print_tree, tokenize


class InvalidK(ValueError):
    pass


@dataclass
class EvalRecord:
    example_id: str
    candidates: list
    gold: AstNode


def _parts(n: AstNode) -> tuple[str, ...]:
    if n.value is not None and not n.children:
        if n.kind == "NAME":
            try:
                return split_subtokens(n.value).parts
            except InvalidToken:
                return (n.value,)
        return (n.value,)
    return chain_parts(n)[0]


def _placeholder_tree(tree: AstNode, slots: dict) -> AstNode:
    """Plain tree whose terminals carry unique placeholder spellings."""
    if tree.kind in TERMINALS:
        i = len(slots)
        text = {"NAME": f"zq{i}", "INT": str(900000000 + i), "STR": f"zq{i}"}[tree.kind]
        slots[text if tree.kind != "STR" else f'"{text}"'] = (tree.kind, _parts(tree))
        return AstNode(tree.kind, text)
    return AstNode(tree.kind, None, tuple(_placeholder_tree(c, slots) for c in tree.children if c.kind != EOS_NODE))


def _fallback_tokens(tree: AstNode) -> list:
    if tree.kind in TERMINALS:
        return [(tree.kind, _parts(tree))]
    out = [("(", tree.kind)]
    for c in tree.children:
        if c.kind != EOS_NODE:
            out.extend(_fallback_tokens(c))
    out.append((")", tree.kind))
    return out


def tokens(tree: AstNode) -> list[tuple]:
    """Token sequence of the canonical printed form; terminals as ``(kind, parts)``."""
    slots: dict = {}
    try:
        text = print_tree(_placeholder_tree(tree, slots))
        toks = tokenize(text)
    except (PrintError, ParseError):
        return _fallback_tokens(tree)
    return [slots.get(t.text, ("op", (t.text,))) for t in toks if t.kind != "eof"]


def _diff_positions(a, b) -> list[int]:
    return [i for i, (x, y) in enumerate(zip(a, b)) if x != y]


def one_token_hit(cand: AstNode, gold: AstNode) -> bool:
    a, b = tokens(cand), tokens(gold)
    return len(a) == len(b) and len(_diff_positions(a, b)) <= 1


def one_subtoken_hit(cand: AstNode, gold: AstNode) -> bool:
    a, b = tokens(cand), tokens(gold)
    if len(a) != len(b):
        return False
    diff = _diff_positions(a, b)
    if not diff:
        return True
    if len(diff) > 1:
        return False
    x, y = a[diff[0]][1], b[diff[0]][1]
    return len(x) == len(y) and len(_diff_positions(x, y)) <= 1


def exact_hit(cand: AstNode, gold: AstNode) -> bool:
    return signature(cand) == signature(gold)


def tree_hit(cand: AstNode, gold: AstNode) -> bool:
    return erase_values(cand) == erase_values(gold)


def _rate(records, k: int, hit) -> float:
    if k < 1:
        raise InvalidK(f"k must be >= 1, got {k}")
    records = list(records)
    if not records:
        return 0.0
    return sum(any(hit(c, r.gold) for c in r.candidates[:k]) for r in records) / len(records)


def exact_match_at_k(records, k: int) -> float:
    return _rate(records, k, exact_hit)


def tree_match_at_k(records, k: int) -> float:
    return _rate(records, k, tree_hit)


def one_subtoken_diff_at_k(records, k: int) -> float:
    return _rate(records, k, one_subtoken_hit)


def one_token_diff_at_k(records, k: int) -> float:
    return _rate(records, k, one_token_hit)


def eval_report(records, ks=(1, 5)) -> dict:
    records = list(records)
    return {
        "acc": {str(k): exact_match_at_k(records, k) for k in ks},
        "tree": {str(k): tree_match_at_k(records, k) for k in ks},
        "oneSubtoken": {str(k): one_subtoken_diff_at_k(records, k) for k in ks},
        "oneToken": {str(k): one_token_diff_at_k(records, k) for k in ks},
        "n": len(records),
    }
