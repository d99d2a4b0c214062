import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from slm.ast_core import (EOS_NODE, EOS_TOK, SUBTOKEN, AlreadyAugmented, AstNode, DeserializeError,
                          InvalidToken, augment_tree, casing_mask, chain_parts, dfs_order, erase_values,
                          from_json, int_lit, join_subtokens, name, node, number_tree, replace_subtree,
                          signature, split_subtokens, strip_eos, to_json, to_obj)
from conftest import expressions


def scan_split(value: str) -> list[str]:
    """Character-class scan applying the boundary rules one character at a time."""
    parts, cur = [], ""

    def cls(c):
        return "u" if c.isupper() else "l" if c.islower() else "d" if c.isdigit() else "_"

    for i, c in enumerate(value):
        if c == "_":
            if cur:
                parts.append(cur)
            cur = ""
            continue
        if cur:
            p = cur[-1]
            nxt = value[i + 1] if i + 1 < len(value) else ""
            boundary = (
                (cls(p) == "l" and cls(c) == "u")
                or (cls(p) in "ul") != (cls(c) in "ul")  # letter <-> digit
                or (cls(p) == "u" and cls(c) == "u" and nxt.islower())
            )
            if boundary:
                parts.append(cur)
                cur = ""
        cur += c
    if cur:
        parts.append(cur)
    return [p.lower() for p in parts]


@pytest.mark.parametrize("value,parts", [
    ("toLowerCase", ["to", "lower", "case"]),
    ("x", ["x"]),
    ("parseHTTPRequest2", ["parse", "http", "request", "2"]),
    ("HTTPServer", ["http", "server"]),
    ("max_value", ["max", "value"]),
])
def test_split_examples(value, parts):
    assert list(split_subtokens(value).parts) == parts


@given(st.from_regex(re.compile(r"[A-Za-z][A-Za-z0-9_]{0,12}", re.ASCII), fullmatch=True))
def test_split_matches_scan_oracle(value):
    if not value.strip("_"):
        return
    assert list(split_subtokens(value).parts) == scan_split(value)


def test_split_rejects_empty():
    with pytest.raises(InvalidToken):
        split_subtokens("")


@given(st.from_regex(re.compile(r"[a-z]{1,4}([A-Z][a-z]{1,4}){0,3}[0-9]{0,2}", re.ASCII), fullmatch=True))
def test_casing_mask_round_trip(value):
    parts = split_subtokens(value).parts
    assert join_subtokens(parts, casing_mask(value)) == value
    assert split_subtokens(join_subtokens(parts)).parts == parts


def test_augment_name_chain():
    t = augment_tree(number_tree(name("toLowerCase")))
    chain, seen = [], t.children[0]
    while True:
        chain.append(seen.kind if seen.kind != SUBTOKEN else seen.value)
        if not seen.children:
            break
        seen = seen.children[0]
    assert chain == ["to", "lower", "case", EOS_TOK]
    assert chain_parts(t) == (("to", "lower", "case"), True)


def test_augment_arity():
    t = augment_tree(number_tree(node("ArgList")))
    assert [c.kind for c in t.children] == [EOS_NODE]
    g = augment_tree(number_tree(node("Greater", name("x"), int_lit(1))))
    assert [c.kind for c in g.children] == ["NAME", "INT", EOS_NODE]
    assert [c.child_index for c in g.children] == [0, 1, 2]


def test_augment_twice_rejected():
    t = augment_tree(number_tree(node("Greater", name("x"), int_lit(1))))
    with pytest.raises(AlreadyAugmented):
        augment_tree(t)


@given(expressions())
def test_augment_preserves_ids_and_strip_inverts(tree):
    t = number_tree(tree)
    a = augment_tree(t)
    old = {n.id: n.kind for n in t.walk()}
    new = {n.id: n.kind for n in a.walk()}
    assert all(new[i] == k for i, k in old.items())
    assert len(new) == a.size()  # fresh ids are unique
    assert strip_eos(a) == t


def preorder(n):
    out = [n]
    for c in n.children:
        out.extend(preorder(c))
    return out


@given(expressions())
def test_dfs_order_is_preorder(tree):
    a = augment_tree(number_tree(tree))
    order = dfs_order(a)
    assert [n.id for n in order] == [n.id for n in preorder(a)]
    pos = {n.id: i for i, n in enumerate(order)}
    for n in order:
        for c in n.children:
            assert pos[n.id] < pos[c.id]
    assert sorted(pos) == sorted(n.id for n in a.walk())


def test_dfs_single_node():
    t = number_tree(name("x"))
    assert dfs_order(t) == [t]


def test_dfs_greater_chains():
    a = augment_tree(number_tree(node("Greater", name("x"), int_lit(1))))
    kinds = [n.kind if n.kind != SUBTOKEN else n.value for n in dfs_order(a)]
    assert kinds == ["Greater", "NAME", "x", EOS_TOK, "INT", "1", EOS_TOK, EOS_NODE]


@given(expressions())
def test_json_round_trip(tree):
    for t in (number_tree(tree), augment_tree(number_tree(tree))):
        back = from_json(to_json(t))
        assert back == t
        # ids are reassigned on load in DFS order
        assert [n.id for n in back.walk()] == list(range(t.size()))


def test_json_empty_children_present():
    assert to_obj(node("ArgList"))["children"] == []


@pytest.mark.parametrize("doc", [
    '{"kind": "Foo", "children": []}',
    '{"kind": "Plus", "children": [{"kind": "NAME"}',
    '{"kind": "Plus", "children": {}}',
    '[1, 2]',
])
def test_json_errors(doc):
    with pytest.raises(DeserializeError):
        from_json(doc)


def test_json_error_mentions_path():
    with pytest.raises(DeserializeError, match=r"children\[1\]"):
        from_json('{"kind": "Plus", "children": [{"kind": "NAME", "value": "a", "children": []},'
                  ' {"kind": "Foo", "children": []}]}')


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        AstNode("Foo")


def test_erase_and_signature():
    a = node("Plus", name("itemCount"), int_lit(1))
    b = node("Plus", name("item_count"), int_lit(1))
    c = node("Plus", name("other"), int_lit(2))
    assert signature(a) == signature(b)
    assert signature(a) != signature(c)
    assert erase_values(a) == erase_values(c)


def test_replace_subtree():
    t = number_tree(node("Plus", name("a"), name("b")))
    r = replace_subtree(t, t.children[1].id, int_lit(3))
    assert r == node("Plus", name("a"), int_lit(3))
