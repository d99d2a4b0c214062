from collections import deque

import numpy as np
import pytest

from slm.ast_core import EOS_TOK, HOLE, augment_tree, int_lit, name, node, number_tree
from slm.minilang import parse_expression
from slm.paths import (ROOT, NodeTable, PathTrie, PrefixCache, UnknownNode, context_leaves, extend_cache,
                       leaf_paths)
from conftest import tiny_examples, tiny_model


def bfs_path(table: NodeTable, src: int, dst: int) -> list[int]:
    """Naive shortest path over the undirected tree graph."""
    adj: dict[int, list[int]] = {n: [] for n in table.kind}
    for n, p in table.parent.items():
        if p is not None:
            adj[n].append(p)
            adj[p].append(n)
    prev = {src: None}
    q = deque([src])
    while q:
        n = q.popleft()
        for m in adj[n]:
            if m not in prev:
                prev[m] = n
                q.append(m)
    out, n = [], dst
    while n is not None:
        out.append(n)
        n = prev[n]
    return out[::-1]


def greater_context():
    """Augmented ``x > HOLE`` with the HOLE in the INT slot."""
    return augment_tree(number_tree(node("Greater", name("x"), node(HOLE))))


def test_root_site_path_is_root_alone():
    t = augment_tree(number_tree(node("Return", node(HOLE))))
    table = NodeTable(t)
    ps = leaf_paths(table, table.root, context_leaves(table))
    assert ps.root_path.node_ids == (table.root,)
    assert ps.root_path.origin == ROOT


def test_x_greater_path():
    t = greater_context()
    table = NodeTable(t)
    leaves = context_leaves(table)
    assert [table.kind[l] for l in leaves] == [EOS_TOK, "EOS_NODE"]
    ps = leaf_paths(table, table.root, leaves)
    x_path = ps.leaf_paths[0]
    assert list(x_path.node_ids) == bfs_path(table, leaves[0], table.root)
    assert x_path.dump() == "'EOS_TOK' 'x' NAME[0] Greater[0]"
    assert x_path.destination == table.root


def test_unknown_parent():
    table = NodeTable(greater_context())
    with pytest.raises(UnknownNode):
        leaf_paths(table, 999, [])


def test_generated_leaf_gets_a_path():
    table = NodeTable(augment_tree(number_tree(node("Return", node(HOLE)))))
    leaves = context_leaves(table)
    plus = table.add(table.root, "Plus", 0)
    nm = table.add(plus, "NAME", 0)
    sub = table.add(nm, "SUBTOKEN", 0, "x")
    eos = table.add(sub, EOS_TOK, 0)
    before = leaf_paths(table, plus, leaves)
    after = leaf_paths(table, plus, leaves + [eos])
    assert len(after.leaf_paths) == len(before.leaf_paths) + 1
    new = after.leaf_paths[-1]
    assert new.origin == eos
    assert list(new.node_ids) == [eos, sub, nm, plus]


def random_sites(n_pairs: int, seed: int = 0):
    """(table, leaves, destination) triples over extracted contexts; destinations are random nodes."""
    rng = np.random.default_rng(seed)
    examples = tiny_examples(seed=7, methods=30)
    out = []
    while len(out) < n_pairs:
        ex = examples[int(rng.integers(len(examples)))]
        table = NodeTable(augment_tree(ex.context))
        leaves = context_leaves(table)
        internal = [n for n in table.dfs if any(table.parent.get(m) == n for m in table.dfs)]
        out.append((table, leaves, int(rng.choice(internal))))
    return out


def test_paths_match_bfs_oracle():
    for table, leaves, dst in random_sites(60):
        ps = leaf_paths(table, dst, leaves)
        assert len(ps.leaf_paths) == len(leaves)
        for leaf, p in zip(leaves, ps.leaf_paths):
            assert list(p.node_ids) == bfs_path(table, leaf, dst)
            assert p.elements[-1] == table.element(dst)
        assert list(ps.root_path.node_ids) == bfs_path(table, table.root, dst)


def test_no_eos_destination():
    for table, leaves, dst in random_sites(20, seed=3):
        for p in leaf_paths(table, dst, leaves).leaf_paths:
            assert table.kind[p.destination] != EOS_TOK


def test_path_set_deterministic():
    table, leaves, dst = random_sites(1, seed=9)[0]
    assert leaf_paths(table, dst, leaves).dump() == leaf_paths(table, dst, leaves).dump()


def test_trie_rows_match_paths():
    for table, leaves, dst in random_sites(30, seed=4):
        trie = PathTrie()
        for l in leaves:
            row = trie.register(table, l, dst)
            assert trie.path_elements(row) == [table.element(n) for n in table.path(l, dst)]
        # the trie is bounded by distinct (origin, node) pairs
        assert len(trie) <= len(leaves) * (max(table.depth(l) for l in leaves) + table.depth(dst) + 1)


def test_cache_matches_naive_and_counts_steps():
    model = tiny_model(scale=0.3)
    for table, leaves, dst in random_sites(15, seed=5):
        cache = PrefixCache()
        rows = extend_cache(cache, table, model, leaves, dst)
        assert cache.cell_steps == len(cache)
        for l, row in zip(leaves + [ROOT], rows):
            ids = table.root_path(dst) if l == ROOT else table.path(l, dst)
            naive = model.encode_path([table.element(n) for n in ids]).reshape(-1)
            np.testing.assert_allclose(cache.states([row])[0], naive, atol=1e-6, rtol=0)
        steps = cache.cell_steps
        extend_cache(cache, table, model, leaves, dst)
        assert cache.cell_steps == steps  # unchanged query: zero new cell steps


def test_cache_reuses_prefix_across_sites():
    model = tiny_model(scale=0.3)
    t = augment_tree(number_tree(parse_expression("a + b * c")))
    table = NodeTable(t)
    leaves = context_leaves(table)
    times = next(n for n in table.dfs if table.kind[n] == "Times")
    cache = PrefixCache()
    extend_cache(cache, table, model, leaves, table.root)
    first = cache.cell_steps
    extend_cache(cache, table, model, leaves, times)
    naive = sum(len(table.path(l, d)) for d in (table.root, times) for l in leaves)
    naive += len(table.root_path(table.root)) + len(table.root_path(times))
    assert cache.cell_steps < naive
    # moving one node down from the root re-encodes one row per leaf path plus the root path
    assert cache.cell_steps - first <= len(leaves) + 1
