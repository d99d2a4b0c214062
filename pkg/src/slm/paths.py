"""Partial AST paths from leaves (and the root) to the node being expanded.

A path from leaf ``l`` to node ``d`` climbs from ``l`` to the lowest common
ancestor and then descends to ``d``. Because that path is unique, the pair
``(l, n)`` identifies the prefix of every such path that ends at ``n``; the
prefix trie and the prefix cache are keyed on it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ast_core import EOS_NODE, EOS_TOK, HOLE, SUBTOKEN, AstNode

ROOT = -1


class UnknownNode(KeyError):
    pass


class NodeTable:
    """Parent-pointer index over an augmented tree; nodes can be appended."""

    def __init__(self, tree: AstNode):
        self.kind: dict[int, str] = {}
        self.index: dict[int, int] = {}
        self.value: dict[int, str | None] = {}
        self.parent: dict[int, int | None] = {}
        self._anc: dict[int, tuple[int, ...]] = {}
        self.root = tree.id
        self.dfs: list[int] = []
        stack: list[tuple[AstNode, int | None]] = [(tree, None)]
        while stack:
            n, par = stack.pop()
            if n.id in self.kind:
                raise ValueError(f"duplicate node id {n.id}")
            self._put(n.id, par, n.kind, n.child_index, n.value)
            self.dfs.append(n.id)
            stack.extend((c, n.id) for c in reversed(n.children))
        self.next_id = max(self.kind) + 1

    def _put(self, nid, par, kind, idx, value):
        self.kind[nid] = kind
        self.index[nid] = idx
        self.value[nid] = value
        self.parent[nid] = par
        self._anc[nid] = (nid,) if par is None else (nid,) + self._anc[par]

    def add(self, parent: int, kind: str, child_index: int, value: str | None = None) -> int:
        if parent not in self.kind:
            raise UnknownNode(parent)
        nid = self.next_id
        self.next_id += 1
        self._put(nid, parent, kind, child_index, value)
        return nid

    def __contains__(self, nid) -> bool:
        return nid in self.kind

    def ancestors(self, nid: int) -> tuple[int, ...]:
        """``(nid, parent, ..., root)``."""
        try:
            return self._anc[nid]
        except KeyError:
            raise UnknownNode(nid) from None

    def depth(self, nid: int) -> int:
        return len(self.ancestors(nid)) - 1

    def element(self, nid: int) -> tuple:
        """Path element: ``("sub", value)`` or ``("node", kind, child_index)``."""
        k = self.kind[nid]
        if k == SUBTOKEN:
            return ("sub", self.value[nid])
        if k == EOS_TOK:
            return ("sub", EOS_TOK)
        return ("node", k, self.index[nid])

    def path(self, src: int, dst: int) -> list[int]:
        up = self.ancestors(src)
        down = self.ancestors(dst)
        pos = {n: j for j, n in enumerate(down)}
        for i, n in enumerate(up):
            j = pos.get(n)
            if j is not None:
                return list(up[:i + 1]) + list(reversed(down[:j]))
        raise ValueError(f"nodes {src} and {dst} are not in one tree")

    def root_path(self, dst: int) -> list[int]:
        return list(reversed(self.ancestors(dst)))


def context_leaves(table: NodeTable) -> list[int]:
    """Sentinel leaves of the context in DFS order; the HOLE is not a leaf."""
    has_kids = {p for p in table.parent.values() if p is not None}
    return [n for n in table.dfs if n not in has_kids and table.kind[n] != HOLE]


def is_sentinel(table: NodeTable, nid: int) -> bool:
    return table.kind[nid] in (EOS_NODE, EOS_TOK)


@dataclass(frozen=True)
class PartialPath:
    node_ids: tuple[int, ...]
    elements: tuple[tuple, ...]
    origin: int
    destination: int

    def __len__(self):
        return len(self.node_ids)

    def dump(self) -> str:
        out = []
        for e in self.elements:
            out.append(f"'{e[1]}'" if e[0] == "sub" else f"{e[1]}[{e[2]}]")
        return " ".join(out)


@dataclass(frozen=True)
class PathSet:
    leaf_paths: tuple[PartialPath, ...]
    root_path: PartialPath

    def dump(self) -> str:
        return "\n".join([p.dump() for p in self.leaf_paths] + [self.root_path.dump()])


def make_path(table: NodeTable, node_ids, origin: int) -> PartialPath:
    ids = tuple(node_ids)
    return PartialPath(ids, tuple(table.element(n) for n in ids), origin, ids[-1])


def leaf_paths(table: NodeTable, parent_id: int, leaves) -> PathSet:
    """All leaf-to-``parent_id`` paths plus the root path, in ``leaves`` order."""
    if parent_id not in table:
        raise UnknownNode(parent_id)
    paths = tuple(make_path(table, table.path(l, parent_id), l) for l in leaves)
    return PathSet(paths, make_path(table, table.root_path(parent_id), ROOT))


# ---------------------------------------------------------------------------
# prefix trie / cache


class PathTrie:
    """Prefix trie of partial paths; one row per distinct ``(scope, origin, node)``.

    ``scope`` separates trees that share node ids (examples in one batch).
    Rows are appended in an order where a parent row always precedes its child.
    """

    def __init__(self):
        self.rows: dict[tuple[int, int, int], int] = {}
        self.parent: list[int] = []
        self.element: list[tuple] = []
        self.depth: list[int] = []

    def __len__(self):
        return len(self.parent)

    def _new(self, key, parent_row: int, element: tuple) -> int:
        row = len(self.parent)
        self.rows[key] = row
        self.parent.append(parent_row)
        self.element.append(element)
        self.depth.append(1 if parent_row < 0 else self.depth[parent_row] + 1)
        return row

    def register(self, table: NodeTable, origin: int, dst: int, scope: int = 0) -> int:
        """Row of the path ``origin -> dst``, inserting missing prefixes."""
        rows = self.rows
        key = (scope, origin, dst)
        row = rows.get(key)
        if row is not None:
            return row
        par = table.parent[dst]
        if par is not None:
            # common case: extending a cached path one step downward
            prow = rows.get((scope, origin, par))
            if prow is not None and (origin == ROOT or dst not in table.ancestors(origin)):
                return self._new(key, prow, table.element(dst))
        ids = table.root_path(dst) if origin == ROOT else table.path(origin, dst)
        j = len(ids) - 1
        while j >= 0 and (scope, origin, ids[j]) not in rows:
            j -= 1
        prow = rows[(scope, origin, ids[j])] if j >= 0 else -1
        for n in ids[j + 1:]:
            prow = self._new((scope, origin, n), prow, table.element(n))
        return prow

    def path_elements(self, row: int) -> list[tuple]:
        out = []
        while row >= 0:
            out.append(self.element[row])
            row = self.parent[row]
        return out[::-1]


class PrefixCache(PathTrie):
    """Trie plus stored encoder states, filled incrementally by :meth:`flush`.

    ``cell_steps`` counts LSTM cell evaluations (one per encoded row).
    """

    def __init__(self):
        super().__init__()
        self.h: list[np.ndarray] = []
        self.c: list[np.ndarray] = []
        self.encoded = 0
        self.cell_steps = 0

    def _grow(self, layers: int, units: int, dtype, need: int):
        if not self.h:
            cap = max(256, need)
            self.h = [np.zeros((cap, units), dtype) for _ in range(layers)]
            self.c = [np.zeros((cap, units), dtype) for _ in range(layers)]
        elif need > self.h[0].shape[0]:
            cap = max(need, 2 * self.h[0].shape[0])
            for store in (self.h, self.c):
                for i, a in enumerate(store):
                    b = np.zeros((cap, units), dtype)
                    b[:a.shape[0]] = a
                    store[i] = b

    def flush(self, model) -> int:
        """Encode all rows added since the last flush; returns the number encoded."""
        start, end = self.encoded, len(self.parent)
        if end == start:
            return 0
        layers, units = model.hyper.lstm_layers, model.hyper.lstm_units
        self._grow(layers, units, model.dtype, end)
        parent = np.asarray(self.parent[start:end])
        level = np.zeros(end - start, dtype=np.int64)
        for i, p in enumerate(self.parent[start:end]):
            if p >= start:
                level[i] = level[p - start] + 1
        for lv in range(int(level.max()) + 1):
            sel = np.nonzero(level == lv)[0]
            rows = sel + start
            par = parent[sel]
            elems = [self.element[r] for r in rows]
            hs, cs = model.lstm_step_numpy(elems, [np.where(par[:, None] >= 0, h[par], 0.0) for h in self.h],
                                           [np.where(par[:, None] >= 0, c[par], 0.0) for c in self.c])
            for layer in range(layers):
                self.h[layer][rows] = hs[layer]
                self.c[layer][rows] = cs[layer]
        self.encoded = end
        self.cell_steps += end - start
        return end - start

    def states(self, rows) -> np.ndarray:
        return self.h[-1][np.asarray(rows, dtype=np.int64)]

    def all_states(self) -> np.ndarray:
        return self.h[-1][:len(self.parent)]


def extend_cache(cache: PrefixCache, table: NodeTable, model, leaves, dst: int, scope: int = 0) -> list[int]:
    """Make every ``leaf -> dst`` path and the root path available; returns their rows."""
    rows = [cache.register(table, l, dst, scope) for l in leaves]
    rows.append(cache.register(table, ROOT, dst, scope))
    cache.flush(model)
    return rows
