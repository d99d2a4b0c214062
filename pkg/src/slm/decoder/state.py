"""Generation state shared by beam search, teacher-forced scoring and training.

A target subtree is produced as a sequence of decisions in depth-first
order. Open positions live on a frontier stack of *slots*:

* ``("node", parent, k, depth, is_root)`` -- the ``k``-th child of ``parent``;
  candidates are node types (``EOS_NODE`` closes ``parent``).
* ``("sub", parent, position, prefix, terminal)`` -- the next link of a
  terminal's subtoken chain; candidates are symbols of the context's copy
  universe (``EOS_TOK`` closes the chain, a whole-token symbol emits the
  entire chain at once). Literal (INT/STR) chains hold exactly one
  subtoken.

Masks make every tree reachable by exactly one decision sequence, so
teacher-forced scores and beam scores agree and the probabilities of all
trees within the caps sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..ast_core import (EOS_NODE, EOS_TOK, HOLE, NODE_KINDS, NONTERMINALS, SUBTOKEN, TERMINALS, AstNode,
                        augment_tree, chain_parts, is_augmented, is_numbered, number_tree, strip_eos)
from ..model.network import NODE_INDEX, CopyTable, Query, build_copy_table
from ..model.vocab import EOS_ID, PAD_ID, UNK_ID
from ..paths import ROOT, NodeTable, PathTrie, context_leaves

_EOS_NODE_IDX = NODE_INDEX[EOS_NODE]
_NONTERMINAL_MASK = np.array([k in NONTERMINALS for k in NODE_KINDS])


class InvalidGold(ValueError):
    pass


class NoHole(ValueError):
    pass


@dataclass(frozen=True)
class GenerationCaps:
    """Limits on generated targets.

    ``max_depth`` counts the target root as depth 1; at that depth only
    terminals may open. ``allowed_kinds`` restricts node types (``EOS_NODE``
    is always allowed below the root). ``budget`` bounds decisions per
    hypothesis.
    """

    max_depth: int = 16
    max_arity: int = 16
    max_subtokens: int = 8
    allowed_kinds: frozenset | None = None
    budget: int = 64

    def node_base_mask(self) -> np.ndarray:
        if self.allowed_kinds is None:
            return np.ones(len(NODE_KINDS), bool)
        m = np.array([k in self.allowed_kinds for k in NODE_KINDS])
        m[_EOS_NODE_IDX] = True
        return m


class Context:
    """A context tree with one HOLE, prepared for a given model.

    ``table`` is shared by every hypothesis grown from this context; it only
    ever gains nodes, and each hypothesis keeps the ids it owns.
    """

    def __init__(self, model, tree: AstNode, caps: GenerationCaps | None = None):
        self.model = model
        self.caps = caps or GenerationCaps(max_subtokens=model.hyper.p_max)
        if is_augmented(tree):
            aug = tree
        else:
            aug = augment_tree(tree if is_numbered(tree) else number_tree(tree))
        holes = [n for n in aug.walk() if n.kind == HOLE]
        if len(holes) != 1:
            raise NoHole(f"context must contain exactly one HOLE, found {len(holes)}")
        self.tree = aug
        self.table = NodeTable(aug)
        hole = holes[0]
        self.hole_id = hole.id
        self.hole_parent = self.table.parent[hole.id]
        if self.hole_parent is None:
            raise NoHole("the HOLE cannot be the root")
        self.hole_index = hole.child_index
        self.leaves = tuple(context_leaves(self.table))
        tokens = []
        for n, leaf in enumerate(self.leaves):
            if self.table.kind[leaf] == EOS_TOK:
                tokens.append((n, self._chain_of(leaf)))
        self.leaf_tokens = tokens
        self.copy: CopyTable = build_copy_table(model.vocab, tokens, model.hyper.p_max, model.hyper.copy_enabled)
        self._node_mask = self.caps.node_base_mask()
        base = np.ones(self.copy.size, bool)
        base[PAD_ID] = False
        self._sub_mask_first = base.copy()
        self._sub_mask_first[EOS_ID] = False
        self._sub_mask_later = base
        self._sub_mask_later[self.copy.whole_ids] = False

    def _chain_of(self, eos_leaf: int) -> tuple[str, ...]:
        parts = []
        n = self.table.parent[eos_leaf]
        while self.table.kind[n] == SUBTOKEN:
            parts.append(self.table.value[n])
            n = self.table.parent[n]
        return tuple(reversed(parts))

    # -- slot options ------------------------------------------------------

    def options(self, slot) -> tuple[str, object]:
        """``("forced", decision)``, ``("query", mask)`` or ``("dead", None)``."""
        caps = self.caps
        if slot[0] == "node":
            _, _, k, depth, is_root = slot
            if not is_root and k >= caps.max_arity:
                return "forced", _EOS_NODE_IDX
            m = self._node_mask.copy()
            if is_root:
                m[_EOS_NODE_IDX] = False
            if depth >= caps.max_depth:
                m &= ~_NONTERMINAL_MASK
        else:
            _, _, pos, prefix, term = slot
            literal = self.table.kind[term] != "NAME"
            if pos > caps.max_subtokens or (literal and pos > 1):
                # literals are atomic: a single subtoken, then EOS_TOK
                return "forced", EOS_ID
            if pos == 1:
                m = self._sub_mask_first.copy()
                if literal:
                    m[self.copy.whole_ids] = False
            else:
                m = self._sub_mask_later.copy()
                if prefix in self.copy.whole:
                    m[EOS_ID] = False
            if pos == caps.max_subtokens and self.copy.whole:
                # the chain will be force-closed next; a chain equal to an
                # available whole token must come from the whole-token symbol
                for w in self.copy.whole:
                    if len(w) == pos and w[:-1] == prefix:
                        sid = self.copy.string_id(self.model.vocab, w[-1])
                        if sid != UNK_ID:
                            m[sid] = False
        count = int(m.sum())
        if count == 0:
            return "dead", None
        if count == 1:
            return "forced", int(np.flatnonzero(m)[0])
        return "query", m

    def symbol(self, uid: int):
        return self.copy.symbol(self.model.vocab, uid)


@dataclass(frozen=True)
class Hypothesis:
    frontier: tuple
    gen_leaves: tuple = ()
    nodes: tuple = ()
    logprob: float = 0.0
    decisions: int = 0
    order: int = 0
    pending: np.ndarray | None = field(default=None, compare=False)

    @property
    def complete(self) -> bool:
        return not self.frontier


def initial(ctx: Context) -> Hypothesis | None:
    h = Hypothesis(frontier=(("node", ctx.hole_parent, ctx.hole_index, 1, True),))
    return advance(ctx, h)


def apply(ctx: Context, hyp: Hypothesis, decision: int, lp: float) -> Hypothesis:
    """Take ``decision`` at the top slot of ``hyp``."""
    table = ctx.table
    slot = hyp.frontier[-1]
    rest = hyp.frontier[:-1]
    leaves = hyp.gen_leaves
    if slot[0] == "node":
        _, parent, k, depth, is_root = slot
        kind = NODE_KINDS[decision]
        nid = table.add(parent, kind, k)
        new = (nid,)
        if kind == EOS_NODE:
            leaves = leaves + (nid,)
            frontier = rest
        else:
            sibling = () if is_root else (("node", parent, k + 1, depth, False),)
            if kind in TERMINALS:
                child = ("sub", nid, 1, (), nid)
            else:
                child = ("node", nid, 0, depth + 1, False)
            frontier = rest + sibling + (child,)
    else:
        _, parent, pos, prefix, term = slot
        if decision == EOS_ID:
            nid = table.add(parent, EOS_TOK, 0)
            new = (nid,)
            leaves = leaves + (nid,)
            frontier = rest
        else:
            sym = ctx.symbol(decision)
            if isinstance(sym, tuple):
                ids, cur = [], parent
                for s in sym:
                    cur = table.add(cur, SUBTOKEN, 0, s)
                    ids.append(cur)
                eos = table.add(cur, EOS_TOK, 0)
                new = tuple(ids) + (eos,)
                leaves = leaves + (eos,)
                frontier = rest
            else:
                nid = table.add(parent, SUBTOKEN, 0, sym)
                new = (nid,)
                frontier = rest + (("sub", nid, pos + 1, prefix + (sym,), term),)
    return Hypothesis(frontier, leaves, hyp.nodes + new, hyp.logprob + lp, hyp.decisions + 1, hyp.order)


def advance(ctx: Context, hyp: Hypothesis) -> Hypothesis | None:
    """Apply forced decisions until a real choice is pending or the target is done.

    Returns ``None`` for a dead hypothesis (no legal option or over budget).
    """
    while hyp.frontier:
        if hyp.decisions >= ctx.caps.budget:
            return None
        kind, val = ctx.options(hyp.frontier[-1])
        if kind == "dead":
            return None
        if kind == "forced":
            hyp = apply(ctx, hyp, val, 0.0)
            continue
        return replace(hyp, pending=val)
    return replace(hyp, pending=None)


def make_query(ctx: Context, hyp: Hypothesis, trie: PathTrie, scope: int = 0) -> Query:
    slot = hyp.frontier[-1]
    dst = slot[1]
    table = ctx.table
    rows = [trie.register(table, l, dst, scope) for l in ctx.leaves]
    rows += [trie.register(table, l, dst, scope) for l in hyp.gen_leaves]
    root = trie.register(table, ROOT, dst, scope)
    if slot[0] == "node":
        return Query(np.array(rows, np.int64), root, slot[2], True, hyp.pending)
    return Query(np.array(rows, np.int64), root, 0, False, hyp.pending, slot[2], ctx.copy)


# ---------------------------------------------------------------------------
# trees


def target_tree(ctx: Context, hyp: Hypothesis) -> AstNode:
    """Augmented subtree built so far (ids are the shared table's ids)."""
    table = ctx.table
    kids: dict[int, list[int]] = {}
    for n in hyp.nodes[1:]:
        kids.setdefault(table.parent[n], []).append(n)

    def build(n: int) -> AstNode:
        ch = tuple(build(c) for c in kids.get(n, ()))
        kind = table.kind[n]
        return AstNode(kind, table.value[n] if kind == SUBTOKEN else None, ch, n, table.index[n])

    return build(hyp.nodes[0])


# ---------------------------------------------------------------------------
# teacher forcing


def _augment_target(target: AstNode) -> AstNode:
    for n in target.walk():
        if n.kind == HOLE:
            raise InvalidGold("target contains a HOLE")
    if is_augmented(target):
        return target
    return augment_tree(number_tree(target))


def gold_decision(ctx: Context, slot, gold: AstNode) -> int:
    """Decision that reproduces ``gold`` at ``slot``; ``gold`` is the parent-side node."""
    if slot[0] == "node":
        _, _, k, _, is_root = slot
        child = gold if is_root else (gold.children[k] if k < len(gold.children) else None)
        if child is None:
            raise InvalidGold("gold nonterminal is missing its EOS_NODE child")
        if child.kind not in NODE_INDEX:
            raise InvalidGold(f"kind {child.kind} cannot appear at a node slot")
        return NODE_INDEX[child.kind]
    _, _, pos, _, _ = slot
    parts, closed = chain_parts(gold)
    if not closed:
        raise InvalidGold("gold terminal chain lacks EOS_TOK")
    copy = ctx.copy
    if pos == 1 and len(parts) >= 2 and parts in copy.whole:
        return copy.whole[parts]
    if pos - 1 < len(parts):
        return copy.string_id(ctx.model.vocab, parts[pos - 1])
    return EOS_ID


def teacher_force(ctx: Context, target: AstNode, trie: PathTrie | None = None, scope: int = 0):
    """Walk the gold decision sequence for ``target``.

    Returns ``(queries, hypothesis)``: one :class:`Query` (with ``gold`` set)
    per non-forced decision, and the completed hypothesis. Paths are
    registered in ``trie`` when given.
    """
    gold_root = _augment_target(target)
    if gold_root.kind not in NODE_INDEX or gold_root.kind == EOS_NODE:
        raise InvalidGold(f"target root kind {gold_root.kind} is not generatable")
    hyp = Hypothesis(frontier=(("node", ctx.hole_parent, ctx.hole_index, 1, True),))
    gmap: dict[int, AstNode] = {}
    queries = []

    def gold_for(slot):
        if slot[0] == "node":
            return gold_root if slot[4] else gmap[slot[1]]
        return gmap[slot[4]]

    while hyp.frontier:
        if hyp.decisions >= ctx.caps.budget:
            raise InvalidGold("target exceeds the decision budget")
        slot = hyp.frontier[-1]
        kind, val = ctx.options(slot)
        want = gold_decision(ctx, slot, gold_for(slot))
        if kind == "dead":
            raise InvalidGold("no legal decision under the generation caps")
        if kind == "forced":
            if val != want:
                raise InvalidGold("target is not reachable under the generation caps")
        else:
            if not val[want]:
                raise InvalidGold("gold decision is masked under the generation caps")
            if trie is not None:
                q = make_query(ctx, replace(hyp, pending=val), trie, scope)
                q.gold = want
                queries.append(q)
        before = len(hyp.nodes)
        hyp = apply(ctx, hyp, want, 0.0)
        if slot[0] == "node":
            child = gold_root if slot[4] else gmap[slot[1]].children[slot[2]]
            gmap[hyp.nodes[before]] = child
    return queries, hyp


def strip_or_none(tree: AstNode) -> AstNode | None:
    """Plain form of an augmented target, or ``None`` if a chain is malformed."""
    try:
        return strip_eos(tree)
    except ValueError:
        return None
