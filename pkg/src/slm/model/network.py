"""The structural language model: node embedding, path LSTM, aggregation, heads.

Row-vector convention throughout. Dimensions: ``d`` = ``d_model`` (embeddings
and the combined state ``h~``), ``u`` = ``lstm_units`` (path encodings, the
transformer and the root-path query).

Prediction for one decision point (a :class:`Query`) runs::

    H      = path encodings of every leaf -> pi(a_t)          (N, u)
    Z      = transformer(H)                                   (N, u)
    r~     = relu(r C[i]) W_r                                 (u,)
    alpha  = softmax(Z r~);  z~ = alpha Z                     (or max-pool)
    h~     = relu([z~; r~] W_g)                               (d,)
    node   : softmax((h~ U_type) E_type^T)
    subtok : softmax over symbols of  h~ E_sub^T  plus copy scores
             H_l W_c h~ (whole token) and H_l W_c_pos[i] h~ (i-th subtoken),
             summed per symbol.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..ast_core import EOS_TOK, NODE_KINDS
from ..nn import autograd as ag
from ..nn.autograd import Tensor
from ..nn.layers import glorot, init_lstm, init_transformer, lstm_forward, lstm_step, transformer_layer
from .hyper import Hyperparams
from .vocab import EOS_ID, PAD_ID, UNK_ID, Vocab

NODE_INDEX = {k: i for i, k in enumerate(NODE_KINDS)}
N_TYPES = len(NODE_KINDS)


# ---------------------------------------------------------------------------
# copy bookkeeping


@dataclass
class CopyTable:
    """Symbol universe of one context: vocabulary ids, then extra strings, then whole tokens.

    ``tok_*`` arrays list whole-token copy occurrences (leaf position, symbol);
    single-subtoken tokens point at their string symbol. ``pos_*`` arrays list
    positional subtoken occurrences (leaf position, subtoken index, symbol).
    """

    vocab_size: int
    extras: list = field(default_factory=list)
    ids: dict = field(default_factory=dict)
    whole: dict = field(default_factory=dict)
    tok_leaf: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    tok_sym: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    pos_leaf: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    pos_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    pos_sym: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def size(self) -> int:
        return self.vocab_size + len(self.extras)

    @property
    def whole_ids(self) -> np.ndarray:
        return np.fromiter(self.whole.values(), np.int64, len(self.whole))

    def string_id(self, vocab: Vocab, s: str) -> int:
        """Symbol for a subtoken string: vocabulary, then copyable extras, else UNK."""
        if s == EOS_TOK:
            return EOS_ID
        i = vocab.index.get(s)
        if i is not None:
            return i
        return self.ids.get(s, UNK_ID)

    def symbol(self, vocab: Vocab, uid: int):
        """String or whole-token tuple for a universe id."""
        if uid < self.vocab_size:
            return vocab.words[uid]
        return self.extras[uid - self.vocab_size]


def build_copy_table(vocab: Vocab, leaf_tokens, p_max: int, enabled: bool = True) -> CopyTable:
    """``leaf_tokens``: ``(leaf position, subtoken parts)`` for every terminal leaf."""
    t = CopyTable(len(vocab))
    if not enabled:
        return t

    def intern(sym) -> int:
        if isinstance(sym, str) and sym in vocab.index:
            return vocab.index[sym]
        if sym not in t.ids:
            t.ids[sym] = t.vocab_size + len(t.extras)
            t.extras.append(sym)
        return t.ids[sym]

    tok_leaf, tok_sym, pos_leaf, pos_idx, pos_sym = [], [], [], [], []
    # strings first so their ids do not depend on the whole-token layout
    for _, parts in leaf_tokens:
        for s in parts[:p_max]:
            intern(s)
    for n, parts in leaf_tokens:
        parts = tuple(parts)
        if len(parts) >= 2:
            sym = intern(parts)
            t.whole[parts] = sym
        else:
            sym = intern(parts[0])
        tok_leaf.append(n)
        tok_sym.append(sym)
        for i, s in enumerate(parts[:p_max]):
            pos_leaf.append(n)
            pos_idx.append(i)
            pos_sym.append(intern(s))
    t.tok_leaf, t.tok_sym = np.array(tok_leaf, np.int64), np.array(tok_sym, np.int64)
    t.pos_leaf, t.pos_idx = np.array(pos_leaf, np.int64), np.array(pos_idx, np.int64)
    t.pos_sym = np.array(pos_sym, np.int64)
    return t


def grouped_log_softmax(gen: np.ndarray, occ_sym, occ_score, mask=None) -> np.ndarray:
    """Log-softmax of ``gen`` after adding every occurrence score to its symbol."""
    s = np.array(gen, dtype=np.float64)
    np.add.at(s, np.asarray(occ_sym, np.int64), np.asarray(occ_score, np.float64))
    if mask is not None:
        s = np.where(mask, s, -np.inf)
    m = np.max(s)
    return s - m - np.log(np.exp(s - m).sum())


# ---------------------------------------------------------------------------
# queries


@dataclass
class Query:
    """One non-forced decision point.

    ``leaf_rows`` index encoded leaf paths (context leaves first, in the order
    the copy table refers to); ``mask`` is over node types for node queries
    and over the copy-table universe for subtoken queries.
    """

    leaf_rows: np.ndarray
    root_row: int
    child_index: int
    is_node: bool
    mask: np.ndarray
    position: int = 0
    copy: CopyTable | None = None
    gold: int = -1


@dataclass
class ForwardOut:
    """Per-chunk head outputs; ``parts`` holds ``(query ids, log-prob tensor)`` pairs."""

    parts: list = field(default_factory=list)

    def __post_init__(self):
        self._where: dict[int, tuple[int, int]] = {}

    def add(self, qids: np.ndarray, lp: Tensor):
        k = len(self.parts)
        self.parts.append((qids, lp))
        for r, j in enumerate(qids):
            self._where[int(j)] = (k, r)

    def row(self, j: int) -> np.ndarray:
        """Log-probabilities of query ``j`` (padded beyond its own universe)."""
        k, r = self._where[j]
        return self.parts[k][1].data[r]


# ---------------------------------------------------------------------------
# the model


class SLM:
    def __init__(self, hyper: Hyperparams, vocab: Vocab, params: dict | None = None,
                 seed: int = 0, dtype=np.float32):
        self.hyper = hyper.validate()
        self.vocab = vocab
        self.dtype = np.dtype(dtype)
        if params is None:
            params = self.init_params(np.random.default_rng(seed))
        self.params = {k: np.ascontiguousarray(v, dtype=self.dtype) for k, v in params.items()}
        self._elem_cache: dict = {}

    # -- parameters --------------------------------------------------------

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        h = self.hyper
        d, u = h.d_model, h.lstm_units
        p = {
            "E_sub": rng.uniform(-0.05, 0.05, (len(self.vocab), d)),
            "E_type": rng.uniform(-0.05, 0.05, (N_TYPES, h.d_type)),
            "E_index": rng.uniform(-0.05, 0.05, (h.k_idx, h.d_index)),
        }
        p.update(init_lstm(rng, "lstm", d, u, h.lstm_layers))
        p.update(init_transformer(rng, "tf", u, h.tf_ffn, h.tf_layers))
        p["C"] = np.stack([glorot(rng, u, u) for _ in range(h.k_idx)])
        p["W_r"] = glorot(rng, u, u)
        p["W_g"] = glorot(rng, 2 * u, d)
        p["U_type"] = glorot(rng, d, h.d_type)
        if h.copy_enabled:
            p["W_c"] = glorot(rng, u, d)
            p["W_c_pos"] = np.stack([glorot(rng, u, d) for _ in range(h.p_max)])
        return p

    def astype(self, dtype) -> "SLM":
        return SLM(self.hyper, self.vocab, self.params, dtype=dtype)

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.params.items()}

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    # -- node embedding ----------------------------------------------------

    def element_ids(self, elem: tuple) -> tuple[bool, int, int]:
        """``(is_subtoken, row, index_row)`` for a path element."""
        got = self._elem_cache.get(elem)
        if got is None:
            if elem[0] == "sub":
                got = (True, EOS_ID if elem[1] == EOS_TOK else self.vocab.id(elem[1]), 0)
            else:
                got = (False, NODE_INDEX[elem[1]], min(elem[2], self.hyper.k_idx - 1))
            self._elem_cache[elem] = got
        return got

    def _embed_ids(self, p, sub: np.ndarray, a: np.ndarray, b: np.ndarray) -> Tensor:
        n = len(sub)
        sub_rows = np.nonzero(sub)[0]
        node_rows = np.nonzero(~sub)[0]
        parts, order = [], np.empty(n, np.int64)
        off = 0
        if len(node_rows):
            parts.append(ag.concat([ag.take(p["E_type"], a[node_rows]), ag.take(p["E_index"], b[node_rows])], axis=-1))
            order[node_rows] = np.arange(len(node_rows))
            off = len(node_rows)
        if len(sub_rows):
            parts.append(ag.take(p["E_sub"], a[sub_rows]))
            order[sub_rows] = off + np.arange(len(sub_rows))
        if len(parts) == 1:
            return parts[0]
        return ag.take(ag.concat(parts, axis=0), order)

    def _ids(self, elems):
        ids = [self.element_ids(e) for e in elems]
        sub = np.fromiter((t[0] for t in ids), bool, len(ids))
        a = np.fromiter((t[1] for t in ids), np.int64, len(ids))
        b = np.fromiter((t[2] for t in ids), np.int64, len(ids))
        return sub, a, b

    def embed_elements(self, elems, p=None) -> Tensor:
        return self._embed_ids(p or self.tensors(), *self._ids(elems))

    def embed_node(self, element) -> np.ndarray:
        """Embedding of one path element: a subtoken string or ``(kind, child_index)``."""
        if isinstance(element, str):
            elem = ("sub", element)
        elif isinstance(element, tuple) and element and element[0] in ("sub", "node"):
            elem = element
        else:
            elem = ("node", element[0], element[1])
        with ag.no_grad():
            return self.embed_elements([elem]).data[0]

    # -- path encoding -----------------------------------------------------

    def encode_path(self, elements) -> np.ndarray:
        """Top-layer final LSTM state over one path, encoded from scratch."""
        with ag.no_grad():
            p = self.tensors()
            X = self.embed_elements(list(elements), p) if len(elements) else []
            rows = [X[i] for i in range(len(elements))]
            return lstm_forward(rows, p, self.hyper.lstm_layers, "lstm").data

    def lstm_step_numpy(self, elems, h_prev, c_prev):
        """One batched cell step for :class:`PrefixCache`; returns per-layer (h, c) arrays."""
        with ag.no_grad():
            p = self.tensors()
            x = self.embed_elements(elems, p)
            hs, cs = lstm_step(p, "lstm", x, [Tensor(h) for h in h_prev], [Tensor(c) for c in c_prev])
        return [h.data for h in hs], [c.data for c in cs]

    def encode_rows(self, p, parent: np.ndarray, depth: np.ndarray, sub, a, b,
                    training: bool = False, rng=None) -> Tensor:
        """Encode every row of a prefix trie level by level; returns (R, u)."""
        h = self.hyper
        R, u = len(parent), h.lstm_units
        X = self._embed_ids(p, sub, a, b)
        by_depth = np.argsort(depth, kind="stable")
        d_sorted = depth[by_depth]
        cuts = np.flatnonzero(np.diff(d_sorted)) + 1
        groups = np.split(by_depth, cuts)
        pos = np.empty(R, np.int64)
        prev_h = prev_c = None
        tops = []
        for rows in groups:
            pos[rows] = np.arange(len(rows))
            n = len(rows)
            if prev_h is None:
                hp = [Tensor(np.zeros((n, u), self.dtype)) for _ in range(h.lstm_layers)]
                cp = [Tensor(np.zeros((n, u), self.dtype)) for _ in range(h.lstm_layers)]
            else:
                ppos = pos[parent[rows]]
                hp = [ag.take(t, ppos) for t in prev_h]
                cp = [ag.take(t, ppos) for t in prev_c]
            prev_h, prev_c = lstm_step(p, "lstm", ag.take(X, rows), hp, cp,
                                       h.recurrent_dropout, rng, training)
            tops.append(prev_h[-1])
        allh = tops[0] if len(tops) == 1 else ag.concat(tops, axis=0)
        start = np.concatenate([[0], np.cumsum([len(g) for g in groups])[:-1]])
        level_of = np.empty(R, np.int64)
        for k, rows in enumerate(groups):
            level_of[rows] = start[k]
        return ag.take(allh, level_of + pos)

    # -- aggregation -------------------------------------------------------

    def aggregate_batch(self, p, Hq: Tensor, mask: np.ndarray, r: Tensor, child_index: np.ndarray,
                        training: bool = False, rng=None, record: list | None = None) -> Tensor:
        h = self.hyper
        Q, N, u = Hq.shape
        Z = Hq
        for layer in range(h.tf_layers):
            Z = transformer_layer(p, f"tf.{layer}", Z, mask, h.tf_heads, h.dropout, rng, training, record)
        Ci = ag.take(p["C"], np.minimum(child_index, h.k_idx - 1))
        rt = ag.relu(r.reshape((Q, 1, u)) @ Ci).reshape((Q, u)) @ p["W_r"]
        if h.root_attention:
            scores = (Z @ rt.reshape((Q, u, 1))).reshape((Q, N))
            alpha = ag.masked_softmax(scores, mask)
            if record is not None:
                record.append(("alpha", alpha.data, mask))
            zt = (alpha.reshape((Q, 1, N)) @ Z).reshape((Q, u))
        else:
            zt = ag.max_pool(Z, mask, axis=1)
        return ag.relu(ag.concat([zt, rt], axis=-1) @ p["W_g"])

    def aggregate(self, H: np.ndarray, r: np.ndarray, i: int, record: list | None = None) -> np.ndarray:
        """``h~`` for one decision: ``H`` (n, u) leaf-path encodings, ``r`` root-path encoding."""
        H = np.asarray(H, self.dtype).reshape((1, -1, self.hyper.lstm_units))
        n = H.shape[1]
        if n == 0:
            H = np.zeros((1, 1, self.hyper.lstm_units), self.dtype)
        mask = np.zeros((1, H.shape[1]), bool)
        mask[0, :n] = True
        with ag.no_grad():
            out = self.aggregate_batch(self.tensors(), Tensor(H), mask, Tensor(np.asarray(r, self.dtype)[None]),
                                       np.array([i]), record=record)
        return out.data[0]

    # -- heads -------------------------------------------------------------

    def node_logits(self, p, ht: Tensor) -> Tensor:
        return (ht @ p["U_type"]) @ ag.transpose(p["E_type"], (1, 0))

    def predict_node(self, ht: np.ndarray, mask=None) -> np.ndarray:
        """Distribution over node types (``NODE_KINDS`` order)."""
        with ag.no_grad():
            lg = self.node_logits(self.tensors(), Tensor(np.asarray(ht, self.dtype)[None]))
            return np.exp(ag.masked_log_softmax(lg, None if mask is None else mask[None]).data[0])

    def predict_subtoken(self, ht: np.ndarray, H: np.ndarray, copy: CopyTable, position: int,
                         mask=None) -> np.ndarray:
        """Distribution over ``copy``'s symbol universe at subtoken ``position`` (1-based)."""
        H = np.asarray(H, self.dtype)
        q = Query(np.arange(len(H)), 0, 0, False, mask if mask is not None else self.default_sub_mask(copy, position),
                  position, copy)
        Hrows = np.concatenate([H.reshape(-1, self.hyper.lstm_units),
                                np.zeros((1, self.hyper.lstm_units), self.dtype)])
        with ag.no_grad():
            p = self.tensors()
            lp = self._sub_head(p, Tensor(np.asarray(ht, self.dtype)[None]), [q], Hrows=Tensor(Hrows))
        return np.exp(lp.data[0][:copy.size])

    def default_sub_mask(self, copy: CopyTable, position: int) -> np.ndarray:
        m = np.ones(copy.size, bool)
        m[PAD_ID] = False
        if position <= 1:
            m[EOS_ID] = False
        else:
            m[copy.whole_ids] = False
        return m

    def _sub_head(self, p, hs: Tensor, qs: list[Query], Hq: Tensor | None = None,
                  Hrows: Tensor | None = None) -> Tensor:
        """Masked log-probabilities (Qs, Umax) for subtoken queries."""
        h = self.hyper
        Qs = len(qs)
        V = len(self.vocab)
        Umax = max(q.copy.size if q.copy is not None else V for q in qs)
        logits = hs @ ag.transpose(p["E_sub"], (1, 0))
        if Umax > V:
            logits = ag.concat([logits, Tensor(np.zeros((Qs, Umax - V), self.dtype))], axis=-1)
        if h.copy_enabled and any(q.copy is not None and len(q.copy.pos_sym) for q in qs):
            if Hq is None:
                # single-query path used by predict_subtoken
                n = max(len(q.leaf_rows) for q in qs)
                idx = np.zeros((Qs, n), np.int64)
                for j, q in enumerate(qs):
                    idx[j, :len(q.leaf_rows)] = q.leaf_rows
                Hq = ag.take(Hrows, idx)
            N, u = Hq.shape[1], Hq.shape[2]
            g = hs @ ag.transpose(p["W_c"], (1, 0))
            s_tok = (Hq @ g.reshape((Qs, u, 1))).reshape((Qs * N,))
            P = h.p_max
            W2 = ag.transpose(p["W_c_pos"], (2, 0, 1)).reshape((h.d_model, P * u))
            G = (hs @ W2).reshape((Qs, P, u))
            s_pos = (Hq @ ag.transpose(G, (0, 2, 1))).reshape((Qs * N * P,))
            ts, td, ps, pd = [], [], [], []
            for j, q in enumerate(qs):
                c = q.copy
                if c is None:
                    continue
                if q.position == 1:
                    ts.append(j * N + c.tok_leaf)
                    td.append(j * Umax + c.tok_sym)
                ps.append((j * N + c.pos_leaf) * P + c.pos_idx)
                pd.append(j * Umax + c.pos_sym)
            flat = logits.reshape((Qs * Umax,))
            if ts:
                flat = flat + ag.scatter_add(s_tok, (np.concatenate(ts),), (Qs * Umax,), (np.concatenate(td),))
            if ps:
                flat = flat + ag.scatter_add(s_pos, (np.concatenate(ps),), (Qs * Umax,), (np.concatenate(pd),))
            logits = flat.reshape((Qs, Umax))
        mask = np.zeros((Qs, Umax), bool)
        for j, q in enumerate(qs):
            mask[j, :len(q.mask)] = q.mask
        return ag.masked_log_softmax(logits, mask)

    # -- batched forward ---------------------------------------------------

    def forward(self, p, H: Tensor, queries: list[Query], training: bool = False, rng=None,
                record: list | None = None, max_cells: int = 16384) -> ForwardOut:
        """Log-probabilities for a batch of queries given encoded path rows ``H``.

        Queries are processed in chunks of similar leaf count so that padding
        stays small; results do not depend on the chunking.
        """
        lens = np.array([len(q.leaf_rows) for q in queries])
        order = np.argsort(lens, kind="stable")
        out = ForwardOut()
        start = 0
        while start < len(order):
            end = start + 1
            while end < len(order) and (end - start + 1) * max(1, lens[order[end]]) <= max_cells:
                end += 1
            self._forward_chunk(p, H, queries, order[start:end], out, training, rng, record)
            start = end
        return out

    def _forward_chunk(self, p, H, queries, qids, out: ForwardOut, training, rng, record):
        qs = [queries[j] for j in qids]
        Q = len(qs)
        N = max(1, max(len(q.leaf_rows) for q in qs))
        idx = np.zeros((Q, N), np.int64)
        mask = np.zeros((Q, N), bool)
        for j, q in enumerate(qs):
            n = len(q.leaf_rows)
            idx[j, :n] = q.leaf_rows
            mask[j, :n] = True
        Hq = ag.take(H, idx)
        r = ag.take(H, np.array([q.root_row for q in qs], np.int64))
        ci = np.array([q.child_index for q in qs], np.int64)
        ht = self.aggregate_batch(p, Hq, mask, r, ci, training, rng, record)
        is_node = np.array([q.is_node for q in qs], bool)
        node_q, sub_q = np.flatnonzero(is_node), np.flatnonzero(~is_node)
        if len(node_q):
            nmask = np.stack([qs[j].mask for j in node_q])
            lp = ag.masked_log_softmax(self.node_logits(p, ag.take(ht, node_q)), nmask)
            if record is not None:
                record.append(("node", np.exp(lp.data), nmask))
            out.add(qids[node_q], lp)
        if len(sub_q):
            Hs = ag.take(Hq, sub_q) if self.hyper.copy_enabled else None
            lp = self._sub_head(p, ag.take(ht, sub_q), [qs[j] for j in sub_q], Hq=Hs)
            if record is not None:
                record.append(("subtoken", np.exp(lp.data), np.isfinite(lp.data)))
            out.add(qids[sub_q], lp)

    def gold_loss(self, out: ForwardOut, queries: list[Query]) -> Tensor:
        """Mean negative log-likelihood of the ``gold`` field over all queries."""
        total = None
        for qids, lp in out.parts:
            gold = np.array([queries[j].gold for j in qids], np.int64)
            picked = ag.sum_(lp[np.arange(len(qids)), gold])
            total = picked if total is None else total + picked
        return ag.scale(total, -1.0 / len(queries))
