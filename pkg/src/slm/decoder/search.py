"""Beam search over node-by-node decisions, and teacher-forced scoring."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from ..ast_core import AstNode, signature
from ..minilang import PrintError, print_tree
from ..nn import autograd as ag
from ..paths import PrefixCache
from .state import Context, Hypothesis, advance, apply, initial, make_query, strip_or_none, target_tree, teacher_force

log = logging.getLogger(__name__)


@dataclass
class Completion:
    tree: AstNode           # augmented target (EOS nodes, subtoken chains)
    plain: AstNode | None   # EOS-stripped target, None if not representable
    logprob: float
    code: str
    decisions: int


def inference_model(model):
    """64-bit view of a model; decoding and scoring always run in 64-bit."""
    return model if model.dtype == np.float64 else model.astype(np.float64)


def linearize(tree: AstNode) -> str:
    """Fallback text for trees the printer rejects."""
    if not tree.children:
        return tree.value if tree.value is not None else tree.kind
    return f"{tree.kind}({' '.join(linearize(c) for c in tree.children)})"


def render(tree: AstNode | None, aug: AstNode) -> str:
    if tree is not None:
        try:
            return print_tree(tree)
        except PrintError:
            return linearize(tree)
    return linearize(aug)


class Decoder:
    """Evaluates pending decisions of hypotheses sharing one context and cache."""

    def __init__(self, model, ctx: Context):
        self.model = model
        self.ctx = ctx
        self.cache = PrefixCache()
        self.p = model.tensors()

    def logprobs(self, hyps: list[Hypothesis], record: list | None = None) -> list[np.ndarray]:
        """Log-probability vector (over the pending mask's support) for each hypothesis."""
        queries = [make_query(self.ctx, h, self.cache) for h in hyps]
        self.cache.flush(self.model)
        with ag.no_grad():
            H = ag.Tensor(self.cache.all_states())
            out = self.model.forward(self.p, H, queries, record=record)
        return [out.row(j)[:len(q.mask)] for j, q in enumerate(queries)]

    def expand(self, hyp: Hypothesis, lp: np.ndarray | None = None) -> list[tuple[Hypothesis, float]]:
        """Every legal successor of ``hyp`` with its log-probability increment."""
        if lp is None:
            lp = self.logprobs([hyp])[0]
        out = []
        for d in np.flatnonzero(hyp.pending):
            nxt = advance(self.ctx, apply(self.ctx, hyp, int(d), float(lp[d])))
            if nxt is not None:
                out.append((nxt, float(lp[d])))
        return out

    def completion(self, hyp: Hypothesis) -> Completion:
        aug = target_tree(self.ctx, hyp)
        plain = strip_or_none(aug)
        return Completion(aug, plain, hyp.logprob, render(plain, aug), hyp.decisions)


def expand(model, ctx: Context, hyp: Hypothesis) -> list[tuple[Hypothesis, float]]:
    return Decoder(inference_model(model), ctx).expand(hyp)


def beam_search(model, ctx: Context, width: int = 5, k: int | None = None, record: list | None = None,
                diagnostics: dict | None = None) -> list[Completion]:
    """Top-``k`` complete targets by total log-probability (no length normalisation).

    Each step keeps the ``width`` best successors across all live hypotheses;
    exact score ties go to the earlier-generated candidate.
    """
    k = width if k is None else k
    if not 1 <= k <= width:
        raise ValueError("need width >= k >= 1")
    dec = Decoder(inference_model(model), ctx)
    start = initial(ctx)
    finished: list[Hypothesis] = []
    dead = 0
    live: list[Hypothesis] = []
    if start is None:
        dead += 1
    elif start.complete:
        finished.append(start)
    else:
        live.append(start)
    counter = 1
    steps = 0
    while live:
        steps += 1
        lps = dec.logprobs(live, record)
        cands = []
        for hi, (h, lp) in enumerate(zip(live, lps)):
            for d in np.flatnonzero(h.pending):
                cands.append((h.logprob + float(lp[d]), hi, int(d), float(lp[d])))
        # stable: score desc, then parent generation order, then decision index
        cands.sort(key=lambda c: (-c[0], live[c[1]].order, c[2]))
        nxt = []
        for score, hi, d, lp in cands:
            if len(nxt) >= width:
                break
            h = advance(ctx, apply(ctx, live[hi], d, lp))
            if h is None:
                dead += 1
                continue
            h = replace(h, order=counter)
            counter += 1
            if h.complete:
                finished.append(h)
            else:
                nxt.append(h)
        live = nxt
        if len(finished) >= k:
            kth = sorted(f.logprob for f in finished)[-k]
            if not live or max(h.logprob for h in live) <= kth:
                break
    finished.sort(key=lambda h: (-h.logprob, h.order))
    out, seen = [], set()
    for h in finished:
        c = dec.completion(h)
        sig = signature(c.tree)
        if sig in seen:
            continue
        seen.add(sig)
        out.append(c)
        if len(out) == k:
            break
    if diagnostics is not None:
        diagnostics.update(steps=steps, finished=len(finished), dead=dead, cell_steps=dec.cache.cell_steps)
    if not out:
        log.info("no complete hypothesis within budget (dead=%d)", dead)
    return out


def greedy(model, ctx: Context) -> Completion | None:
    """Arg-max decision at every step."""
    dec = Decoder(inference_model(model), ctx)
    h = initial(ctx)
    while h is not None and not h.complete:
        lp = dec.logprobs([h])[0]
        d = int(np.flatnonzero(h.pending)[np.argmax(lp[h.pending])])
        h = advance(ctx, apply(ctx, h, d, float(lp[d])))
    return None if h is None else dec.completion(h)


def score_steps(model, ctx: Context, target: AstNode) -> list[float]:
    """Per-decision gold log-probabilities under teacher forcing (forced steps omitted)."""
    dec = Decoder(inference_model(model), ctx)
    queries, _ = teacher_force(ctx, target, dec.cache)
    if not queries:
        return []
    dec.cache.flush(dec.model)
    with ag.no_grad():
        out = dec.model.forward(dec.p, ag.Tensor(dec.cache.all_states()), queries)
    return [float(out.row(j)[q.gold]) for j, q in enumerate(queries)]


def score_tree(model, ctx: Context, target: AstNode) -> float:
    """log Pr(target | context) as the sum of per-decision log-probabilities."""
    return float(sum(score_steps(model, ctx, target)))
