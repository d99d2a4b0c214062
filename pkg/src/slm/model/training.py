"""Teacher-forced training: per-example plans, bucketed batches, Adam."""

from __future__ import annotations

import contextlib
import logging
import time
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from ..ast_core import AstNode, terminal_parts
from ..nn import autograd as ag
from ..nn.optim import AdamState, adam_step
from ..paths import PathTrie
from .hyper import Hyperparams
from .network import SLM, Query
from .vocab import Vocab

log = logging.getLogger(__name__)


class EmptyCorpus(ValueError):
    pass


@dataclass
class Plan:
    """Everything one example contributes to a batch, with example-local row ids."""

    example_id: str
    parent: np.ndarray
    depth: np.ndarray
    sub: np.ndarray
    a: np.ndarray
    b: np.ndarray
    queries: list[Query]

    @property
    def n_rows(self) -> int:
        return len(self.parent)


def build_vocab(examples, size: int) -> Vocab:
    """Most frequent subtokens over contexts and targets."""
    counts: Counter = Counter()
    for ex in examples:
        for tree in (ex.context, ex.target):
            for n in tree.walk():
                if n.is_terminal and n.value:
                    counts.update(terminal_parts(n))
    return Vocab.build(counts, size)


def make_plan(model: SLM, context: AstNode, target: AstNode, caps=None, example_id: str = "") -> Plan:
    from ..decoder.state import Context, teacher_force

    ctx = Context(model, context, caps)
    trie = PathTrie()
    queries, _ = teacher_force(ctx, target, trie)
    sub, a, b = model._ids(trie.element)
    return Plan(example_id, np.array(trie.parent, np.int64), np.array(trie.depth, np.int64), sub, a, b, queries)


def make_plans(model: SLM, examples, caps=None) -> tuple[list[Plan], int]:
    """Plans for every example whose gold target is reachable; returns (plans, skipped)."""
    from ..decoder.state import InvalidGold

    plans, skipped = [], 0
    for ex in examples:
        try:
            plan = make_plan(model, ex.context, ex.target, caps, getattr(ex, "id", ""))
        except InvalidGold as e:
            log.debug("skipping %s: %s", getattr(ex, "id", "?"), e)
            skipped += 1
            continue
        if plan.queries:
            plans.append(plan)
    return plans, skipped


def batch_loss(model: SLM, p, plans: list[Plan], training: bool = False, rng=None, record=None):
    """Mean per-decision negative log-likelihood over a batch of plans."""
    offs = np.cumsum([0] + [pl.n_rows for pl in plans])
    parent = np.concatenate([np.where(pl.parent >= 0, pl.parent + o, -1) for pl, o in zip(plans, offs)])
    depth = np.concatenate([pl.depth for pl in plans])
    sub = np.concatenate([pl.sub for pl in plans])
    a = np.concatenate([pl.a for pl in plans])
    b = np.concatenate([pl.b for pl in plans])
    queries = []
    for pl, o in zip(plans, offs):
        queries.extend(replace(q, leaf_rows=q.leaf_rows + o, root_row=q.root_row + o) for q in pl.queries)
    H = model.encode_rows(p, parent, depth, sub, a, b, training, rng)
    out = model.forward(p, H, queries, training, rng, record)
    return model.gold_loss(out, queries), len(queries)


def example_loss(model: SLM, context: AstNode, target: AstNode, caps=None) -> tuple[float, dict]:
    """Per-decision mean NLL of one example and its gradient for every parameter."""
    plan = make_plan(model, context, target, caps)
    p = model.tensors(requires_grad=True)
    loss, _ = batch_loss(model, p, [plan])
    ag.backward(loss)
    return float(loss.data), {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in p.items()}


def make_batches(plans: list[Plan], batch_targets: int, rng: np.random.Generator) -> list[list[Plan]]:
    """Bucket plans of similar prediction count into batches of ``batch_targets`` examples."""
    keys = rng.permutation(len(plans))
    order = sorted(range(len(plans)), key=lambda i: (len(plans[i].queries), keys[i]))
    batches = [[plans[i] for i in order[j:j + batch_targets]] for j in range(0, len(order), batch_targets)]
    return [batches[i] for i in rng.permutation(len(batches))]


@contextlib.contextmanager
def deterministic_threads(enabled: bool):
    """Pin BLAS to one thread so reductions happen in a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


@dataclass
class TrainConfig:
    epochs: int = 10
    seed: int = 0
    deterministic: bool = True
    eval_every: int = 1
    dev_width: int = 5
    train_eval_width: int | None = None
    target_train_acc: float | None = None
    max_seconds: float | None = None
    checkpoint: str | None = None


@dataclass
class TrainResult:
    model: SLM
    adam: AdamState
    losses: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)
    dev_acc: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    steps: int = 0
    skipped: int = 0
    seconds: float = 0.0


def accuracy_at_1(model: SLM, examples, width: int, caps=None) -> float:
    from ..decoder.search import beam_search, inference_model
    from ..decoder.state import Context
    from ..metrics import EvalRecord, exact_match_at_k

    m = inference_model(model)
    recs = []
    for ex in examples:
        res = beam_search(m, Context(m, ex.context, caps), width=width, k=1)
        recs.append(EvalRecord(getattr(ex, "id", ""), [r.tree for r in res], ex.target))
    return exact_match_at_k(recs, 1) if recs else 0.0


def train(examples, hyper: Hyperparams | None = None, config: TrainConfig | None = None, dev=None,
          vocab: Vocab | None = None, model: SLM | None = None, adam: AdamState | None = None,
          caps=None, callback=None) -> TrainResult:
    """Train a model with Adam on teacher-forced per-decision cross entropy."""
    from .checkpoint import save_checkpoint

    config = config or TrainConfig()
    examples = list(examples)
    if not examples:
        raise EmptyCorpus("no training examples")
    if model is None:
        hyper = hyper or Hyperparams.desk()
        vocab = vocab or build_vocab(examples, hyper.vocab_size)
        model = SLM(hyper, vocab, seed=config.seed)
    hyper = model.hyper
    adam = adam or AdamState(lr=hyper.lr, decay_factor=hyper.decay_factor, decay_every=hyper.decay_every)
    rng = np.random.default_rng(config.seed)
    res = TrainResult(model, adam)
    t0 = time.perf_counter()
    with deterministic_threads(config.deterministic):
        plans, res.skipped = make_plans(model, examples, caps)
        if not plans:
            raise EmptyCorpus("no example has a reachable target")
        for epoch in range(config.epochs):
            tot, cnt = 0.0, 0
            for batch in make_batches(plans, hyper.batch_targets, rng):
                p = model.tensors(requires_grad=True)
                loss, n = batch_loss(model, p, batch, training=True, rng=rng)
                ag.backward(loss)
                grads = {k: t.grad for k, t in p.items() if t.grad is not None}
                adam_step(model.params, grads, adam)
                res.losses.append(float(loss.data))
                res.steps += 1
                tot += float(loss.data) * n
                cnt += n
            res.epoch_losses.append(tot / cnt)
            msg = f"epoch {epoch + 1} loss {tot / cnt:.4f}"
            if (epoch + 1) % config.eval_every == 0:
                if config.target_train_acc is not None:
                    acc = accuracy_at_1(model, examples, config.train_eval_width or config.dev_width, caps)
                    res.train_acc.append((epoch + 1, acc))
                    msg += f" train acc@1 {acc:.3f}"
                if dev:
                    acc = accuracy_at_1(model, dev, config.dev_width, caps)
                    res.dev_acc.append((epoch + 1, acc))
                    msg += f" dev acc@1 {acc:.3f}"
            log.info(msg)
            if callback is not None:
                callback(epoch + 1, res)
            if config.checkpoint:
                save_checkpoint(config.checkpoint, model, adam)
            if config.target_train_acc is not None and res.train_acc and res.train_acc[-1][0] == epoch + 1 \
                    and res.train_acc[-1][1] >= config.target_train_acc:
                break
            if config.max_seconds is not None and time.perf_counter() - t0 > config.max_seconds:
                break
    res.seconds = time.perf_counter() - t0
    return res
