import itertools
import math

import numpy as np
import pytest

from slm.ast_core import HOLE, AstNode, name, node, signature
from slm.decoder import GenerationCaps
from slm.decoder.search import beam_search, greedy, score_steps, score_tree
from slm.decoder.state import Context, InvalidGold, NoHole
from slm.minilang import parse_method
from slm.model import SLM, Hyperparams, Vocab
from slm.model.training import batch_loss, make_plan
from conftest import tiny_examples, tiny_model

SRC = """fn scaleItems(items, limit, itemCount) {
  var total = items.length + limit;
  if (total > itemCount) {
    total = limit;
  }
  return total * /*HOLE*/;
}"""


def ctx_for(model, src=SRC, caps=None):
    return Context(model, parse_method(src, allow_hole=True), caps)


def test_context_requires_one_hole():
    m = tiny_model()
    with pytest.raises(NoHole):
        Context(m, parse_method("fn f(a) {\n  return a;\n}"))
    two = node("Plus", node(HOLE), node(HOLE))
    with pytest.raises(NoHole):
        Context(m, node("Return", two))


def test_width_one_is_greedy():
    m = tiny_model(scale=0.5)
    for ex in tiny_examples()[:10]:
        ctx = Context(m, ex.context)
        b = beam_search(m, ctx, width=1)
        g = greedy(m, ctx)
        if g is None:
            assert b == []
            continue
        assert b[0].code == g.code
        assert b[0].logprob == pytest.approx(g.logprob, abs=1e-12)


def test_beam_scores_equal_teacher_forced():
    m = tiny_model(scale=0.5)
    for ex in tiny_examples()[:8]:
        ctx = Context(m, ex.context)
        res = beam_search(m, ctx, width=4)
        assert [r.logprob for r in res] == sorted((r.logprob for r in res), reverse=True)
        for r in res:
            if r.plain is not None:
                assert score_tree(m, ctx, r.plain) == pytest.approx(r.logprob, abs=1e-9)


def test_stepwise_sum_matches_training_loss():
    m = tiny_model(scale=0.5)
    for ex in tiny_examples()[:6]:
        ctx = Context(m, ex.context)
        steps = score_steps(m, ctx, ex.target)
        assert all(s <= 0 for s in steps)
        plan = make_plan(m, ex.context, ex.target)
        loss, n = batch_loss(m, m.tensors(), [plan])
        assert n == len(steps)
        assert -float(loss.data) * n == pytest.approx(sum(steps), abs=1e-9)


def test_beam_k_bounds():
    m = tiny_model()
    ctx = ctx_for(m)
    with pytest.raises(ValueError):
        beam_search(m, ctx, width=2, k=3)
    assert len(beam_search(m, ctx, width=5, k=5)) <= 5


def test_depth_cap_allows_only_terminals():
    m = tiny_model(scale=0.5)
    ctx = ctx_for(m, caps=GenerationCaps(max_depth=1, max_subtokens=4))
    for r in beam_search(m, ctx, width=5):
        assert r.plain is not None and not r.plain.children
    with pytest.raises(InvalidGold):
        score_tree(m, ctx, node("Plus", name("a"), name("b")))


def test_unknown_subtoken_scores_as_unk():
    m = tiny_model(scale=0.5)
    ctx = ctx_for(m)
    a = score_tree(m, ctx, name("qqqzz"))
    b = score_tree(m, ctx, name("wwwzz"))
    assert a == pytest.approx(b, abs=1e-12)


def test_whole_token_is_the_unique_route():
    # "itemCount" is in context: the chain item,count must come from the whole-token symbol
    m = tiny_model(scale=0.5)
    ctx = ctx_for(m)
    p_whole = math.exp(score_tree(m, ctx, name("itemCount")))
    assert 0.0 < p_whole < 1.0
    res = beam_search(m, ctx, width=5)
    sigs = [signature(r.tree) for r in res]
    assert len(sigs) == len(set(sigs))


# --------------------------------------------------------------------------- exhaustive probability mass


def micro_model(seed=0):
    hyper = Hyperparams(d_model=8, d_index=4, lstm_units=8, tf_layers=1, tf_heads=2, tf_ffn=8, vocab_size=5,
                        k_idx=4, p_max=2)
    m = SLM(hyper, Vocab(["<pad>", "<unk>", "<eos>", "a", "b"]), seed=seed, dtype=np.float64)
    r = np.random.default_rng(seed + 1)
    for v in m.params.values():
        v += r.normal(0.0, 0.5, v.shape)
    return m


def enumerate_trees(kinds, subtokens, max_sub, max_arity):
    """Every plain tree of depth <= 2: a terminal, or a nonterminal over 0..max_arity terminals."""
    values = []
    for n in range(1, max_sub + 1):
        for parts in itertools.product(subtokens, repeat=n):
            values.append(parts[0] + "".join(p.capitalize() for p in parts[1:]))
    # literals are atomic: one subtoken each
    leaves = [AstNode("NAME", v) for v in values] + [AstNode("INT", v) for v in subtokens]
    out = list(leaves)
    for k in kinds:
        for arity in range(max_arity + 1):
            for ch in itertools.product(leaves, repeat=arity):
                out.append(AstNode(k, None, tuple(ch)))
    return out


def test_exhaustive_mass_sums_to_one():
    m = micro_model()
    # context has in-vocabulary "a", an out-of-vocabulary "qq" and a whole token "bA"
    ctx = Context(m, node("Return", node("Plus", name("qq"), node("Times", name("bA"), node(HOLE)))),
                  GenerationCaps(max_depth=2, max_arity=2, max_subtokens=2,
                                 allowed_kinds=frozenset({"Neg", "NAME", "INT"})))
    # "zz" stands for every subtoken outside the universe (all map to UNK)
    trees = enumerate_trees(["Neg"], ["a", "b", "qq", "zz"], 2, 2)
    assert len({signature(t) for t in trees}) == len(trees)
    total = sum(math.exp(score_tree(m, ctx, t)) for t in trees)
    assert total == pytest.approx(1.0, abs=1e-9)


def test_literal_chains_are_atomic():
    m = tiny_model(scale=0.5)
    ctx = ctx_for(m, caps=GenerationCaps(max_depth=1, allowed_kinds=frozenset({"INT", "STR"})))
    for r in beam_search(m, ctx, width=5):
        assert r.plain.kind in ("INT", "STR")
        assert score_tree(m, ctx, r.plain) == pytest.approx(r.logprob, abs=1e-9)
