"""Self-checks: finite-difference gradient validation on a micro model and the
copy-mechanism ablation protocol on a synthetic corpus."""

from __future__ import annotations

from collections import Counter

import numpy as np

from .ast_core import AstNode, terminal_parts
from .minilang import parse_expression, parse_method
from .model.hyper import Hyperparams
from .model.network import SLM
from .model.training import batch_loss, make_plan
from .model.vocab import Vocab
from .nn.gradcheck import grad_check

MICRO_SOURCE = """fn scaleItems(items, limit, offset) {
  total = items + limit;
  maxValue = total / 2;
  return total * /*HOLE*/;
}"""
MICRO_TARGET = "limit - itemCount"


def micro_hyper(**kw) -> Hyperparams:
    """d=4, vocab 12, one LSTM layer, one transformer layer."""
    base = dict(d_model=4, d_index=2, lstm_units=4, lstm_layers=1, tf_layers=1, tf_heads=2, tf_ffn=4,
                vocab_size=12, k_idx=4, p_max=3, batch_targets=1)
    base.update(kw)
    return Hyperparams(**base).validate()


def micro_problem(hyper: Hyperparams | None = None, seed: int = 0) -> tuple[SLM, AstNode, AstNode]:
    """A 64-bit micro model with one (context, target) pair."""
    hyper = hyper or micro_hyper()
    context = parse_method(MICRO_SOURCE, allow_hole=True)
    target = parse_expression(MICRO_TARGET)
    counts: Counter = Counter()
    for tree in (context, target):
        for n in tree.walk():
            if n.is_terminal and n.value:
                counts.update(terminal_parts(n))
    model = SLM(hyper, Vocab.build(counts, hyper.vocab_size), seed=seed, dtype=np.float64)
    # spread initial weights so no gradient is vanishingly small
    rng = np.random.default_rng(seed + 1)
    for k, v in model.params.items():
        v += rng.normal(0.0, 0.3, v.shape)
    return model, context, target


def micro_gradcheck(seed: int = 0, eps: float = 1e-6) -> float:
    """Max relative error of the micro model's 64-bit gradient over every parameter.

    Finite differences are taken in extended precision so that round-off
    in the oracle stays far below the errors being measured.
    """
    model, context, target = micro_problem(seed=seed)
    plan = make_plan(model, context, target)
    oracle = model.astype(np.longdouble)
    return grad_check(lambda p: batch_loss(model, p, [plan])[0], model.params, eps=eps,
                      oracle_fn=lambda p: batch_loss(oracle, p, [plan])[0], oracle_dtype=np.longdouble)


# --------------------------------------------------------------------------- copy ablation

ABLATION_METHODS = 330
ABLATION_TRAIN = 2000
ABLATION_TEST = 200


def ablation_data(seed: int):
    """(train, test) examples: a seeded corpus split by method, truncated to 2,000 / 200."""
    from .dataset import CorpusSpec, extract_examples, gen_synthetic_corpus, split

    examples = extract_examples(gen_synthetic_corpus(CorpusSpec(seed=seed, method_count=ABLATION_METHODS)))
    train, _, test = split(examples, (0.9, 0.0, 0.1), seed)
    return train[:ABLATION_TRAIN], test[:ABLATION_TEST]


def ablation_hyper(copy_enabled: bool) -> Hyperparams:
    """A narrowed desk model; the two arms differ only in the copy switch."""
    return Hyperparams.desk(d_model=32, d_index=8, lstm_units=32, tf_layers=1, tf_ffn=64, lr=3e-3,
                            batch_targets=16, copy_enabled=copy_enabled)


def copy_ablation(seed: int, epochs: int = 6, width: int = 5) -> dict:
    """Test acc@1 with and without copying, trained on the same data and seed."""
    from .model.training import TrainConfig, accuracy_at_1, train

    train_ex, test_ex = ablation_data(seed)
    out = {"seed": seed, "train": len(train_ex), "test": len(test_ex)}
    for copy in (True, False):
        res = train(train_ex, ablation_hyper(copy), TrainConfig(epochs=epochs, seed=seed, deterministic=True))
        out["copy" if copy else "noCopy"] = accuracy_at_1(res.model, test_ex, width)
    return out
