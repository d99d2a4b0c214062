"""Shared fixtures and hypothesis strategies."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from slm.ast_core import AstNode

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

WORDS = ("item", "count", "value", "max", "http", "server", "node", "list", "to", "lower", "case", "id")

BINARY = ("Plus", "Minus", "Times", "Divide", "Greater", "Less", "GreaterEq", "LessEq", "Equals",
          "NotEquals", "And", "Or")


@st.composite
def identifiers(draw):
    parts = draw(st.lists(st.sampled_from(WORDS), min_size=1, max_size=3))
    return parts[0] + "".join(p.capitalize() for p in parts[1:])


def terminals():
    return st.one_of(
        identifiers().map(lambda v: AstNode("NAME", v)),
        st.integers(0, 999).map(lambda v: AstNode("INT", str(v))),
        st.sampled_from(WORDS).map(lambda v: AstNode("STR", v)),
    )


def _extend(children):
    name = identifiers().map(lambda v: AstNode("NAME", v))
    return st.one_of(
        st.tuples(st.sampled_from(BINARY), children, children).map(lambda t: AstNode(t[0], None, (t[1], t[2]))),
        st.tuples(st.sampled_from(("Not", "Neg")), children).map(lambda t: AstNode(t[0], None, (t[1],))),
        st.tuples(children, name).map(lambda t: AstNode("FieldAccess", None, t)),
        st.tuples(children, children).map(lambda t: AstNode("Index", None, t)),
        st.tuples(children, st.lists(children, max_size=2)).map(
            lambda t: AstNode("Call", None, (t[0], AstNode("ArgList", None, tuple(t[1]))))),
        st.tuples(children, children, children).map(lambda t: AstNode("Ternary", None, t)),
    )


def expressions(max_leaves: int = 8):
    """Random well-formed plain expression trees."""
    return st.recursive(terminals(), _extend, max_leaves=max_leaves)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# --------------------------------------------------------------------------- tiny models and corpora

def tiny_hyper(**kw):
    from slm.model import Hyperparams

    base = dict(d_model=8, d_index=4, lstm_units=8, tf_layers=1, tf_heads=2, tf_ffn=8, vocab_size=40,
                k_idx=8, p_max=4, batch_targets=8)
    base.update(kw)
    return Hyperparams(**base).validate()


def tiny_examples(seed: int = 5, methods: int = 12):
    from slm.dataset import CorpusSpec, extract_examples, gen_synthetic_corpus

    return extract_examples(gen_synthetic_corpus(CorpusSpec(seed=seed, method_count=methods)))


def tiny_model(examples=None, seed: int = 0, dtype=np.float64, scale: float = 0.0, **kw):
    """Small random model; ``scale`` adds Gaussian noise so distributions are far from uniform."""
    from slm.model import SLM
    from slm.model.training import build_vocab

    hyper = tiny_hyper(**kw)
    examples = tiny_examples() if examples is None else examples
    model = SLM(hyper, build_vocab(examples, hyper.vocab_size), seed=seed, dtype=dtype)
    if scale:
        r = np.random.default_rng(seed + 100)
        for v in model.params.values():
            v += r.normal(0.0, scale, v.shape).astype(v.dtype)
    return model


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
