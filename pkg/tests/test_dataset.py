from pathlib import Path

import pytest

from slm.ast_core import HOLE, signature
from slm.dataset import (CorpusSpec, ExtractStats, InfeasibleSpec, SplitError, copy_signal, corpus_text,
                         extract_examples, gen_synthetic_corpus, read_corpus, read_examples, split, write_examples)
from slm.minilang import parse, print_method, print_tree

FIXTURE = Path(__file__).parent / "data" / "filter_corpus.mini"

# (method index, target) for every example the fixture must yield, in order
FIXTURE_EXPECTED = [(2, "x + y"), (2, "z * (x - y)"), (2, "x - y"), (3, "a + b")]


def fixture_examples():
    stats = ExtractStats()
    return extract_examples(parse(FIXTURE.read_text()).methods, stats=stats), stats


def test_fixture_filters_example_by_example():
    ex, stats = fixture_examples()
    assert [(e.method_id, print_tree(e.target)) for e in ex] == FIXTURE_EXPECTED
    assert stats.methods == 6
    assert stats.test_methods == 2      # testFoo, runTestCase
    assert stats.long_methods == 1      # 21 lines; the 20-line method survives
    assert stats.as_is == 2             # both copies of "z > 1"
    # 31 single-leaf expressions + 26 declared names (methods, params, vars)
    assert stats.single_node == 57
    assert stats.examples == 4


def test_test_method_yields_nothing():
    assert extract_examples(parse("fn testFoo(a) {\n  return a + 1;\n}").methods) == []


def test_reinsert_reproduces_method():
    methods = gen_synthetic_corpus(CorpusSpec(seed=2, method_count=15))
    for ex in extract_examples(methods):
        assert sum(n.kind == HOLE for n in ex.context.walk()) == 1
        assert signature(ex.reinsert()) == signature(methods[ex.method_id])
        assert ex.target.size() > 1


def test_corpus_deterministic_and_round_trips():
    a = corpus_text(gen_synthetic_corpus(CorpusSpec(seed=1, method_count=10)))
    b = corpus_text(gen_synthetic_corpus(CorpusSpec(seed=1, method_count=10)))
    assert a == b
    for m in gen_synthetic_corpus(CorpusSpec(seed=4, method_count=40)):
        assert print_method(parse(print_method(m)).methods[0]) == print_method(m)


def test_corpus_copy_signal():
    ex = extract_examples(gen_synthetic_corpus(CorpusSpec(seed=3, method_count=60)))
    assert copy_signal(ex) >= 0.5


def test_copy_signal_oracle():
    ex, _ = fixture_examples()
    # every fixture target reuses a variable from its context
    assert copy_signal(ex) == 1.0
    assert copy_signal([]) == 0.0


def test_infeasible_spec():
    with pytest.raises(InfeasibleSpec):
        gen_synthetic_corpus(CorpusSpec(max_depth=1))


def test_split_properties():
    ex = extract_examples(gen_synthetic_corpus(CorpusSpec(seed=2, method_count=30)))
    tr, dv, te = split(ex, (1, 0, 0))
    assert len(tr) == len(ex) and dv == [] and te == []
    a = split(ex, (0.6, 0.2, 0.2), seed=5)
    b = split(ex, (0.6, 0.2, 0.2), seed=5)
    assert [[e.id for e in p] for p in a] == [[e.id for e in p] for p in b]
    mids = [{e.method_id for e in p} for p in a]
    assert not (mids[0] & mids[1] or mids[0] & mids[2] or mids[1] & mids[2])
    with pytest.raises(SplitError):
        split(ex, (0.5, 0.2, 0.2))


def test_example_and_corpus_io(tmp_path):
    ex, _ = fixture_examples()
    write_examples(tmp_path / "ex.jsonl", ex)
    back = read_examples(tmp_path / "ex.jsonl")
    assert [e.to_obj() for e in back] == [e.to_obj() for e in ex]
    methods = parse(FIXTURE.read_text()).methods
    (tmp_path / "c.mini").write_text(corpus_text(methods))
    assert [signature(m) for m in read_corpus(tmp_path / "c.mini")] == [signature(m) for m in methods]
