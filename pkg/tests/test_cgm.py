import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cogt.cgm import (
    COGT,
    FULLY_PARALLEL,
    SEQUENTIAL_AR,
    PredictionMode,
    build_cgm,
    mean_parent_count,
    mixed,
    schedule,
)
from cogt.errors import CogtError
from cogt.subword import tokenize_tree
from cogt.conllu import ROOT_HEAD
from helpers import random_tokenized


def test_mode_singletons():
    assert COGT.kind == "cogt"
    assert SEQUENTIAL_AR.kind == "ar"
    assert FULLY_PARALLEL.kind == "parallel"
    assert mixed().parallel_fraction == 0.75
    assert mixed(0.5).parallel_fraction == 0.5


def test_mode_validation():
    with pytest.raises(CogtError):
        PredictionMode("bogus")
    with pytest.raises(CogtError):
        mixed(1.5)


def test_chain_tree():
    rng = np.random.default_rng(0)
    tok = random_tokenized(rng, 1, 8)
    tok.heads[:] = [ROOT_HEAD]
    g = build_cgm(tok)
    assert g.ancestors == [[]]
    assert g.levels == [[0]]


def test_ancestor_closure_explicit():
    rng = np.random.default_rng(0)
    tok = random_tokenized(rng, 5, 8)
    # 0 <- 1 <- 2, 0 <- 3, 3 <- 4
    tok.heads[:] = [ROOT_HEAD, 0, 1, 0, 3]
    g = build_cgm(tok)
    assert g.ancestors == [[], [0], [0, 1], [0], [0, 3]]
    assert g.levels == [[0], [1, 3], [2, 4]]
    assert schedule(g) is g.levels
    assert mean_parent_count(g) == pytest.approx(6 / 5)


@settings(max_examples=80, deadline=None)
@given(st.integers(min_value=1, max_value=40), st.integers(min_value=0, max_value=2**31))
def test_closure_and_schedule_properties(n, seed):
    rng = np.random.default_rng(seed)
    tok = random_tokenized(rng, n, 16)
    g = build_cgm(tok)
    flat = [j for level in g.levels for j in level]
    assert sorted(flat) == list(range(n))  # partition
    rank = {j: r for r, level in enumerate(g.levels) for j in level}
    for j in range(n):
        anc = g.ancestors[j]
        assert anc == sorted(anc)
        h = tok.heads[j]
        if h == ROOT_HEAD:
            assert anc == []
        else:
            assert set(anc) == {h} | set(g.ancestors[h])  # closure recurrence
        for a in anc:
            assert rank[a] < rank[j]  # ancestors strictly earlier
        assert rank[j] == len(anc)  # depth == ancestor count
