"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from cogt.conllu import ROOT_HEAD, DependencyTree, SyntacticCategory
from cogt.subword import TokenizedTree


def random_tree(rng: np.random.Generator, n: int, sentence_id: str = "t") -> DependencyTree:
    """Uniform random attachment: head of node j is drawn from 0..j-1."""
    heads = [ROOT_HEAD] + [int(rng.integers(0, j)) for j in range(1, n)]
    cats = [SyntacticCategory.root] + [
        SyntacticCategory(int(rng.integers(45))) for _ in range(n - 1)
    ]
    nodes = [(f"w{j}", cats[j]) for j in range(n)]
    return DependencyTree(nodes=nodes, heads=heads, sentence_id=sentence_id)


def random_tokenized(rng: np.random.Generator, n: int, vocab_size: int) -> TokenizedTree:
    """Tokenized tree with random piece ids, skipping the tokenizer."""
    heads = [ROOT_HEAD] + [int(rng.integers(0, j)) for j in range(1, n)]
    tokens = [
        (int(rng.integers(2, vocab_size)), SyntacticCategory(int(rng.integers(45))), j)
        for j in range(n)
    ]
    return TokenizedTree(tokens=tokens, heads=heads)
