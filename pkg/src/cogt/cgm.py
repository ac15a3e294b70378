"""Causal graphical model over a tokenized tree: ancestor closures and level schedule."""

from __future__ import annotations

from dataclasses import dataclass

from .conllu import ROOT_HEAD, SyntacticCategory
from .errors import CogtError
from .subword import TokenizedTree

MODE_KINDS = ("cogt", "ar", "parallel", "mixed")


@dataclass(frozen=True)
class PredictionMode:
    """Prediction regime; `mixed` resolves per-sample into parallel or ar."""

    kind: str
    parallel_fraction: float = 0.75

    def __post_init__(self):
        if self.kind not in MODE_KINDS:
            raise CogtError(f"unknown mode kind {self.kind!r}")
        if not 0.0 <= self.parallel_fraction <= 1.0:
            raise CogtError(f"parallel_fraction {self.parallel_fraction} outside [0, 1]")


COGT = PredictionMode("cogt")
SEQUENTIAL_AR = PredictionMode("ar")
FULLY_PARALLEL = PredictionMode("parallel")


def mixed(parallel_fraction: float = 0.75) -> PredictionMode:
    return PredictionMode("mixed", parallel_fraction)


@dataclass
class Cgm:
    """Per-token sorted ancestor sets and the depth partition of token indices."""

    n: int
    ancestors: list[list[int]]
    categories: list[SyntacticCategory]
    levels: list[list[int]]


def build_cgm(tree: TokenizedTree) -> Cgm:
    """Transitive head closure per token plus levels ascending by depth."""
    n = tree.n
    ancestors: list[list[int]] = [None] * n  # type: ignore[list-item]

    def close(j: int) -> list[int]:
        if ancestors[j] is None:
            h = tree.heads[j]
            ancestors[j] = [] if h == ROOT_HEAD else sorted(close(h) + [h])
        return ancestors[j]

    for j in range(n):
        close(j)
    depths = [len(a) for a in ancestors]
    levels = [[] for _ in range(max(depths) + 1)] if n else []
    for j, d in enumerate(depths):
        levels[d].append(j)
    return Cgm(n=n, ancestors=ancestors, categories=tree.categories(), levels=levels)


def schedule(cgm: Cgm) -> list[list[int]]:
    """Level-order generation schedule; concatenation is a topological order."""
    return cgm.levels


def mean_parent_count(cgm: Cgm) -> float:
    """Average ancestor-set size; diagnostic for the sparsity of the factorization."""
    if cgm.n == 0:
        return 0.0
    return sum(len(a) for a in cgm.ancestors) / cgm.n
