"""Caption scoring by level-order semi-parallel prediction, plus retrieval evaluation."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import masks
from .cgm import COGT, SEQUENTIAL_AR, FULLY_PARALLEL, PredictionMode, build_cgm, schedule
from .decoder import DecoderConfig, DecoderParams, VisualFeatures, forward, load_visual
from .errors import CogtError
from .subword import PAD_ID, TokenizedTree, Vocab, tokenize_tree
from .tensor import log_softmax_np

TIERS = ("trivial", "easy", "medium", "hard", "swap")


class UnparseableCandidate(CogtError):
    def __init__(self, index: int, candidate: str, reason: str = ""):
        super().__init__(f"candidate {index} unparseable: {candidate!r} {reason}".rstrip())
        self.index = index
        self.candidate = candidate


@dataclass
class RetrievalTask:
    visual: VisualFeatures
    candidates: list[str]
    positive_index: int
    tier: str | None = None

    def __post_init__(self):
        if not self.candidates:
            raise CogtError("task with no candidates")
        if not 0 <= self.positive_index < len(self.candidates):
            raise CogtError(f"positive_index {self.positive_index} out of range")
        if self.tier is not None and self.tier not in TIERS:
            raise CogtError(f"unknown tier {self.tier!r}")


def scoring_mode(mode: PredictionMode) -> PredictionMode:
    """Concrete regime used at inference; mixed-trained models score sequentially."""
    return SEQUENTIAL_AR if mode.kind == "mixed" else mode


def _mode_levels(mode: PredictionMode, cgm) -> list[list[int]]:
    if mode.kind == "cogt":
        return schedule(cgm)
    if mode.kind == "ar":
        return [[j] for j in range(cgm.n)]
    return [list(range(cgm.n))]


def score_caption(
    params: DecoderParams,
    cfg: DecoderConfig,
    tok: TokenizedTree,
    visual: VisualFeatures,
    mode: PredictionMode = COGT,
    *,
    path: str = "single",
    length_normalize: bool = False,
) -> float:
    """Log-likelihood of the caption under the factorization of the given regime.

    path="level" walks the generation schedule with future-level visible tokens
    padded out; path="single" is the teacher-forced fast path. Both agree because
    the masks already exclude everything a slot may not see.
    """
    mode = scoring_mode(mode)
    cgm = build_cgm(tok)
    plan = masks.compile(cgm, mode)
    token_ids = np.asarray(tok.piece_ids(), dtype=np.int64)
    cat_ids = np.asarray([int(c) for c in tok.categories()], dtype=np.int64)
    if path == "single":
        logits = forward(params, cfg, token_ids, cat_ids, plan, visual, train=False)
        lp = log_softmax_np(logits.data.astype(np.float64))
        total = float(lp[np.arange(tok.n), token_ids].sum())
    elif path == "level":
        levels = _mode_levels(mode, cgm)
        level_of = np.empty(tok.n, dtype=np.int64)
        for rank, level in enumerate(levels):
            level_of[np.asarray(level, dtype=np.int64)] = rank
        total = 0.0
        for rank, level in enumerate(levels):
            ids = np.where(level_of > rank, PAD_ID, token_ids)
            logits = forward(params, cfg, ids, cat_ids, plan, visual, train=False)
            lp = log_softmax_np(logits.data.astype(np.float64))
            rows = np.asarray(level, dtype=np.int64)
            total += float(lp[rows, token_ids[rows]].sum())
    else:
        raise CogtError(f"unknown scoring path {path!r}")
    return total / tok.n if length_normalize else total


def retrieve(
    params: DecoderParams,
    cfg: DecoderConfig,
    task: RetrievalTask,
    vocab: Vocab,
    parse_fn,
    mode: PredictionMode = COGT,
    *,
    length_normalize: bool = False,
) -> tuple[int, list[float]]:
    """Score every candidate; argmax with ties broken by lowest index."""
    scores = []
    for i, cand in enumerate(task.candidates):
        try:
            tree = parse_fn(cand)
        except Exception as exc:
            raise UnparseableCandidate(i, cand, str(exc)) from exc
        tok = tokenize_tree(tree, vocab)
        scores.append(
            score_caption(params, cfg, tok, task.visual, mode, length_normalize=length_normalize)
        )
    return int(np.argmax(scores)), scores


@dataclass
class EvalReport:
    per_tier: dict[str, float]
    counts: dict[str, int]
    macro: float

    def to_dict(self) -> dict:
        return {"per_tier": self.per_tier, "counts": self.counts, "macro": self.macro}

    def table(self) -> str:
        lines = [f"{'tier':<10} {'n':>6} {'accuracy':>9}"]
        for tier in sorted(self.per_tier):
            lines.append(f"{tier:<10} {self.counts[tier]:>6} {self.per_tier[tier]:>9.4f}")
        lines.append(f"{'macro':<10} {sum(self.counts.values()):>6} {self.macro:>9.4f}")
        return "\n".join(lines)


def evaluate(
    params: DecoderParams,
    cfg: DecoderConfig,
    tasks: list[RetrievalTask],
    vocab: Vocab,
    parse_fn,
    mode: PredictionMode = COGT,
    *,
    length_normalize: bool = False,
    details: list[dict] | None = None,
) -> EvalReport:
    """Retrieval accuracy per tier plus the macro average over tiers.

    When a list is passed as details, one row per task is appended to it
    with the chosen index, the positive index, and all candidate scores.
    """
    if not tasks:
        raise CogtError("no tasks to evaluate")
    hits: dict[str, int] = {}
    counts: dict[str, int] = {}
    for task in tasks:
        tier = task.tier or "untiered"
        chosen, scores = retrieve(params, cfg, task, vocab, parse_fn, mode, length_normalize=length_normalize)
        if details is not None:
            details.append(
                {
                    "tier": tier,
                    "chosen": chosen,
                    "positive_index": task.positive_index,
                    "correct": chosen == task.positive_index,
                    "scores": [float(s) for s in scores],
                }
            )
        counts[tier] = counts.get(tier, 0) + 1
        hits[tier] = hits.get(tier, 0) + (1 if chosen == task.positive_index else 0)
    per_tier = {t: hits[t] / counts[t] for t in counts}
    macro = float(np.mean(list(per_tier.values())))
    return EvalReport(per_tier=per_tier, counts=counts, macro=macro)


# ---------------------------------------------------------------------------
# tasks file: JSONL rows {image_features, candidates, positive_index, tier}


def write_tasks(path: str, rows: list[dict]) -> None:
    """Rows carry image_features as a path relative to the tasks file."""
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def load_tasks(path: str) -> list[RetrievalTask]:
    base = os.path.dirname(os.path.abspath(path))
    tasks = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            row = json.loads(line)
            visual = load_visual(os.path.join(base, row["image_features"]))
            tasks.append(
                RetrievalTask(
                    visual=visual,
                    candidates=row["candidates"],
                    positive_index=row["positive_index"],
                    tier=row.get("tier"),
                )
            )
    return tasks
