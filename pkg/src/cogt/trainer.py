"""Training loop: token-mean likelihood loss, Adam, warmup + cosine schedule,
deterministic batching, and best-checkpoint selection by validation loss."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import masks
from .cgm import COGT, FULLY_PARALLEL, SEQUENTIAL_AR, Cgm, PredictionMode, build_cgm, mean_parent_count
from .conllu import DependencyTree, SyntacticCategory
from .decoder import DecoderConfig, DecoderParams, VisualFeatures, conditional_logprob, forward, init_params, load_visual, save_visual
from .errors import CogtError
from .masks import AttentionPlan
from .subword import TokenizedTree, Vocab, load_vocab, save_vocab, tokenize_tree
from . import tensor as T

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
CLIP_NORM = 1.0


class DivergedLoss(CogtError):
    pass


class EmptyDataset(CogtError):
    pass


@dataclass
class TrainConfig:
    lr: float = 5e-4
    warmup_steps: int = 50
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    mode: PredictionMode = COGT
    precision: str = "f32"
    max_steps: int | None = None  # optional cap on total optimizer steps

    def __post_init__(self):
        # lr = 0 is allowed: it turns train() into a no-op useful for smoke tests
        if self.lr < 0:
            raise CogtError("lr must be non-negative")
        if self.precision not in ("f32", "f64"):
            raise CogtError(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


def lr_at(step: int, cfg: TrainConfig, total_steps: int) -> float:
    """Linear warmup to lr, then cosine to 0 at total_steps."""
    if step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / (total_steps - cfg.warmup_steps)
    return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * progress))


def resolve_mixed(mode: PredictionMode, seed: int, ordinal: int) -> PredictionMode:
    """Per-sample regime draw for mixed mode; identity for concrete modes."""
    if mode.kind != "mixed":
        return mode
    draw = T.philox(seed, "mixed", ordinal).random()
    return FULLY_PARALLEL if draw < mode.parallel_fraction else SEQUENTIAL_AR


@dataclass
class TrainSample:
    sentence_id: str
    tok: TokenizedTree
    visual: VisualFeatures | None
    cgm: Cgm = field(init=False)
    _plans: dict[str, AttentionPlan] = field(init=False, default_factory=dict)

    def __post_init__(self):
        self.cgm = build_cgm(self.tok)

    def plan(self, mode: PredictionMode) -> AttentionPlan:
        hit = self._plans.get(mode.kind)
        if hit is None:
            hit = masks.compile(self.cgm, mode)
            self._plans[mode.kind] = hit
        return hit


class AdamState:
    """First/second moment accumulators keyed like the parameters."""

    def __init__(self, params: DecoderParams):
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    def step(self, params: DecoderParams, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1c = 1.0 - ADAM_BETA1**self.t
        b2c = 1.0 - ADAM_BETA2**self.t
        for name, p in params.items():
            g = grads[name]
            dt = p.data.dtype.type
            m = self.m[name] = dt(ADAM_BETA1) * self.m[name] + dt(1 - ADAM_BETA1) * g
            v = self.v[name] = dt(ADAM_BETA2) * self.v[name] + dt(1 - ADAM_BETA2) * (g * g)
            update = (m / dt(b1c)) / (np.sqrt(v / dt(b2c)) + dt(ADAM_EPS))
            p.data = p.data - dt(lr) * update


def _val_split(samples: list[TrainSample]) -> tuple[list[int], list[int]]:
    """Fixed 10% validation split by sentence-id hash."""
    train_idx, val_idx = [], []
    for i, s in enumerate(samples):
        digest = hashlib.sha256(s.sentence_id.encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:8], "little") % 10
        (val_idx if bucket == 0 else train_idx).append(i)
    if not train_idx:  # tiny datasets train on everything
        return list(range(len(samples))), []
    return train_idx, val_idx


def _sample_loss_eval(params, dcfg, sample: TrainSample, mode: PredictionMode) -> tuple[float, int]:
    plan = sample.plan(mode)
    lp = conditional_logprob(params, dcfg, sample.tok.piece_ids(), _cat_ids(sample.tok), plan, sample.visual)
    return float(-lp.sum()), sample.tok.n


def _cat_ids(tok: TokenizedTree) -> np.ndarray:
    return np.asarray([int(c) for c in tok.categories()], dtype=np.int64)


def validation_loss(params, dcfg, samples: list[TrainSample], mode: PredictionMode) -> float:
    """Token-mean eval loss; mixed is scored as its expectation over regimes."""
    if mode.kind == "mixed":
        par = validation_loss(params, dcfg, samples, FULLY_PARALLEL)
        seq = validation_loss(params, dcfg, samples, SEQUENTIAL_AR)
        return mode.parallel_fraction * par + (1.0 - mode.parallel_fraction) * seq
    total, tokens = 0.0, 0
    for s in samples:
        nll, n = _sample_loss_eval(params, dcfg, s, mode)
        total += nll
        tokens += n
    return total / max(tokens, 1)


@dataclass
class TrainResult:
    params: DecoderParams  # final
    best_params: DecoderParams
    best_val_loss: float
    metrics: list[dict]
    total_steps: int


def train(
    samples: list[TrainSample],
    cfg: TrainConfig,
    dcfg: DecoderConfig,
    *,
    metrics_path: str | None = None,
) -> TrainResult:
    if not samples:
        raise EmptyDataset("no training samples")
    for s in samples:
        if s.visual is None:
            raise CogtError(f"sample {s.sentence_id} has no visual features")
    train_idx, val_idx = _val_split(samples)
    bpe = (len(train_idx) + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * bpe
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)
    if cfg.warmup_steps >= total_steps:
        raise CogtError(f"warmup_steps {cfg.warmup_steps} >= total steps {total_steps}")

    params = init_params(dcfg, cfg.seed, dtype=cfg.dtype)
    adam = AdamState(params)
    names = [k for k, _ in params.items()]
    metrics: list[dict] = []
    best_val = np.inf
    best_params = params.copy()
    epoch_losses: list[float] = []
    step = 0
    done = False

    def run_validation() -> float:
        nonlocal best_val, best_params
        if val_idx:
            val = validation_loss(params, dcfg, [samples[i] for i in val_idx], cfg.mode)
        else:
            val = float(np.mean(epoch_losses)) if epoch_losses else np.inf
        if val < best_val:
            best_val = val
            best_params = params.copy()
        return val

    for epoch in range(cfg.epochs):
        if done:
            break
        order = T.philox(cfg.seed, "shuffle", epoch).permutation(len(train_idx))
        epoch_losses = []
        for b in range(bpe):
            batch = [train_idx[i] for i in order[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
            lr = lr_at(step, cfg, total_steps)
            with T.Tape() as tape:
                total = None
                tokens = 0
                parents = 0.0
                for pos_in_batch, idx in enumerate(batch):
                    s = samples[idx]
                    ordinal = epoch * len(train_idx) + b * cfg.batch_size + pos_in_batch
                    regime = resolve_mixed(cfg.mode, cfg.seed, ordinal)
                    plan = s.plan(regime)
                    logits = forward(
                        params, dcfg, s.tok.piece_ids(), _cat_ids(s.tok), plan, s.visual,
                        train=True, seed=cfg.seed, stream=ordinal,
                    )
                    nll = T.cross_entropy(logits, np.asarray(s.tok.piece_ids(), dtype=np.int64))
                    part = T.sum_all(nll)
                    total = part if total is None else T.add(total, part)
                    tokens += s.tok.n
                    parents += mean_parent_count(s.cgm)
                loss = T.scale(total, 1.0 / tokens)
                loss_val = loss.item()
                if not np.isfinite(loss_val):
                    raise DivergedLoss(f"step {step}: loss {loss_val}")
                T.zero_grads(params.values())
                tape.backward(loss)
            grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}
            gnorm = float(np.sqrt(sum(float(np.sum(grads[k].astype(np.float64) ** 2)) for k in names)))
            if gnorm > CLIP_NORM:
                factor = CLIP_NORM / gnorm
                grads = {k: g * g.dtype.type(factor) for k, g in grads.items()}
            adam.step(params, grads, lr)
            epoch_losses.append(loss_val)
            metrics.append(
                {
                    "step": step,
                    "loss": loss_val,
                    "lr": float(lr),
                    "mode": cfg.mode.kind,
                    "mean_parents": parents / len(batch),
                }
            )
            step += 1
            if step >= total_steps:
                done = True
                break
        run_validation()

    if metrics_path:
        with open(metrics_path, "w", encoding="utf-8") as f:
            for row in metrics:
                f.write(json.dumps(row, sort_keys=True) + "\n")
    return TrainResult(
        params=params,
        best_params=best_params,
        best_val_loss=float(best_val),
        metrics=metrics,
        total_steps=step,
    )


# ---------------------------------------------------------------------------
# dataset files: <dir>/vocab.txt, <dir>/dataset.jsonl, <dir>/feats/*.cogtvis


@dataclass
class DatasetEntry:
    sentence_id: str
    tree: DependencyTree
    visual: VisualFeatures | None
    caption: str = ""


def write_dataset(out_dir: str, entries: list[DatasetEntry], vocab: Vocab) -> None:
    os.makedirs(out_dir, exist_ok=True)
    save_vocab(vocab, os.path.join(out_dir, "vocab.txt"))
    feats_dir = os.path.join(out_dir, "feats")
    rows = []
    for i, e in enumerate(entries):
        feat_rel = None
        if e.visual is not None:
            os.makedirs(feats_dir, exist_ok=True)
            feat_rel = f"feats/{i:05d}.cogtvis"
            save_visual(os.path.join(out_dir, feat_rel), e.visual)
        rows.append(
            {
                "sentence_id": e.sentence_id,
                "caption": e.caption,
                "forms": e.tree.forms(),
                "categories": [c.name for c in e.tree.categories()],
                "heads": e.tree.heads,
                "features": feat_rel,
            }
        )
    with open(os.path.join(out_dir, "dataset.jsonl"), "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def load_dataset(dir_path: str) -> tuple[list[TrainSample], Vocab]:
    vocab = load_vocab(os.path.join(dir_path, "vocab.txt"))
    samples = []
    with open(os.path.join(dir_path, "dataset.jsonl"), encoding="utf-8") as f:
        for line in f:
            row = json.loads(line)
            tree = DependencyTree(
                nodes=[(form, SyntacticCategory[cat]) for form, cat in zip(row["forms"], row["categories"])],
                heads=row["heads"],
                sentence_id=row["sentence_id"],
            )
            tree.validate()
            visual = None
            if row.get("features"):
                visual = load_visual(os.path.join(dir_path, row["features"]), source_id=row["sentence_id"])
            samples.append(TrainSample(row["sentence_id"], tokenize_tree(tree, vocab), visual))
    return samples, vocab
