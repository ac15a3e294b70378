"""Command-line surface binding the library into reproducible pipelines."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

# cap BLAS pools before numpy is imported anywhere in this process
_threads = os.environ.get("COGT_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import numpy as np  # noqa: E402

from . import __version__, masks, tensor as T  # noqa: E402
from .cgm import COGT, FULLY_PARALLEL, SEQUENTIAL_AR, PredictionMode, build_cgm, mixed  # noqa: E402
from .conllu import parse_conllu  # noqa: E402
from .decoder import (  # noqa: E402
    DecoderConfig,
    VisualFeatures,
    conditional_logprob,
    init_params,
    load_checkpoint,
    save_checkpoint,
    save_visual,
)
from .errors import CogtError  # noqa: E402
from .scorer import evaluate, load_tasks, write_tasks  # noqa: E402
from .subword import build_vocab, load_vocab, save_vocab, tokenize_tree  # noqa: E402
from .synthbench import GRAMMAR_WORDS, SceneEncoder, generate, generate_tasks, parse_caption  # noqa: E402
from .trainer import DatasetEntry, TrainConfig, load_dataset, train, write_dataset  # noqa: E402

MODES = {"cogt": COGT, "ar": SEQUENTIAL_AR, "parallel": FULLY_PARALLEL}


def _mode_from_name(name: str, parallel_fraction: float = 0.75) -> PredictionMode:
    if name == "mixed":
        return mixed(parallel_fraction)
    return MODES[name]


def _write_manifest(out_path: str, command: str, config: dict, seeds: dict, inputs: list, outputs: list, t0: float) -> None:
    doc = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
        "outputs": outputs,
        "version": f"cogt-{__version__}",
        "wall_time_s": round(time.time() - t0, 3),
    }
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")


_TRAIN_FIELDS = {
    "lr": float,
    "warmup_steps": int,
    "batch_size": int,
    "epochs": int,
    "precision": str,
    "max_steps": int,
}
_DECODER_FIELDS = {
    "blocks": int,
    "heads": int,
    "embed_dim": int,
    "max_positions": int,
    "dropout_p": float,
}


def _read_config(path: str | None) -> tuple[dict, dict]:
    """Flat key=value file split into trainer and decoder overrides."""
    train_kv: dict = {}
    dec_kv: dict = {}
    if not path:
        return train_kv, dec_kv
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise _UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key in _TRAIN_FIELDS:
                train_kv[key] = _TRAIN_FIELDS[key](value)
            elif key in _DECODER_FIELDS:
                dec_kv[key] = _DECODER_FIELDS[key](value)
            else:
                raise _UsageError(f"{path}:{lineno}: unknown config key {key!r}")
    return train_kv, dec_kv


class _UsageError(Exception):
    pass


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def cmd_ingest(args) -> int:
    t0 = time.time()
    with open(args.conllu, encoding="utf-8") as f:
        trees = parse_conllu(f.read())
    if os.path.exists(args.vocab):
        vocab = load_vocab(args.vocab)
    else:
        corpus = [" ".join(t.forms()) for t in trees]
        vocab = build_vocab(corpus, args.vocab_size)
        _ensure_parent(args.vocab)
        save_vocab(vocab, args.vocab)
    entries = [
        DatasetEntry(t.sentence_id, t, None, " ".join(t.forms())) for t in trees
    ]
    write_dataset(args.out, entries, vocab)
    _write_manifest(
        os.path.join(args.out, "manifest.json"),
        "ingest",
        {"vocab_size": args.vocab_size},
        {"seed": None},
        [args.conllu, args.vocab],
        [args.out],
        t0,
    )
    print(f"ingested {len(trees)} sentences into {args.out}")
    return 0


def cmd_synth(args) -> int:
    t0 = time.time()
    triples = generate(args.n, args.seed)
    encoder = SceneEncoder(args.seed, dim=args.visual_dim, noise_sigma=args.noise_sigma)
    corpus = [caption for _, caption, _ in triples] + [" ".join(GRAMMAR_WORDS)]
    vocab = build_vocab(corpus, args.vocab_size)
    entries = [
        DatasetEntry(tree.sentence_id, tree, encoder.encode(scene), caption)
        for scene, caption, tree in triples
    ]
    write_dataset(args.out, entries, vocab)
    specs = generate_tasks(args.tasks, args.seed, encoder)
    feat_dir = os.path.join(args.out, "taskfeats")
    os.makedirs(feat_dir, exist_ok=True)
    rows = []
    for i, spec in enumerate(specs):
        rel = f"taskfeats/{i:05d}.cogtvis"
        save_visual(os.path.join(args.out, rel), spec.visual)
        rows.append(
            {
                "image_features": rel,
                "candidates": spec.candidates,
                "positive_index": spec.positive_index,
                "tier": spec.tier,
            }
        )
    write_tasks(os.path.join(args.out, "tasks.jsonl"), rows)
    _write_manifest(
        os.path.join(args.out, "manifest.json"),
        "synth",
        {"n": args.n, "tasks": args.tasks, "vocab_size": args.vocab_size,
         "visual_dim": args.visual_dim, "noise_sigma": args.noise_sigma},
        {"seed": args.seed},
        [],
        [args.out],
        t0,
    )
    print(f"wrote {args.n} training scenes and {args.tasks} tasks to {args.out}")
    return 0


def cmd_compile_masks(args) -> int:
    t0 = time.time()
    samples, _ = load_dataset(args.dataset)
    mode = _mode_from_name(args.mode)
    _ensure_parent(args.out)
    with open(args.out, "wb") as f:
        for s in samples:
            masks.dump_plan(masks.compile(s.cgm, mode), f)
    _write_manifest(
        args.out + ".manifest.json",
        "compile-masks",
        {"mode": args.mode},
        {"seed": None},
        [args.dataset],
        [args.out],
        t0,
    )
    print(f"compiled {len(samples)} plans ({args.mode}) into {args.out}")
    return 0


def cmd_train(args) -> int:
    t0 = time.time()
    samples, vocab = load_dataset(args.dataset)
    train_kv, dec_kv = _read_config(args.config)
    mode = _mode_from_name(args.mode, args.parallel_fraction)
    tcfg = TrainConfig(mode=mode, seed=args.seed, **train_kv)
    first = next((s for s in samples if s.visual is not None), None)
    if first is None:
        raise CogtError("dataset has no visual features; train needs them")
    slots, dim_in = first.visual.vectors.shape
    dcfg = DecoderConfig(vocab_size=len(vocab), visual_dim_in=dim_in, visual_slots=slots, **dec_kv)
    _ensure_parent(args.out)
    result = train(samples, tcfg, dcfg, metrics_path=args.out + ".metrics.jsonl")
    save_checkpoint(args.out, dcfg, result.best_params, mode_kind=args.mode)
    save_vocab(vocab, args.out + ".vocab")
    _write_manifest(
        args.out + ".manifest.json",
        "train",
        {"mode": args.mode, "train": train_kv, "decoder": dec_kv,
         "best_val_loss": result.best_val_loss, "steps": result.total_steps},
        {"seed": args.seed},
        [args.dataset, args.config or ""],
        [args.out, args.out + ".metrics.jsonl", args.out + ".vocab"],
        t0,
    )
    print(f"trained {result.total_steps} steps; best val loss {result.best_val_loss:.4f}; wrote {args.out}")
    return 0


def cmd_score(args) -> int:
    t0 = time.time()
    dcfg, params, mode_kind = load_checkpoint(args.ckpt)
    vocab_path = args.vocab or (args.ckpt + ".vocab")
    vocab = load_vocab(vocab_path)
    mode = _mode_from_name(mode_kind or "cogt")
    tasks = load_tasks(args.tasks)
    params64 = params.astype(np.float64)
    details: list[dict] = []
    report = evaluate(
        params64, dcfg, tasks, vocab, parse_caption, mode,
        length_normalize=args.length_normalize, details=details,
    )
    _ensure_parent(args.out)
    with open(args.out, "w", encoding="utf-8") as f:
        for row in details:
            f.write(json.dumps(row, sort_keys=True) + "\n")
        f.write(json.dumps({"summary": report.to_dict()}, sort_keys=True) + "\n")
    print(report.table())
    _write_manifest(
        args.out + ".manifest.json",
        "score",
        {"length_normalize": args.length_normalize, "mode": mode.kind,
         "accuracy": report.to_dict()},
        {"seed": None},
        [args.ckpt, args.tasks, vocab_path],
        [args.out],
        t0,
    )
    return 0


def _verify_leaks(params, dcfg, seed: int = 0) -> dict:
    """Mask-level closure check over random trees plus bit-identity spot checks."""
    from .subword import TokenizedTree
    from .conllu import ROOT_HEAD, SyntacticCategory
    from .decoder import forward
    from .trainer import resolve_mixed
    from .cgm import mixed as mixed_mode

    rng = T.philox(seed, "verify-leak")
    violations = 0
    n_trees = 1000
    for _ in range(n_trees):
        n = int(rng.integers(2, 33))
        heads = [ROOT_HEAD] + [int(rng.integers(0, j)) for j in range(1, n)]
        cats = [SyntacticCategory(int(rng.integers(46))) for _ in range(n)]
        tok = TokenizedTree(tokens=[(0, c, j) for j, c in enumerate(cats)], heads=heads)
        cgm = build_cgm(tok)
        for mode in (COGT, SEQUENTIAL_AR, FULLY_PARALLEL, resolve_mixed(mixed_mode(), seed, violations)):
            if not masks.verify_no_leak(masks.compile(cgm, mode)):
                violations += 1
    # bit-identity: perturbing a non-ancestor visible token must not move masked logits
    spot_failures = 0
    vis = VisualFeatures(np.zeros((dcfg.visual_slots, dcfg.visual_dim_in), dtype=np.float32))
    for trial in range(10):
        n = int(rng.integers(3, 9))
        heads = [ROOT_HEAD] + [int(rng.integers(0, j)) for j in range(1, n)]
        cats = [SyntacticCategory(int(rng.integers(46))) for _ in range(n)]
        tok = TokenizedTree(tokens=[(int(rng.integers(dcfg.vocab_size)), c, j) for j, c in enumerate(cats)], heads=heads)
        cgm = build_cgm(tok)
        plan = masks.compile(cgm, COGT)
        ids = np.asarray(tok.piece_ids(), dtype=np.int64)
        cat_ids = np.asarray([int(c) for c in cats], dtype=np.int64)
        base = forward(params, dcfg, ids, cat_ids, plan, vis, train=False).data
        j = int(rng.integers(n))
        outside = [k for k in range(n) if k != j and k not in cgm.ancestors[j]]
        if not outside:
            continue
        k = outside[int(rng.integers(len(outside)))]
        alt = ids.copy()
        alt[k] = (alt[k] + 1) % dcfg.vocab_size
        moved = forward(params, dcfg, alt, cat_ids, plan, vis, train=False).data
        if not np.array_equal(base[j], moved[j]):
            spot_failures += 1
    return {"trees": n_trees, "violations": violations, "bit_identity_failures": spot_failures,
            "ok": violations == 0 and spot_failures == 0}


def _verify_grad(seed: int = 0) -> dict:
    """Gradient check of the full loss on a small fresh model (code-path check)."""
    from .subword import TokenizedTree
    from .conllu import ROOT_HEAD, SyntacticCategory
    from .decoder import forward

    dcfg = DecoderConfig(
        vocab_size=12, visual_dim_in=8, visual_slots=6, blocks=2, heads=2,
        embed_dim=16, max_positions=8, dropout_p=0.0,
    )
    params = init_params(dcfg, seed, dtype=np.float64)
    rng = T.philox(seed, "verify-grad")
    n = 6
    heads = [ROOT_HEAD] + [int(rng.integers(0, j)) for j in range(1, n)]
    cats = [SyntacticCategory(int(rng.integers(46))) for _ in range(n)]
    tok = TokenizedTree(tokens=[(int(rng.integers(dcfg.vocab_size)), c, j) for j, c in enumerate(cats)], heads=heads)
    plan = masks.compile(build_cgm(tok), COGT)
    ids = np.asarray(tok.piece_ids(), dtype=np.int64)
    cat_ids = np.asarray([int(c) for c in cats], dtype=np.int64)
    vis = VisualFeatures(rng.normal(0, 1, (dcfg.visual_slots, dcfg.visual_dim_in)))

    def loss():
        logits = forward(params, dcfg, ids, cat_ids, plan, vis, train=False)
        return T.scale(T.sum_all(T.cross_entropy(logits, ids)), 1.0 / n)

    report = T.grad_check(loss, dict(params.items()), h=1e-5, tol=1e-4)
    return {"max_rel_err": report.max_rel, "tol": report.tol, "ok": report.passed}


def _verify_normalization(seed: int = 0) -> dict:
    """Sum of exp(score) over every caption of a tiny vocabulary must be 1."""
    from itertools import product
    from .subword import TokenizedTree
    from .conllu import ROOT_HEAD, SyntacticCategory
    from .scorer import score_caption

    dcfg = DecoderConfig(
        vocab_size=3, visual_dim_in=4, visual_slots=4, blocks=2, heads=2,
        embed_dim=8, max_positions=4, dropout_p=0.0,
    )
    params = init_params(dcfg, seed, dtype=np.float64)
    rng = T.philox(seed, "verify-norm")
    vis = VisualFeatures(rng.normal(0, 1, (4, 4)))
    heads = [ROOT_HEAD, 0, 0]
    cats = [SyntacticCategory.root, SyntacticCategory.amod, SyntacticCategory.amod]
    worst = 0.0
    for mode in (COGT, SEQUENTIAL_AR, FULLY_PARALLEL):
        total = 0.0
        for ids in product(range(3), repeat=3):
            tok = TokenizedTree(tokens=[(t, c, j) for j, (t, c) in enumerate(zip(ids, cats))], heads=heads)
            total += float(np.exp(score_caption(params, dcfg, tok, vis, mode)))
        worst = max(worst, abs(total - 1.0))
    return {"max_abs_dev": worst, "tol": 1e-6, "ok": worst <= 1e-6}


def cmd_verify(args) -> int:
    t0 = time.time()
    dcfg, params, _ = load_checkpoint(args.ckpt)
    run_all = not (args.grad_check or args.leak_check or args.normalization_check)
    report: dict = {}
    if args.leak_check or run_all:
        report["leak"] = _verify_leaks(params, dcfg)
    if args.grad_check or run_all:
        report["grad"] = _verify_grad()
    if args.normalization_check or run_all:
        report["normalization"] = _verify_normalization()
    ok = all(section["ok"] for section in report.values())
    report["ok"] = ok
    _ensure_parent(args.out)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True, indent=2)
        f.write("\n")
    _write_manifest(
        args.out + ".manifest.json",
        "verify",
        {k: v for k, v in report.items() if k != "ok"},
        {"seed": 0},
        [args.ckpt],
        [args.out],
        t0,
    )
    for name, section in report.items():
        if name != "ok":
            print(f"{name}: {'pass' if section['ok'] else 'FAIL'} {section}")
    if not ok:
        raise CogtError("verification failed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cogt", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ingest", help="CoNLL-U file to tokenized-tree dataset")
    sp.add_argument("--conllu", required=True)
    sp.add_argument("--vocab", required=True, help="vocab file; built from the corpus if missing")
    sp.add_argument("--vocab-size", type=int, default=512)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_ingest)

    sp = sub.add_parser("synth", help="generate a synthetic dataset plus retrieval tasks")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tasks", type=int, default=None)
    sp.add_argument("--vocab-size", type=int, default=64)
    sp.add_argument("--visual-dim", type=int, default=32)
    sp.add_argument("--noise-sigma", type=float, default=0.05)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("compile-masks", help="dump attention plans for a dataset")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--mode", choices=["cogt", "ar", "parallel", "mixed"], required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_compile_masks)

    sp = sub.add_parser("train", help="train a decoder on a dataset")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--mode", choices=["cogt", "ar", "parallel", "mixed"], required=True)
    sp.add_argument("--config", default=None, help="flat key=value overrides")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--parallel-fraction", type=float, default=0.75)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("score", help="evaluate retrieval tasks with a checkpoint")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--tasks", required=True)
    sp.add_argument("--vocab", default=None, help="defaults to <ckpt>.vocab")
    sp.add_argument("--length-normalize", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_score)

    sp = sub.add_parser("verify", help="run invariant suites against a checkpoint")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--grad-check", action="store_true")
    sp.add_argument("--leak-check", action="store_true")
    sp.add_argument("--normalization-check", action="store_true")
    sp.add_argument("--out", default="verify_report.json")
    sp.set_defaults(fn=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "tasks", None) is None and args.command == "synth":
        args.tasks = max(1, args.n // 10)
    try:
        return args.fn(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CogtError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
