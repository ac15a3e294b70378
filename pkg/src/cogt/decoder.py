"""The decoder: mask/visible token slots, dependency-guided attention blocks,
cross-attention over mapped visual features, and the vocabulary head."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .conllu import N_CATEGORIES
from .errors import CogtError
from .masks import AttentionPlan
from .tensor import Tensor

CKPT_MAGIC = b"COGTCKPT"
CKPT_VERSION = 1
VIS_MAGIC = b"COGTVIS"


@dataclass
class DecoderConfig:
    vocab_size: int
    visual_dim_in: int
    visual_slots: int
    blocks: int = 2
    heads: int = 4
    embed_dim: int = 64
    max_positions: int = 64
    n_categories: int = N_CATEGORIES
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise CogtError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise CogtError(f"dropout_p {self.dropout_p} outside [0, 1)")
        if self.visual_slots < 2 or self.visual_slots % 2 != 0:
            raise CogtError("visual_slots must be even (two per-layer strips incl. summary slots)")


@dataclass
class VisualFeatures:
    """Two concatenated per-layer strips: [summary, patches..., summary, patches...]."""

    vectors: np.ndarray  # (m, visual_dim_in)
    source_id: str = ""

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        if self.vectors.ndim != 2:
            raise CogtError("visual features must be (slots, dim)")
        if not np.isfinite(self.vectors).all():
            raise CogtError(f"{self.source_id}: non-finite visual features")


class DecoderParams:
    """Named parameter tensors in a fixed creation order."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def astype(self, dtype) -> "DecoderParams":
        return DecoderParams(
            {k: Tensor(t.data.astype(dtype), requires_grad=t.requires_grad) for k, t in self.items()}
        )

    def copy(self) -> "DecoderParams":
        return self.astype(next(iter(self.values())).data.dtype)


def _param_specs(cfg: DecoderConfig):
    d = cfg.embed_dim
    yield "word_emb", (cfg.vocab_size, d), "emb"
    yield "mask_emb", (cfg.n_categories, d), "emb"
    yield "pos_emb", (cfg.max_positions, d), "emb"
    yield "map.ln_in.gain", (cfg.visual_dim_in,), "one"
    yield "map.ln_in.bias", (cfg.visual_dim_in,), "zero"
    yield "map.linear.w", (cfg.visual_dim_in, d), "proj"
    yield "map.linear.b", (d,), "zero"
    yield "map.ln_out.gain", (d,), "one"
    yield "map.ln_out.bias", (d,), "zero"
    for b in range(cfg.blocks):
        for sub in ("self", "cross"):
            yield f"block{b}.{sub}_ln.gain", (d,), "one"
            yield f"block{b}.{sub}_ln.bias", (d,), "zero"
            for w in ("wq", "wk", "wv", "wo"):
                yield f"block{b}.{sub}_attn.{w}", (d, d), "proj"
                yield f"block{b}.{sub}_attn.{w[1]}b", (d,), "zero"
        yield f"block{b}.mlp_ln.gain", (d,), "one"
        yield f"block{b}.mlp_ln.bias", (d,), "zero"
        yield f"block{b}.mlp.w1", (d, 4 * d), "proj"
        yield f"block{b}.mlp.b1", (4 * d,), "zero"
        yield f"block{b}.mlp.w2", (4 * d, d), "proj"
        yield f"block{b}.mlp.b2", (d,), "zero"
    yield "final_ln.gain", (d,), "one"
    yield "final_ln.bias", (d,), "zero"
    yield "out.w", (d, cfg.vocab_size), "proj"
    yield "out.b", (cfg.vocab_size,), "zero"


def init_params(cfg: DecoderConfig, seed: int, dtype=np.float32) -> DecoderParams:
    """Embeddings normal(0, 0.02); projections uniform(+-1/sqrt(d)); draws in fixed order."""
    rng = T.philox(seed, "init")
    bound = 1.0 / np.sqrt(cfg.embed_dim)
    tensors: dict[str, Tensor] = {}
    for name, shape, kind in _param_specs(cfg):
        if kind == "emb":
            data = rng.normal(0.0, 0.02, size=shape)
        elif kind == "proj":
            data = rng.uniform(-bound, bound, size=shape)
        elif kind == "one":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        tensors[name] = Tensor(data.astype(dtype), requires_grad=True)
    return DecoderParams(tensors)


def _attention(p: DecoderParams, prefix: str, xq: Tensor, xkv: Tensor, mask: np.ndarray, cfg, train, rng):
    q = T.add(T.matmul(xq, p[f"{prefix}.wq"]), p[f"{prefix}.qb"])
    k = T.add(T.matmul(xkv, p[f"{prefix}.wk"]), p[f"{prefix}.kb"])
    v = T.add(T.matmul(xkv, p[f"{prefix}.wv"]), p[f"{prefix}.vb"])
    dh = cfg.embed_dim // cfg.heads
    outs = []
    for h in range(cfg.heads):
        qh = T.narrow(q, 1, h * dh, dh)
        kh = T.narrow(k, 1, h * dh, dh)
        vh = T.narrow(v, 1, h * dh, dh)
        scores = T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / np.sqrt(dh))
        att = T.dropout(T.softmax_masked(scores, mask), cfg.dropout_p, train, rng)
        outs.append(T.matmul(att, vh))
    o = T.concat(outs, 1)
    return T.add(T.matmul(o, p[f"{prefix}.wo"]), p[f"{prefix}.ob"])


def map_visual(p: DecoderParams, visual: Tensor) -> Tensor:
    """The shared mapping network: LayerNorm, linear, LayerNorm."""
    h = T.layernorm(visual, p["map.ln_in.gain"], p["map.ln_in.bias"])
    h = T.add(T.matmul(h, p["map.linear.w"]), p["map.linear.b"])
    return T.layernorm(h, p["map.ln_out.gain"], p["map.ln_out.bias"])


def forward(
    p: DecoderParams,
    cfg: DecoderConfig,
    token_ids: np.ndarray,
    category_ids: np.ndarray,
    plan: AttentionPlan,
    visual: VisualFeatures,
    *,
    train: bool = False,
    seed: int = 0,
    stream: int = 0,
) -> Tensor:
    """Masked-slot logits (n, vocab); visible-slot states are dropped after the last block."""
    token_ids = np.asarray(token_ids, dtype=np.int64)
    category_ids = np.asarray(category_ids, dtype=np.int64)
    n = plan.n
    if len(token_ids) != n or len(category_ids) != n:
        raise CogtError(f"plan is for {n} tokens, caption has {len(token_ids)}")
    if n > cfg.max_positions:
        raise CogtError(f"caption length {n} exceeds max_positions {cfg.max_positions}")
    if visual.vectors.shape != (cfg.visual_slots, cfg.visual_dim_in):
        raise CogtError(f"visual features {visual.vectors.shape} do not match config")
    dtype = p["word_emb"].data.dtype
    rng = T.philox(seed, "dropout", stream) if train and cfg.dropout_p > 0 else None

    positions = np.arange(n)
    masked = T.add(T.embedding_lookup(p["mask_emb"], category_ids), T.embedding_lookup(p["pos_emb"], positions))
    visible = T.add(T.embedding_lookup(p["word_emb"], token_ids), T.embedding_lookup(p["pos_emb"], positions))
    x = T.dropout(T.concat([masked, visible], 0), cfg.dropout_p, train, rng)

    vis_in = Tensor(visual.vectors.astype(dtype))
    vis_mapped = map_visual(p, vis_in)  # shared by every block
    cross_mask = np.ones((2 * n, cfg.visual_slots), dtype=bool)

    for b in range(cfg.blocks):
        h = T.layernorm(x, p[f"block{b}.self_ln.gain"], p[f"block{b}.self_ln.bias"])
        a = _attention(p, f"block{b}.self_attn", h, h, plan.self_mask, cfg, train, rng)
        x = T.add(x, T.dropout(a, cfg.dropout_p, train, rng))

        h = T.layernorm(x, p[f"block{b}.cross_ln.gain"], p[f"block{b}.cross_ln.bias"])
        c = _attention(p, f"block{b}.cross_attn", h, vis_mapped, cross_mask, cfg, train, rng)
        x = T.add(x, T.dropout(c, cfg.dropout_p, train, rng))

        h = T.layernorm(x, p[f"block{b}.mlp_ln.gain"], p[f"block{b}.mlp_ln.bias"])
        m = T.gelu(T.add(T.matmul(h, p[f"block{b}.mlp.w1"]), p[f"block{b}.mlp.b1"]))
        m = T.add(T.matmul(m, p[f"block{b}.mlp.w2"]), p[f"block{b}.mlp.b2"])
        x = T.add(x, T.dropout(m, cfg.dropout_p, train, rng))

    x = T.layernorm(x, p["final_ln.gain"], p["final_ln.bias"])
    masked_states = T.narrow(x, 0, 0, n)
    return T.add(T.matmul(masked_states, p["out.w"]), p["out.b"])


def conditional_logprob(
    p: DecoderParams,
    cfg: DecoderConfig,
    token_ids: np.ndarray,
    category_ids: np.ndarray,
    plan: AttentionPlan,
    visual: VisualFeatures,
) -> np.ndarray:
    """Per-token log probability of the gold token given its parents (eval mode)."""
    logits = forward(p, cfg, token_ids, category_ids, plan, visual, train=False)
    lp = T.log_softmax_np(logits.data.astype(np.float64))
    return lp[np.arange(plan.n), np.asarray(token_ids, dtype=np.int64)]


def save_checkpoint(path: str, cfg: DecoderConfig, params: DecoderParams, mode_kind: str | None = None) -> None:
    header = json.dumps({"config": asdict(cfg), "mode": mode_kind}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(params.tensors)))
        for name, t in params.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", t.data.ndim))
            for dim in t.data.shape:
                f.write(struct.pack("<I", dim))
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path: str) -> tuple[DecoderConfig, DecoderParams, str | None]:
    with open(path, "rb") as f:
        if f.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise CogtError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CKPT_VERSION:
            raise CogtError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        cfg = DecoderConfig(**header["config"])
        (count,) = struct.unpack("<I", f.read(4))
        tensors: dict[str, Tensor] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(4 * size), dtype="<f4").reshape(shape)
            tensors[name] = Tensor(data.astype(np.float32), requires_grad=True)
    return cfg, DecoderParams(tensors), header.get("mode")


def save_visual(path: str, vis: VisualFeatures) -> None:
    m, dim = vis.vectors.shape
    with open(path, "wb") as f:
        f.write(VIS_MAGIC)
        f.write(struct.pack("<II", m, dim))
        f.write(np.ascontiguousarray(vis.vectors, dtype="<f4").tobytes())


def load_visual(path: str, source_id: str | None = None) -> VisualFeatures:
    with open(path, "rb") as f:
        if f.read(len(VIS_MAGIC)) != VIS_MAGIC:
            raise CogtError(f"{path}: not a visual feature file")
        m, dim = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(4 * m * dim), dtype="<f4").reshape(m, dim)
    return VisualFeatures(vectors=data.astype(np.float32), source_id=source_id or path)
