"""Synthetic compositional scenes: captions with gold trees, deterministic
feature encodings, and tiered hard negatives for retrieval tasks."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .conllu import ROOT_HEAD, DependencyTree, SyntacticCategory
from .decoder import VisualFeatures
from .errors import CogtError
from .tensor import philox

SHAPES = ("cube", "ball", "cone", "block", "disk", "ring", "star", "brick")
COLORS = ("red", "blue", "green", "yellow", "brown", "black", "white", "orange")
SIZES = ("small", "big", "tiny")
RELATIONS = ("near", "beside", "above", "below", "over", "under")
# relation word when the two objects are mentioned in the opposite order
INVERSE = {"near": "near", "beside": "beside", "above": "below", "below": "above", "over": "under", "under": "over"}

GRAMMAR_WORDS = ("a", "and") + SHAPES + COLORS + SIZES + RELATIONS


class TierInapplicable(CogtError):
    pass


class UnparseableCaption(CogtError):
    pass


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    size: str


@dataclass(frozen=True)
class Scene:
    """1-3 objects with pairwise-distinct shapes and colors; relation joins 0 and 1."""

    objects: tuple[SceneObject, ...]
    relation: str | None
    seed: int
    mention_size: tuple[bool, ...] = ()
    flipped: bool = False


def sample_scene(rng: np.random.Generator, n_objects: int | None = None) -> Scene:
    k = int(n_objects) if n_objects is not None else int(rng.integers(1, 4))
    shapes = rng.choice(len(SHAPES), size=k, replace=False)
    colors = rng.choice(len(COLORS), size=k, replace=False)
    sizes = rng.integers(0, len(SIZES), size=k)
    objects = tuple(
        SceneObject(SHAPES[s], COLORS[c], SIZES[z]) for s, c, z in zip(shapes, colors, sizes)
    )
    relation = RELATIONS[int(rng.integers(len(RELATIONS)))] if k >= 2 else None
    mention = tuple(bool(rng.random() < 0.5) for _ in range(k))
    flipped = bool(rng.random() < 0.5) if k >= 2 else False
    return Scene(objects, relation, int(rng.integers(2**31)), mention, flipped)


@dataclass(frozen=True)
class ObjPhrase:
    shape: str
    color: str
    size: str | None  # None when the caption omits it


@dataclass(frozen=True)
class Surface:
    """Caption content in surface order; the sole input to assembly and negatives."""

    nps: tuple[ObjPhrase, ...]
    relation_word: str | None


def surface_of(scene: Scene) -> Surface:
    nps = [
        ObjPhrase(o.shape, o.color, o.size if scene.mention_size[i] else None)
        for i, o in enumerate(scene.objects)
    ]
    rel = scene.relation
    if scene.flipped and len(nps) >= 2:
        nps[0], nps[1] = nps[1], nps[0]
        rel = INVERSE[rel]
    return Surface(tuple(nps), rel)


def _assemble(surface: Surface) -> tuple[list[str], list[int], list[SyntacticCategory]]:
    C = SyntacticCategory
    tokens: list[str] = []
    heads: list[int] = []
    cats: list[C] = []

    def noun_phrase(np_: ObjPhrase, noun_cat: C, noun_head: int) -> int:
        words = ["a"] + ([np_.size] if np_.size else []) + [np_.color, np_.shape]
        noun_idx = len(tokens) + len(words) - 1
        for w in words[:-1]:
            tokens.append(w)
            heads.append(noun_idx)
            cats.append(C.det if w == "a" else C.amod)
        tokens.append(np_.shape)
        heads.append(noun_head)
        cats.append(noun_cat)
        return noun_idx

    root_noun = noun_phrase(surface.nps[0], C.root, ROOT_HEAD)
    if len(surface.nps) >= 2:
        rel_idx = len(tokens)
        tokens.append(surface.relation_word)
        heads.append(root_noun)
        cats.append(C.prep)
        second = noun_phrase(surface.nps[1], C.pobj, rel_idx)
        if len(surface.nps) == 3:
            tokens.append("and")
            heads.append(second)
            cats.append(C.cc)
            noun_phrase(surface.nps[2], C.conj, second)
    return tokens, heads, cats


def caption_of(scene: Scene) -> str:
    return caption_of_surface(surface_of(scene))


def caption_of_surface(surface: Surface) -> str:
    tokens, _, _ = _assemble(surface)
    return " ".join(tokens)


def tree_of_surface(surface: Surface, sentence_id: str = "") -> DependencyTree:
    tokens, heads, cats = _assemble(surface)
    tree = DependencyTree(nodes=list(zip(tokens, cats)), heads=heads, sentence_id=sentence_id)
    tree.validate()
    return tree


def parse_caption(text: str, sentence_id: str = "") -> DependencyTree:
    """Exact inverse of the caption grammar; raises UnparseableCaption otherwise."""
    words = text.lower().split()
    pos = 0

    def take(expect: tuple[str, ...] | None = None) -> str:
        nonlocal pos
        if pos >= len(words):
            raise UnparseableCaption(f"truncated caption: {text!r}")
        w = words[pos]
        if expect is not None and w not in expect:
            raise UnparseableCaption(f"unexpected word {w!r} in {text!r}")
        pos += 1
        return w

    def noun_phrase() -> ObjPhrase:
        take(("a",))
        size = words[pos] if pos < len(words) and words[pos] in SIZES else None
        if size:
            take()
        color = take(COLORS)
        shape = take(SHAPES)
        return ObjPhrase(shape, color, size)

    nps = [noun_phrase()]
    relation = None
    if pos < len(words) and words[pos] in RELATIONS:
        relation = take()
        nps.append(noun_phrase())
        if pos < len(words) and words[pos] == "and":
            take()
            nps.append(noun_phrase())
    if pos != len(words):
        raise UnparseableCaption(f"trailing words {words[pos:]} in {text!r}")
    return tree_of_surface(Surface(tuple(nps), relation), sentence_id)


def generate(n_scenes: int, grammar_seed: int) -> list[tuple[Scene, str, DependencyTree]]:
    """Seed-deterministic scenes with captions and gold trees."""
    rng = philox(grammar_seed, "scenes")
    out = []
    for i in range(n_scenes):
        scene = sample_scene(rng)
        surface = surface_of(scene)
        sid = f"synth{grammar_seed}-{i:05d}"
        out.append((scene, caption_of_surface(surface), tree_of_surface(surface, sid)))
    return out


class SceneEncoder:
    """Fixed random projection of symbolic scenes onto two per-layer feature strips.

    Layout per strip: [summary, object slots 0..2, relation slot]; two strips give
    m = 2p + 2 = 10 slots. Slot separation carries the attribute-object binding.
    """

    PATCHES = 4  # 3 object slots + 1 relation slot

    def __init__(self, seed: int, dim: int = 32, noise_sigma: float = 0.05):
        self.seed = int(seed)
        self.dim = dim
        self.noise_sigma = noise_sigma
        self.m = 2 * (self.PATCHES + 1)
        rng = philox(seed, "encoder")
        self._tables = []
        for _layer in range(2):
            self._tables.append(
                {
                    "shape": rng.normal(0.0, 0.5, (len(SHAPES), dim)),
                    "color": rng.normal(0.0, 0.5, (len(COLORS), dim)),
                    "size": rng.normal(0.0, 0.5, (len(SIZES), dim)),
                    "rel": rng.normal(0.0, 0.5, (len(RELATIONS), dim)),
                    "slot": rng.normal(0.0, 0.5, (self.PATCHES, dim)),
                    "empty": rng.normal(0.0, 0.5, (self.PATCHES, dim)),
                    "cls": rng.normal(0.0, 0.5, (dim,)),
                }
            )

    def encode(self, scene: Scene) -> VisualFeatures:
        strips = []
        for tab in self._tables:
            slots = []
            for i in range(3):
                if i < len(scene.objects):
                    o = scene.objects[i]
                    vec = (
                        tab["shape"][SHAPES.index(o.shape)]
                        + tab["color"][COLORS.index(o.color)]
                        + tab["size"][SIZES.index(o.size)]
                        + tab["slot"][i]
                    )
                else:
                    vec = tab["empty"][i]
                slots.append(vec)
            if scene.relation is not None:
                slots.append(tab["rel"][RELATIONS.index(scene.relation)] + tab["slot"][3])
            else:
                slots.append(tab["empty"][3])
            cls = np.mean(slots, axis=0) + tab["cls"]
            strips.append(np.vstack([cls] + slots))
        vectors = np.vstack(strips)
        if self.noise_sigma > 0:
            noise_rng = philox(self.seed, "noise", scene.seed)
            vectors = vectors + noise_rng.normal(0.0, self.noise_sigma, vectors.shape)
        return VisualFeatures(vectors=vectors.astype(np.float32), source_id=f"scene-{scene.seed}")


def _caption_attributes(surface: Surface) -> list[tuple]:
    """Replaceable attribute slots present in the caption, in surface order."""
    slots: list[tuple] = []
    for i, np_ in enumerate(surface.nps):
        if np_.size is not None:
            slots.append(("size", i))
        slots.append(("color", i))
    if surface.relation_word is not None:
        slots.append(("relation",))
    return slots


def _replace(surface: Surface, slot: tuple, rng: np.random.Generator) -> Surface:
    if slot[0] == "relation":
        choices = [r for r in RELATIONS if r != surface.relation_word]
        return replace(surface, relation_word=str(rng.choice(choices)))
    kind, i = slot
    np_ = surface.nps[i]
    if kind == "size":
        choices = [s for s in SIZES if s != np_.size]
        new = replace(np_, size=str(rng.choice(choices)))
    else:
        present = {p.color for p in surface.nps}
        choices = [c for c in COLORS if c not in present]
        new = replace(np_, color=str(rng.choice(choices)))
    nps = list(surface.nps)
    nps[i] = new
    return replace(surface, nps=tuple(nps))


N_REPLACED = {"easy": 3, "medium": 2, "hard": 1}
NEGATIVES_PER_TASK = 10


def make_negatives(scene: Scene, caption: str, tier: str, seed: int) -> list[str]:
    """Negative captions for one tier; seed-deterministic."""
    surface = surface_of(scene)
    if caption != caption_of_surface(surface):
        raise CogtError("caption does not belong to scene")
    rng = philox(seed, "negatives", tier, scene.seed)
    if tier == "swap":
        if len(surface.nps) < 2:
            raise TierInapplicable("swap needs two mentioned objects")
        a, b = surface.nps[0], surface.nps[1]
        nps = (replace(a, color=b.color), replace(b, color=a.color)) + surface.nps[2:]
        return [caption_of_surface(replace(surface, nps=nps))]
    if tier == "trivial":
        shapes = {o.shape for o in scene.objects}
        colors = {o.color for o in scene.objects}
        out = []
        while len(out) < NEGATIVES_PER_TASK:
            other = sample_scene(rng, n_objects=2)
            if {o.shape for o in other.objects} & shapes:
                continue
            if {o.color for o in other.objects} & colors:
                continue
            out.append(caption_of(other))
        return out
    k = N_REPLACED.get(tier)
    if k is None:
        raise CogtError(f"unknown tier {tier!r}")
    slots = _caption_attributes(surface)
    if len(slots) < k:
        raise TierInapplicable(f"{tier} replaces {k} attributes, caption has {len(slots)}")
    out = []
    for _ in range(NEGATIVES_PER_TASK):
        chosen = rng.choice(len(slots), size=k, replace=False)
        neg = surface
        for s in chosen:
            neg = _replace(neg, slots[int(s)], rng)
        out.append(caption_of_surface(neg))
    return out


@dataclass
class TaskSpec:
    visual: VisualFeatures
    candidates: list[str]
    positive_index: int
    tier: str


def generate_tasks(n_tasks: int, seed: int, encoder: SceneEncoder) -> list[TaskSpec]:
    """Held-out retrieval tasks, tiers round-robin; task scenes have two objects."""
    from .scorer import TIERS

    rng = philox(seed, "tasks")
    specs = []
    for i in range(n_tasks):
        tier = TIERS[i % len(TIERS)]
        scene = sample_scene(rng, n_objects=2)
        positive = caption_of(scene)
        negatives = make_negatives(scene, positive, tier, seed)
        pos_index = int(rng.integers(0, len(negatives) + 1))
        candidates = negatives[:pos_index] + [positive] + negatives[pos_index:]
        specs.append(TaskSpec(encoder.encode(scene), candidates, pos_index, tier))
    return specs
