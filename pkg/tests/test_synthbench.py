import numpy as np
import pytest

from cogt.errors import CogtError
from cogt.tensor import philox
from cogt.synthbench import (
    COLORS,
    GRAMMAR_WORDS,
    INVERSE,
    RELATIONS,
    SHAPES,
    SIZES,
    SceneEncoder,
    TierInapplicable,
    UnparseableCaption,
    caption_of,
    generate,
    generate_tasks,
    make_negatives,
    parse_caption,
    sample_scene,
    surface_of,
)


def test_vocabulary_is_disjoint():
    pools = [set(SHAPES), set(COLORS), set(SIZES), set(RELATIONS), {"a", "and"}]
    for i in range(len(pools)):
        for j in range(i + 1, len(pools)):
            assert not pools[i] & pools[j]
    assert set(GRAMMAR_WORDS) == set().union(*pools)


def test_inverse_is_an_involution():
    for r in RELATIONS:
        assert INVERSE[INVERSE[r]] == r


def test_sample_scene_invariants():
    rng = philox(0, "t")
    for _ in range(300):
        s = sample_scene(rng)
        k = len(s.objects)
        assert 1 <= k <= 3
        assert len({o.shape for o in s.objects}) == k  # pairwise distinct shapes
        assert len({o.color for o in s.objects}) == k  # pairwise distinct colors
        assert (s.relation is not None) == (k >= 2)
        assert len(s.mention_size) == k
        if k < 2:
            assert not s.flipped


def test_surface_flip_swaps_and_inverts():
    rng = philox(1, "t")
    scene = sample_scene(rng, n_objects=2)
    plain = surface_of(type(scene)(scene.objects, scene.relation, scene.seed, scene.mention_size, False))
    flipped = surface_of(type(scene)(scene.objects, scene.relation, scene.seed, scene.mention_size, True))
    assert flipped.nps == (plain.nps[1], plain.nps[0])
    assert flipped.relation_word == INVERSE[plain.relation_word]


def test_caption_word_order():
    rng = philox(2, "t")
    for _ in range(50):
        scene = sample_scene(rng)
        words = caption_of(scene).split()
        assert words[0] == "a"
        assert words[-1] in SHAPES
        assert sum(1 for w in words if w in RELATIONS) == (1 if len(scene.objects) >= 2 else 0)


def test_parse_caption_inverts_generation():
    for scene, caption, tree in generate(300, 9):
        parsed = parse_caption(caption, tree.sentence_id)
        assert parsed.forms() == tree.forms()
        assert parsed.heads == tree.heads
        assert parsed.categories() == tree.categories()
        assert parsed.sentence_id == tree.sentence_id


@pytest.mark.parametrize(
    "bad",
    [
        "",
        "red cube",  # missing article
        "a cube red",  # attribute order violated
        "a red cube over",  # dangling relation
        "a red cube quickly",  # trailing junk
        "a red wombat",  # unknown shape
        "a red cube over blue ball",  # second np missing article
    ],
)
def test_parse_caption_rejects(bad):
    with pytest.raises(UnparseableCaption):
        parse_caption(bad)


def test_generate_deterministic():
    a = generate(20, 7)
    b = generate(20, 7)
    c = generate(20, 8)
    assert [x[1] for x in a] == [x[1] for x in b]
    assert [x[0].seed for x in a] == [x[0].seed for x in b]
    assert [x[2].sentence_id for x in a] == [x[2].sentence_id for x in b]
    assert [x[1] for x in a] != [x[1] for x in c]


def test_encoder_shape_and_determinism():
    enc = SceneEncoder(3)
    scene = generate(1, 3)[0][0]
    v1 = enc.encode(scene)
    v2 = SceneEncoder(3).encode(scene)
    assert v1.vectors.shape == (10, 32)
    assert v1.vectors.dtype == np.float32
    assert np.array_equal(v1.vectors, v2.vectors)  # noise keyed by scene seed
    other = SceneEncoder(4).encode(scene)
    assert not np.array_equal(v1.vectors, other.vectors)


def test_encoder_injective_without_noise():
    enc = SceneEncoder(0, noise_sigma=0.0)
    seen: dict[bytes, tuple] = {}
    rng = philox(5, "inj")
    for _ in range(1000):
        scene = sample_scene(rng)
        key = (scene.objects, scene.relation)
        blob = enc.encode(scene).vectors.tobytes()
        if blob in seen:
            assert seen[blob] == key, "distinct scenes collided"
        seen[blob] = key
    assert len(seen) == len(set(seen.values()))


def test_encoder_custom_dims():
    enc = SceneEncoder(0, dim=16, noise_sigma=0.0)
    scene = generate(1, 0)[0][0]
    assert enc.encode(scene).vectors.shape == (10, 16)


def hamming(a: str, b: str) -> int:
    wa, wb = a.split(), b.split()
    assert len(wa) == len(wb)
    return sum(1 for x, y in zip(wa, wb) if x != y)


def two_object_scene(seed=0):
    rng = philox(seed, "two")
    scene = sample_scene(rng, n_objects=2)
    return scene, caption_of(scene)


def test_make_negatives_rejects_foreign_caption():
    scene, _ = two_object_scene()
    with pytest.raises(CogtError):
        make_negatives(scene, "a red cube", "hard", 0)


def test_swap_negative_permutes_words():
    scene, caption = two_object_scene(1)
    negs = make_negatives(scene, caption, "swap", 0)
    assert len(negs) == 1
    neg = negs[0]
    assert neg != caption
    assert sorted(neg.split()) == sorted(caption.split())  # same words, re-bound
    assert hamming(caption, neg) == 2  # exactly the two color positions
    parse_caption(neg)


def test_swap_needs_two_objects():
    rng = philox(2, "one")
    scene = sample_scene(rng, n_objects=1)
    with pytest.raises(TierInapplicable):
        make_negatives(scene, caption_of(scene), "swap", 0)


def test_trivial_negatives_are_disjoint_scenes():
    scene, caption = two_object_scene(3)
    negs = make_negatives(scene, caption, "trivial", 0)
    assert len(negs) == 10
    shapes = {o.shape for o in scene.objects}
    colors = {o.color for o in scene.objects}
    for neg in negs:
        words = set(neg.split())
        assert not words & shapes
        assert not words & colors
        parse_caption(neg)


@pytest.mark.parametrize("tier,k", [("easy", 3), ("medium", 2), ("hard", 1)])
def test_replacement_tiers_change_exactly_k(tier, k):
    scene, caption = two_object_scene(4)
    negs = make_negatives(scene, caption, tier, 0)
    assert len(negs) == 10
    for neg in negs:
        assert hamming(caption, neg) == k
        parse_caption(neg)


def test_replacement_tier_inapplicable_when_caption_too_bare():
    # one object, size unmentioned: only one replaceable attribute
    rng = philox(6, "bare")
    while True:
        scene = sample_scene(rng, n_objects=1)
        if not scene.mention_size[0]:
            break
    with pytest.raises(TierInapplicable):
        make_negatives(scene, caption_of(scene), "easy", 0)


def test_negatives_deterministic():
    scene, caption = two_object_scene(5)
    for tier in ("trivial", "easy", "medium", "hard", "swap"):
        assert make_negatives(scene, caption, tier, 42) == make_negatives(scene, caption, tier, 42)
    assert make_negatives(scene, caption, "hard", 1) != make_negatives(scene, caption, "hard", 2)


def test_generate_tasks_structure():
    enc = SceneEncoder(0)
    specs = generate_tasks(10, 0, enc)
    assert [s.tier for s in specs] == ["trivial", "easy", "medium", "hard", "swap"] * 2
    for s in specs:
        positive = s.candidates[s.positive_index]
        parse_caption(positive)
        assert s.candidates.count(positive) == 1
        expected = 2 if s.tier == "swap" else 11
        assert len(s.candidates) == expected
        assert s.visual.vectors.shape == (10, 32)
    again = generate_tasks(10, 0, enc)
    assert [s.candidates for s in again] == [s.candidates for s in specs]
    assert [s.positive_index for s in again] == [s.positive_index for s in specs]
