"""Closed word classes for the deterministic caption parser.

Caption English is a narrow register: short declaratives about objects,
attributes, and spatial relations.  A fixed lexicon covers the closed
classes; anything unlisted is treated as a noun, which is the right
default for this register (new vocabulary in captions is almost always
an object name).
"""

from __future__ import annotations

DETERMINERS = frozenset(
    {"a", "an", "the", "this", "that", "these", "those", "its", "his",
     "her", "their", "some", "each", "every"}
)

CONJUNCTIONS = frozenset({"and", "or"})

PREPOSITIONS = frozenset(
    {"on", "in", "at", "near", "beside", "above", "below", "over",
     "under", "behind", "inside", "outside", "with", "without", "of",
     "by", "to", "from", "onto", "into", "against", "around", "across",
     "along", "between", "atop", "underneath", "beneath", "left_of",
     "right_of", "next"}
)

# Copulas, auxiliaries, and the verbs that dominate caption corpora.
VERBS = frozenset(
    {"is", "are", "was", "were", "be", "been", "being", "has", "have",
     "had", "sits", "sit", "sitting", "sat", "stands", "stand",
     "standing", "stood", "lies", "lying", "rests", "resting", "flies",
     "fly", "flying", "perches", "perched", "perching", "eats", "eat",
     "eating", "drinks", "drinking", "holds", "hold", "holding",
     "held", "wears", "wearing", "carries", "carrying", "rides",
     "riding", "walks", "walking", "runs", "running", "jumps",
     "jumping", "swims", "swimming", "looks", "looking", "watches",
     "watching", "sees", "sleeps", "sleeping", "plays", "playing",
     "hangs", "hanging", "leans", "leaning", "faces", "facing",
     "covers", "covering", "contains", "shows", "touches", "touching",
     "grazing", "grazes", "sings", "singing", "points", "pointing"}
)

ADJECTIVES = frozenset(
    {
        # colors
        "red", "blue", "green", "yellow", "orange", "purple", "pink",
        "brown", "black", "white", "gray", "grey", "golden", "silver",
        "beige", "tan", "crimson", "teal", "cyan", "magenta", "violet",
        # sizes and shapes
        "small", "large", "big", "tiny", "huge", "little", "tall",
        "short", "long", "wide", "narrow", "round", "square", "flat",
        "thin", "thick", "giant", "miniature",
        # common caption attributes
        "old", "young", "new", "bright", "dark", "light", "shiny",
        "fluffy", "furry", "wooden", "metal", "metallic", "plastic",
        "glass", "striped", "spotted", "dotted", "checkered", "plain",
        "open", "closed", "empty", "full", "clean", "dirty", "wet",
        "dry", "soft", "hard", "warm", "cold", "beautiful", "cute",
        "happy", "sad", "angry", "calm", "wild", "colorful", "pale",
        "vivid", "smooth", "rough", "upper", "lower", "front", "back",
    }
)

ADVERBS = frozenset(
    {"very", "quite", "really", "extremely", "slightly", "partially",
     "fully", "mostly", "almost", "nearly", "gently", "quietly"}
)

NEGATIONS = frozenset({"not", "no", "never"})

NUMBER_WORDS = frozenset(
    {"one", "two", "three", "four", "five", "six", "seven", "eight",
     "nine", "ten", "eleven", "twelve", "several", "many", "few"}
)


def tag(word: str) -> str:
    """Coarse part-of-speech tag for one lowercased token."""
    if word in DETERMINERS:
        return "DET"
    if word in CONJUNCTIONS:
        return "CC"
    if word in NEGATIONS:
        return "NEG"
    if word in PREPOSITIONS:
        return "ADP"
    if word in VERBS:
        return "VERB"
    if word in ADJECTIVES:
        return "ADJ"
    if word in ADVERBS:
        return "ADV"
    if word in NUMBER_WORDS or word.isdigit():
        return "NUM"
    return "NOUN"
