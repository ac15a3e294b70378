"""Sub-word vocabulary with character fallback, and tree surgery for split words."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .conllu import ROOT_HEAD, DependencyTree, SyntacticCategory
from .errors import CogtError

PAD_ID = 0
UNK_ID = 1
PAD_PIECE = "<pad>"
UNK_PIECE = "<unk>"

VOCAB_HEADER = "#cogt-vocab v1"


class CapacityTooSmall(CogtError):
    pass


@dataclass
class Vocab:
    """Ordered sub-word pieces; ids are dense, 0-based, stable across save/load."""

    pieces: list[str]
    _ids: dict[str, int] = field(default_factory=dict, repr=False, compare=False)
    _cache: dict[str, tuple[int, ...]] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._ids = {p: i for i, p in enumerate(self.pieces)}

    def __len__(self) -> int:
        return len(self.pieces)

    def encode_word(self, word: str) -> tuple[int, ...]:
        """Greedy longest-match-first piece ids for one lowercased word."""
        word = word.lower()
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        ids = []
        i = 0
        while i < len(word):
            for ln in range(len(word) - i, 0, -1):
                piece = word[i : i + ln]
                j = self._ids.get(piece)
                if j is not None and j >= 2:  # specials never match surface text
                    ids.append(j)
                    i += ln
                    break
            else:
                ids.append(UNK_ID)  # character unseen at build time
                i += 1
        out = tuple(ids)
        self._cache[word] = out
        return out


def build_vocab(corpus: list[str], max_size: int) -> Vocab:
    """Specials + frequency-ranked whole words (ties lexicographic) + character fallback."""
    if not corpus:
        raise CapacityTooSmall("empty corpus")
    words = Counter()
    chars = set()
    for caption in corpus:
        for w in caption.lower().split():
            words[w] += 1
            chars.update(w)
    floor = 2 + len(chars)
    if max_size < floor:
        raise CapacityTooSmall(f"max_size {max_size} < specials + {len(chars)} characters")
    # single-character words are already covered by their character piece
    ranked = sorted((w for w in words if len(w) >= 2), key=lambda w: (-words[w], w))
    kept = ranked[: max_size - floor]
    return Vocab([PAD_PIECE, UNK_PIECE] + kept + sorted(chars))


def save_vocab(vocab: Vocab, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(VOCAB_HEADER + "\n")
        for p in vocab.pieces:
            f.write(p + "\n")


def load_vocab(path: str) -> Vocab:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != VOCAB_HEADER:
        raise CogtError(f"{path}: missing vocab header")
    return Vocab(lines[1:])


@dataclass
class TokenizedTree:
    """Tree whose nodes are single pieces; split words become comp-labeled chains."""

    tokens: list[tuple[int, SyntacticCategory, int]]  # (piece_id, category, origin_word)
    heads: list[int]
    original: DependencyTree | None = None

    @property
    def n(self) -> int:
        return len(self.tokens)

    def piece_ids(self) -> list[int]:
        return [p for p, _, _ in self.tokens]

    def categories(self) -> list[SyntacticCategory]:
        return [c for _, c, _ in self.tokens]


def tokenize_tree(tree: DependencyTree, vocab: Vocab) -> TokenizedTree:
    """Split each word into pieces; continuation pieces chain to their predecessor as comp."""
    pieces_per_word = [vocab.encode_word(form) for form, _ in tree.nodes]
    first_index = []
    total = 0
    for ids in pieces_per_word:
        first_index.append(total)
        total += len(ids)
    tokens: list[tuple[int, SyntacticCategory, int]] = []
    heads: list[int] = []
    for w, (ids, (_, cat)) in enumerate(zip(pieces_per_word, tree.nodes)):
        h = tree.heads[w]
        tokens.append((ids[0], cat, w))
        heads.append(ROOT_HEAD if h == ROOT_HEAD else first_index[h])
        for k in range(1, len(ids)):
            tokens.append((ids[k], SyntacticCategory.comp, w))
            heads.append(first_index[w] + k - 1)
    return TokenizedTree(tokens=tokens, heads=heads, original=tree)


def detokenize(tok_tree: TokenizedTree, vocab: Vocab) -> list[str]:
    """Concatenate pieces per origin word (lowercased surfaces)."""
    n_words = tok_tree.tokens[-1][2] + 1 if tok_tree.tokens else 0
    out = [""] * n_words
    for piece_id, _, w in tok_tree.tokens:
        out[w] += vocab.pieces[piece_id]
    return out
