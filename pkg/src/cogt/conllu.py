"""CoNLL-U ingestion: validated dependency trees over a fixed 46-label vocabulary."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import CogtError


class MalformedLine(CogtError):
    pass


class CycleDetected(CogtError):
    pass


class MultipleRoots(CogtError):
    pass


class DanglingHead(CogtError):
    pass


class SyntacticCategory(enum.IntEnum):
    """The 45 dependency labels plus the synthetic continuation label `comp`."""

    acomp = 0
    advcl = 1
    advmod = 2
    agent = 3
    amod = 4
    appos = 5
    aux = 6
    auxpass = 7
    cc = 8
    ccomp = 9
    conj = 10
    cop = 11
    csubj = 12
    csubjpass = 13
    dep = 14
    det = 15
    discourse = 16
    dobj = 17
    expl = 18
    goeswith = 19
    iobj = 20
    mark = 21
    mwe = 22
    neg = 23
    nn = 24
    npadvmod = 25
    nsubj = 26
    nsubjpass = 27
    num = 28
    number = 29
    parataxis = 30
    pcomp = 31
    pobj = 32
    poss = 33
    possessive = 34
    preconj = 35
    predet = 36
    prep = 37
    prt = 38
    punct = 39
    quantmod = 40
    rcmod = 41
    root = 42
    tmod = 43
    xcomp = 44
    comp = 45


N_CATEGORIES = len(SyntacticCategory)

# subtyped labels that do not reduce to their base before the colon
_SUBTYPE_SPECIAL = {"nsubj:pass": "nsubjpass", "csubj:pass": "csubjpass"}

_BASE_NAMES = {c.name for c in SyntacticCategory if c is not SyntacticCategory.comp}

ROOT_HEAD = -1


def map_deprel(label: str) -> SyntacticCategory:
    """Map a parser-emitted relation label onto the fixed vocabulary; unknown -> dep."""
    low = label.strip().lower()
    low = _SUBTYPE_SPECIAL.get(low, low.split(":", 1)[0])
    # `comp` is reserved for sub-word surgery; ingestion must never yield it
    if low in _BASE_NAMES:
        return SyntacticCategory[low]
    return SyntacticCategory.dep


@dataclass
class DependencyTree:
    """One sentence: surface forms with categories, head links, and an id."""

    nodes: list[tuple[str, SyntacticCategory]]
    heads: list[int]  # index of head per node, ROOT_HEAD for the single root
    sentence_id: str = ""

    @property
    def n(self) -> int:
        return len(self.nodes)

    def forms(self) -> list[str]:
        return [f for f, _ in self.nodes]

    def categories(self) -> list[SyntacticCategory]:
        return [c for _, c in self.nodes]

    def depth(self, j: int) -> int:
        d = 0
        while self.heads[j] != ROOT_HEAD:
            j = self.heads[j]
            d += 1
        return d

    def validate(self) -> None:
        n = self.n
        if n == 0 or len(self.heads) != n:
            raise MalformedLine(f"{self.sentence_id}: empty tree or head count mismatch")
        roots = [j for j, h in enumerate(self.heads) if h == ROOT_HEAD]
        if len(roots) > 1:
            raise MultipleRoots(f"{self.sentence_id}: roots at {roots}")
        if not roots:
            raise CycleDetected(f"{self.sentence_id}: no root")
        for j, h in enumerate(self.heads):
            if h != ROOT_HEAD and not 0 <= h < n:
                raise DanglingHead(f"{self.sentence_id}: node {j} head {h}")
        # single root + no cycle on head chains => every node reaches the root
        for j in range(n):
            seen = set()
            k = j
            while self.heads[k] != ROOT_HEAD:
                if k in seen:
                    raise CycleDetected(f"{self.sentence_id}: cycle through node {k}")
                seen.add(k)
                k = self.heads[k]


@dataclass
class _Block:
    sentence_id: str = ""
    lines: list[list[str]] = field(default_factory=list)


def _split_blocks(text: str) -> list[_Block]:
    blocks: list[_Block] = []
    cur = _Block()
    for raw in text.splitlines():
        line = raw.rstrip("\n")
        if not line.strip():
            if cur.lines:
                blocks.append(cur)
            cur = _Block()
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("sent_id"):
                _, _, value = body.partition("=")
                cur.sentence_id = value.strip()
            continue
        cols = line.split("\t")
        if len(cols) < 8:
            raise MalformedLine(f"expected >= 8 columns, got {len(cols)}: {line!r}")
        cur.lines.append(cols)
    if cur.lines:
        blocks.append(cur)
    return blocks


def _block_to_tree(block: _Block, index: int) -> DependencyTree:
    sent_id = block.sentence_id or str(index)
    rows = []
    for cols in block.lines:
        tok_id = cols[0]
        if "-" in tok_id:  # multiword-token range, not a node
            continue
        if "." in tok_id:  # empty node; never emitted by the bridge
            raise MalformedLine(f"{sent_id}: empty-node id {tok_id!r}")
        try:
            idx = int(tok_id)
            head = int(cols[6])
        except ValueError as exc:
            raise MalformedLine(f"{sent_id}: non-integer ID/HEAD in {cols!r}") from exc
        rows.append((idx, cols[1], head, cols[7]))
    if not rows:
        raise MalformedLine(f"{sent_id}: block has no token lines")
    if [r[0] for r in rows] != list(range(1, len(rows) + 1)):
        raise MalformedLine(f"{sent_id}: token ids are not 1..n")
    n = len(rows)
    nodes = [(form, map_deprel(rel)) for _, form, _, rel in rows]
    heads = []
    for _, _, head, _ in rows:
        if head == 0:
            heads.append(ROOT_HEAD)
        elif 1 <= head <= n:
            heads.append(head - 1)
        else:
            raise DanglingHead(f"{sent_id}: HEAD {head} out of range 1..{n}")
    tree = DependencyTree(nodes=nodes, heads=heads, sentence_id=sent_id)
    tree.validate()
    return tree


def parse_conllu(text: str) -> list[DependencyTree]:
    """Parse CoNLL-U text into validated trees, one per blank-line-separated block."""
    return [_block_to_tree(b, i) for i, b in enumerate(_split_blocks(text))]


def serialize_conllu(trees: list[DependencyTree]) -> str:
    """Render trees back to CoNLL-U; parse_conllu(serialize_conllu(ts)) == ts structurally."""
    out = []
    for tree in trees:
        out.append(f"# sent_id = {tree.sentence_id}")
        for j, (form, cat) in enumerate(tree.nodes):
            head = 0 if tree.heads[j] == ROOT_HEAD else tree.heads[j] + 1
            cols = [str(j + 1), form, "_", "_", "_", "_", str(head), cat.name, "_", "_"]
            out.append("\t".join(cols))
        out.append("")
    return "\n".join(out)
