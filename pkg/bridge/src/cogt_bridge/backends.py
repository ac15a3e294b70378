"""Parser backends.

A backend turns a batch of tokenized sentences into dependency arcs.
The default "rules" backend is a deterministic attachment grammar for
caption-register English; it needs no third-party models, so its output
is stable for a given version string.  The optional "spacy" backend
delegates to a pretrained pipeline when one is installed.
"""

from __future__ import annotations

from .errors import BackendUnavailable, BridgeError
from .lexicon import tag

# (form, head, deprel) with 1-based head, 0 for root
Arc = tuple[str, int, str]


class RulesBackend:
    name = "rules"
    version = "rules-0.1"

    def parse_batch(self, sentences: list[list[str]]) -> list[list[Arc]]:
        return [self._parse(words) for words in sentences]

    def _parse(self, words: list[str]) -> list[Arc]:
        n = len(words)
        lowered = [w.lower() for w in words]
        pos = [tag(w) for w in lowered]
        heads = [None] * n
        rels = [""] * n

        # Maximal runs of consecutive nouns form one phrase; the last
        # noun heads the run and earlier ones are compounds.
        run_head = {}
        i = 0
        noun_heads = []
        while i < n:
            if pos[i] != "NOUN":
                i += 1
                continue
            j = i
            while j + 1 < n and pos[j + 1] == "NOUN":
                j += 1
            for k in range(i, j):
                heads[k] = j + 1
                rels[k] = "nn"
            for k in range(i, j + 1):
                run_head[k] = j
            noun_heads.append(j)
            i = j + 1

        # First contiguous verb run: the last verb is the main verb,
        # anything before it in the run is an auxiliary.
        verb_idxs = [i for i in range(n) if pos[i] == "VERB"]
        main = None
        if verb_idxs:
            main = verb_idxs[0]
            while main + 1 < n and pos[main + 1] == "VERB":
                main += 1
            for v in range(verb_idxs[0], main):
                heads[v] = main + 1
                rels[v] = "aux"
            for v in verb_idxs:
                if v > main:
                    heads[v] = main + 1
                    rels[v] = "conj"

        if main is not None:
            root = main
        elif noun_heads:
            root = noun_heads[0]
        else:
            root = 0
        heads[root] = 0
        rels[root] = "root"

        def nearest_left_anchor(i: int) -> int | None:
            # closest preceding phrase head or main verb
            for k in range(i - 1, -1, -1):
                if k == main or (pos[k] == "NOUN" and run_head[k] == k):
                    return k
            return None

        # Prepositions attach leftward; their object is the head of the
        # first noun run before the next clause boundary.
        pobj_of = {}
        for i in range(n):
            if pos[i] != "ADP" or i == root:
                continue
            anchor = nearest_left_anchor(i)
            heads[i] = (anchor if anchor is not None else root) + 1
            rels[i] = "prep"
            for k in range(i + 1, n):
                if pos[k] in ("ADP", "VERB"):
                    break
                if pos[k] == "NOUN" and run_head[k] == k:
                    heads[k] = i + 1
                    rels[k] = "pobj"
                    pobj_of[k] = i
                    break

        # Remaining noun-run heads: subject before the verb, object
        # after it, later ones coordinate with the first of their side.
        first_subj = None
        first_obj = None
        for h in noun_heads:
            if h == root or h in pobj_of:
                continue
            if main is not None and h < main:
                if first_subj is None:
                    heads[h] = main + 1
                    rels[h] = "nsubj"
                    first_subj = h
                else:
                    heads[h] = first_subj + 1
                    rels[h] = "conj"
            elif main is not None:
                if first_obj is None:
                    heads[h] = main + 1
                    rels[h] = "dobj"
                    first_obj = h
                else:
                    heads[h] = first_obj + 1
                    rels[h] = "conj"
            else:
                heads[h] = root + 1
                rels[h] = "conj"

        def next_noun_head(i: int, blockers: tuple[str, ...]) -> int | None:
            for k in range(i + 1, n):
                if pos[k] in blockers:
                    return None
                if pos[k] == "NOUN":
                    return run_head[k]
            return None

        for i in range(n):
            if heads[i] is not None or i == root:
                continue
            p = pos[i]
            if p in ("DET", "NUM", "ADJ"):
                # determiners stop at coordination, attributes span it
                # so "small and brown bird" modifies the same noun
                blockers = ("VERB", "ADP") if p == "ADJ" else ("VERB", "ADP", "CC")
                target = next_noun_head(i, blockers)
                label = {"DET": "det", "NUM": "num", "ADJ": "amod"}[p]
                if target is None and p == "ADJ" and main is not None and i > main:
                    target, label = main, "acomp"
                if target is None:
                    target = nearest_left_anchor(i)
                if target is None:
                    target = root
                heads[i] = target + 1
                rels[i] = label
            elif p == "ADV":
                target = None
                for k in range(i + 1, n):
                    if pos[k] == "ADJ":
                        target, label = k, "advmod"
                        break
                    if pos[k] not in ("ADV", "NEG"):
                        break
                if target is None and main is not None:
                    target, label = main, "advmod"
                if target is None:
                    target, label = root, "advmod"
                heads[i] = target + 1
                rels[i] = label
            elif p == "NEG":
                target = main if main is not None else next_noun_head(i, ("VERB",))
                heads[i] = (target if target is not None else root) + 1
                rels[i] = "neg"
            elif p == "CC":
                anchor = nearest_left_anchor(i)
                if anchor is None:
                    anchor = next_noun_head(i, ("VERB",))
                heads[i] = (anchor if anchor is not None else root) + 1
                rels[i] = "cc"
            else:
                heads[i] = root + 1
                rels[i] = "dep"

        arcs = [(words[i], heads[i], rels[i]) for i in range(n)]
        _assert_tree(arcs)
        return arcs


def _assert_tree(arcs: list[Arc]) -> None:
    """Internal guard: exactly one root and every token reaches it."""
    n = len(arcs)
    roots = [i for i, (_, h, _) in enumerate(arcs) if h == 0]
    if len(roots) != 1:
        raise BridgeError(f"backend produced {len(roots)} roots")
    for i, (_, h, _) in enumerate(arcs):
        if not 0 <= h <= n or h == i + 1:
            raise BridgeError(f"backend produced bad head {h} at token {i + 1}")
        seen = {i}
        k = i
        while arcs[k][1] != 0:
            k = arcs[k][1] - 1
            if k in seen:
                raise BridgeError(f"backend produced a cycle through token {i + 1}")
            seen.add(k)


class SpacyBackend:
    name = "spacy"

    def __init__(self, model: str = "en_core_web_sm"):
        try:
            import spacy
        except ImportError as exc:
            raise BackendUnavailable(
                "spacy is not installed; use the rules backend or pip install spacy"
            ) from exc
        try:
            self._nlp = spacy.load(model)
        except OSError as exc:
            raise BackendUnavailable(f"spacy model {model!r} is not available") from exc
        self.version = f"spacy-{spacy.__version__}+{model}"
        self._batch_size = 32

    def parse_batch(self, sentences: list[list[str]]) -> list[list[Arc]]:
        texts = [" ".join(words) for words in sentences]
        out = []
        for doc in self._nlp.pipe(texts, batch_size=self._batch_size):
            arcs = []
            for tok in doc:
                head = 0 if tok.head is tok else tok.head.i + 1
                rel = "root" if head == 0 else tok.dep_.lower()
                arcs.append((tok.text, head, rel))
            _assert_tree(arcs)
            out.append(arcs)
        return out


_BACKENDS = {"rules": RulesBackend, "spacy": SpacyBackend}


def get_backend(name: str):
    if name not in _BACKENDS:
        raise BackendUnavailable(
            f"unknown backend {name!r}; available: {sorted(_BACKENDS)}"
        )
    return _BACKENDS[name]()
