"""Caption file to CoNLL-U conversion.

The bridge reads one caption per line, parses each with the configured
backend, and writes one CoNLL-U block per input line.  Blocks carry
``# sent_id = <line number>`` so downstream consumers can join output
rows back to the caption file.  The only coupling to the rest of the
pipeline is this text format.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import tempfile
from collections import Counter

from .backends import get_backend
from .errors import BridgeError, EmptyInput

log = logging.getLogger("cogt_bridge")

# longer captions are truncated; caption corpora essentially never
# reach this, and downstream models cap sequence length anyway
MAX_TOKENS = 64

_STRIP = ".,;:!?\"'()[]{}"


@dataclasses.dataclass
class BridgeConfig:
    input_path: str
    output_path: str
    parser_backend: str = "rules"
    batch_size: int = 32

    def __post_init__(self):
        if self.batch_size < 1:
            raise BridgeError("batch_size must be >= 1")


@dataclasses.dataclass
class BridgeStats:
    backend: str
    backend_version: str
    sentences: int
    tokens: int
    truncated: int
    labels: dict[str, int]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def tokenize(line: str) -> list[str]:
    """Whitespace tokens with surrounding punctuation stripped."""
    out = []
    for raw in line.split():
        word = raw.strip(_STRIP)
        if word:
            out.append(word)
    return out


def _read_captions(path: str) -> list[tuple[int, list[str]]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise EmptyInput(f"{path}: no captions")
    numbered = []
    for lineno, line in enumerate(lines, start=1):
        words = tokenize(line)
        if not words:
            raise BridgeError(f"{path}:{lineno}: blank caption line")
        numbered.append((lineno, words))
    return numbered


def _format_block(lineno: int, words: list[str], arcs) -> str:
    lines = [f"# sent_id = {lineno}", f"# text = {' '.join(words)}"]
    for idx, (form, head, rel) in enumerate(arcs, start=1):
        cols = [str(idx), form, form.lower(), "_", "_", "_", str(head), rel, "_", "_"]
        lines.append("\t".join(cols))
    return "\n".join(lines)


def parse_file(config: BridgeConfig) -> BridgeStats:
    """Parse every caption in config.input_path into config.output_path.

    Returns corpus statistics.  The output file is written atomically:
    either the previous content survives or the complete new parse does.
    """
    backend = get_backend(config.parser_backend)
    captions = _read_captions(config.input_path)

    truncated = 0
    batches: list[list[str]] = []
    for lineno, words in captions:
        if len(words) > MAX_TOKENS:
            log.warning(
                "caption %d has %d tokens; truncating to %d",
                lineno, len(words), MAX_TOKENS,
            )
            words = words[:MAX_TOKENS]
            truncated += 1
        batches.append(words)

    arcs_per_caption = []
    for start in range(0, len(batches), config.batch_size):
        arcs_per_caption.extend(
            backend.parse_batch(batches[start : start + config.batch_size])
        )

    labels: Counter[str] = Counter()
    tokens = 0
    header = (
        f"# parser_backend = {backend.name}\n"
        f"# parser_backend_version = {backend.version}"
    )
    blocks = [header]
    for (lineno, _), words, arcs in zip(captions, batches, arcs_per_caption):
        blocks.append(_format_block(lineno, words, arcs))
        tokens += len(arcs)
        labels.update(rel for _, _, rel in arcs)

    payload = "\n\n".join(blocks) + "\n"
    out_dir = os.path.dirname(os.path.abspath(config.output_path))
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(payload)
        os.replace(tmp, config.output_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

    return BridgeStats(
        backend=backend.name,
        backend_version=backend.version,
        sentences=len(captions),
        tokens=tokens,
        truncated=truncated,
        labels=dict(sorted(labels.items())),
    )


def write_stats(stats: BridgeStats, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(stats.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
