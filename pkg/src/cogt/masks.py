"""Attention mask compilation for all prediction regimes, with leak verification.

Slot layout is one 2n-row plan per caption: masked slots 0..n-1, then visible
slots n..2n-1. self_mask[q, k] = True means query slot q may attend key slot k.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .cgm import Cgm, PredictionMode
from .errors import CogtError

MASK_MAGIC = b"COGTMASK"
_MODE_BYTE = {"cogt": 0, "ar": 1, "parallel": 2}
_BYTE_MODE = {v: k for k, v in _MODE_BYTE.items()}


class UnresolvedMixedMode(CogtError):
    pass


@dataclass
class AttentionPlan:
    n: int
    self_mask: np.ndarray  # (2n, 2n) bool
    mode: PredictionMode
    predict_slots: list[int]
    cross_allowed: bool = field(default=True)


def compile(cgm: Cgm, mode: PredictionMode) -> AttentionPlan:
    """Build the boolean attention plan for a concrete (non-mixed) regime."""
    if mode.kind == "mixed":
        raise UnresolvedMixedMode("resolve mixed into parallel or ar before compiling")
    n = cgm.n
    m = np.zeros((2 * n, 2 * n), dtype=bool)
    np.fill_diagonal(m, True)
    if mode.kind == "cogt":
        for j, anc in enumerate(cgm.ancestors):
            for a in anc:
                m[j, n + a] = True
                m[n + j, n + a] = True
    elif mode.kind == "ar":
        for j in range(n):
            m[j, n : n + j] = True
            m[n + j, n : n + j] = True
    # parallel: masked and visible slots keep only their diagonal entry
    return AttentionPlan(n=n, self_mask=m, mode=mode, predict_slots=list(range(n)))


def verify_no_leak(plan: AttentionPlan) -> bool:
    """True iff no masked slot j reaches visible slot j through any attention path."""
    reach = plan.self_mask.copy()
    while True:
        hops = reach.astype(np.int32)
        step = reach | ((hops @ hops) > 0)
        if np.array_equal(step, reach):
            break
        reach = step
    n = plan.n
    return not any(reach[j, n + j] for j in range(n))


def dump_plan(plan: AttentionPlan, f) -> None:
    """Append one binary plan block: magic, u32 n, mode byte, bit-packed matrix."""
    if plan.mode.kind not in _MODE_BYTE:
        raise UnresolvedMixedMode("mixed plans have no dump encoding")
    f.write(MASK_MAGIC)
    f.write(struct.pack("<I", plan.n))
    f.write(struct.pack("B", _MODE_BYTE[plan.mode.kind]))
    f.write(np.packbits(plan.self_mask.reshape(-1)).tobytes())


def load_plans(path: str) -> list[AttentionPlan]:
    """Read concatenated plan blocks until end of file."""
    from .cgm import COGT, FULLY_PARALLEL, SEQUENTIAL_AR

    modes = {"cogt": COGT, "ar": SEQUENTIAL_AR, "parallel": FULLY_PARALLEL}
    plans = []
    with open(path, "rb") as f:
        while True:
            magic = f.read(len(MASK_MAGIC))
            if not magic:
                break
            if magic != MASK_MAGIC:
                raise CogtError(f"{path}: bad mask magic {magic!r}")
            (n,) = struct.unpack("<I", f.read(4))
            (mode_byte,) = struct.unpack("B", f.read(1))
            side = 2 * n
            nbytes = (side * side + 7) // 8
            bits = np.unpackbits(np.frombuffer(f.read(nbytes), dtype=np.uint8))
            mask = bits[: side * side].reshape(side, side).astype(bool)
            plans.append(
                AttentionPlan(
                    n=n,
                    self_mask=mask,
                    mode=modes[_BYTE_MODE[mode_byte]],
                    predict_slots=list(range(n)),
                )
            )
    return plans
