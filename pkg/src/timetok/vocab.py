"""Shared token vocabulary for the three temporal video tasks.

One flat integer vocabulary covers everything the decoder can emit:

    [0, D)                          time tokens (quantized window positions)
    [D, D+C_tad)                    detection class tokens
    [D+C_tad, D+C_tad+C_tas)        segmentation class tokens
    next 2                          boundary / background tokens
    next 3                          task prompt tokens (TAD, TAS, GEBD)
    next 1                          end-of-sequence
    next 1                          padding

Per-task legality masks restrict which slice of the vocabulary a task may
emit at each position during constrained generation.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Task(Enum):
    """The three temporal understanding tasks sharing one model."""

    TAD = "tad"
    TAS = "tas"
    GEBD = "gebd"


class Role(Enum):
    """What a position in a target sequence is supervising.

    A detection target reads PROMPT, (TAD_START, TAD_END, TAD_CLASS)*, EOS.
    Segmentation and boundary targets read PROMPT followed by exactly one
    frame token per clip frame.
    """

    PROMPT = "prompt"
    TAD_START = "tad_start"
    TAD_END = "tad_end"
    TAD_CLASS = "tad_class"
    TAS_FRAME_CLASS = "tas_frame_class"
    GEBD_FRAME_BINARY = "gebd_frame_binary"
    EOS = "eos"


# Number of slots past the class ranges: boundary, background, 3 prompts,
# eos, pad.
_TAIL_SLOTS = 7


@dataclass(frozen=True)
class VocabLayout:
    """Integer layout of the shared vocabulary.

    All derived indices are stored explicitly so a layout can be serialized
    into checkpoints and configs and decoding stays reproducible.
    """

    time_token_count: int
    tad_class_count: int
    tas_class_count: int
    tad_class_offset: int
    tas_class_offset: int
    gebd_boundary_index: int
    gebd_background_index: int
    prompt_tad_index: int
    prompt_tas_index: int
    prompt_gebd_index: int
    eos_index: int
    pad_index: int
    total_size: int

    def prompt_index(self, task: Task) -> int:
        if task is Task.TAD:
            return self.prompt_tad_index
        if task is Task.TAS:
            return self.prompt_tas_index
        return self.prompt_gebd_index

    def to_dict(self) -> dict:
        return {
            "time_token_count": self.time_token_count,
            "tad_class_count": self.tad_class_count,
            "tas_class_count": self.tas_class_count,
            "tad_class_offset": self.tad_class_offset,
            "tas_class_offset": self.tas_class_offset,
            "gebd_boundary_index": self.gebd_boundary_index,
            "gebd_background_index": self.gebd_background_index,
            "prompt_tad_index": self.prompt_tad_index,
            "prompt_tas_index": self.prompt_tas_index,
            "prompt_gebd_index": self.prompt_gebd_index,
            "eos_index": self.eos_index,
            "pad_index": self.pad_index,
            "total_size": self.total_size,
        }

    @staticmethod
    def from_dict(d: dict) -> "VocabLayout":
        layout = VocabLayout(**{k: int(v) for k, v in d.items()})
        rebuilt = build_layout(
            layout.time_token_count,
            layout.tad_class_count,
            layout.tas_class_count,
        )
        if rebuilt != layout:
            raise ValueError("layout fields do not satisfy the vocabulary invariants")
        return layout


def build_layout(time_token_count: int, tad_classes: int, tas_classes: int) -> VocabLayout:
    """Build the vocabulary layout for the given time resolution and class counts.

    Token ranges are contiguous and packed: time tokens first, then the two
    class ranges, then boundary/background, prompts, eos, pad. The total size
    is the exact minimum with no slack slots.
    """
    if time_token_count < 1 or tad_classes < 1 or tas_classes < 1:
        raise ValueError("all vocabulary counts must be >= 1")
    d = int(time_token_count)
    tad_off = d
    tas_off = d + int(tad_classes)
    gebd_boundary = tas_off + int(tas_classes)
    gebd_background = gebd_boundary + 1
    prompt_tad = gebd_background + 1
    prompt_tas = prompt_tad + 1
    prompt_gebd = prompt_tas + 1
    eos = prompt_gebd + 1
    pad = eos + 1
    return VocabLayout(
        time_token_count=d,
        tad_class_count=int(tad_classes),
        tas_class_count=int(tas_classes),
        tad_class_offset=tad_off,
        tas_class_offset=tas_off,
        gebd_boundary_index=gebd_boundary,
        gebd_background_index=gebd_background,
        prompt_tad_index=prompt_tad,
        prompt_tas_index=prompt_tas,
        prompt_gebd_index=prompt_gebd,
        eos_index=eos,
        pad_index=pad,
        total_size=pad + 1,
    )


def time_to_token(relative_position: float, layout: VocabLayout) -> int:
    """Quantize a relative position in [0, 1] to a time token.

    Uses floor so the mapping is monotone and inverts token_to_time exactly
    at bin centers; position 1.0 clamps into the last bin.
    """
    if not 0.0 <= relative_position <= 1.0:
        raise ValueError(f"relative position {relative_position} outside [0, 1]")
    token = int(relative_position * layout.time_token_count)
    return min(token, layout.time_token_count - 1)


def token_to_time(token: int, layout: VocabLayout) -> float:
    """Map a time token back to the center of its quantization bin."""
    if not 0 <= token < layout.time_token_count:
        raise ValueError(f"token {token} is not a time token")
    return (token + 0.5) / layout.time_token_count


def class_to_token(task: Task, class_id: int, layout: VocabLayout) -> int:
    """Map a task-local class id to its vocabulary index.

    Only TAD and TAS carry class vocabularies; GEBD uses the dedicated
    boundary/background indices instead.
    """
    if task is Task.TAD:
        if not 0 <= class_id < layout.tad_class_count:
            raise ValueError(f"TAD class {class_id} out of range")
        return layout.tad_class_offset + class_id
    if task is Task.TAS:
        if not 0 <= class_id < layout.tas_class_count:
            raise ValueError(f"TAS class {class_id} out of range")
        return layout.tas_class_offset + class_id
    raise ValueError("GEBD has no class tokens; use boundary/background indices")


def token_to_class(token: int, layout: VocabLayout) -> tuple[Task, int]:
    """Inverse of class_to_token."""
    if layout.tad_class_offset <= token < layout.tas_class_offset:
        return Task.TAD, token - layout.tad_class_offset
    if layout.tas_class_offset <= token < layout.gebd_boundary_index:
        return Task.TAS, token - layout.tas_class_offset
    raise ValueError(f"token {token} is not a class token")


_ROLES_BY_TASK = {
    Task.TAD: {Role.PROMPT, Role.TAD_START, Role.TAD_END, Role.TAD_CLASS, Role.EOS},
    Task.TAS: {Role.PROMPT, Role.TAS_FRAME_CLASS},
    Task.GEBD: {Role.PROMPT, Role.GEBD_FRAME_BINARY},
}


def legal_mask(task: Task, role: Role, layout: VocabLayout) -> np.ndarray:
    """Boolean vector over the vocabulary: which tokens a role may emit.

    Boundary slots admit only time tokens, class slots only the task's class
    range, GEBD frame slots only its two binary tokens. EOS has its own role;
    generation unions it in at the slots where a new detection triple could
    begin (see generation_mask).
    """
    if role not in _ROLES_BY_TASK[task]:
        raise ValueError(f"role {role} is not valid for task {task}")
    mask = np.zeros(layout.total_size, dtype=bool)
    if role in (Role.TAD_START, Role.TAD_END):
        mask[: layout.time_token_count] = True
    elif role is Role.TAD_CLASS:
        mask[layout.tad_class_offset : layout.tas_class_offset] = True
    elif role is Role.TAS_FRAME_CLASS:
        mask[layout.tas_class_offset : layout.gebd_boundary_index] = True
    elif role is Role.GEBD_FRAME_BINARY:
        mask[layout.gebd_boundary_index] = True
        mask[layout.gebd_background_index] = True
    elif role is Role.EOS:
        mask[layout.eos_index] = True
    elif role is Role.PROMPT:
        mask[layout.prompt_index(task)] = True
    return mask


def generation_mask(task: Task, role: Role, layout: VocabLayout, allow_eos: bool = False) -> np.ndarray:
    """Legality mask used at one generation step.

    Identical to legal_mask except that at TAD_START slots, where a fresh
    triple could begin, the stop token may be offered as the alternative so
    every emitted triple is complete.
    """
    mask = legal_mask(task, role, layout)
    if allow_eos:
        if role is not Role.TAD_START:
            raise ValueError("eos is only offered where a new triple could begin")
        mask = mask.copy()
        mask[layout.eos_index] = True
    return mask
