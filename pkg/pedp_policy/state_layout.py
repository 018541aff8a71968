"""
Named-segment layout of the structured multi-hot dialog state vector.
"""

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from pedp_policy.digests import json_digest

ENTITIES = "entities"
USER_ACTION = "user_action"
SYSTEM_ACTION = "system_action"
BELIEF = "belief"
SEGMENT_ORDER = (ENTITIES, USER_ACTION, SYSTEM_ACTION, BELIEF)


class StateLayoutError(ValueError):
    """Raised when a layout is malformed or a vector does not fit it."""
    pass


@dataclass(frozen=True)
class Segment:
    name: str
    start: int
    stop: int

    @property
    def width(self) -> int:
        return self.stop - self.start


class StateLayout:
    """Disjoint named spans covering [0, S)."""

    def __init__(self, segments: Sequence[Segment]):
        position = 0
        names = set()
        for segment in segments:
            if segment.start != position or segment.stop <= segment.start:
                raise StateLayoutError(f"Segment {segment} does not continue the layout at {position}")
            if segment.name in names:
                raise StateLayoutError(f'Duplicate segment "{segment.name}"')
            names.add(segment.name)
            position = segment.stop
        if position == 0:
            raise StateLayoutError("A layout needs at least one segment")
        self.segments: Tuple[Segment, ...] = tuple(segments)
        self._by_name: Dict[str, Segment] = {s.name: s for s in self.segments}

    @classmethod
    def from_spans(cls, spans: Sequence[Tuple[str, int]]) -> "StateLayout":
        segments = []
        position = 0
        for name, width in spans:
            segments.append(Segment(name, position, position + int(width)))
            position += int(width)
        return cls(segments)

    @property
    def S(self) -> int:
        return self.segments[-1].stop

    @property
    def digest(self) -> str:
        return json_digest(self.spans())

    def spans(self) -> List[List]:
        return [[s.name, s.width] for s in self.segments]

    def span(self, name: str) -> slice:
        try:
            segment = self._by_name[name]
        except KeyError:
            raise StateLayoutError(f'Unknown segment "{name}"') from None
        return slice(segment.start, segment.stop)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, StateLayout) and self.spans() == other.spans()

    def __hash__(self) -> int:
        return hash(self.digest)

    def validate(self, bits: Sequence) -> np.ndarray:
        """Return ``bits`` as a uint8 array, or raise if it does not fit this layout."""
        arr = np.asarray(bits)
        if arr.shape != (self.S,):
            raise StateLayoutError(f"State vector has shape {arr.shape}, expected ({self.S},)")
        if not np.isin(arr, (0, 1)).all():
            raise StateLayoutError("State vector entries must be 0 or 1")
        return arr.astype(np.uint8)


class DialogStateVector:
    """Immutable binary state vector together with its segment layout."""

    __slots__ = ("bits", "layout")

    def __init__(self, bits: Sequence, layout: StateLayout):
        arr = layout.validate(bits).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)
        object.__setattr__(self, "layout", layout)

    def __setattr__(self, name, value):
        raise AttributeError("DialogStateVector is immutable")

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, DialogStateVector) and self.layout == other.layout
                and np.array_equal(self.bits, other.bits))

    def __hash__(self) -> int:
        return hash(self.bits.tobytes())

    def __repr__(self) -> str:
        return f"DialogStateVector(S={self.layout.S}, ones={int(self.bits.sum())})"

    def segment(self, name: str) -> np.ndarray:
        return self.bits[self.layout.span(name)]

    def tolist(self) -> List[int]:
        return self.bits.tolist()
