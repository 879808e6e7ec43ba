from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from distrack.errors import BrokenLink, ShapeMismatch

# label maps are (H, W) integer arrays, stacks are (frames, H, W);
# label 0 is background, y = 0 is the closed end of the channel
LabelMap = np.ndarray
LabelStack = np.ndarray


@dataclass(frozen=True)
class ImageShape:
    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ShapeMismatch(
                f"image shape must be at least 1x1, got {self.height}x{self.width}"
            )

    @classmethod
    def of(cls, array: np.ndarray) -> "ImageShape":
        return cls(int(array.shape[-2]), int(array.shape[-1]))

    def as_tuple(self) -> tuple[int, int]:
        return (self.height, self.width)

    def to_dict(self):
        return {"h": self.height, "w": self.width}


@dataclass(frozen=True)
class CellRecord:
    id: int
    frame: int
    pixel_count: int
    center_y: float
    y_min: int
    y_max: int
    parent_id: int | None = None
    touches_open_end: bool = False

    def length(self) -> int:
        return self.y_max - self.y_min + 1

    def to_dict(self):
        return {
            "id": self.id,
            "frame": self.frame,
            "center_y": self.center_y,
            "y_min": self.y_min,
            "y_max": self.y_max,
            "pixel_count": self.pixel_count,
            "parent_id": self.parent_id,
            "touches_open_end": self.touches_open_end,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CellRecord":
        return cls(
            id=int(data["id"]),
            frame=int(data["frame"]),
            pixel_count=int(data["pixel_count"]),
            center_y=float(data["center_y"]),
            y_min=int(data["y_min"]),
            y_max=int(data["y_max"]),
            parent_id=None if data["parent_id"] is None else int(data["parent_id"]),
            touches_open_end=bool(data["touches_open_end"]),
        )


CellKey = tuple[int, int]  # (frame, id)


@dataclass(frozen=True)
class DivisionEvent:
    # parent observed at `frame - 1`, children at `frame`
    frame: int
    parent_id: int
    child_ids: tuple[int, ...]


@dataclass(frozen=True)
class Lineage:
    """
    Per-sequence forest of cell observations. Each CellRecord names its
    parent at the previous frame, so a child can have at most one parent
    and links always span exactly one frame step.
    """

    shape: ImageShape
    frames: tuple[tuple[CellRecord, ...], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(
            self, "frames", tuple(tuple(cells) for cells in self.frames)
        )

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    def num_cells(self) -> int:
        return sum(len(cells) for cells in self.frames)

    @cached_property
    def _index(self) -> dict[CellKey, CellRecord]:
        return {(cell.frame, cell.id): cell for cells in self.frames for cell in cells}

    @cached_property
    def _children(self) -> dict[CellKey, tuple[int, ...]]:
        children: dict[CellKey, list[int]] = {}
        for cells in self.frames:
            for cell in cells:
                if cell.parent_id is not None:
                    children.setdefault((cell.frame - 1, cell.parent_id), []).append(
                        cell.id
                    )
        return {key: tuple(sorted(ids)) for key, ids in children.items()}

    def cell(self, frame: int, cell_id: int) -> CellRecord:
        try:
            return self._index[(frame, cell_id)]
        except KeyError:
            raise BrokenLink(f"no cell {cell_id} at frame {frame}") from None

    def has_cell(self, frame: int, cell_id: int) -> bool:
        return (frame, cell_id) in self._index

    def parent(self, cell: CellRecord) -> CellRecord | None:
        if cell.parent_id is None:
            return None
        return self.cell(cell.frame - 1, cell.parent_id)

    def children(self, frame: int, cell_id: int) -> tuple[int, ...]:
        return self._children.get((frame, cell_id), ())

    def links(self) -> list[tuple[CellRecord, CellRecord]]:
        """(parent at F-1, child at F) pairs, in frame then child-id order."""
        out = []
        for cells in self.frames:
            for cell in sorted(cells, key=lambda c: c.id):
                if (parent := self.parent(cell)) is not None:
                    out.append((parent, cell))
        return out

    def division_events(self) -> list[DivisionEvent]:
        events = []
        for (frame, parent_id), child_ids in sorted(self._children.items()):
            if len(child_ids) >= 2:
                events.append(DivisionEvent(frame + 1, parent_id, child_ids))
        return events

    @cached_property
    def _roots(self) -> dict[CellKey, CellKey]:
        roots: dict[CellKey, CellKey] = {}
        for cells in self.frames:
            for cell in cells:
                key = (cell.frame, cell.id)
                if cell.parent_id is None:
                    roots[key] = key
                else:
                    roots[key] = roots[(cell.frame - 1, cell.parent_id)]
        return roots

    def root(self, frame: int, cell_id: int) -> CellKey:
        """The first observation of the lineage tree a cell belongs to."""
        return self._roots[(frame, cell_id)]

    def ancestor(self, frame: int, cell_id: int, at_frame: int) -> int | None:
        """Id of the ancestor of (frame, cell_id) observed at `at_frame`, if any."""
        assert at_frame <= frame
        cell = self.cell(frame, cell_id)
        while cell.frame > at_frame:
            parent = self.parent(cell)
            if parent is None:
                return None
            cell = parent
        return cell.id

    def validate(self):
        for index, cells in enumerate(self.frames):
            seen = set()
            for cell in cells:
                if cell.frame != index:
                    raise BrokenLink(
                        f"cell {cell.id} stored in frame {index} claims frame {cell.frame}"
                    )
                if cell.id < 1 or cell.id in seen:
                    raise BrokenLink(f"invalid or duplicate id {cell.id} at frame {index}")
                seen.add(cell.id)
                if cell.parent_id is not None and not self.has_cell(
                    index - 1, cell.parent_id
                ):
                    raise BrokenLink(
                        f"cell {cell.id} at frame {index} links to missing parent {cell.parent_id}"
                    )

    def tracks(self) -> list[tuple[CellKey, ...]]:
        """
        Non-branching chains of observations. A track starts at a cell with no
        parent or right after a division, and ends at a division, an exit or
        the last frame.
        """
        out = []
        for cells in self.frames:
            for cell in sorted(cells, key=lambda c: c.id):
                parent = cell.parent_id
                if parent is not None and len(self.children(cell.frame - 1, parent)) == 1:
                    continue
                track = [(cell.frame, cell.id)]
                while len(next_ids := self.children(*track[-1])) == 1:
                    track.append((track[-1][0] + 1, next_ids[0]))
                out.append(tuple(track))
        return out


@dataclass(frozen=True, eq=False)
class TrackedStack:
    """Label stack together with the lineage describing its cells."""

    labels: LabelStack
    lineage: Lineage

    def __post_init__(self):
        if self.labels.ndim != 3 or self.labels.shape[0] != self.lineage.num_frames:
            raise ShapeMismatch(
                f"label stack {self.labels.shape} does not match a lineage of "
                f"{self.lineage.num_frames} frames"
            )
