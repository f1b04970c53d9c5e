"""Ordered priority assignments between pairs of cooperative vehicles."""

from __future__ import annotations

from dataclasses import dataclass


class InconsistentPriorities(ValueError):
    """Both orderings of the same vehicle pair are present."""


@dataclass(frozen=True)
class PriorityAssignmentSet:
    """Ordered CAV pairs; in each pair the first vehicle is prioritized
    over the second."""

    assignments: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        seen = set()
        for i, j in self.assignments:
            if i == j:
                raise InconsistentPriorities(f"self-priority {i}")
            if (j, i) in seen or (i, j) in seen:
                raise InconsistentPriorities(f"pair ({i}, {j}) assigned twice")
            seen.add((i, j))

    def __len__(self) -> int:
        return len(self.assignments)

    def __contains__(self, pair: tuple[str, str]) -> bool:
        return pair in self.assignments

    def sorted_key(self) -> tuple[tuple[str, str], ...]:
        return tuple(sorted(self.assignments))

    def extended(self, *pairs: tuple[str, str]) -> "PriorityAssignmentSet":
        return PriorityAssignmentSet(self.assignments + tuple(pairs))

    def restricted_to(self, vehicle_ids) -> "PriorityAssignmentSet":
        """Drop assignments mentioning departed vehicles."""
        keep = set(vehicle_ids)
        return PriorityAssignmentSet(tuple(
            (i, j) for i, j in self.assignments if i in keep and j in keep))


EMPTY_PRIORITIES = PriorityAssignmentSet()
