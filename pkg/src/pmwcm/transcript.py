"""Per-query record of one accuracy game, stored column-wise."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from pmwcm.mechanisms import Branch


class QueryRecord(NamedTuple):
    j: int
    member: str
    branch: Branch
    answer: tuple
    error: float | None


@dataclass(eq=False)
class Transcript:
    """Answers of one session.

    ``errors`` holds true excess risks in noise-free (test) mode and is
    ``None`` in private mode, where nothing beyond the mechanism's outputs
    may be recorded.
    """

    mode: str = "noise-free"
    params: dict = field(default_factory=dict)
    members: list = field(default_factory=list)
    branches: list = field(default_factory=list)
    answers: list = field(default_factory=list)
    errors: list | None = None
    updates_used: int = 0
    halted: bool = False
    halt_reason: str = ""
    wall_time: float = 0.0

    def __post_init__(self):
        if self.mode not in ("private", "noise-free"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.errors is None and self.mode == "noise-free":
            self.errors = []

    def append(self, member: str, branch: Branch, answer, error: float | None = None) -> None:
        self.members.append(member)
        self.branches.append(branch)
        self.answers.append(answer)
        if self.errors is not None:
            if error is None:
                raise ValueError("noise-free transcripts record the true error of every answer")
            self.errors.append(float(error))
        elif error is not None:
            raise ValueError("private transcripts must not record true errors")

    def __len__(self):
        return len(self.members)

    @property
    def records(self) -> Iterator[QueryRecord]:
        for j in range(len(self)):
            yield self.record(j)

    def record(self, j: int) -> QueryRecord:
        ans = tuple(float(v) for v in np.asarray(self.answers[j]).reshape(-1))
        err = None if self.errors is None else self.errors[j]
        return QueryRecord(j + 1, self.members[j], self.branches[j], ans, err)

    @property
    def max_error(self) -> float | None:
        if self.errors is None:
            return None
        return max(self.errors) if self.errors else 0.0

    @property
    def mean_error(self) -> float | None:
        if self.errors is None:
            return None
        return float(np.mean(self.errors)) if self.errors else 0.0

    @property
    def top_count(self) -> int:
        return sum(1 for b in self.branches if b is Branch.TOP)

    def __eq__(self, other):
        # wall_time is deliberately excluded: it is the one non-reproducible field
        if not isinstance(other, Transcript):
            return NotImplemented
        return (self.mode == other.mode and self.params == other.params
                and self.updates_used == other.updates_used and self.halted == other.halted
                and self.halt_reason == other.halt_reason
                and list(self.records) == list(other.records))
