"""Domain types for biomarkers, events, sequences, cohorts and subtype models.

A disease trajectory is an ordering of K events, where each event is one
biomarker reaching a new level: its single abnormality switch (binary), the
next ordinal score, or the next z-score milestone. All types here are
immutable after construction and safe to share read-only across workers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

ORDINAL_SUM_TOL = 1e-9
FRACTION_SUM_TOL = 1e-9


class BiomarkerModelKind(enum.Enum):
    """Which per-biomarker likelihood kernel applies."""

    BINARY = "binary"
    ORDINAL = "ordinal"
    ZSCORE = "zscore"


@dataclass(frozen=True)
class BiomarkerSpec:
    """Declares one biomarker: its kernel kind and its event levels.

    ZScore biomarkers list the z-score milestones (``z_values``), the
    asymptotic maximum (``z_max``) the trajectory accumulates toward beyond
    the last milestone, and the Gaussian noise scale ``sigma``. Ordinal
    biomarkers list their abnormal ``scores``; score 0 is the implicit
    normal level and never generates an event. Binary biomarkers carry no
    level lists: a single implicit event.

    Trajectories are modeled as increasing; callers must orient inputs so
    abnormality grows with the value (z-scoring against a reference group
    does this).
    """

    name: str
    kind: BiomarkerModelKind
    z_values: tuple[float, ...] = ()
    z_max: float | None = None
    sigma: float = 1.0
    scores: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "z_values", tuple(float(z) for z in self.z_values))
        object.__setattr__(self, "scores", tuple(int(s) for s in self.scores))
        if not self.name:
            raise ValidationError("biomarker name must be non-empty")
        if self.kind is BiomarkerModelKind.ZSCORE:
            self._check_zscore()
        elif self.kind is BiomarkerModelKind.ORDINAL:
            self._check_ordinal()
        else:
            self._check_binary()

    def _check_zscore(self):
        if not self.z_values:
            raise ValidationError(f"biomarker {self.name!r}: z_values must be non-empty")
        if any(z <= 0 for z in self.z_values):
            raise ValidationError(f"biomarker {self.name!r}: z_values must be positive")
        if any(a >= b for a, b in zip(self.z_values, self.z_values[1:])):
            raise ValidationError(
                f"biomarker {self.name!r}: z_values must be strictly increasing"
            )
        if self.z_max is None or self.z_max <= self.z_values[-1]:
            raise ValidationError(
                f"biomarker {self.name!r}: z_max must exceed the last z_value"
            )
        if not self.sigma > 0:
            raise ValidationError(f"biomarker {self.name!r}: sigma must be positive")
        if self.scores:
            raise ValidationError(f"biomarker {self.name!r}: zscore spec carries no scores")

    def _check_ordinal(self):
        if not self.scores:
            raise ValidationError(
                f"biomarker {self.name!r}: at least one abnormal score is required"
            )
        if self.scores[0] <= 0:
            raise ValidationError(
                f"biomarker {self.name!r}: abnormal scores must start above 0"
            )
        if any(a >= b for a, b in zip(self.scores, self.scores[1:])):
            raise ValidationError(
                f"biomarker {self.name!r}: scores must be strictly increasing"
            )
        if self.z_values or self.z_max is not None:
            raise ValidationError(
                f"biomarker {self.name!r}: ordinal spec carries no z-score fields"
            )

    def _check_binary(self):
        if self.z_values or self.scores or self.z_max is not None:
            raise ValidationError(
                f"biomarker {self.name!r}: binary spec carries no level lists"
            )

    @property
    def n_events(self) -> int:
        """Events this biomarker contributes to the table."""
        if self.kind is BiomarkerModelKind.ZSCORE:
            return len(self.z_values)
        if self.kind is BiomarkerModelKind.ORDINAL:
            return len(self.scores)
        return 1

    def level_value(self, level: int):
        """The level reached by this biomarker's event at `level` (0-based):
        the z-value, the ordinal score, or 1 for the binary switch."""
        if self.kind is BiomarkerModelKind.ZSCORE:
            return self.z_values[level]
        if self.kind is BiomarkerModelKind.ORDINAL:
            return self.scores[level]
        return 1


@dataclass(frozen=True)
class EventTable:
    """The flattened universe of K events over I biomarkers.

    Event ids are dense integers assigned in (biomarker index, level index)
    order, so biomarker i's events occupy the contiguous id range
    ``events_of(i)``. ``events[e]`` maps an id back to its
    (biomarker_index, level_index) pair.
    """

    events: tuple[tuple[int, int], ...]
    offsets: tuple[int, ...]  # offsets[i] = first event id of biomarker i

    @property
    def n_events(self) -> int:
        return len(self.events)

    @property
    def n_biomarkers(self) -> int:
        return len(self.offsets)

    def n_levels(self, biomarker: int) -> int:
        end = self.offsets[biomarker + 1] if biomarker + 1 < len(self.offsets) else len(self.events)
        return end - self.offsets[biomarker]

    def event_id(self, biomarker: int, level: int = 0) -> int:
        """s(i) for binary (level 0), s(i, w) for ordinal/z-score."""
        if not 0 <= level < self.n_levels(biomarker):
            raise ValidationError(
                f"biomarker {biomarker} has no event at level index {level}"
            )
        return self.offsets[biomarker] + level

    def events_of(self, biomarker: int) -> range:
        """Event ids of one biomarker, in level order."""
        return range(self.offsets[biomarker], self.offsets[biomarker] + self.n_levels(biomarker))


def build_event_table(specs: list[BiomarkerSpec] | tuple[BiomarkerSpec, ...]) -> EventTable:
    """Flatten biomarker specs into the event table.

    K equals the sum over biomarkers of their event counts (number of
    z_values, number of abnormal scores, or 1).
    """
    if not specs:
        raise ValidationError("at least one biomarker spec is required")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        dup = next(n for n in names if names.count(n) > 1)
        raise ValidationError(f"duplicate biomarker name {dup!r}")
    events = []
    offsets = []
    for i, spec in enumerate(specs):
        offsets.append(len(events))
        events.extend((i, w) for w in range(spec.n_events))
    return EventTable(events=tuple(events), offsets=tuple(offsets))


@dataclass(frozen=True)
class MixedEventSequence:
    """A validity-constrained permutation of the K event ids.

    Position 0 holds the earliest event; a table with K events has K+1
    stages, stage 0 meaning no events have occurred.
    """

    order: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(int(e) for e in self.order))

    def to_text(self) -> str:
        """Comma-separated event-id serialization."""
        return ",".join(str(e) for e in self.order)

    @classmethod
    def from_text(cls, text: str) -> "MixedEventSequence":
        try:
            order = tuple(int(tok) for tok in text.strip().split(","))
        except ValueError as exc:
            raise ValidationError(f"malformed sequence text {text!r}") from exc
        return cls(order=order)

    def position_of(self) -> np.ndarray:
        """Inverse permutation: position_of()[event_id] = 0-based position."""
        pos = np.empty(len(self.order), dtype=np.int64)
        pos[np.asarray(self.order, dtype=np.int64)] = np.arange(len(self.order))
        return pos


def validate_sequence(seq: MixedEventSequence, table: EventTable) -> bool:
    """True iff the sequence keeps every biomarker's events in level order.

    Raises if the order is not a permutation of the table's event ids
    (wrong length, duplicates, out-of-range ids).
    """
    K = table.n_events
    if len(seq.order) != K:
        raise ValidationError(f"sequence has {len(seq.order)} events, table has {K}")
    seen = set(seq.order)
    if len(seen) != K or min(seq.order) < 0 or max(seq.order) >= K:
        raise ValidationError("sequence order is not a permutation of the event ids")
    pos = seq.position_of()
    for i in range(table.n_biomarkers):
        ids = table.events_of(i)
        for a, b in zip(ids, list(ids)[1:]):
            if pos[a] > pos[b]:
                return False
    return True


def _random_valid_order(table: EventTable, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw over valid sequences: permute all ids uniformly, then sort
    each biomarker's events into level order within the slots they landed in."""
    K = table.n_events
    order = rng.permutation(K)
    pos = np.empty(K, dtype=np.int64)
    pos[order] = np.arange(K)
    for i in range(table.n_biomarkers):
        ids = np.fromiter(table.events_of(i), dtype=np.int64)
        slots = np.sort(pos[ids])
        order[slots] = ids
    return order


def random_valid_sequence(table: EventTable, rng_seed: int) -> MixedEventSequence:
    """Seeded uniform draw from the valid-sequence space."""
    rng = np.random.default_rng(rng_seed)
    return MixedEventSequence(order=tuple(_random_valid_order(table, rng)))


@dataclass(frozen=True)
class CohortData:
    """Per-subject biomarker cells, one array per biomarker.

    Cell layout by kind: z-score -> (J,) float values; binary -> (J, 2)
    nonnegative (p_not_event, p_event) likelihood pairs (densities, need not
    sum to 1); ordinal with m abnormal scores -> (J, m+1) probability vectors
    over score 0 plus the abnormal scores, each summing to 1. Missing cells
    are NaN (whole row NaN for binary/ordinal).
    """

    subject_ids: tuple[str, ...]
    cells: tuple[np.ndarray, ...]

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    def subset(self, indices) -> "CohortData":
        idx = np.asarray(indices, dtype=np.int64)
        ids = tuple(self.subject_ids[i] for i in idx)
        cells = []
        for arr in self.cells:
            sub = arr[idx].copy()
            sub.setflags(write=False)
            cells.append(sub)
        return CohortData(subject_ids=ids, cells=tuple(cells))


def build_cohort(
    specs,
    cells,
    subject_ids=None,
) -> CohortData:
    """Validate raw per-biomarker arrays and freeze them into a cohort.

    Raises ValidationError on shape mismatches, negative probabilities,
    unnormalized ordinal vectors, or partially-missing grouped cells.
    """
    if len(cells) != len(specs):
        raise ValidationError(
            f"expected {len(specs)} cell arrays, got {len(cells)}"
        )
    arrays = [np.array(c, dtype=np.float64) for c in cells]
    sizes = {a.shape[0] for a in arrays}
    if len(sizes) > 1:
        raise ValidationError("cell arrays disagree on subject count")
    J = arrays[0].shape[0]
    if subject_ids is None:
        subject_ids = tuple(f"s{j:04d}" for j in range(J))
    else:
        subject_ids = tuple(str(s) for s in subject_ids)
        if len(subject_ids) != J:
            raise ValidationError("subject_ids length does not match cell arrays")
    for spec, arr in zip(specs, arrays):
        _validate_cells(spec, arr)
        arr.setflags(write=False)
    return CohortData(subject_ids=subject_ids, cells=tuple(arrays))


def _validate_cells(spec: BiomarkerSpec, arr: np.ndarray):
    name = spec.name
    if spec.kind is BiomarkerModelKind.ZSCORE:
        if arr.ndim != 1:
            raise ValidationError(f"biomarker {name!r}: z-score cells must be 1-D")
        if np.isinf(arr).any():
            raise ValidationError(f"biomarker {name!r}: z-score values must be finite")
        return
    if spec.kind is BiomarkerModelKind.BINARY:
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValidationError(f"biomarker {name!r}: binary cells must be (J, 2) pairs")
    else:
        width = len(spec.scores) + 1
        if arr.ndim != 2 or arr.shape[1] != width:
            raise ValidationError(
                f"biomarker {name!r}: ordinal cells must be (J, {width}) vectors"
            )
    missing = np.isnan(arr)
    partial = missing.any(axis=1) & ~missing.all(axis=1)
    if partial.any():
        j = int(np.argmax(partial))
        raise ValidationError(
            f"biomarker {name!r}: subject row {j} is partially missing"
        )
    present = ~missing.all(axis=1)
    vals = arr[present]
    if vals.size == 0:
        return
    if np.isinf(vals).any() or (vals < 0).any():
        raise ValidationError(
            f"biomarker {name!r}: probabilities must be finite and nonnegative"
        )
    if spec.kind is BiomarkerModelKind.ORDINAL:
        sums = vals.sum(axis=1)
        if np.abs(sums - 1.0).max() > ORDINAL_SUM_TOL:
            j = int(np.argmax(np.abs(sums - 1.0)))
            raise ValidationError(
                f"biomarker {name!r}: ordinal vector does not sum to 1 "
                f"(row {j}, sum {sums[j]!r})"
            )


@dataclass(frozen=True)
class McmcSamples:
    """Posterior sequence draws: (n_samples, C, K) event ids in position
    order, plus the model log-likelihood at each draw."""

    sequences: np.ndarray
    log_likelihoods: np.ndarray

    def __post_init__(self):
        if self.sequences.ndim != 3 or self.log_likelihoods.ndim != 1:
            raise ValidationError("mcmc samples must be (n, C, K) + (n,) arrays")
        if self.sequences.shape[0] != self.log_likelihoods.shape[0]:
            raise ValidationError("mcmc sample arrays disagree on draw count")

    @property
    def n_samples(self) -> int:
        return self.sequences.shape[0]


@dataclass(frozen=True)
class SubtypeModel:
    """C fitted trajectories with mixing fractions, plus optional posterior
    sequence samples for uncertainty."""

    sequences: tuple[MixedEventSequence, ...]
    fractions: tuple[float, ...]
    mcmc_samples: McmcSamples | None = None

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        if len(self.sequences) != len(self.fractions):
            raise ValidationError("one mixing fraction per sequence is required")
        if not self.sequences:
            raise ValidationError("a subtype model needs at least one sequence")
        if any(f < 0 for f in self.fractions):
            raise ValidationError("mixing fractions must be nonnegative")
        if abs(sum(self.fractions) - 1.0) > FRACTION_SUM_TOL:
            raise ValidationError(
                f"mixing fractions sum to {sum(self.fractions)!r}, expected 1"
            )

    @property
    def n_subtypes(self) -> int:
        return len(self.sequences)


def validate_subtype_model(model: SubtypeModel, table: EventTable) -> bool:
    """True iff every subtype sequence is valid against the table."""
    return all(validate_sequence(s, table) for s in model.sequences)
