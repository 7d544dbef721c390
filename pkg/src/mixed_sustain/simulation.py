"""Ground-truth generation and synthetic mixed-type cohort simulation.

Cohorts are generated from a known subtype model: each subject draws a
subtype from the mixing fractions and a stage uniformly over {0..K}, then
each biomarker emits an observation consistent with its likelihood kernel.
Truth labels are returned alongside the data and never consumed by any
fitting code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model_core import (
    FRACTION_SUM_TOL,
    BiomarkerModelKind,
    BiomarkerSpec,
    CohortData,
    EventTable,
    MixedEventSequence,
    SubtypeModel,
    _random_valid_order,
    build_cohort,
    build_event_table,
)

_NORM = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class SimulationConfig:
    """Synthetic-cohort settings.

    Biomarkers are generated per kind: n_zscore z-score biomarkers sharing
    ``z_values``/``z_max``, n_ordinal ordinal biomarkers sharing ``scores``,
    and n_binary binary biomarkers. The defaults give the 4+2+2 layout with
    values [1,2,3] / [1,2,3] / single switch.

    ``zscore_sigma`` is both the generation noise sd and the fitted density
    width; 0 means noise-free generation (the fitted width is then floored
    at 1e-6, since the Gaussian kernel needs a positive sd).
    ``ordinal_confusion`` is the probability that an observed score deviates
    one level from the truth. ``binary_means``/``binary_sds`` define the
    normal and abnormal raw-value components. ``dropout`` removes each
    (subject, biomarker) cell independently with the given probability.
    """

    n_subjects: int
    n_subtypes: int = 1
    n_zscore: int = 4
    n_ordinal: int = 2
    n_binary: int = 2
    z_values: tuple[float, ...] = (1.0, 2.0, 3.0)
    z_max: float = 4.0
    scores: tuple[int, ...] = (1, 2, 3)
    zscore_sigma: float = 1.0
    fractions: tuple[float, ...] | None = None
    ordinal_confusion: float = 0.1
    binary_means: tuple[float, float] = (0.0, 3.0)
    binary_sds: tuple[float, float] = (1.0, 1.0)
    dropout: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ValidationError(f"n_subjects must be >= 1, got {self.n_subjects}")
        if self.n_subtypes < 1:
            raise ValidationError(f"n_subtypes must be >= 1, got {self.n_subtypes}")
        if min(self.n_zscore, self.n_ordinal, self.n_binary) < 0:
            raise ValidationError("biomarker counts must be nonnegative")
        if self.n_zscore + self.n_ordinal + self.n_binary < 1:
            raise ValidationError("at least one biomarker is required")
        if self.fractions is not None:
            fr = tuple(float(f) for f in self.fractions)
            if len(fr) != self.n_subtypes:
                raise ValidationError(
                    f"{len(fr)} fractions given for {self.n_subtypes} subtypes"
                )
            if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > FRACTION_SUM_TOL:
                raise ValidationError("fractions must be nonnegative and sum to 1")
            object.__setattr__(self, "fractions", fr)
        if not 0.0 <= self.ordinal_confusion <= 1.0:
            raise ValidationError("ordinal_confusion must lie in [0, 1]")
        if self.zscore_sigma < 0:
            raise ValidationError("zscore_sigma must be >= 0")
        if min(self.binary_sds) <= 0:
            raise ValidationError("binary component sds must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)")

    def resolved_fractions(self) -> tuple[float, ...]:
        if self.fractions is not None:
            return self.fractions
        return tuple([1.0 / self.n_subtypes] * self.n_subtypes)

    def biomarker_specs(self) -> tuple[BiomarkerSpec, ...]:
        sigma = max(self.zscore_sigma, 1e-6)
        specs = [
            BiomarkerSpec(
                name=f"z{i + 1}",
                kind=BiomarkerModelKind.ZSCORE,
                z_values=self.z_values,
                z_max=self.z_max,
                sigma=sigma,
            )
            for i in range(self.n_zscore)
        ]
        specs += [
            BiomarkerSpec(name=f"ord{i + 1}", kind=BiomarkerModelKind.ORDINAL, scores=self.scores)
            for i in range(self.n_ordinal)
        ]
        specs += [
            BiomarkerSpec(name=f"bin{i + 1}", kind=BiomarkerModelKind.BINARY)
            for i in range(self.n_binary)
        ]
        return tuple(specs)


@dataclass(frozen=True)
class CohortTruth:
    """Generating labels for a simulated cohort, aligned with subject order."""

    subject_ids: tuple[str, ...]
    subtype: np.ndarray
    stage: np.ndarray


def _count_valid_sequences(table: EventTable) -> int:
    """K! divided by the per-biomarker level-order factorials."""
    n = math.factorial(table.n_events)
    for i in range(table.n_biomarkers):
        n //= math.factorial(table.n_levels(i))
    return n


def _rng_for(config: SimulationConfig, stream: int) -> np.random.Generator:
    # Distinct spawn keys keep the truth and cohort streams independent even
    # though both derive from the one seed.
    return np.random.default_rng(
        np.random.SeedSequence(entropy=config.rng_seed, spawn_key=(stream,))
    )


def generate_ground_truth(config: SimulationConfig) -> SubtypeModel:
    """Draw C valid sequences uniformly, pairwise distinct whenever the
    valid-sequence space has at least C members."""
    table = build_event_table(config.biomarker_specs())
    rng = _rng_for(config, 0)
    require_distinct = _count_valid_sequences(table) >= config.n_subtypes
    seen = set()
    sequences = []
    for _ in range(config.n_subtypes):
        order = tuple(int(x) for x in _random_valid_order(table, rng))
        while require_distinct and order in seen:
            order = tuple(int(x) for x in _random_valid_order(table, rng))
        seen.add(order)
        sequences.append(MixedEventSequence(order=order))
    return SubtypeModel(sequences=tuple(sequences), fractions=config.resolved_fractions())


def _confusion_matrix(n_levels: int, r: float) -> np.ndarray:
    """Row-stochastic observation model: stay with probability 1-r, else move
    to a uniformly chosen existing neighbor level."""
    M = np.zeros((n_levels, n_levels))
    for u in range(n_levels):
        neighbors = [v for v in (u - 1, u + 1) if 0 <= v < n_levels]
        M[u, u] = 1.0 - r
        for v in neighbors:
            M[u, v] += r / len(neighbors)
    return M


def simulate_cohort(model: SubtypeModel, config: SimulationConfig):
    """Generate (CohortData, CohortTruth) from a subtype model.

    Per subject: subtype ~ fractions, stage ~ uniform{0..K}. Z-score cells
    are the trajectory value at the stage plus Gaussian noise; ordinal cells
    are the true score pushed through the confusion rule and encoded as the
    normalized likelihood vector of the observed score; binary cells are raw
    values drawn from the occurred/not-occurred component and converted to
    density pairs under the true components.
    """
    specs = config.biomarker_specs()
    table = build_event_table(specs)
    if model.n_subtypes != config.n_subtypes:
        raise ValidationError(
            f"model has {model.n_subtypes} subtypes, config expects {config.n_subtypes}"
        )
    for seq in model.sequences:
        if len(seq.order) != table.n_events:
            raise ValidationError("model sequences do not match the config's event table")
    J = config.n_subjects
    K = table.n_events
    C = model.n_subtypes
    rng = _rng_for(config, 1)
    subtype = rng.choice(C, size=J, p=np.asarray(model.fractions))
    stage = rng.integers(0, K + 1, size=J)
    positions = np.stack([s.position_of() for s in model.sequences])  # (C, K)

    stages_grid = np.arange(K + 1, dtype=np.float64)
    cells = []
    for i, spec in enumerate(specs):
        ids = np.fromiter(table.events_of(i), dtype=np.int64)
        t = positions[:, ids] + 1.0  # (C, m) 1-based event stages, level order
        if spec.kind is BiomarkerModelKind.ZSCORE:
            fp = np.concatenate([[0.0], spec.z_values, [spec.z_max]])
            g = np.stack([
                np.interp(stages_grid, np.concatenate([[0.0], t[c], [K + 1.0]]), fp)
                for c in range(C)
            ])
            mu = g[subtype, stage]
            arr = mu + config.zscore_sigma * rng.standard_normal(J)
        elif spec.kind is BiomarkerModelKind.ORDINAL:
            true_level = np.empty(J, dtype=np.int64)
            for c in range(C):
                sel = subtype == c
                true_level[sel] = np.searchsorted(t[c], stage[sel], side="right")
            M = _confusion_matrix(len(spec.scores) + 1, config.ordinal_confusion)
            cum = np.cumsum(M, axis=1)
            draws = rng.random(J)
            observed = (draws[:, None] > cum[true_level]).sum(axis=1)
            likelihood_cols = M / M.sum(axis=0, keepdims=True)
            arr = likelihood_cols[:, observed].T.copy()
        else:
            occurred = (t[subtype, 0] <= stage).astype(np.int64)
            means = np.asarray(config.binary_means)[occurred]
            sds = np.asarray(config.binary_sds)[occurred]
            raw = means + sds * rng.standard_normal(J)
            arr = np.empty((J, 2))
            for comp in (0, 1):
                z = (raw - config.binary_means[comp]) / config.binary_sds[comp]
                arr[:, comp] = np.exp(-0.5 * z * z) * _NORM / config.binary_sds[comp]
        if config.dropout > 0.0:
            drop = rng.random(J) < config.dropout
            if arr.ndim == 1:
                arr[drop] = np.nan
            else:
                arr[drop, :] = np.nan
        cells.append(arr)

    cohort = build_cohort(specs, cells)
    truth = CohortTruth(subject_ids=cohort.subject_ids, subtype=subtype, stage=stage)
    return cohort, truth
