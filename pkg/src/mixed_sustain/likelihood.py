"""Log-space evaluation of the mixed-events likelihood.

The model: given a sequence S over K events, a subject sitting at stage k has
seen exactly the first k events. Each biomarker contributes one factor per
stage according to its kernel: a two-sided lookup (binary), a reached-score
lookup (ordinal), or a Gaussian density around a piecewise-linear trajectory
(z-score). The per-subject data likelihood marginalizes the stage out under a
prior over the K+1 stages.

Everything accumulates in log space; products over many biomarkers underflow
otherwise. Zero probabilities map to -inf exactly, never to a floor.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ValidationError
from .model_core import (
    BiomarkerModelKind,
    CohortData,
    EventTable,
    MixedEventSequence,
    SubtypeModel,
    validate_sequence,
)

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def stage_prior(K: int) -> np.ndarray:
    """Uniform prior over the K+1 stages (stage 0 = no events occurred)."""
    if K < 1:
        raise ValidationError(f"stage prior needs K >= 1, got {K}")
    return np.full(K + 1, 1.0 / (K + 1))


def binary_event_likelihood(cell, event_position: int, k: int) -> float:
    """Two-sided lookup: the abnormal-side density once the event has
    occurred (its 1-based position <= k), the normal-side density before."""
    p_not_event, p_event = cell
    return float(p_event) if event_position <= k else float(p_not_event)


def ordinal_event_likelihood(cell, highest_level_reached: int | None) -> float:
    """Entry of the per-score probability vector for the highest abnormal
    level reached by stage k (1-based level index; None = still at score 0)."""
    idx = 0 if highest_level_reached is None else int(highest_level_reached)
    return float(cell[idx])


def zscore_trajectory_value(spec, event_positions, k: int, K: int) -> float:
    """Point estimate of the piecewise-linear trajectory at integer stage k.

    Control points: (0, 0), one (position, z_value) pair per milestone event,
    and (K+1, z_max) where the trajectory finishes accumulating. The result is
    clamped to [0, z_max].
    """
    t = [float(p) for p in event_positions]
    xp = [0.0] + t + [float(K + 1)]
    if any(a >= b for a, b in zip(xp, xp[1:])):
        raise ValidationError(
            f"biomarker {spec.name!r}: trajectory control stages must be strictly "
            "increasing (sequence was invalid)"
        )
    fp = [0.0] + list(spec.z_values) + [float(spec.z_max)]
    value = float(np.interp(k, xp, fp))
    return min(max(value, 0.0), float(spec.z_max))


def zscore_event_likelihood(value: float, mu: float, sigma: float) -> float:
    """Gaussian density of a z-score observation around the trajectory value."""
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma!r}")
    z = (value - mu) / sigma
    return math.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))


class StageLikelihoodEvaluator:
    """Per-biomarker data compiled once, evaluated for many sequences.

    Greedy ascent and MCMC score thousands of candidate sequences against a
    fixed cohort; this object front-loads the per-cell log transforms so each
    candidate costs one vectorized pass per biomarker. Missing cells
    contribute log 1 = 0 at every stage.
    """

    def __init__(self, cohort: CohortData, table: EventTable, specs):
        if len(specs) != table.n_biomarkers or len(cohort.cells) != table.n_biomarkers:
            raise ValidationError(
                "cohort, table, and specs disagree on biomarker count"
            )
        self.K = table.n_events
        self.n_subjects = cohort.n_subjects
        self.subject_ids = cohort.subject_ids
        self._stages = np.arange(self.K + 1, dtype=np.float64)
        self._log_uniform = -math.log(self.K + 1)
        self._binary = []  # (event_id, log_p_not (J,), log_p_event (J,))
        self._ordinal = []  # (event_ids (m,), log_vec (J, m+1))
        self._zscore = []  # (event_ids (m,), values (J,), present (J,), fp, inv_sigma, log_norm)
        for i, spec in enumerate(specs):
            arr = cohort.cells[i]
            ids = np.fromiter(table.events_of(i), dtype=np.int64)
            if len(ids) != spec.n_events:
                raise ValidationError(
                    f"biomarker {spec.name!r}: table and spec disagree on event count"
                )
            if spec.kind is BiomarkerModelKind.BINARY:
                self._check_shape(spec, arr, (cohort.n_subjects, 2))
                logp = self._log_cells(arr)
                self._binary.append((int(ids[0]), logp[:, 0].copy(), logp[:, 1].copy()))
            elif spec.kind is BiomarkerModelKind.ORDINAL:
                self._check_shape(spec, arr, (cohort.n_subjects, len(spec.scores) + 1))
                self._ordinal.append((ids, self._log_cells(arr)))
            else:
                self._check_shape(spec, arr, (cohort.n_subjects,))
                present = ~np.isnan(arr)
                values = np.where(present, arr, 0.0)
                fp = np.concatenate([[0.0], spec.z_values, [spec.z_max]])
                log_norm = -math.log(spec.sigma) - _LOG_SQRT_2PI
                self._zscore.append(
                    (ids, values, present.astype(np.float64), fp, 1.0 / spec.sigma, log_norm)
                )

    @staticmethod
    def _check_shape(spec, arr, shape):
        if arr.shape != shape:
            raise ValidationError(
                f"biomarker {spec.name!r}: cells have shape {arr.shape}, expected {shape}"
            )

    @staticmethod
    def _log_cells(arr: np.ndarray) -> np.ndarray:
        # Missing rows become log 1 = 0 so the kernels need no masking;
        # genuine zeros become -inf exactly.
        filled = np.where(np.isnan(arr), 1.0, arr)
        with np.errstate(divide="ignore"):
            return np.log(filled)

    def matrix(self, order) -> np.ndarray:
        """J x (K+1) matrix of per-stage log-likelihood sums for one sequence
        (given as an event-id array in position order)."""
        order = np.asarray(order, dtype=np.int64)
        K = self.K
        pos = np.empty(K, dtype=np.int64)
        pos[order] = np.arange(1, K + 1)  # 1-based stage of each event
        out = np.zeros((self.n_subjects, K + 1))
        stages = self._stages
        for eid, logp0, logp1 in self._binary:
            occurred = stages >= pos[eid]
            out += np.where(occurred[None, :], logp1[:, None], logp0[:, None])
        for ids, logvec in self._ordinal:
            reached = np.searchsorted(pos[ids], stages, side="right")
            out += logvec[:, reached]
        for ids, values, weight, fp, inv_sigma, log_norm in self._zscore:
            xp = np.concatenate([[0.0], pos[ids], [K + 1.0]])
            g = np.interp(stages, xp, fp)
            z = (values[:, None] - g[None, :]) * inv_sigma
            out += weight[:, None] * (log_norm - 0.5 * z * z)
        return out

    def subject_marginals(self, order, log_stage_prior=None) -> np.ndarray:
        """Per-subject log P(X_j | S): log-sum-exp over stages of prior+data."""
        mat = self.matrix(order)
        if log_stage_prior is None:
            with np.errstate(divide="ignore"):
                return logsumexp(mat, axis=1) + self._log_uniform
        with np.errstate(divide="ignore"):
            return logsumexp(mat + log_stage_prior[None, :], axis=1)


@dataclass(frozen=True)
class StageLikelihoodMatrix:
    """J x (K+1) log-likelihood sums, one row per subject, one column per
    stage. Entries are finite or -inf, never NaN."""

    values: np.ndarray
    subject_ids: tuple[str, ...]

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    @property
    def n_stages(self) -> int:
        return self.values.shape[1]


def _log_prior_vector(K: int, log_stage_prior) -> np.ndarray:
    """Resolve the stage-prior hook: None = uniform, else a callable
    K -> log-prior vector or a precomputed vector of K+1 log values."""
    if log_stage_prior is None:
        with np.errstate(divide="ignore"):
            return np.log(stage_prior(K))
    if callable(log_stage_prior):
        log_stage_prior = log_stage_prior(K)
    vec = np.asarray(log_stage_prior, dtype=np.float64)
    if vec.shape != (K + 1,):
        raise ValidationError(f"stage prior must have {K + 1} entries")
    return vec


def stage_likelihood_matrix(
    cohort: CohortData,
    seq: MixedEventSequence,
    table: EventTable,
    specs,
) -> StageLikelihoodMatrix:
    """Per-subject, per-stage log-likelihood sums over all biomarkers."""
    if not validate_sequence(seq, table):
        raise ValidationError("sequence violates level-order monotonicity")
    evaluator = StageLikelihoodEvaluator(cohort, table, specs)
    values = evaluator.matrix(np.asarray(seq.order))
    return StageLikelihoodMatrix(values=values, subject_ids=cohort.subject_ids)


def _warn_impossible(subject_ids, marginals):
    bad = np.where(np.isneginf(marginals))[0]
    if bad.size:
        names = ", ".join(subject_ids[j] for j in bad[:20])
        warnings.warn(
            f"{bad.size} subject(s) have zero likelihood at every stage: {names}",
            stacklevel=3,
        )


def sequence_log_likelihood(
    cohort: CohortData,
    seq: MixedEventSequence,
    table: EventTable,
    specs,
    log_stage_prior=None,
) -> float:
    """Total data log-likelihood of one sequence: sum over subjects of
    log-sum-exp over stages. -inf (with a warning naming the subjects) when
    any subject has zero likelihood at every stage."""
    if not validate_sequence(seq, table):
        raise ValidationError("sequence violates level-order monotonicity")
    evaluator = StageLikelihoodEvaluator(cohort, table, specs)
    prior = _log_prior_vector(table.n_events, log_stage_prior)
    marginals = evaluator.subject_marginals(np.asarray(seq.order), prior)
    _warn_impossible(cohort.subject_ids, marginals)
    return float(marginals.sum())


def mixture_log_likelihood(
    cohort: CohortData,
    model: SubtypeModel,
    table: EventTable,
    specs,
    log_stage_prior=None,
) -> float:
    """Total log-likelihood of a subtype mixture: per subject, log-sum-exp
    over subtypes of log P(c) + log P(X_j | S_c)."""
    for seq in model.sequences:
        if not validate_sequence(seq, table):
            raise ValidationError("subtype sequence violates level-order monotonicity")
    evaluator = StageLikelihoodEvaluator(cohort, table, specs)
    prior = _log_prior_vector(table.n_events, log_stage_prior)
    per_subtype = np.stack(
        [evaluator.subject_marginals(np.asarray(s.order), prior) for s in model.sequences]
    )
    with np.errstate(divide="ignore"):
        log_f = np.log(np.asarray(model.fractions))
        totals = logsumexp(per_subtype + log_f[:, None], axis=0)
    _warn_impossible(cohort.subject_ids, totals)
    return float(totals.sum())
