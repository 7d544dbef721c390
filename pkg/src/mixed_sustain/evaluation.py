"""Recovery scoring, model selection, and downstream validation metrics."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError
from .inference import FitConfig, _parallel_map, fit_sustain
from .likelihood import mixture_log_likelihood
from .model_core import CohortData, McmcSamples, MixedEventSequence, SubtypeModel


def kendall_tau(a: MixedEventSequence, b: MixedEventSequence) -> float:
    """Tau-a rank correlation between two event orderings.

    Counts concordant minus discordant event pairs over K(K-1)/2. Strict
    permutations admit no ties, so tau-a and tau-b coincide.
    """
    K = len(a.order)
    if len(b.order) != K or set(a.order) != set(b.order):
        raise ValidationError("sequences do not share an event table")
    if K < 2:
        raise ValidationError("tau needs at least 2 events")
    pa = a.position_of().astype(np.int64)
    pb = b.position_of().astype(np.int64)
    da = np.sign(pa[:, None] - pa[None, :])
    db = np.sign(pb[:, None] - pb[None, :])
    upper = np.triu_indices(K, k=1)
    s = int((da[upper] * db[upper]).sum())
    return s / (K * (K - 1) / 2)


def match_subtypes(estimated: SubtypeModel, truth: SubtypeModel):
    """Best one-to-one pairing of estimated and truth subtypes by mean tau.

    Exhaustive over all C! pairings (C <= 6 keeps that exact, covering the
    studied range). Returns (assignment, mean_tau) where assignment[i] is
    the truth index matched to estimated subtype i; ties keep the first
    maximizer in lexicographic permutation order.
    """
    C = estimated.n_subtypes
    if truth.n_subtypes != C:
        raise ValidationError(
            f"cannot match {C} estimated subtypes to {truth.n_subtypes} truth subtypes"
        )
    if C > 6:
        raise ValidationError("exhaustive subtype matching supports at most 6 subtypes")
    taus = np.array([
        [kendall_tau(est, tru) for tru in truth.sequences]
        for est in estimated.sequences
    ])
    best_perm, best_mean = None, -np.inf
    for perm in itertools.permutations(range(C)):
        mean = float(taus[np.arange(C), perm].mean())
        if mean > best_mean:
            best_perm, best_mean = perm, mean
    return best_perm, best_mean


def auc(stage_scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(equal).

    Computed from midranks, so it is invariant under strictly monotone
    transforms of the scores.
    """
    scores = np.asarray(stage_scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=bool).ravel()
    if scores.shape != y.shape:
        raise ValidationError("scores and labels must have equal length")
    if not np.isfinite(scores).all():
        raise ValidationError("scores must be finite")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("both classes must be present")
    ranks = rankdata(scores)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def pearson(x, y) -> float:
    """Product-moment correlation; requires length >= 3 and spread in both."""
    xv = np.asarray(x, dtype=np.float64).ravel()
    yv = np.asarray(y, dtype=np.float64).ravel()
    if xv.shape != yv.shape:
        raise ValidationError("inputs must have equal length")
    if xv.size < 3:
        raise ValidationError(f"need at least 3 points, got {xv.size}")
    if not (np.isfinite(xv).all() and np.isfinite(yv).all()):
        raise ValidationError("inputs must be finite")
    dx = xv - xv.mean()
    dy = yv - yv.mean()
    sx = float(np.sqrt((dx * dx).sum()))
    sy = float(np.sqrt((dy * dy).sum()))
    if sx == 0.0 or sy == 0.0:
        raise ValidationError("inputs must have nonzero variance")
    return float((dx * dy).sum() / (sx * sy))


def positional_variance_matrix(samples: McmcSamples, subtype: int) -> np.ndarray:
    """K x K matrix: entry (event, position) is the fraction of samples
    placing that event at that position. Rows and columns are exact
    probability distributions (each sample contributes one event per
    position)."""
    if samples.n_samples < 1:
        raise ValidationError("positional variance needs a nonempty chain")
    if not 0 <= subtype < samples.sequences.shape[1]:
        raise ValidationError(f"no subtype {subtype} in the sample chain")
    seqs = samples.sequences[:, subtype, :]
    n, K = seqs.shape
    counts = np.empty((K, K), dtype=np.float64)
    for p in range(K):
        counts[:, p] = np.bincount(seqs[:, p], minlength=K)
    return counts / n


@dataclass(frozen=True)
class CrossValidationResult:
    """Held-out mixture log-likelihood per subtype count.

    held_out[c-1] sums the per-fold held-out terms for C=c; per_fold has
    shape (folds, max_subtypes). Entries are NaN for subtype counts a fold
    could not grow to. selected is the argmax with ties toward smaller C.
    """

    held_out: np.ndarray
    per_fold: np.ndarray
    selected: int
    fold_sizes: tuple[int, ...]


def cross_validate_subtypes(
    cohort: CohortData,
    table,
    specs,
    config: FitConfig,
    folds: int = 5,
    log_stage_prior=None,
) -> CrossValidationResult:
    """Five-fold (by default) model selection over the subtype count.

    Folds are contiguous chunks of a seeded shuffle of the subjects, no
    stratification. Each fold's training split is fitted for C = 1 up to
    config.max_subtypes and scored on the held-out mixture log-likelihood;
    per-C totals are summed across folds.
    """
    J = cohort.n_subjects
    if folds < 2:
        raise ValidationError(f"folds must be >= 2, got {folds}")
    if folds > J:
        raise ValidationError(f"{folds} folds need at least {folds} subjects, got {J}")
    rng = np.random.default_rng(config.rng_seed)
    shuffled = rng.permutation(J)
    chunks = np.array_split(shuffled, folds)

    def run_fold(f):
        test_idx = np.sort(chunks[f])
        train_idx = np.sort(np.concatenate([chunks[g] for g in range(folds) if g != f]))
        train = cohort.subset(train_idx)
        test = cohort.subset(test_idx)
        seed = int(np.random.SeedSequence(entropy=[config.rng_seed, 7, f]).generate_state(1)[0])
        models = fit_sustain(
            train, table, specs,
            FitConfig(
                n_startpoints=config.n_startpoints,
                n_greedy_passes=config.n_greedy_passes,
                mcmc_iterations=config.mcmc_iterations,
                rng_seed=seed,
                max_subtypes=config.max_subtypes,
            ),
            log_stage_prior,
        )
        row = np.full(config.max_subtypes, np.nan)
        for i, model in enumerate(models):
            row[i] = mixture_log_likelihood(test, model, table, specs, log_stage_prior)
        return row

    per_fold = np.stack(_parallel_map(run_fold, range(folds)))
    held_out = per_fold.sum(axis=0)  # NaN wherever any fold fell short
    selected, best = 1, -np.inf
    for c in range(config.max_subtypes):
        if np.isfinite(held_out[c]) and held_out[c] > best:
            selected, best = c + 1, float(held_out[c])
    return CrossValidationResult(
        held_out=held_out,
        per_fold=per_fold,
        selected=selected,
        fold_sizes=tuple(len(c) for c in chunks),
    )
