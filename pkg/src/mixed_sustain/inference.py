"""Sequence estimation, subtype fitting, and subject staging.

Three layers: greedy ascent with random restarts finds high-likelihood
sequences; Metropolis-Hastings over level-constrained permutations samples
positional uncertainty; hierarchical splitting grows the subtype count one
level at a time, alternating per-subtype sequence moves with EM updates of
the mixing fractions.

All randomness flows through numpy Generators seeded from FitConfig, with
per-task seeds assigned by index, so fits are reproducible and independent
of worker scheduling. Subjects are re-ordered internally by id before
fitting, which makes results invariant to the row order of the cohort.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .errors import NonConvergenceWarning, ValidationError
from .likelihood import StageLikelihoodEvaluator, _log_prior_vector, _warn_impossible
from .model_core import (
    CohortData,
    EventTable,
    McmcSamples,
    MixedEventSequence,
    SubtypeModel,
    _random_valid_order,
    validate_sequence,
    validate_subtype_model,
)


@dataclass(frozen=True)
class FitConfig:
    """Knobs for greedy ascent, MCMC, and hierarchical subtype growth.

    The defaults mirror full-scale fitting; desk-scale runs (tests, smoke
    checks) typically use 10 startpoints and 10000 MCMC iterations.
    """

    n_startpoints: int = 25
    n_greedy_passes: int = 10
    mcmc_iterations: int = 100_000
    rng_seed: int = 0
    max_subtypes: int = 1

    def __post_init__(self):
        for name in ("n_startpoints", "n_greedy_passes", "mcmc_iterations", "max_subtypes"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")


def worker_count() -> int:
    """Worker cap from MIXED_SUSTAIN_THREADS (0 or unset = one per CPU)."""
    raw = os.environ.get("MIXED_SUSTAIN_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(
            f"MIXED_SUSTAIN_THREADS must be an integer, got {raw!r}"
        ) from None
    if n < 0:
        raise ValidationError(f"MIXED_SUSTAIN_THREADS must be >= 0, got {n}")
    return n if n > 0 else (os.cpu_count() or 1)


def _parallel_map(fn, items, max_workers=None):
    """Map preserving input order; results are merged by index downstream,
    so scheduling never changes which task wins a tie."""
    items = list(items)
    n = worker_count() if max_workers is None else max_workers
    if n <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


class _EventBounds:
    """Per-event level neighbors and valid relocation ranges.

    For event e with a lower-level sibling p and higher-level sibling n,
    any insertion strictly after p and not after n keeps the sequence
    monotone. The range is computed against the order with e removed, so it
    is identical from both endpoints of a relocation move; that makes the
    uniform-position proposal symmetric.
    """

    def __init__(self, table: EventTable):
        K = table.n_events
        self.prev_event = np.full(K, -1, dtype=np.int64)
        self.next_event = np.full(K, -1, dtype=np.int64)
        for b in range(table.n_biomarkers):
            ids = list(table.events_of(b))
            for low, high in zip(ids, ids[1:]):
                self.next_event[low] = high
                self.prev_event[high] = low
        self._constrained = np.nonzero(self.next_event >= 0)[0]

    def valid_range(self, pos, e, q):
        """Inclusive insertion bounds for event e (currently at index q),
        as indices into the K-1 length order with e removed."""
        K = pos.shape[0]
        pe = self.prev_event[e]
        ne = self.next_event[e]
        if pe >= 0:
            i = pos[pe]
            lo = (i if i < q else i - 1) + 1
        else:
            lo = 0
        if ne >= 0:
            i = pos[ne]
            hi = i if i < q else i - 1
        else:
            hi = K - 1
        return lo, hi

    def order_is_valid(self, order) -> bool:
        pos = np.empty(order.shape[0], dtype=np.int64)
        pos[order] = np.arange(order.shape[0])
        lower = self._constrained
        return bool(np.all(pos[lower] < pos[self.next_event[lower]]))


def _rest_marginals(marginals, fractions, c):
    """Per-subject log mass of all subtypes except c."""
    C, J = marginals.shape
    if C == 1:
        return np.full(J, -np.inf)
    with np.errstate(divide="ignore"):
        joint = np.log(fractions)[:, None] + marginals
        return logsumexp(np.delete(joint, c, axis=0), axis=0)


def _plateau_key(totals):
    """Ranking key for optimizer states from per-subject log masses.

    Mixed cohorts carry hard zeros (ordinal vectors, binary pairs), so a
    candidate model can assign zero mass to some subjects and a flat total
    of -inf; plain log-likelihood comparison then sees no gradient. Ranking
    by (number of subjects with positive mass, log-likelihood over those)
    is the limit of an epsilon-contaminated likelihood as epsilon -> 0, and
    reduces to the exact log-likelihood whenever every subject is covered.
    """
    finite = np.isfinite(totals)
    return int(finite.sum()), float(totals[finite].sum())


def _greedy_subtype(ev, log_prior, bounds, orders, marginals, fractions, c, rng, n_passes):
    """Greedy ascent on subtype c's sequence against the mixture objective.

    Each pass visits every event in a fresh random order and relocates it to
    the best valid position (ties keep the current position). Stops after a
    pass with no improvement or after n_passes. Mutates orders[c] and
    marginals[c]; returns the final total log-likelihood.
    """
    K = orders.shape[1]
    with np.errstate(divide="ignore"):
        lf_c = math.log(fractions[c]) if fractions[c] > 0 else -np.inf
    rest = _rest_marginals(marginals, fractions, c)
    order = orders[c].copy()
    marg = marginals[c].copy()
    totals = np.logaddexp(rest, lf_c + marg)
    cur = _plateau_key(totals)
    for _ in range(n_passes):
        improved = False
        for e in rng.permutation(K):
            pos = np.empty(K, dtype=np.int64)
            pos[order] = np.arange(K)
            q = pos[e]
            lo, hi = bounds.valid_range(pos, e, q)
            if lo == hi:
                continue
            reduced = np.delete(order, q)
            best_key, best = cur, None
            for p in range(lo, hi + 1):
                if p == q:
                    continue
                cand = np.insert(reduced, p, e)
                assert bounds.order_is_valid(cand)
                m = ev.subject_marginals(cand, log_prior)
                t = np.logaddexp(rest, lf_c + m)
                key = _plateau_key(t)
                if key > best_key:
                    best_key, best = key, (cand, m, t)
            if best is not None:
                order, marg, totals = best
                cur = best_key
                improved = True
        if not improved:
            break
    orders[c] = order
    marginals[c] = marg
    return float(totals.sum())


def greedy_ascent(
    cohort: CohortData,
    table: EventTable,
    specs,
    init: MixedEventSequence,
    n_passes: int = 10,
    rng_seed: int = 0,
    log_stage_prior=None,
):
    """Locally optimize one sequence by repeated event relocation.

    Returns (sequence, log-likelihood); the output likelihood never falls
    below the input's.
    """
    if not validate_sequence(init, table):
        raise ValidationError("init sequence violates level-order monotonicity")
    ev = StageLikelihoodEvaluator(cohort, table, specs)
    log_prior = _log_prior_vector(table.n_events, log_stage_prior)
    bounds = _EventBounds(table)
    orders = np.asarray(init.order, dtype=np.int64)[None, :].copy()
    marginals = ev.subject_marginals(orders[0], log_prior)[None, :]
    rng = np.random.default_rng(rng_seed)
    ll = _greedy_subtype(
        ev, log_prior, bounds, orders, marginals, np.ones(1), 0, rng, n_passes
    )
    return MixedEventSequence(tuple(int(x) for x in orders[0])), ll


def mcmc_sequences(
    cohort: CohortData,
    table: EventTable,
    specs,
    init_sequences,
    fractions,
    config: FitConfig,
    log_stage_prior=None,
):
    """Metropolis-Hastings over level-constrained permutations.

    One iteration picks a subtype, an event, and a valid insertion position,
    all uniformly, and accepts the relocation with probability
    min(1, exp(delta log-likelihood)). Valid-range sampling is equivalent to
    resampling proposals that violate monotonicity, and the range is shared
    between a move and its reverse, so the proposal is symmetric. The
    current state is recorded every iteration. Fractions stay fixed.

    States that leave some subjects with zero mass are handled through the
    contamination-limit ranking of _plateau_key: proposals that cover more
    subjects are always accepted and ones that cover fewer never are, while
    the usual Metropolis rule applies within a coverage level. On cohorts
    where every state covers every subject this is the textbook sampler.

    Returns (samples, MAP model); the MAP model carries the samples and its
    log-likelihood never falls below the initial state's.
    """
    init_sequences = tuple(init_sequences)
    model = SubtypeModel(sequences=init_sequences, fractions=tuple(float(f) for f in fractions))
    if not validate_subtype_model(model, table):
        raise ValidationError("an init sequence violates level-order monotonicity")
    ev = StageLikelihoodEvaluator(cohort, table, specs)
    log_prior = _log_prior_vector(table.n_events, log_stage_prior)
    bounds = _EventBounds(table)
    C = len(init_sequences)
    K = table.n_events
    orders = np.array([s.order for s in init_sequences], dtype=np.int64)
    pos = np.empty_like(orders)
    for c in range(C):
        pos[c][orders[c]] = np.arange(K)
    marginals = np.stack([ev.subject_marginals(o, log_prior) for o in orders])
    with np.errstate(divide="ignore"):
        lf = np.log(np.asarray(model.fractions))
    joint = lf[:, None] + marginals
    totals = logsumexp(joint, axis=0)
    cur_ll = float(totals.sum())
    cur_key = _plateau_key(totals)
    best_key = cur_key
    best_orders = orders.copy()

    n_iter = config.mcmc_iterations
    seq_store = np.empty((n_iter, C, K), dtype=np.int32)
    ll_store = np.empty(n_iter)
    rng = np.random.default_rng(config.rng_seed)
    for it in range(n_iter):
        c = int(rng.integers(C))
        e = int(rng.integers(K))
        q = pos[c, e]
        lo, hi = bounds.valid_range(pos[c], e, q)
        p = int(rng.integers(lo, hi + 1))
        if p != q:
            cand = np.insert(np.delete(orders[c], q), p, e)
            assert bounds.order_is_valid(cand)
            m = ev.subject_marginals(cand, log_prior)
            if C == 1:
                new_totals = lf[0] + m
            else:
                rest = logsumexp(np.delete(joint, c, axis=0), axis=0)
                new_totals = np.logaddexp(rest, lf[c] + m)
            new_key = _plateau_key(new_totals)
            if new_key[0] != cur_key[0]:
                # Coverage changes are infinite log-likelihood jumps in the
                # contamination limit: always take gains, never losses.
                accept = new_key[0] > cur_key[0]
            else:
                delta = new_key[1] - cur_key[1]
                accept = delta >= 0 or rng.random() < math.exp(delta)
            if accept:
                orders[c] = cand
                pos[c][cand] = np.arange(K)
                marginals[c] = m
                joint[c] = lf[c] + m
                totals = new_totals
                cur_ll = float(new_totals.sum())
                cur_key = new_key
                if cur_key > best_key:
                    best_key = cur_key
                    best_orders = orders.copy()
        seq_store[it] = orders
        ll_store[it] = cur_ll

    samples = McmcSamples(sequences=seq_store, log_likelihoods=ll_store)
    map_model = SubtypeModel(
        sequences=tuple(MixedEventSequence(tuple(int(x) for x in o)) for o in best_orders),
        fractions=model.fractions,
        mcmc_samples=samples,
    )
    return samples, map_model


def _refine(ev, log_prior, bounds, orders, marginals, fractions, rng, n_passes,
            tol=1e-6, max_rounds=500):
    """Joint refinement: per-subtype greedy ascent holding the others fixed,
    then one EM update of the fractions, until the fraction step gains less
    than tol and the round has not changed which subjects carry positive
    mass. Both steps are monotone in the contamination-limit ranking."""
    C = orders.shape[0]
    with np.errstate(divide="ignore"):
        joint = np.log(fractions)[:, None] + marginals
    prev_cov = _plateau_key(logsumexp(joint, axis=0))[0]
    cur = -np.inf
    for _ in range(max_rounds):
        for c in range(C):
            _greedy_subtype(
                ev, log_prior, bounds, orders, marginals, fractions, c, rng, n_passes
            )
        with np.errstate(divide="ignore"):
            joint = np.log(fractions)[:, None] + marginals
        totals = logsumexp(joint, axis=0)
        pre = _plateau_key(totals)
        ok = np.isfinite(totals)
        resp = np.empty_like(joint)
        resp[:, ok] = np.exp(joint[:, ok] - totals[ok][None, :])
        # Subjects impossible under every subtype carry no information;
        # give them the current fractions so they cancel in the update.
        resp[:, ~ok] = fractions[:, None]
        fractions = resp.mean(axis=1)
        fractions = fractions / fractions.sum()
        with np.errstate(divide="ignore"):
            joint = np.log(fractions)[:, None] + marginals
        totals = logsumexp(joint, axis=0)
        post = _plateau_key(totals)
        cur = float(totals.sum())
        stalled = post[0] == prev_cov == pre[0] and post[1] - pre[1] < tol
        prev_cov = post[0]
        if stalled:
            break
    return cur, orders, marginals, fractions


def _best_indexed(results):
    """Pick (score, payload) with the highest score, earliest index on
    ties. Scores are _plateau_key tuples, so a start is never lost to a
    flat -inf likelihood."""
    best_score, best = None, None
    for score, payload in results:
        if best_score is None or score > best_score:
            best_score, best = score, payload
    return best_score, best


def fit_sustain(
    cohort: CohortData,
    table: EventTable,
    specs,
    config: FitConfig,
    log_stage_prior=None,
):
    """Hierarchical subtype fitting; returns one SubtypeModel per C.

    C=1 runs multi-start greedy ascent followed by MCMC. Each growth step
    C -> C+1 hard-assigns subjects to their maximum-likelihood subtype,
    splits each assignable subtype's subjects into two random halves, fits
    each half separately, and jointly refines every candidate; one extra
    candidate duplicates the largest subtype with its fraction halved, so
    refinement also starts from the C solution itself and the training
    likelihood is nondecreasing in C. The best candidate per C is polished
    by MCMC, and the MAP model (with samples attached) is returned.

    Mixed cohorts routinely contain subjects with zero mass under any
    single sequence (their data came from a different progression), so the
    low-C stages of the hierarchy can sit on a flat -inf log-likelihood.
    Candidate ranking therefore goes through _plateau_key, which orders
    states by subject coverage before log-likelihood; reported model
    likelihoods stay exact and may be -inf for small C.
    """
    if cohort.n_subjects < 1:
        raise ValidationError("cohort has no subjects")
    J = cohort.n_subjects
    canonical = sorted(range(J), key=lambda j: cohort.subject_ids[j])
    work = cohort.subset(canonical)
    ev = StageLikelihoodEvaluator(work, table, specs)
    K = table.n_events
    log_prior = _log_prior_vector(K, log_stage_prior)
    bounds = _EventBounds(table)
    S = config.n_startpoints

    def fit_single(evaluator, seeds, max_workers=None):
        def one_start(s):
            rng = np.random.default_rng(s)
            order = _random_valid_order(table, rng)
            orders = order[None, :].copy()
            marginals = evaluator.subject_marginals(order, log_prior)[None, :]
            _greedy_subtype(
                evaluator, log_prior, bounds, orders, marginals,
                np.ones(1), 0, rng, config.n_greedy_passes,
            )
            return _plateau_key(marginals[0]), orders[0]

        return _best_indexed(_parallel_map(one_start, seeds, max_workers=max_workers))

    _, order1 = fit_single(ev, [config.rng_seed + i for i in range(S)])
    _, model = mcmc_sequences(
        work, table, specs,
        [MixedEventSequence(tuple(int(x) for x in order1))],
        (1.0,),
        replace(config, rng_seed=config.rng_seed + S),
        log_stage_prior,
    )
    models = [model]
    next_seed = config.rng_seed + S + 1

    for C in range(2, config.max_subtypes + 1):
        prev = models[-1]
        prev_orders = np.array([s.order for s in prev.sequences], dtype=np.int64)
        prev_fracs = np.asarray(prev.fractions)
        prev_marg = np.stack([ev.subject_marginals(o, log_prior) for o in prev_orders])
        with np.errstate(divide="ignore"):
            assign = np.argmax(np.log(prev_fracs)[:, None] + prev_marg, axis=0)
        splittable = [c for c in range(C - 1) if int((assign == c).sum()) >= 2]
        if not splittable:
            warnings.warn(
                f"every subtype has fewer than 2 assigned subjects; "
                f"stopping subtype growth at C={C - 1}",
                NonConvergenceWarning,
            )
            break
        largest = int(np.argmax(prev_fracs))
        tasks = [("split", c, next_seed + i) for i, c in enumerate(splittable)]
        tasks.append(("carry", largest, next_seed + len(tasks)))
        next_seed += len(tasks)

        def run_candidate(task):
            kind, c, seed = task
            rng = np.random.default_rng(seed)
            if kind == "split":
                members = np.nonzero(assign == c)[0]
                perm = rng.permutation(members.size)
                half = members.size // 2
                new_rows = []
                for part in (perm[:half], perm[half:]):
                    sub = work.subset(sorted(int(members[i]) for i in part))
                    sub_ev = StageLikelihoodEvaluator(sub, table, specs)
                    seeds = [int(s) for s in rng.integers(0, 2**62, size=S)]
                    _, row = fit_single(sub_ev, seeds, max_workers=1)
                    new_rows.append(row)
                orders = np.vstack(
                    [prev_orders[:c], new_rows[0][None, :], prev_orders[c + 1:], new_rows[1][None, :]]
                )
                fractions = np.full(C, 1.0 / C)
            else:
                # Duplicate the largest subtype and halve its fraction: the
                # starting likelihood equals the C-1 solution's, so growth
                # never loses likelihood.
                orders = np.vstack([prev_orders, prev_orders[c][None, :]])
                fractions = np.append(prev_fracs, prev_fracs[c] / 2.0)
                fractions[c] = prev_fracs[c] / 2.0
            marginals = np.stack([ev.subject_marginals(o, log_prior) for o in orders])
            _, orders, marginals, fractions = _refine(
                ev, log_prior, bounds, orders, marginals, fractions,
                rng, config.n_greedy_passes,
            )
            with np.errstate(divide="ignore"):
                joint = np.log(fractions)[:, None] + marginals
            score = _plateau_key(logsumexp(joint, axis=0))
            return score, (orders, fractions)

        _, (best_orders, best_fracs) = _best_indexed(_parallel_map(run_candidate, tasks))
        _, model = mcmc_sequences(
            work, table, specs,
            tuple(MixedEventSequence(tuple(int(x) for x in o)) for o in best_orders),
            tuple(float(f) for f in best_fracs),
            replace(config, rng_seed=next_seed),
            log_stage_prior,
        )
        next_seed += 1
        models.append(model)
    return models


@dataclass(frozen=True)
class SubjectPosteriors:
    """Per-subject posterior over (subtype, stage) plus point summaries.

    posterior has shape (J, C, K+1) and each subject's matrix sums to 1.
    ml_subtype / ml_stage hold the joint argmax, ties broken toward the
    lowest (subtype, stage) pair. expected_stage is the stage mean
    conditional on each subtype, shape (J, C). Subjects impossible at every
    (subtype, stage) are excluded: NaN posterior rows, ml indices of -1,
    and their ids listed in `excluded`.
    """

    posterior: np.ndarray
    ml_subtype: np.ndarray
    ml_stage: np.ndarray
    expected_stage: np.ndarray
    subject_ids: tuple[str, ...]
    excluded: tuple[str, ...]

    @property
    def n_subjects(self) -> int:
        return self.posterior.shape[0]


def subject_posteriors(
    cohort: CohortData,
    model: SubtypeModel,
    table: EventTable,
    specs,
    log_stage_prior=None,
) -> SubjectPosteriors:
    """Normalized posterior P(subtype, stage | data) for every subject."""
    if not validate_subtype_model(model, table):
        raise ValidationError("a model sequence violates level-order monotonicity")
    ev = StageLikelihoodEvaluator(cohort, table, specs)
    K = table.n_events
    log_prior = _log_prior_vector(K, log_stage_prior)
    with np.errstate(divide="ignore"):
        lf = np.log(np.asarray(model.fractions))
    joint = np.stack(
        [ev.matrix(np.asarray(s.order)) + log_prior[None, :] + lf[c]
         for c, s in enumerate(model.sequences)],
        axis=1,
    )  # (J, C, K+1)
    J, C, _ = joint.shape
    flat = joint.reshape(J, -1)
    with np.errstate(divide="ignore"):
        totals = logsumexp(flat, axis=1)
    ok = np.isfinite(totals)
    posterior = np.full_like(joint, np.nan)
    posterior[ok] = np.exp(joint[ok] - totals[ok][:, None, None])
    ml_flat = np.argmax(flat, axis=1)
    ml_subtype = np.where(ok, ml_flat // (K + 1), -1)
    ml_stage = np.where(ok, ml_flat % (K + 1), -1)
    stages = np.arange(K + 1, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        mass = posterior.sum(axis=2)
        expected = (posterior * stages[None, None, :]).sum(axis=2) / mass
    _warn_impossible(cohort.subject_ids, totals)
    excluded = tuple(cohort.subject_ids[j] for j in np.nonzero(~ok)[0])
    return SubjectPosteriors(
        posterior=posterior,
        ml_subtype=ml_subtype.astype(np.int64),
        ml_stage=ml_stage.astype(np.int64),
        expected_stage=expected,
        subject_ids=cohort.subject_ids,
        excluded=excluded,
    )
