"""Acceptance checks, one per shipped guarantee.

Each test prints a single [PASS]/[FAIL] line (bypassing pytest capture) and
then asserts, so the one-line verdicts survive in plain test logs. The
simulation-recovery arms share module-scoped fixtures: the C=1 arm serves
both the near-ceiling bound and the monotone-trend comparison.

Clinical-dataset reference values (conversion AUCs, cognitive-score
correlations, subtype sizes) are NOT reproduced here: that data is
access-restricted. In their place the metric operations are validated
against hand-computed oracles (criterion 10).
"""

import time

import numpy as np
import pytest

import oracles
from conftest import oracle_cells, random_mixed_cohort, random_mixed_specs, spec_meta
from mixed_sustain import (
    BiomarkerModelKind,
    BiomarkerSpec,
    FitConfig,
    MixedEventSequence,
    SimulationConfig,
    auc,
    build_cohort,
    build_event_table,
    fit_sustain,
    fit_two_component,
    generate_ground_truth,
    kendall_tau,
    match_subtypes,
    mcmc_sequences,
    mixture_log_likelihood,
    pearson,
    random_valid_sequence,
    sequence_log_likelihood,
    simulate_cohort,
    stage_prior,
    subject_posteriors,
    SubtypeModel,
)


@pytest.fixture
def report(capsys):
    """One [PASS]/[FAIL] line per criterion on the real terminal.

    capsys.disabled() suspends pytest's fd-level capture, so the line
    survives a green run instead of vanishing into the capture buffer.
    """
    def _report(num, ok, detail):
        status = "PASS" if ok else "FAIL"
        with capsys.disabled():
            print(f"[{status}] criterion {num}: {detail}", flush=True)
        return f"criterion {num}: {detail}"

    return _report


def test_criterion_1_sequence_likelihood_matches_enumeration(report):
    t0 = time.time()
    worst = 0.0
    for i in range(200):
        rng = np.random.default_rng(10_000 + i)
        specs = random_mixed_specs(rng, max_events=6)
        table = build_event_table(specs)
        J = int(rng.integers(1, 9))
        cohort = random_mixed_cohort(rng, specs, J)
        seq = random_valid_sequence(table, rng_seed=int(rng.integers(2**31)))
        got = sequence_log_likelihood(cohort, seq, table, specs)
        meta = spec_meta(specs, table)
        cells = [oracle_cells(cohort, specs, j) for j in range(J)]
        want = oracles.sequence_log_likelihood(cells, meta, list(seq.order))
        worst = max(worst, abs(got - want))
    elapsed = time.time() - t0
    ok = worst <= 1e-10 and elapsed < 10.0
    detail = report(
        1, ok,
        f"sequence log-likelihood vs stage/biomarker enumeration on 200 random "
        f"mixed cohorts: max |diff| {worst:.2e} (tol 1e-10), {elapsed:.1f}s (<10s)",
    )
    assert ok, detail


def test_criterion_2_mixture_likelihood_matches_double_loop(report):
    worst = 0.0
    for i in range(100):
        rng = np.random.default_rng(20_000 + i)
        specs = random_mixed_specs(rng, max_events=6)
        table = build_event_table(specs)
        J = int(rng.integers(1, 9))
        cohort = random_mixed_cohort(rng, specs, J)
        seqs = [
            random_valid_sequence(table, rng_seed=int(rng.integers(2**31)))
            for _ in range(2)
        ]
        f = float(rng.uniform(0.1, 0.9))
        model = SubtypeModel(sequences=tuple(seqs), fractions=(f, 1.0 - f))
        got = mixture_log_likelihood(cohort, model, table, specs)
        meta = spec_meta(specs, table)
        cells = [oracle_cells(cohort, specs, j) for j in range(J)]
        want = oracles.mixture_log_likelihood(
            cells, meta, [list(s.order) for s in seqs], [f, 1.0 - f]
        )
        worst = max(worst, abs(got - want))
    ok = worst <= 1e-10
    detail = report(
        2, ok,
        f"two-subtype mixture log-likelihood vs double-loop enumeration on 100 "
        f"random models: max |diff| {worst:.2e} (tol 1e-10)",
    )
    assert ok, detail


def test_criterion_3_binary_reencoded_as_two_level_ordinal(report):
    worst = 0.0
    argmax_agree = True
    for i in range(50):
        rng = np.random.default_rng(30_000 + i)
        while True:
            specs = random_mixed_specs(rng, max_events=5)
            if any(s.kind is BiomarkerModelKind.BINARY for s in specs):
                break
        table = build_event_table(specs)
        J = int(rng.integers(2, 9))
        cohort = random_mixed_cohort(rng, specs, J)
        # ordinal cells are probability vectors, so the re-encoding
        # normalizes each binary pair; that scales every stage's likelihood
        # by a per-subject constant, shifting all sequence log-likelihoods
        # equally and leaving their differences intact
        re_specs = []
        re_cells = []
        for s, arr in zip(specs, cohort.cells):
            if s.kind is BiomarkerModelKind.BINARY:
                re_specs.append(
                    BiomarkerSpec(
                        name=s.name, kind=BiomarkerModelKind.ORDINAL, scores=(1,)
                    )
                )
                re_cells.append(arr / arr.sum(axis=1, keepdims=True))
            else:
                re_specs.append(s)
                re_cells.append(arr)
        re_cohort = build_cohort(re_specs, re_cells)
        orders = oracles.valid_orders(spec_meta(specs, table))
        lls = np.array([
            sequence_log_likelihood(
                cohort, MixedEventSequence(order=o), table, specs
            )
            for o in orders
        ])
        re_lls = np.array([
            sequence_log_likelihood(
                re_cohort, MixedEventSequence(order=o), table, re_specs
            )
            for o in orders
        ])
        shift = lls - re_lls  # constant iff pairwise differences agree
        worst = max(worst, float(shift.max() - shift.min()))
        argmax_agree &= int(np.argmax(lls)) == int(np.argmax(re_lls))
    ok = worst <= 1e-10 and argmax_agree
    detail = report(
        3, ok,
        f"binary biomarkers re-encoded as two-level ordinals over 50 cohorts: "
        f"pairwise log-likelihood differences preserved to {worst:.2e} "
        f"(tol 1e-10), argmax sequences {'identical' if argmax_agree else 'DIFFER'}",
    )
    assert ok, detail


# ---------------------------------------------------------------------------
# simulation-recovery arms (shared fixtures; default 4+2+2 biomarker layout)

PROFILE = dict(n_startpoints=10, mcmc_iterations=10_000)
N_REPEATS = 10


def _recovery_arm(n_subtypes):
    taus = []
    exemplar = None
    t0 = time.time()
    for rep in range(N_REPEATS):
        sim = SimulationConfig(
            n_subjects=500, n_subtypes=n_subtypes, rng_seed=1000 + rep
        )
        specs = sim.biomarker_specs()
        table = build_event_table(specs)
        truth = generate_ground_truth(sim)
        cohort, _ = simulate_cohort(truth, sim)
        config = FitConfig(rng_seed=rep, max_subtypes=n_subtypes, **PROFILE)
        fitted = fit_sustain(cohort, table, specs, config)[-1]
        if n_subtypes == 1:
            tau = kendall_tau(fitted.sequences[0], truth.sequences[0])
        else:
            _, tau = match_subtypes(fitted, truth)
        taus.append(tau)
        if exemplar is None:
            exemplar = (fitted, cohort, table, specs)
    return {"taus": taus, "exemplar": exemplar, "elapsed": time.time() - t0}


@pytest.fixture(scope="module")
def arm_c1():
    return _recovery_arm(1)


@pytest.fixture(scope="module")
def arm_c3():
    return _recovery_arm(3)


@pytest.fixture(scope="module")
def arm_c5():
    return _recovery_arm(5)


def test_criterion_4_three_subtype_recovery(arm_c3, report):
    mean_tau = float(np.mean(arm_c3["taus"]))
    elapsed = arm_c3["elapsed"]
    ok = mean_tau >= 0.6 and elapsed <= 1800.0
    detail = report(
        4, ok,
        f"J=500 C=3 recovery, 10 startpoints / 10k MCMC x {N_REPEATS} repeats: "
        f"mean matched tau {mean_tau:.3f} (>= 0.6), {elapsed / 60:.1f} min (<= 30)",
    )
    assert ok, detail


def test_criterion_5_single_subtype_near_ceiling(arm_c1, report):
    mean_tau = float(np.mean(arm_c1["taus"]))
    ok = mean_tau >= 0.9
    detail = report(
        5, ok,
        f"J=500 C=1 recovery x {N_REPEATS} repeats: mean tau {mean_tau:.3f} (>= 0.9)",
    )
    assert ok, detail


def test_criterion_6_more_subtypes_never_beat_fewer(arm_c1, arm_c5, report):
    mean_c1 = float(np.mean(arm_c1["taus"]))
    mean_c5 = float(np.mean(arm_c5["taus"]))
    ok = mean_c1 >= mean_c5
    detail = report(
        6, ok,
        f"mean tau C=1 ({mean_c1:.3f}) >= mean tau C=5 ({mean_c5:.3f}), "
        f"same seeds, {N_REPEATS} repeats each",
    )
    assert ok, detail


def test_criterion_7_posterior_and_prior_normalization(arm_c1, report):
    fitted, cohort, table, specs = arm_c1["exemplar"]
    post = subject_posteriors(cohort, fitted, table, specs)
    staged = [
        j for j in range(cohort.n_subjects)
        if cohort.subject_ids[j] not in post.excluded
    ]
    sums = post.posterior.reshape(cohort.n_subjects, -1)[staged].sum(axis=1)
    worst_post = float(np.abs(sums - 1.0).max())
    worst_prior = max(
        abs(float(stage_prior(K).sum()) - 1.0) for K in range(1, 101)
    )
    ok = worst_post <= 1e-9 and worst_prior <= 1e-12
    detail = report(
        7, ok,
        f"posterior rows sum to 1 within {worst_post:.2e} (tol 1e-9) on a fitted "
        f"model; stage prior sums within {worst_prior:.2e} (tol 1e-12) for K=1..100",
    )
    assert ok, detail


def test_criterion_8_uninformative_chain_is_uniform(report):
    specs = [
        BiomarkerSpec(name="o", kind=BiomarkerModelKind.ORDINAL, scores=(1, 2)),
        BiomarkerSpec(name="b", kind=BiomarkerModelKind.BINARY),
    ]
    table = build_event_table(specs)
    cohort = build_cohort(
        specs,
        [np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([[0.5, 0.5]])],
    )
    config = FitConfig(mcmc_iterations=200_000, rng_seed=11)
    t0 = time.time()
    samples, _ = mcmc_sequences(
        cohort, table, specs,
        [MixedEventSequence(order=(0, 1, 2))], (1.0,), config,
    )
    elapsed = time.time() - t0
    # thin to near-independence before applying multinomial bounds: the
    # 3-state walk's autocorrelation decays by half per step, so lag-20
    # correlation is ~1e-6; drop a short burn-in from the fixed start
    thinned = samples.sequences[1000::20, 0, :]
    valid = {(0, 1, 2), (0, 2, 1), (2, 0, 1)}
    counts = {v: 0 for v in valid}
    invalid = 0
    for row in thinned:
        key = tuple(int(e) for e in row)
        if key in counts:
            counts[key] += 1
        else:
            invalid += 1
    n = thinned.shape[0]
    expect = n / 3.0
    bound = 3.0 * np.sqrt(n * (1 / 3) * (2 / 3))
    deviation = max(abs(c - expect) for c in counts.values())
    ok = invalid == 0 and deviation <= bound and elapsed < 60.0
    detail = report(
        8, ok,
        f"200k-iteration chain on an uninformative cohort: all samples valid, "
        f"order counts within {deviation:.0f} of uniform (3-sigma bound "
        f"{bound:.0f}, n={n}), {elapsed:.1f}s (<60s)",
    )
    assert ok, detail


def test_criterion_9_two_component_em_recovery(report):
    rng = np.random.default_rng(77)
    pick = rng.random(500) < 0.5
    values = np.where(pick, rng.normal(0.0, 1.0, 500), rng.normal(4.0, 1.0, 500))
    fit = fit_two_component(values)
    trace = np.array(fit.log_likelihood_trace)
    slack = 1e-9 * (1.0 + np.abs(trace[:-1]))
    nondecreasing = bool(np.all(np.diff(trace) >= -slack))
    err_normal = abs(fit.mu_normal - 0.0)
    err_abnormal = abs(fit.mu_abnormal - 4.0)
    ok = err_normal <= 0.15 and err_abnormal <= 0.15 and nondecreasing
    detail = report(
        9, ok,
        f"EM on 0.5 N(0,1) + 0.5 N(4,1), n=500: means off by "
        f"{err_normal:.3f}/{err_abnormal:.3f} (tol 0.15), log-likelihood "
        f"{'nondecreasing' if nondecreasing else 'DECREASED'} over "
        f"{fit.iterations} iterations",
    )
    assert ok, detail


def test_criterion_10_metric_oracles_replace_restricted_data(report):
    # the published conversion AUCs and cognitive-score correlations come
    # from an access-restricted cohort, so they are out of scope; the metric
    # implementations themselves are held to exact small-case oracles
    worst = 0.0
    worst = max(worst, abs(auc([1, 2, 3, 4], [False, False, True, True]) - 1.0))
    worst = max(worst, abs(auc([1, 3, 2, 4], [False, False, True, True]) - 0.75))
    worst = max(worst, abs(pearson([1, 2, 3], [1, 3, 2]) - 0.5))
    rng = np.random.default_rng(88)
    for _ in range(25):
        n = int(rng.integers(4, 12))
        scores = rng.integers(0, 6, size=n).astype(float)
        labels = rng.random(n) < 0.5
        if labels.all() or not labels.any():
            labels[0] = not labels[0]
        worst = max(
            worst, abs(auc(scores, labels) - oracles.auc(list(scores), list(labels)))
        )
        x = rng.normal(size=n)
        y = x + rng.normal(size=n)
        worst = max(worst, abs(pearson(x, y) - oracles.pearson(list(x), list(y))))
    ok = worst <= 1e-12
    detail = report(
        10, ok,
        f"restricted-dataset values excluded; auc and pearson match "
        f"hand-computed oracles: max |diff| {worst:.2e} (tol 1e-12)",
    )
    assert ok, detail
