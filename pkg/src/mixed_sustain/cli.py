"""Command-line entry points.

Subcommands: simulate, fit, gmm, crossval, evaluate. Every command is
deterministic given its inputs, flags, and seed. Exit codes: 0 all requested
artifacts written and validated, 1 validation failure, 2 runtime failure,
3 finished with artifacts but without convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fileformats as ff
from .errors import NonConvergenceWarning, ValidationError
from .evaluation import (
    auc,
    cross_validate_subtypes,
    kendall_tau,
    match_subtypes,
    positional_variance_matrix,
    pearson,
)
from .inference import fit_sustain, subject_posteriors
from .likelihood import StageLikelihoodEvaluator, mixture_log_likelihood
from .mixture import event_probability_pairs, fit_two_component
from .model_core import BiomarkerModelKind, build_event_table
from .simulation import generate_ground_truth, simulate_cohort

_TRUE_TOKENS = {"1", "true", "yes"}
_FALSE_TOKENS = {"0", "false", "no", ""}


def _read_table(path):
    """Generic CSV read: (header, rows), every row width-checked."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ValidationError(f"{path}: empty file, header row required")
        rows = list(reader)
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ValidationError(
                f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}"
            )
    return header, rows


def _column(header, rows, name, path):
    if name not in header:
        raise ValidationError(f"{path}: column {name!r} not found")
    i = header.index(name)
    return [row[i] for row in rows]


def _parse_float(tok, where):
    if tok == "":
        return math.nan
    try:
        return float(tok)
    except ValueError:
        raise ValidationError(f"{where}: not a number: {tok!r}") from None


def _parse_flag(tok, where):
    low = tok.strip().lower()
    if low in _TRUE_TOKENS:
        return True
    if low in _FALSE_TOKENS:
        return False
    raise ValidationError(f"{where}: not a boolean flag: {tok!r}")


def _screen_impossible(cohort, table, specs):
    """Indices of subjects with zero likelihood at every stage of the
    reference (level-order) sequence; such subjects cannot be staged."""
    ev = StageLikelihoodEvaluator(cohort, table, specs)
    marginals = ev.subject_marginals(np.arange(table.n_events))
    return np.nonzero(np.isneginf(marginals))[0]


def _verify_simulate_layout(parsed):
    """When the config carries both sections, their column layouts must
    agree, or simulate/fit round trips would break."""
    sim_specs = parsed.simulate.biomarker_specs()
    if not parsed.biomarkers:
        return sim_specs
    declared = ff.cohort_columns(parsed.build_specs())
    generated = ff.cohort_columns(sim_specs)
    for i, (a, b) in enumerate(zip(declared, generated)):
        if a != b:
            raise ValidationError(
                f"config: biomarkers and simulate sections disagree at column "
                f"{i + 1} ({a!r} vs {b!r})"
            )
    if len(declared) != len(generated):
        raise ValidationError(
            "config: biomarkers and simulate sections declare different column counts"
        )
    return sim_specs


def cmd_simulate(args) -> int:
    parsed = ff.read_config(args.config)
    if parsed.simulate is None:
        raise ValidationError("config: simulate section is required for this command")
    sim = parsed.simulate
    if args.seed is not None:
        sim = replace(sim, rng_seed=args.seed)
    specs = _verify_simulate_layout(parsed)
    table = build_event_table(specs)
    model = generate_ground_truth(sim)
    cohort, truth = simulate_cohort(model, sim)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ff.write_cohort_csv(out / "cohort.csv", cohort, specs)
    ff.write_truth_csv(out / "truth.csv", truth)
    ff.write_model_json(out / "model.json", model, table, specs)
    print(
        f"simulated {cohort.n_subjects} subjects, {model.n_subtypes} subtype(s), "
        f"{table.n_events} events -> {out}"
    )
    return 0


def cmd_fit(args) -> int:
    parsed = ff.read_config(args.config)
    z_overrides = None
    if args.derive_z_values:
        z_overrides = {}
        header, rows = _read_table(args.data)
        for raw in parsed.biomarkers:
            if raw["kind"] != BiomarkerModelKind.ZSCORE.value:
                continue
            tokens = _column(header, rows, raw["name"], args.data)
            values = [_parse_float(t, f"{args.data}: column {raw['name']!r}") for t in tokens]
            z_overrides[raw["name"]] = ff.derive_z_values(values)
    specs = parsed.build_specs(z_overrides)
    table = build_event_table(specs)
    cohort = ff.read_cohort_csv(args.data, specs)

    notes = []
    bad = _screen_impossible(cohort, table, specs)
    if bad.size:
        for j in bad:
            notes.append(
                f"subject {cohort.subject_ids[j]} has zero likelihood at every "
                "stage of the reference ordering; excluded"
            )
        kept = [j for j in range(cohort.n_subjects) if j not in set(bad.tolist())]
        if not kept:
            raise ValidationError("every subject has zero likelihood; nothing to fit")
        cohort = cohort.subset(kept)

    config = ff.fit_config_from(
        parsed,
        n_startpoints=args.startpoints,
        mcmc_iterations=args.mcmc_iters,
        rng_seed=args.seed,
        max_subtypes=args.subtypes,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = ff.event_labels(table, specs)
    nonconverged = False
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        models = fit_sustain(cohort, table, specs, config)
        for model in models:
            C = model.n_subtypes
            ll = mixture_log_likelihood(cohort, model, table, specs)
            ff.write_model_json(out / f"model_C{C}.json", model, table, specs, ll)
            ff.write_samples_csv(out / f"samples_C{C}.csv", model.mcmc_samples)
            for c in range(C):
                pvd = positional_variance_matrix(model.mcmc_samples, c)
                ff.write_pvd_csv(out / f"pvd_C{C}_subtype{c}.csv", pvd, labels)
            post = subject_posteriors(cohort, model, table, specs)
            ff.write_staging_csv(out / f"staging_C{C}.csv", post)
            for sid in post.excluded:
                notes.append(f"subject {sid} could not be staged under C={C}; excluded")
    for w in caught:
        notes.append(str(w.message))
        if issubclass(w.category, NonConvergenceWarning):
            nonconverged = True
    if notes:
        (out / "warnings.txt").write_text("\n".join(notes) + "\n", encoding="utf-8")
    fitted = ", ".join(f"C={m.n_subtypes}" for m in models)
    print(f"fitted {fitted} on {cohort.n_subjects} subjects -> {out}")
    return 3 if nonconverged else 0


def cmd_gmm(args) -> int:
    header, rows = _read_table(args.data)
    for suffix in (":pnotE", ":pE"):
        if f"{args.column}{suffix}" in header:
            raise ValidationError(
                f"{args.data}: column {args.column + suffix!r} already present"
            )
    tokens = _column(header, rows, args.column, args.data)
    values = np.array(
        [_parse_float(t, f"{args.data}: column {args.column!r}") for t in tokens]
    )
    mask = None
    if args.reference_column is not None:
        flags = _column(header, rows, args.reference_column, args.data)
        mask = np.array(
            [_parse_flag(t, f"{args.data}: column {args.reference_column!r}") for t in flags]
        )
    fit = fit_two_component(values, reference_mask=mask)
    pairs = event_probability_pairs(values, fit)
    out = Path(args.out)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header + [f"{args.column}:pnotE", f"{args.column}:pE"])
        for row, (p0, p1) in zip(rows, pairs):
            w.writerow(row + [
                "" if math.isnan(p0) else repr(float(p0)),
                "" if math.isnan(p1) else repr(float(p1)),
            ])
    sidecar = {
        "column": args.column,
        "mu_normal": fit.mu_normal,
        "sigma_normal": fit.sigma_normal,
        "mu_abnormal": fit.mu_abnormal,
        "sigma_abnormal": fit.sigma_abnormal,
        "weight_normal": fit.weight_normal,
        "converged": fit.converged,
        "iterations": fit.iterations,
    }
    Path(f"{out}.gmm.json").write_text(
        json.dumps(sidecar, indent=2) + "\n", encoding="utf-8"
    )
    if not fit.converged:
        print(f"warning: EM did not converge in {fit.iterations} iterations", file=sys.stderr)
        return 3
    print(f"fit {args.column}: normal N({fit.mu_normal:.3f}, {fit.sigma_normal:.3f}^2), "
          f"abnormal N({fit.mu_abnormal:.3f}, {fit.sigma_abnormal:.3f}^2) -> {out}")
    return 0


def cmd_crossval(args) -> int:
    parsed = ff.read_config(args.config)
    specs = parsed.build_specs()
    table = build_event_table(specs)
    cohort = ff.read_cohort_csv(args.data, specs)
    bad = _screen_impossible(cohort, table, specs)
    if bad.size:
        print(
            f"warning: excluding {bad.size} subject(s) with zero likelihood",
            file=sys.stderr,
        )
        kept = [j for j in range(cohort.n_subjects) if j not in set(bad.tolist())]
        cohort = cohort.subset(kept)
    config = ff.fit_config_from(
        parsed, rng_seed=args.seed, max_subtypes=args.max_subtypes
    )
    result = cross_validate_subtypes(cohort, table, specs, config, folds=args.folds)
    ff.write_crossval_csv(args.out, result)
    print(f"selected C={result.selected} -> {args.out}")
    return 0


def _staging_scores(path):
    header, rows = _read_table(path)
    ids = _column(header, rows, "subject_id", path)
    expected = [
        _parse_float(t, f"{path}: expected_stage")
        for t in _column(header, rows, "expected_stage", path)
    ]
    ml = [
        _parse_float(t, f"{path}: ml_stage")
        for t in _column(header, rows, "ml_stage", path)
    ]
    return {s: (e, m) for s, e, m in zip(ids, expected, ml)}


def cmd_evaluate(args) -> int:
    have_models = args.model is not None and args.truth_model is not None
    have_staging = args.staging is not None and args.labels is not None
    have_pvd = args.pvd is not None
    if not (have_models or have_staging or have_pvd):
        raise ValidationError(
            "nothing to evaluate: pass --model with --truth-model, "
            "--staging with --labels, or --pvd"
        )
    if (args.svg is not None) != have_pvd:
        raise ValidationError("--svg and --pvd must be passed together")

    rows = []
    if have_models:
        est, tru = ff.read_models_on_shared_events(args.model, args.truth_model)
        assignment, mean_tau = match_subtypes(est, tru)
        for c, t in enumerate(assignment):
            rows.append((
                "kendall_tau", c,
                kendall_tau(est.sequences[c], tru.sequences[t]),
            ))
        rows.append(("mean_matched_tau", None, mean_tau))

    if have_staging:
        scores = _staging_scores(args.staging)
        header, raw = _read_table(args.labels)
        ids = _column(header, raw, "subject_id", args.labels)
        shared = [s for s in ids if s in scores]
        if not shared:
            raise ValidationError(
                f"{args.labels}: no subject ids overlap with the staging file"
            )
        expected = np.array([scores[s][0] for s in shared])
        ml = np.array([scores[s][1] for s in shared])
        if "label" in header:
            by_id = dict(zip(ids, _column(header, raw, "label", args.labels)))
            labels = np.array(
                [_parse_flag(by_id[s], f"{args.labels}: label") for s in shared]
            )
            if labels.all() or not labels.any():
                print("warning: labels are single-class; AUC skipped", file=sys.stderr)
            else:
                rows.append(("auc", None, auc(expected, labels)))
                rows.append(("auc_ml_stage", None, auc(ml, labels)))
        if "target" in header:
            by_id = dict(zip(ids, _column(header, raw, "target", args.labels)))
            target = np.array(
                [_parse_float(by_id[s], f"{args.labels}: target") for s in shared]
            )
            ok = np.isfinite(target)
            if ok.sum() < 3 or np.unique(target[ok]).size < 2:
                print("warning: target column is degenerate; Pearson skipped", file=sys.stderr)
            else:
                rows.append(("pearson", None, pearson(expected[ok], target[ok])))
                rows.append(("pearson_ml_stage", None, pearson(ml[ok], target[ok])))

    if rows or (have_models or have_staging):
        ff.write_metrics_csv(args.out, rows)
        print(f"wrote {len(rows)} metric row(s) -> {args.out}")

    if have_pvd:
        labels, matrix = ff.read_pvd_csv(args.pvd)
        ff.render_pvd_svg(args.svg, matrix, labels, title=Path(args.pvd).stem)
        print(f"rendered positional-variance heatmap -> {args.svg}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mixed-sustain",
        description="Subtype and stage inference over mixed binary, ordinal, "
                    "and z-score biomarker event sequences.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic cohort from a config")
    s.add_argument("config", help="config JSON with a simulate section")
    s.add_argument("out_dir", help="directory for cohort.csv, truth.csv, model.json")
    s.add_argument("--seed", type=int, help="override simulate.rng_seed")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit subtype models to a cohort CSV")
    f.add_argument("config", help="config JSON with a biomarkers section")
    f.add_argument("data", help="cohort CSV")
    f.add_argument("out_dir", help="directory for per-C model/samples/pvd/staging files")
    f.add_argument("--subtypes", type=int, help="maximum subtype count")
    f.add_argument("--mcmc-iters", type=int, help="MCMC iterations per C")
    f.add_argument("--startpoints", type=int, help="greedy-ascent restarts")
    f.add_argument("--seed", type=int, help="override fit.seed")
    f.add_argument("--derive-z-values", action="store_true",
                   help="derive z_values (integers up to the 95%% quantile) and "
                        "z_max (rounded 99%% quantile) from the data")
    f.set_defaults(func=cmd_fit)

    g = sub.add_parser("gmm", help="two-component mixture fit for one raw column")
    g.add_argument("data", help="CSV with the raw-values column")
    g.add_argument("column", help="column to fit")
    g.add_argument("out", help="output CSV with :pnotE/:pE columns appended")
    g.add_argument("--reference-column",
                   help="boolean column marking the reference (normal) group")
    g.set_defaults(func=cmd_gmm)

    c = sub.add_parser("crossval", help="select the subtype count by cross-validation")
    c.add_argument("config", help="config JSON with a biomarkers section")
    c.add_argument("data", help="cohort CSV")
    c.add_argument("--max-subtypes", type=int, help="largest C to score")
    c.add_argument("--folds", type=int, default=5)
    c.add_argument("--seed", type=int, help="override fit.seed")
    c.add_argument("--out", default="crossval.csv")
    c.set_defaults(func=cmd_crossval)

    e = sub.add_parser("evaluate", help="recovery and validation metrics")
    e.add_argument("--model", help="fitted model JSON")
    e.add_argument("--truth-model", help="ground-truth model JSON")
    e.add_argument("--staging", help="staging CSV from fit")
    e.add_argument("--labels", help="CSV with subject_id and label/target columns")
    e.add_argument("--pvd", help="positional-variance CSV to render")
    e.add_argument("--svg", help="output SVG path for --pvd")
    e.add_argument("--out", default="metrics.csv", help="metrics CSV path")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
