"""Shared fixtures and randomized-cohort builders."""

import numpy as np
import pytest
from hypothesis import settings

from mixed_sustain import (
    BiomarkerModelKind,
    BiomarkerSpec,
    build_cohort,
    build_event_table,
)

settings.register_profile("package", deadline=None, max_examples=50)
settings.load_profile("package")


def spec_meta(specs, table):
    """Oracle-side description of an event table (see tests/oracles.py)."""
    meta = []
    for i, spec in enumerate(specs):
        ids = list(table.events_of(i))
        entry = {"kind": spec.kind.value, "event_ids": ids}
        if spec.kind is BiomarkerModelKind.ZSCORE:
            entry["z_values"] = list(spec.z_values)
            entry["z_max"] = spec.z_max
            entry["sigma"] = spec.sigma
        meta.append(entry)
    return meta


def oracle_cells(cohort, specs, j):
    """Subject j's cells in oracle form: scalars and plain lists."""
    out = []
    for spec, arr in zip(specs, cohort.cells):
        if spec.kind is BiomarkerModelKind.ZSCORE:
            out.append(float(arr[j]))
        else:
            out.append([float(v) for v in arr[j]])
    return out


def random_mixed_specs(rng, max_events=6):
    """A random mix of biomarker kinds totalling at most max_events events,
    with at least one biomarker."""
    specs = []
    budget = int(rng.integers(1, max_events + 1))
    n = 0
    while budget > 0:
        kind = rng.choice(["binary", "ordinal", "zscore"])
        if kind == "binary":
            specs.append(BiomarkerSpec(name=f"b{n}", kind=BiomarkerModelKind.BINARY))
            budget -= 1
        elif kind == "ordinal":
            m = int(rng.integers(1, min(3, budget) + 1))
            specs.append(
                BiomarkerSpec(
                    name=f"o{n}",
                    kind=BiomarkerModelKind.ORDINAL,
                    scores=tuple(range(1, m + 1)),
                )
            )
            budget -= m
        else:
            w = int(rng.integers(1, min(3, budget) + 1))
            specs.append(
                BiomarkerSpec(
                    name=f"z{n}",
                    kind=BiomarkerModelKind.ZSCORE,
                    z_values=tuple(float(v) for v in range(1, w + 1)),
                    z_max=float(w + 1),
                    sigma=float(rng.uniform(0.5, 1.5)),
                )
            )
            budget -= w
        n += 1
    return specs


def random_mixed_cohort(rng, specs, n_subjects, missing_rate=0.15):
    """Random cells for the given specs; returns the built CohortData."""
    cells = []
    for spec in specs:
        if spec.kind is BiomarkerModelKind.ZSCORE:
            arr = rng.normal(spec.z_max / 2.0, 1.5, size=n_subjects)
        elif spec.kind is BiomarkerModelKind.BINARY:
            arr = rng.uniform(0.05, 1.5, size=(n_subjects, 2))
        else:
            raw = rng.uniform(0.05, 1.0, size=(n_subjects, len(spec.scores) + 1))
            arr = raw / raw.sum(axis=1, keepdims=True)
        if missing_rate > 0.0:
            drop = rng.random(n_subjects) < missing_rate
            if arr.ndim == 1:
                arr[drop] = np.nan
            else:
                arr[drop, :] = np.nan
        cells.append(arr)
    return build_cohort(specs, cells)


@pytest.fixture
def toy3_specs():
    """One two-level ordinal plus one binary: K=3, exactly 3 valid orders."""
    return [
        BiomarkerSpec(
            name="o", kind=BiomarkerModelKind.ORDINAL, scores=(1, 2)
        ),
        BiomarkerSpec(name="b", kind=BiomarkerModelKind.BINARY),
    ]


@pytest.fixture
def toy3_table(toy3_specs):
    return build_event_table(toy3_specs)


@pytest.fixture
def toy3_flat_cohort(toy3_specs):
    """A single subject carrying no ordering information: every sequence has
    the same likelihood, so the MCMC target is uniform over valid orders."""
    cells = [
        np.array([[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]),
        np.array([[0.5, 0.5]]),
    ]
    return build_cohort(toy3_specs, cells)
