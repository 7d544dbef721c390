"""Fixed file formats: config JSON, cohort and artifact CSVs, model JSON,
and the positional-variance SVG heatmap.

All files are UTF-8. CSVs are comma-separated with a mandatory header row,
"." decimals, and empty fields for missing cells. Floats serialize via repr
(shortest round-trip), so identical inputs give byte-identical outputs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .inference import FitConfig, SubjectPosteriors
from .model_core import (
    BiomarkerModelKind,
    BiomarkerSpec,
    CohortData,
    EventTable,
    McmcSamples,
    MixedEventSequence,
    SubtypeModel,
    build_cohort,
    build_event_table,
    validate_sequence,
)
from .simulation import CohortTruth, SimulationConfig

_KINDS = {k.value: k for k in BiomarkerModelKind}


# ---------------------------------------------------------------------------
# config JSON

@dataclass(frozen=True)
class ParsedConfig:
    """The single JSON config document, validated field by field.

    biomarkers holds the raw entries so z-values can be filled in later by
    the quantile rule; build_specs materializes them. fit holds FitConfig
    keyword overrides; simulate is present only when the document has a
    simulate section.
    """

    biomarkers: tuple[dict, ...]
    fit: dict
    simulate: SimulationConfig | None

    def build_specs(self, z_overrides=None) -> tuple[BiomarkerSpec, ...]:
        """Materialize BiomarkerSpec objects, optionally substituting derived
        (z_values, z_max) pairs per biomarker name."""
        if not self.biomarkers:
            if self.simulate is not None:
                return self.simulate.biomarker_specs()
            raise ValidationError("config: biomarkers section is required")
        z_overrides = z_overrides or {}
        specs = []
        for i, raw in enumerate(self.biomarkers):
            where = f"biomarkers[{i}]"
            kind = _KINDS[raw["kind"]]
            kwargs = {}
            if kind is BiomarkerModelKind.ZSCORE:
                if raw["name"] in z_overrides:
                    kwargs["z_values"], kwargs["z_max"] = z_overrides[raw["name"]]
                else:
                    if "z_values" not in raw or "z_max" not in raw:
                        raise ValidationError(
                            f"config: {where}.z_values and z_max are required "
                            "(or pass --derive-z-values)"
                        )
                    kwargs["z_values"] = tuple(raw["z_values"])
                    kwargs["z_max"] = raw["z_max"]
                kwargs["sigma"] = raw.get("sigma", 1.0)
            elif kind is BiomarkerModelKind.ORDINAL:
                kwargs["scores"] = tuple(raw["scores"])
            specs.append(BiomarkerSpec(name=raw["name"], kind=kind, **kwargs))
        return tuple(specs)


def _require(cond, message):
    if not cond:
        raise ValidationError(message)


def _check_number(doc, where, key, required=False):
    if key not in doc:
        _require(not required, f"config: {where}.{key} is required")
        return
    _require(
        isinstance(doc[key], (int, float)) and not isinstance(doc[key], bool),
        f"config: {where}.{key} must be a number",
    )


_BIOMARKER_KEYS = {"name", "kind", "z_values", "z_max", "sigma", "scores"}
_FIT_KEYS = {"startpoints", "greedy_passes", "mcmc_iterations", "seed", "max_subtypes"}
_FIT_RENAME = {
    "startpoints": "n_startpoints",
    "greedy_passes": "n_greedy_passes",
    "mcmc_iterations": "mcmc_iterations",
    "seed": "rng_seed",
    "max_subtypes": "max_subtypes",
}
_SIMULATE_KEYS = {
    "n_subjects", "n_subtypes", "n_zscore", "n_ordinal", "n_binary",
    "z_values", "z_max", "scores", "zscore_sigma", "fractions",
    "ordinal_confusion", "binary_means", "binary_sds", "dropout", "rng_seed",
}


def parse_config(doc: dict) -> ParsedConfig:
    """Validate the config document; error messages name the offending field."""
    _require(isinstance(doc, dict), "config: top level must be a JSON object")
    unknown = set(doc) - {"biomarkers", "fit", "simulate"}
    _require(not unknown, f"config: unknown section {min(unknown, default='')!r}")

    biomarkers = doc.get("biomarkers", [])
    _require(isinstance(biomarkers, list), "config: biomarkers must be an array")
    for i, raw in enumerate(biomarkers):
        where = f"biomarkers[{i}]"
        _require(isinstance(raw, dict), f"config: {where} must be an object")
        unknown = set(raw) - _BIOMARKER_KEYS
        _require(
            not unknown,
            f"config: {where}.{min(unknown, default='')} is not a known field",
        )
        _require(
            isinstance(raw.get("name"), str) and raw.get("name"),
            f"config: {where}.name must be a non-empty string",
        )
        _require(
            raw.get("kind") in _KINDS,
            f"config: {where}.kind must be one of {sorted(_KINDS)}",
        )
        for key in ("z_values", "scores"):
            if key in raw:
                _require(
                    isinstance(raw[key], list)
                    and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                            for v in raw[key]),
                    f"config: {where}.{key} must be an array of numbers",
                )
        _check_number(raw, where, "z_max")
        _check_number(raw, where, "sigma")

    fit_doc = doc.get("fit", {})
    _require(isinstance(fit_doc, dict), "config: fit must be an object")
    unknown = set(fit_doc) - _FIT_KEYS
    _require(not unknown, f"config: fit.{min(unknown, default='')} is not a known field")
    fit = {}
    for key, value in fit_doc.items():
        _require(
            isinstance(value, int) and not isinstance(value, bool),
            f"config: fit.{key} must be an integer",
        )
        fit[_FIT_RENAME[key]] = value

    simulate = None
    if "simulate" in doc:
        sim_doc = doc["simulate"]
        _require(isinstance(sim_doc, dict), "config: simulate must be an object")
        unknown = set(sim_doc) - _SIMULATE_KEYS
        _require(
            not unknown,
            f"config: simulate.{min(unknown, default='')} is not a known field",
        )
        kwargs = dict(sim_doc)
        for key in ("z_values", "scores", "fractions", "binary_means", "binary_sds"):
            if key in kwargs and kwargs[key] is not None:
                _require(
                    isinstance(kwargs[key], list),
                    f"config: simulate.{key} must be an array",
                )
                kwargs[key] = tuple(kwargs[key])
        try:
            simulate = SimulationConfig(**kwargs)
        except TypeError as exc:
            raise ValidationError(f"config: simulate section invalid ({exc})") from exc
    return ParsedConfig(biomarkers=tuple(biomarkers), fit=fit, simulate=simulate)


def read_config(path) -> ParsedConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config: not valid JSON ({exc})") from exc
    return parse_config(doc)


def fit_config_from(parsed: ParsedConfig, **overrides) -> FitConfig:
    """FitConfig from the config's fit section plus CLI overrides."""
    kwargs = dict(parsed.fit)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return FitConfig(**kwargs)


# ---------------------------------------------------------------------------
# cohort CSV

def cohort_columns(specs) -> list[str]:
    """Fixed column layout: subject_id first, then per biomarker its value
    column (z-score), pnotE/pE pair (binary), or s0..s_m vector (ordinal,
    suffixed by the actual score values)."""
    cols = ["subject_id"]
    for spec in specs:
        if spec.kind is BiomarkerModelKind.ZSCORE:
            cols.append(spec.name)
        elif spec.kind is BiomarkerModelKind.BINARY:
            cols += [f"{spec.name}:pnotE", f"{spec.name}:pE"]
        else:
            cols.append(f"{spec.name}:s0")
            cols += [f"{spec.name}:s{s}" for s in spec.scores]
    return cols


def _fmt(value: float) -> str:
    return "" if math.isnan(value) else repr(float(value))


def write_cohort_csv(path, cohort: CohortData, specs):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cohort_columns(specs))
        for j in range(cohort.n_subjects):
            row = [cohort.subject_ids[j]]
            for arr in cohort.cells:
                cell = arr[j] if arr.ndim == 2 else (arr[j],)
                row += [_fmt(v) for v in np.atleast_1d(cell)]
            w.writerow(row)


def read_cohort_csv(path, specs) -> CohortData:
    expected = cohort_columns(specs)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file, header row required") from None
        for i, (got, want) in enumerate(zip(header, expected)):
            if got != want:
                raise ValidationError(
                    f"{path}: column {i + 1} is {got!r}, expected {want!r}"
                )
        if len(header) != len(expected):
            raise ValidationError(
                f"{path}: expected {len(expected)} columns, got {len(header)}"
            )
        ids = []
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise ValidationError(
                    f"{path}: line {lineno} has {len(row)} fields, expected {len(expected)}"
                )
            ids.append(row[0])
            values = []
            for col, tok in zip(expected[1:], row[1:]):
                if tok == "":
                    values.append(math.nan)
                    continue
                try:
                    values.append(float(tok))
                except ValueError:
                    raise ValidationError(
                        f"{path}: line {lineno}, column {col!r}: not a number: {tok!r}"
                    ) from None
            rows.append(values)
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(expected) - 1)
    cells = []
    offset = 0
    for spec in specs:
        if spec.kind is BiomarkerModelKind.ZSCORE:
            cells.append(data[:, offset])
            offset += 1
        else:
            width = 2 if spec.kind is BiomarkerModelKind.BINARY else len(spec.scores) + 1
            cells.append(data[:, offset:offset + width])
            offset += width
    return build_cohort(specs, cells, subject_ids=ids)


# ---------------------------------------------------------------------------
# truth CSV

def write_truth_csv(path, truth: CohortTruth):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "true_subtype", "true_stage"])
        for sid, c, k in zip(truth.subject_ids, truth.subtype, truth.stage):
            w.writerow([sid, int(c), int(k)])


def read_truth_csv(path) -> CohortTruth:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["subject_id", "true_subtype", "true_stage"]:
            raise ValidationError(f"{path}: not a truth CSV (bad header)")
        ids, subtype, stage = [], [], []
        for row in reader:
            ids.append(row[0])
            subtype.append(int(row[1]))
            stage.append(int(row[2]))
    return CohortTruth(
        subject_ids=tuple(ids),
        subtype=np.asarray(subtype, dtype=np.int64),
        stage=np.asarray(stage, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# model JSON

def write_model_json(path, model: SubtypeModel, table: EventTable, specs,
                     log_likelihood: float | None = None):
    """Sequences are stored as {biomarker, level} descriptor arrays (level is
    the 0-based level index), self-describing across config re-orderings."""
    doc = {
        "subtypes": [
            {
                "fraction": float(fraction),
                "sequence": [
                    {"biomarker": specs[b].name, "level": w}
                    for b, w in (table.events[e] for e in seq.order)
                ],
            }
            for seq, fraction in zip(model.sequences, model.fractions)
        ],
    }
    if log_likelihood is not None:
        doc["log_likelihood"] = float(log_likelihood)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _descriptor_subtypes(doc, path) -> list[tuple[float, list[tuple[str, int]]]]:
    _require(isinstance(doc, dict) and isinstance(doc.get("subtypes"), list),
             f"{path}: model JSON needs a subtypes array")
    out = []
    for c, sub in enumerate(doc["subtypes"]):
        where = f"{path}: subtypes[{c}]"
        _require(isinstance(sub, dict), f"{where} must be an object")
        _require(isinstance(sub.get("fraction"), (int, float)),
                 f"{where}.fraction must be a number")
        _require(isinstance(sub.get("sequence"), list),
                 f"{where}.sequence must be an array")
        seq = []
        for p, ev in enumerate(sub["sequence"]):
            _require(
                isinstance(ev, dict)
                and isinstance(ev.get("biomarker"), str)
                and isinstance(ev.get("level"), int),
                f"{where}.sequence[{p}] must be {{biomarker, level}}",
            )
            seq.append((ev["biomarker"], ev["level"]))
        out.append((float(sub["fraction"]), seq))
    return out


def read_model_json(path, table: EventTable, specs) -> tuple[SubtypeModel, float | None]:
    """Load a model against a known event table; raises if any descriptor
    names an unknown biomarker or level, or a sequence is invalid."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    by_name = {spec.name: i for i, spec in enumerate(specs)}
    sequences, fractions = [], []
    for fraction, desc in _descriptor_subtypes(doc, str(path)):
        order = []
        for name, level in desc:
            if name not in by_name:
                raise ValidationError(f"{path}: unknown biomarker {name!r} in model")
            order.append(table.event_id(by_name[name], level))
        seq = MixedEventSequence(order=tuple(order))
        if not validate_sequence(seq, table):
            raise ValidationError(f"{path}: stored sequence violates level order")
        sequences.append(seq)
        fractions.append(fraction)
    model = SubtypeModel(sequences=tuple(sequences), fractions=tuple(fractions))
    return model, doc.get("log_likelihood")


def read_models_on_shared_events(path_a, path_b) -> tuple[SubtypeModel, SubtypeModel]:
    """Load two model files onto one synthetic event table for comparison.

    Requires identical descriptor sets; event ids are assigned by sorted
    (biomarker, level) order so both models speak the same ids.
    """
    docs = []
    for path in (path_a, path_b):
        with open(path, encoding="utf-8") as fh:
            docs.append(_descriptor_subtypes(json.load(fh), str(path)))
    sets = [set(desc for _, seq in doc for desc in seq) for doc in docs]
    if sets[0] != sets[1]:
        diff = sorted(sets[0] ^ sets[1])[0]
        raise ValidationError(
            f"models do not share an event table (e.g. {diff[0]}:{diff[1]})"
        )
    ids = {desc: i for i, desc in enumerate(sorted(sets[0]))}
    models = []
    for doc in docs:
        seqs = tuple(
            MixedEventSequence(order=tuple(ids[d] for d in seq)) for _, seq in doc
        )
        models.append(SubtypeModel(
            sequences=seqs, fractions=tuple(f for f, _ in doc)
        ))
    return models[0], models[1]


# ---------------------------------------------------------------------------
# fitted-artifact CSVs

def event_labels(table: EventTable, specs) -> list[str]:
    """Readable per-event labels: 'name' for binary, 'name:level-value' else."""
    labels = []
    for b, w in table.events:
        spec = specs[b]
        if spec.kind is BiomarkerModelKind.BINARY:
            labels.append(spec.name)
        else:
            labels.append(f"{spec.name}:{spec.level_value(w):g}")
    return labels


def write_samples_csv(path, samples: McmcSamples):
    """One row per (iteration, subtype): the current event order and the
    model log-likelihood at that iteration."""
    n, C, K = samples.sequences.shape
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "subtype", "log_likelihood"]
                   + [f"pos{p}" for p in range(K)])
        for it in range(n):
            ll = repr(float(samples.log_likelihoods[it]))
            for c in range(C):
                w.writerow([it, c, ll] + [int(e) for e in samples.sequences[it, c]])


def write_staging_csv(path, post: SubjectPosteriors):
    """One row per staged subject: ml point estimates, the expected stage
    under the ml subtype, and the flattened (subtype, stage) posterior.
    Excluded subjects are omitted."""
    J, C, K1 = post.posterior.shape
    header = ["subject_id", "ml_subtype", "ml_stage", "expected_stage"]
    header += [f"p_c{c}_k{k}" for c in range(C) for k in range(K1)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for j in range(J):
            if post.subject_ids[j] in post.excluded:
                continue
            c = int(post.ml_subtype[j])
            row = [post.subject_ids[j], c, int(post.ml_stage[j]),
                   repr(float(post.expected_stage[j, c]))]
            row += [repr(float(v)) for v in post.posterior[j].ravel()]
            w.writerow(row)


def write_pvd_csv(path, matrix: np.ndarray, labels):
    K = matrix.shape[0]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["event"] + [f"pos{p + 1}" for p in range(K)])
        for e in range(K):
            w.writerow([labels[e]] + [repr(float(v)) for v in matrix[e]])


def read_pvd_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "event":
            raise ValidationError(f"{path}: not a positional-variance CSV")
        labels, rows = [], []
        for row in reader:
            labels.append(row[0])
            rows.append([float(tok) for tok in row[1:]])
    matrix = np.asarray(rows, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValidationError(f"{path}: positional-variance matrix must be square")
    return labels, matrix


def write_metrics_csv(path, rows):
    """Flat (metric, subtype, value) rows; subtype may be empty."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "subtype", "value"])
        for metric, subtype, value in rows:
            w.writerow([metric, "" if subtype is None else subtype, repr(float(value))])


def write_crossval_csv(path, result):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subtypes", "held_out_log_likelihood", "selected"])
        for c, value in enumerate(result.held_out, start=1):
            w.writerow([c, repr(float(value)), 1 if c == result.selected else 0])


# ---------------------------------------------------------------------------
# quantile rule for z-score levels

def derive_z_values(values) -> tuple[tuple[float, ...], float]:
    """Integer z-values up to the 95% quantile; z-max is the rounded 99%
    quantile."""
    x = np.asarray(values, dtype=np.float64).ravel()
    x = x[np.isfinite(x)]
    if x.size < 2:
        raise ValidationError("need at least 2 finite values to derive z-values")
    q95, q99 = np.percentile(x, [95.0, 99.0])
    top = int(math.floor(q95))
    if top < 1:
        raise ValidationError(
            f"95% quantile is {q95:.3f}; no integer z-values below it"
        )
    z_values = tuple(float(z) for z in range(1, top + 1))
    z_max = float(round(q99))
    if z_max <= z_values[-1]:
        raise ValidationError(
            f"rounded 99% quantile ({z_max:g}) does not exceed the last z-value "
            f"({z_values[-1]:g})"
        )
    return z_values, z_max


# ---------------------------------------------------------------------------
# PVD SVG heatmap

def _heat_color(v: float) -> str:
    # white at 0 to a deep blue at 1
    v = min(max(v, 0.0), 1.0)
    r = round(255 + (8 - 255) * v)
    g = round(255 + (48 - 255) * v)
    b = round(255 + (107 - 255) * v)
    return f"rgb({r},{g},{b})"


def render_pvd_svg(path, matrix: np.ndarray, labels, title: str = ""):
    """Static heatmap of a positional-variance matrix: one row per event in
    label order, one column per sequence position."""
    K = matrix.shape[0]
    cell = 22
    label_w = 10 + 7 * max((len(s) for s in labels), default=0)
    top = 44 if title else 24
    width = label_w + K * cell + 10
    height = top + K * cell + 26
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{label_w}" y="16" font-size="13">{title}</text>')
    for e in range(K):
        y = top + e * cell
        parts.append(
            f'<text x="{label_w - 6}" y="{y + cell - 7}" text-anchor="end">{labels[e]}</text>'
        )
        for p in range(K):
            x = label_w + p * cell
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_heat_color(float(matrix[e, p]))}" stroke="#ddd" stroke-width="0.5"/>'
            )
    step = max(1, K // 12)
    for p in range(0, K, step):
        x = label_w + p * cell + cell // 2
        parts.append(
            f'<text x="{x}" y="{top + K * cell + 16}" text-anchor="middle">{p + 1}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
