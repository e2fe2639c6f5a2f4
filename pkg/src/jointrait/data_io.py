"""File formats: long-format CSVs, model-spec JSON, subject JSON.

CSV schemas (all comma-separated, header row, UTF-8):
  longitudinal.csv   id,time,outcome,value     one row per measurement
  survival.csv       id,time,event              event is 0/1
  covariates.csv     id,<name>,<name>,...       baseline covariates, wide
  predictions.csv    id,risk,time,event         input to `evaluate`

Model specs are JSON documents::

    {
      "outcomes": [
        {"name": "y1", "kind": "continuous"},
        {"name": "y2", "kind": "ordinal", "n_categories": 7, "anchor": true},
        {"name": "y3", "kind": "ordinal", "n_categories": 7}
      ],
      "fixed_effects": ["1", "x1", "time", "x1:time"],
      "random_effects": ["1", "time"],
      "theta_knots": [1.2, 3, 6],
      "hazard_knots": null,
      "survival_covariates": ["x2"],
      "association": "M1"
    }

Floats are written with repr() so identical data produce identical bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .errors import DataError
from .model import DesignSpec, ModelSpec, OutcomeSpec, SubjectRecord, Term, Visit

LONGITUDINAL_CSV = "longitudinal.csv"
SURVIVAL_CSV = "survival.csv"
COVARIATES_CSV = "covariates.csv"
GROUND_TRUTH_JSON = "ground_truth.json"
MODEL_SPEC_JSON = "model_spec.json"


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# model spec JSON
# ---------------------------------------------------------------------------

def spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "outcomes": [
            {
                "name": o.name,
                "kind": o.kind,
                **({"n_categories": o.n_categories} if o.n_categories else {}),
                **({"anchor": True} if o.is_anchor else {}),
            }
            for o in spec.outcomes
        ],
        "fixed_effects": [t.label() for t in spec.design.fixed_terms],
        "random_effects": [t.label() for t in spec.design.random_terms],
        "theta_knots": list(spec.design.theta_knots),
        "hazard_knots": None if spec.design.hazard_knots is None else list(spec.design.hazard_knots),
        "survival_covariates": list(spec.survival_covariates),
        "association": spec.association,
    }


def spec_from_dict(doc: dict) -> ModelSpec:
    try:
        outcomes = tuple(
            OutcomeSpec(
                name=o["name"],
                kind=o["kind"],
                n_categories=o.get("n_categories"),
                is_anchor=bool(o.get("anchor", False)),
            )
            for o in doc["outcomes"]
        )
        design = DesignSpec(
            fixed_terms=tuple(Term.parse(t) for t in doc["fixed_effects"]),
            random_terms=tuple(Term.parse(t) for t in doc["random_effects"]),
            theta_knots=tuple(doc.get("theta_knots") or ()),
            hazard_knots=None if doc.get("hazard_knots") is None else tuple(doc["hazard_knots"]),
        )
        return ModelSpec(
            outcomes=outcomes,
            design=design,
            survival_covariates=tuple(doc.get("survival_covariates") or ()),
            association=doc.get("association", "M1"),
        )
    except KeyError as missing:
        raise DataError(f"model spec JSON is missing field {missing}") from None


def write_spec(spec: ModelSpec, path) -> None:
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2, sort_keys=True) + "\n")


def read_spec(path) -> ModelSpec:
    return spec_from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# dataset CSVs
# ---------------------------------------------------------------------------

def write_dataset(dataset: list[SubjectRecord], outdir) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    outcome_names = sorted({k for s in dataset for v in s.visits for k in v.values})
    cov_names = sorted({k for s in dataset for k in s.covariates})

    with open(outdir / LONGITUDINAL_CSV, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "time", "outcome", "value"])
        for s in dataset:
            for v in s.visits:
                for name in outcome_names:
                    value = v.values.get(name)
                    if value is not None:
                        writer.writerow([s.id, _fmt(v.time), name, _fmt(value)])

    with open(outdir / SURVIVAL_CSV, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "time", "event"])
        for s in dataset:
            writer.writerow([s.id, _fmt(s.observed_time), s.event])

    with open(outdir / COVARIATES_CSV, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", *cov_names])
        for s in dataset:
            writer.writerow([s.id, *(_fmt(s.covariates[c]) for c in cov_names)])


def read_dataset(datadir) -> list[SubjectRecord]:
    datadir = Path(datadir)
    for required in (LONGITUDINAL_CSV, SURVIVAL_CSV, COVARIATES_CSV):
        if not (datadir / required).exists():
            raise DataError(f"data directory is missing {required}")

    covariates: dict[str, dict[str, float]] = {}
    with open(datadir / COVARIATES_CSV, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "id" not in reader.fieldnames:
            raise DataError("covariates.csv must have an 'id' column")
        for row in reader:
            sid = row.pop("id")
            try:
                covariates[sid] = {k: float(v) for k, v in row.items()}
            except ValueError as bad:
                raise DataError(f"covariates.csv: non-numeric value for subject '{sid}': {bad}") from None

    visits: dict[str, dict[float, dict[str, float]]] = {}
    with open(datadir / LONGITUDINAL_CSV, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"id", "time", "outcome", "value"}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            raise DataError(f"longitudinal.csv must have columns {sorted(expected)}")
        for row in reader:
            try:
                t = float(row["time"])
                value = float(row["value"])
            except ValueError:
                raise DataError(
                    f"longitudinal.csv: non-numeric time/value for subject '{row['id']}'"
                ) from None
            visits.setdefault(row["id"], {}).setdefault(t, {})[row["outcome"]] = value

    dataset = []
    with open(datadir / SURVIVAL_CSV, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"id", "time", "event"}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            raise DataError(f"survival.csv must have columns {sorted(expected)}")
        for row in reader:
            sid = row["id"]
            try:
                t_obs = float(row["time"])
                event = int(row["event"])
            except ValueError:
                raise DataError(f"survival.csv: bad time/event for subject '{sid}'") from None
            subject_visits = tuple(
                Visit(t, dict(values)) for t, values in sorted(visits.get(sid, {}).items())
            )
            dataset.append(
                SubjectRecord(
                    id=sid,
                    covariates=covariates.get(sid, {}),
                    visits=subject_visits,
                    observed_time=t_obs,
                    event=event,
                )
            )
    return dataset


# ---------------------------------------------------------------------------
# subject JSON (predict input) and ground truth
# ---------------------------------------------------------------------------

def subject_from_dict(doc: dict) -> tuple[dict, tuple[Visit, ...]]:
    if "covariates" not in doc:
        raise DataError("subject JSON is missing 'covariates'")
    try:
        covariates = {k: float(v) for k, v in doc["covariates"].items()}
    except (TypeError, ValueError):
        raise DataError("subject JSON: covariates must map names to numbers") from None
    visits = []
    for i, v in enumerate(doc.get("visits", [])):
        if "time" not in v:
            raise DataError(f"subject JSON: visits[{i}] is missing 'time'")
        outcomes = v.get("outcomes", {})
        visits.append(Visit(float(v["time"]), {k: (None if val is None else float(val)) for k, val in outcomes.items()}))
    return covariates, tuple(visits)


def read_subject(path) -> tuple[dict, tuple[Visit, ...]]:
    return subject_from_dict(json.loads(Path(path).read_text()))


def write_ground_truth(truths, path) -> None:
    doc = [
        {
            "id": t.id,
            "u": [float(x) for x in t.u],
            "event_time": None if t.event_time == float("inf") else float(t.event_time),
            "hazard_intercept": float(t.hazard_intercept),
            "hazard_slope": float(t.hazard_slope),
        }
        for t in truths
    ]
    Path(path).write_text(json.dumps(doc, indent=None, sort_keys=True, separators=(",", ":")) + "\n")


def prediction_payload(archive_id: str, request, result: dict) -> dict:
    """JSON-ready prediction response; shared by the CLI and the service
    so both produce numerically identical output."""
    risk = result["risk"]
    trajectory = result["trajectory"]
    payload = {
        "archive_id": archive_id,
        "seed": request.seed,
        "landmark": request.landmark,
        "risk_curve": {
            "horizons": list(risk.horizons),
            "mean": [float(x) for x in risk.mean],
            "lower": [float(x) for x in risk.lower],
            "upper": [float(x) for x in risk.upper],
        },
        "skipped_draw_fraction": risk.skipped_fraction,
        "high_skip_warning": risk.high_skip_warning,
        "trajectories": {},
        "retrodiction_horizons": list(trajectory.retrodiction_horizons),
    }
    for name, band in trajectory.outcomes.items():
        entry = {
            "horizons": list(band.horizons),
            "mean": [float(x) for x in band.mean],
            "median": [float(x) for x in band.median],
            "lower": [float(x) for x in band.lower],
            "upper": [float(x) for x in band.upper],
        }
        if band.category_probs is not None:
            entry["category_probs"] = [[float(x) for x in row] for row in band.category_probs]
            entry["category_lower"] = [[float(x) for x in row] for row in band.category_lower]
            entry["category_upper"] = [[float(x) for x in row] for row in band.category_upper]
        payload["trajectories"][name] = entry
    return payload


def read_eval_records(path):
    from .evaluation import EvalRecord

    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"id", "risk", "time", "event"}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            raise DataError(f"predictions CSV must have columns {sorted(expected)}")
        for row in reader:
            records.append(
                EvalRecord(
                    id=row["id"],
                    risk=float(row["risk"]),
                    time=float(row["time"]),
                    event=int(row["event"]),
                )
            )
    return records
