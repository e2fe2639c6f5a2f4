"""Read-only HTTP prediction service over an archive store.

Endpoints:
  GET  /models                     archive manifests
  GET  /models/{id}                model spec + diagnostics
  POST /models/{id}/predict        dynamic prediction for one subject

Request body for predict::

    {"covariates": {"x1": 1, "x2": 55},
     "visits": [{"time": 0, "outcomes": {"y1": 20, "y2": 2, "y3": 3}}],
     "landmark": 6, "horizons": [9, 12], "seed": 0}

Validation mirrors the subject-record invariants and returns 422 with
field-level messages.  Responses are serialized with sorted keys so an
identical body and seed produce identical bytes.  Fitting never happens
here; archives are immutable and shared across requests.
"""

from __future__ import annotations

import json

from fastapi import FastAPI, Request, Response

from .archive import ArchiveStore
from .data_io import prediction_payload, spec_to_dict, subject_from_dict
from .errors import DataError, JointraitError
from .prediction import PredictionRequest, predict


def _json_response(payload, status_code=200) -> Response:
    return Response(
        content=json.dumps(payload, sort_keys=True, allow_nan=False) + "\n",
        status_code=status_code,
        media_type="application/json",
    )


def _error(status, message, errors=None) -> Response:
    payload = {"message": message}
    if errors:
        payload["errors"] = errors
    return _json_response(payload, status_code=status)


def _validate_predict_body(body: dict, spec) -> tuple[list[dict], PredictionRequest | None]:
    errors = []
    if not isinstance(body, dict):
        return [{"field": "", "message": "body must be a JSON object"}], None
    covariates = body.get("covariates")
    if not isinstance(covariates, dict):
        errors.append({"field": "covariates", "message": "must be an object of numeric values"})
        covariates = {}
    landmark = body.get("landmark")
    if not isinstance(landmark, (int, float)) or landmark < 0:
        errors.append({"field": "landmark", "message": "must be a number >= 0"})
        landmark = 0.0
    horizons = body.get("horizons")
    if not isinstance(horizons, list) or not horizons or not all(isinstance(h, (int, float)) for h in horizons):
        errors.append({"field": "horizons", "message": "must be a non-empty list of numbers"})
        horizons = [landmark + 1.0]
    elif any(b <= a for a, b in zip(horizons, horizons[1:])):
        errors.append({"field": "horizons", "message": "must be strictly increasing"})
    seed = body.get("seed", 0)
    if not isinstance(seed, int):
        errors.append({"field": "seed", "message": "must be an integer"})
        seed = 0
    m_use = body.get("m_use")
    if m_use is not None and (not isinstance(m_use, int) or m_use < 1):
        errors.append({"field": "m_use", "message": "must be a positive integer"})
        m_use = None

    visits_doc = body.get("visits", [])
    if not isinstance(visits_doc, list):
        errors.append({"field": "visits", "message": "must be a list"})
        visits_doc = []
    outcome_by_name = {o.name: o for o in spec.outcomes}
    previous_time = None
    for i, visit in enumerate(visits_doc):
        if not isinstance(visit, dict) or not isinstance(visit.get("time"), (int, float)):
            errors.append({"field": f"visits[{i}].time", "message": "each visit needs a numeric time"})
            continue
        t = float(visit["time"])
        if t < 0:
            errors.append({"field": f"visits[{i}].time", "message": "visit time must be >= 0"})
        if previous_time is not None and t <= previous_time:
            errors.append({"field": f"visits[{i}].time", "message": "visit times must be strictly increasing"})
        previous_time = t
        if t > landmark:
            errors.append(
                {"field": f"visits[{i}].time", "message": f"visit at t={t} is after the landmark {landmark}"}
            )
        for name, value in (visit.get("outcomes") or {}).items():
            if value is None:
                continue
            outcome = outcome_by_name.get(name)
            if outcome is None:
                errors.append({"field": f"visits[{i}].outcomes.{name}", "message": "unknown outcome"})
            elif outcome.kind == "ordinal" and not (
                isinstance(value, (int, float)) and float(value).is_integer() and 1 <= value <= outcome.n_categories
            ):
                errors.append(
                    {
                        "field": f"visits[{i}].outcomes.{name}",
                        "message": f"ordinal value must be an integer in 1..{outcome.n_categories}",
                    }
                )
            elif outcome.kind == "binary" and value not in (0, 1):
                errors.append({"field": f"visits[{i}].outcomes.{name}", "message": "binary value must be 0 or 1"})
            elif not isinstance(value, (int, float)):
                errors.append({"field": f"visits[{i}].outcomes.{name}", "message": "value must be numeric"})

    needed = {t.covariate for t in (*spec.design.fixed_terms, *spec.design.random_terms) if t.covariate}
    needed.update(spec.survival_covariates)
    for name in sorted(needed):
        value = covariates.get(name)
        if value is None or not isinstance(value, (int, float)):
            errors.append({"field": f"covariates.{name}", "message": "required by the model"})
    if errors:
        return errors, None

    try:
        _, visits = subject_from_dict({"covariates": covariates, "visits": visits_doc})
        request = PredictionRequest(
            covariates={k: float(v) for k, v in covariates.items()},
            visits=visits,
            landmark=float(landmark),
            horizons=tuple(float(h) for h in horizons),
            m_use=m_use,
            seed=seed,
        )
    except (DataError, JointraitError) as err:
        return [{"field": "", "message": str(err)}], None
    return [], request


def create_app(store: ArchiveStore, ui_dir=None) -> FastAPI:
    app = FastAPI(title="jointrait prediction service", docs_url=None, redoc_url=None)

    @app.get("/models")
    def list_models():
        manifests = []
        for archive_id in store.ids():
            try:
                manifests.append(store.manifest(archive_id).to_dict())
            except JointraitError:
                continue  # unreadable archive: absent from the listing
        return _json_response({"models": manifests})

    @app.get("/models/{archive_id}")
    def model_detail(archive_id: str):
        try:
            manifest = store.manifest(archive_id)
            archive = store.load(archive_id)
        except KeyError:
            return _error(404, f"unknown model '{archive_id}'")
        except JointraitError as err:
            return _error(503, f"archive '{archive_id}' failed to load: {err}")
        return _json_response(
            {
                "manifest": manifest.to_dict(),
                "spec": spec_to_dict(archive.spec),
                "diagnostics": archive.diagnostics,
                "n_draws": archive.n_draws,
            }
        )

    @app.post("/models/{archive_id}/predict")
    async def model_predict(archive_id: str, request: Request):
        try:
            archive = store.load(archive_id)
        except KeyError:
            return _error(404, f"unknown model '{archive_id}'")
        except JointraitError as err:
            return _error(503, f"archive '{archive_id}' failed to load: {err}")
        try:
            body = await request.json()
        except Exception:
            return _error(422, "request body is not valid JSON")
        errors, prediction_request = _validate_predict_body(body, archive.spec)
        if errors:
            return _error(422, "invalid prediction request", errors)
        try:
            result = predict(prediction_request, archive)
        except JointraitError as err:
            return _error(422, str(err))
        return _json_response(prediction_payload(archive_id, prediction_request, result))

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
