import json

import pytest
from fastapi.testclient import TestClient

from jointrait.archive import ArchiveStore, save_archive
from jointrait.inference import ChainConfig, PriorSpec, fit
from jointrait.service import create_app
from jointrait.simulate import SimScenario, default_spec, generate_dataset


@pytest.fixture(scope="module")
def store(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("store")
    dataset, _ = generate_dataset(SimScenario(n_subjects=25, seed=8))
    archive = fit(dataset, default_spec(), PriorSpec(), ChainConfig(n_iter=80, n_burnin=40, seed=4))
    save_archive(archive, tmp / "pd-m1.jma")
    return ArchiveStore(tmp)


@pytest.fixture(scope="module")
def client(store):
    return TestClient(create_app(store))


def good_body(**overrides):
    body = {
        "covariates": {"x1": 1, "x2": 55},
        "visits": [
            {"time": 0, "outcomes": {"y1": 14.0, "y2": 2, "y3": 3}},
            {"time": 3, "outcomes": {"y1": 19.0, "y2": 3, "y3": 4}},
        ],
        "landmark": 6,
        "horizons": [9, 12, 15],
        "seed": 3,
    }
    body.update(overrides)
    return body


class TestModels:
    def test_list_models(self, client):
        response = client.get("/models")
        assert response.status_code == 200
        models = response.json()["models"]
        assert [m["id"] for m in models] == ["pd-m1"]
        assert models[0]["n_draws"] == 80
        assert models[0]["spec_hash"]

    def test_model_detail(self, client):
        response = client.get("/models/pd-m1")
        assert response.status_code == 200
        doc = response.json()
        assert doc["spec"]["association"] == "M1"
        assert "rhat" in doc["diagnostics"]

    def test_unknown_model_404(self, client):
        assert client.get("/models/nope").status_code == 404
        assert client.post("/models/nope/predict", json=good_body()).status_code == 404


class TestPredict:
    def test_successful_prediction(self, client):
        response = client.post("/models/pd-m1/predict", json=good_body())
        assert response.status_code == 200
        doc = response.json()
        assert doc["archive_id"] == "pd-m1"
        assert doc["seed"] == 3
        curve = doc["risk_curve"]
        assert curve["horizons"] == [9.0, 12.0, 15.0]
        assert all(0.0 <= p <= 1.0 for p in curve["mean"])
        assert all(a <= b for a, b in zip(curve["mean"], curve["mean"][1:]))
        assert "y1" in doc["trajectories"]
        assert "category_probs" in doc["trajectories"]["y2"]
        assert doc["skipped_draw_fraction"] == 0.0

    def test_visit_after_landmark_names_the_visit(self, client):
        body = good_body(visits=[{"time": 9, "outcomes": {"y1": 10.0}}], landmark=6)
        response = client.post("/models/pd-m1/predict", json=body)
        assert response.status_code == 422
        errors = response.json()["errors"]
        assert any("visits[0].time" == e["field"] for e in errors)

    def test_ordinal_out_of_range_flagged(self, client):
        body = good_body(visits=[{"time": 0, "outcomes": {"y2": 9}}])
        response = client.post("/models/pd-m1/predict", json=body)
        assert response.status_code == 422
        assert any(e["field"] == "visits[0].outcomes.y2" for e in response.json()["errors"])

    def test_missing_covariate_flagged(self, client):
        body = good_body(covariates={"x1": 1})
        response = client.post("/models/pd-m1/predict", json=body)
        assert response.status_code == 422
        assert any(e["field"] == "covariates.x2" for e in response.json()["errors"])

    def test_unsorted_horizons_flagged(self, client):
        response = client.post("/models/pd-m1/predict", json=good_body(horizons=[12, 9]))
        assert response.status_code == 422

    def test_identical_body_identical_bytes(self, client):
        r1 = client.post("/models/pd-m1/predict", json=good_body())
        r2 = client.post("/models/pd-m1/predict", json=good_body())
        assert r1.content == r2.content

    def test_matches_cli_predict_numbers(self, client, store, tmp_path):
        from jointrait.cli import main as cli_main

        subject = tmp_path / "subj.json"
        body = good_body()
        subject.write_text(json.dumps({"covariates": body["covariates"], "visits": body["visits"]}))
        out = tmp_path / "pred.json"
        code = cli_main([
            "predict", "--model", str(store.path("pd-m1")), "--subject", str(subject),
            "--landmark", "6", "--horizons", "9,12,15", "--seed", "3", "--out", str(out),
        ])
        assert code == 0
        cli_payload = json.loads(out.read_text())
        service_payload = client.post("/models/pd-m1/predict", json=body).json()
        assert cli_payload["risk_curve"] == service_payload["risk_curve"]
        assert cli_payload["trajectories"] == service_payload["trajectories"]

    def test_empty_visit_list_allowed(self, client):
        response = client.post("/models/pd-m1/predict", json=good_body(visits=[]))
        assert response.status_code == 200
        doc = response.json()
        # prior-based prediction: wide but valid bands
        assert all(0.0 <= p <= 1.0 for p in doc["risk_curve"]["mean"])


class TestUnavailableArchive:
    def test_corrupt_archive_returns_503(self, tmp_path):
        (tmp_path / "broken.jma").write_bytes(b"JMA1" + b"\x00\x00\x00\x02{}")
        client = TestClient(create_app(ArchiveStore(tmp_path)))
        response = client.get("/models/broken")
        assert response.status_code == 503
        response = client.post("/models/broken/predict", json=good_body())
        assert response.status_code == 503


class TestStaticUi:
    def test_ui_mount_serves_index(self, store, tmp_path):
        ui = tmp_path / "dist"
        ui.mkdir()
        (ui / "index.html").write_text("<!doctype html><title>calculator</title>")
        ui_client = TestClient(create_app(store, ui_dir=str(ui)))
        response = ui_client.get("/")
        assert response.status_code == 200
        assert "calculator" in response.text
        # API routes still win over the static mount
        assert ui_client.get("/models").status_code == 200
