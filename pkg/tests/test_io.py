import json
import subprocess
import sys

import numpy as np
import pytest

from jointrait.archive import ArchiveStore, load_archive, save_archive, spec_hash
from jointrait.cli import main as cli_main
from jointrait.data_io import (
    read_dataset,
    read_eval_records,
    read_spec,
    read_subject,
    spec_from_dict,
    spec_to_dict,
    write_dataset,
    write_spec,
)
from jointrait.errors import DataError
from jointrait.inference import ChainConfig, PriorSpec, fit
from jointrait.simulate import SimScenario, default_spec, generate_dataset


@pytest.fixture(scope="module")
def small_archive():
    dataset, _ = generate_dataset(SimScenario(n_subjects=25, seed=8))
    return fit(dataset, default_spec(), PriorSpec(), ChainConfig(n_iter=80, n_burnin=40, seed=4))


class TestSpecJson:
    def test_round_trip(self, tmp_path):
        spec = default_spec()
        write_spec(spec, tmp_path / "spec.json")
        loaded = read_spec(tmp_path / "spec.json")
        assert spec_to_dict(loaded) == spec_to_dict(spec)
        assert spec_hash(loaded) == spec_hash(spec)

    def test_missing_field_named(self):
        with pytest.raises(DataError, match="outcomes"):
            spec_from_dict({"fixed_effects": ["1"]})


class TestDatasetCsv:
    def test_round_trip(self, tmp_path):
        dataset, _ = generate_dataset(SimScenario(n_subjects=30, seed=5))
        write_dataset(dataset, tmp_path)
        loaded = read_dataset(tmp_path)
        assert [s.id for s in loaded] == [s.id for s in dataset]
        for a, b in zip(loaded, dataset):
            assert a.observed_time == b.observed_time
            assert a.event == b.event
            assert a.covariates == b.covariates
            assert len(a.visits) == len(b.visits)
            for va, vb in zip(a.visits, b.visits):
                assert va.time == vb.time
                assert va.values == vb.values

    def test_missing_file_named(self, tmp_path):
        with pytest.raises(DataError, match="longitudinal.csv"):
            read_dataset(tmp_path)

    def test_bad_value_names_subject(self, tmp_path):
        (tmp_path / "longitudinal.csv").write_text("id,time,outcome,value\ns1,0,y1,oops\n")
        (tmp_path / "survival.csv").write_text("id,time,event\ns1,5,1\n")
        (tmp_path / "covariates.csv").write_text("id,x1\ns1,0\n")
        with pytest.raises(DataError, match="s1"):
            read_dataset(tmp_path)


class TestArchive:
    def test_round_trip_bit_exact(self, small_archive, tmp_path):
        path = tmp_path / "model.jma"
        save_archive(small_archive, path)
        loaded = load_archive(path)
        assert np.array_equal(loaded.draws, small_archive.draws)
        assert np.array_equal(loaded.u_draws, small_archive.u_draws)
        assert loaded.training_ids == small_archive.training_ids
        assert spec_to_dict(loaded.spec) == spec_to_dict(small_archive.spec)
        assert loaded.config.seed == small_archive.config.seed

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.jma"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(DataError, match="magic"):
            load_archive(path)

    def test_store_manifest(self, small_archive, tmp_path):
        save_archive(small_archive, tmp_path / "m1.jma")
        store = ArchiveStore(tmp_path)
        assert store.ids() == ["m1"]
        manifest = store.manifest("m1")
        assert manifest.id == "m1"
        assert manifest.n_draws == small_archive.n_draws
        assert manifest.spec_hash == spec_hash(small_archive.spec)
        assert store.load("m1").n_draws == small_archive.n_draws


class TestCli:
    def run(self, *argv):
        return cli_main(list(argv))

    def test_simulate_writes_artifacts(self, tmp_path):
        out = tmp_path / "data"
        assert self.run("simulate", "--n", "20", "--seed", "7", "--out", str(out)) == 0
        for name in ("longitudinal.csv", "survival.csv", "covariates.csv", "ground_truth.json", "model_spec.json"):
            assert (out / name).exists()

    def test_simulate_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        self.run("simulate", "--n", "15", "--seed", "3", "--out", str(a))
        self.run("simulate", "--n", "15", "--seed", "3", "--out", str(b))
        for name in ("longitudinal.csv", "survival.csv", "covariates.csv", "ground_truth.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_fit_predict_evaluate_pipeline(self, tmp_path, capsys):
        data = tmp_path / "data"
        self.run("simulate", "--n", "25", "--seed", "2", "--out", str(data))
        model = tmp_path / "model.jma"
        code = self.run(
            "fit", "--data", str(data), "--spec", str(data / "model_spec.json"),
            "--chains", "2", "--iter", "60", "--burnin", "30", "--seed", "1",
            "--out", str(model),
        )
        assert code == 0 and model.exists()

        subject = tmp_path / "subj.json"
        subject.write_text(json.dumps({
            "covariates": {"x1": 1, "x2": 55},
            "visits": [
                {"time": 0, "outcomes": {"y1": 14.0, "y2": 2, "y3": 3}},
                {"time": 3, "outcomes": {"y1": 19.0, "y2": 3, "y3": 4}},
            ],
        }))
        out_json = tmp_path / "pred.json"
        code = self.run(
            "predict", "--model", str(model), "--subject", str(subject),
            "--landmark", "6", "--horizons", "9,12,15,18", "--seed", "5",
            "--out", str(out_json),
        )
        assert code == 0
        payload = json.loads(out_json.read_text())
        assert payload["risk_curve"]["horizons"] == [9.0, 12.0, 15.0, 18.0]
        assert all(0 <= p <= 1 for p in payload["risk_curve"]["mean"])
        assert payload["seed"] == 5

        preds = tmp_path / "preds.csv"
        rows = ["id,risk,time,event"]
        rng = np.random.default_rng(0)
        for i in range(40):
            rows.append(f"p{i},{rng.uniform():.4f},{rng.uniform(1.5, 20):.3f},{rng.integers(0, 2)}")
        preds.write_text("\n".join(rows) + "\n")
        code = self.run(
            "evaluate", "--predictions", str(preds), "--landmark", "1",
            "--horizon", "10", "--out", str(tmp_path / "eval.json"),
        )
        assert code == 0
        result = json.loads((tmp_path / "eval.json").read_text())
        assert 0 <= result["auc"] <= 1
        assert result["bs"] >= 0
        assert len(result["roc_points"]) == 201

    def test_predict_deterministic_bytes(self, tmp_path):
        data = tmp_path / "data"
        self.run("simulate", "--n", "20", "--seed", "2", "--out", str(data))
        model = tmp_path / "model.jma"
        self.run("fit", "--data", str(data), "--spec", str(data / "model_spec.json"),
                 "--iter", "50", "--burnin", "25", "--seed", "1", "--out", str(model))
        subject = tmp_path / "subj.json"
        subject.write_text(json.dumps({"covariates": {"x1": 0, "x2": 45}, "visits": []}))
        outs = []
        for name in ("p1.json", "p2.json"):
            self.run("predict", "--model", str(model), "--subject", str(subject),
                     "--landmark", "3", "--horizons", "6,9", "--seed", "11",
                     "--out", str(tmp_path / name))
            outs.append((tmp_path / name).read_bytes())
        assert outs[0] == outs[1]

    def test_fit_deterministic_bytes(self, tmp_path):
        data = tmp_path / "data"
        self.run("simulate", "--n", "15", "--seed", "4", "--out", str(data))
        models = []
        for name in ("m1.jma", "m2.jma"):
            self.run("fit", "--data", str(data), "--spec", str(data / "model_spec.json"),
                     "--iter", "40", "--burnin", "20", "--seed", "9", "--out", str(tmp_path / name))
            models.append((tmp_path / name).read_bytes())
        assert models[0] == models[1]

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            cli_main(["simulate", "--definitely-not-a-flag"])
        assert exc.value.code == 2

    def test_data_error_exits_1(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text("{}")
        code = self.run("fit", "--data", str(tmp_path), "--spec", str(spec),
                        "--iter", "10", "--burnin", "5", "--out", str(tmp_path / "m.jma"))
        assert code == 1

    def test_entry_point_runs(self):
        proc = subprocess.run(
            [sys.executable, "-m", "jointrait.cli", "--help"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "simulate" in proc.stdout
