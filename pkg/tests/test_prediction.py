import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import ks_2samp

from jointrait.errors import ConfigurationError
from jointrait.inference import ChainConfig, PosteriorArchive, PriorSpec
from jointrait.model import Visit
from jointrait.params import ParameterLayout
from jointrait.prediction import (
    PredictionRequest,
    predict,
    predict_risk,
    predict_trajectory,
    sample_subject_effects,
)
from jointrait.simulate import default_spec, default_truth

from _helpers import sim_spec, true_draw


def synthetic_archive(spec, draws_list, n_train=1):
    """Archive built from explicit ParameterDraw objects (no fitting)."""
    layout = ParameterLayout(spec)
    matrix = np.vstack([layout.from_draw(d) for d in draws_list])
    return PosteriorArchive(
        spec=spec,
        draws=matrix,
        u_draws=np.zeros((matrix.shape[0], n_train, spec.design.q)),
        training_ids=[f"t{i}" for i in range(n_train)],
        diagnostics={"rhat": {}, "acceptance": {}},
        config=ChainConfig(n_iter=2, n_burnin=1),
        priors=PriorSpec(),
    )


def constant_hazard_archive(M=500, h0=0.1):
    spec = default_spec()
    draw = true_draw(
        spec,
        assoc=np.zeros(1),
        gamma=np.zeros(1),
        eta0=math.log(h0),
        eta1=0.0,
    )
    return synthetic_archive(spec, [draw] * M), spec


class TestSampleSubjectEffects:
    def test_empty_history_matches_prior(self):
        # no visits, landmark 0: the target reduces to N(0, Sigma)
        archive, spec = constant_hazard_archive(M=2000)
        passes = 0
        for seed in (1, 2, 3):
            request = PredictionRequest(
                covariates={"x1": 0.0, "x2": 50.0}, visits=(), landmark=0.0,
                horizons=(6.0,), seed=seed,
            )
            u = sample_subject_effects(request, archive)
            rng = np.random.default_rng(1000 + seed)
            direct = rng.multivariate_normal(
                np.zeros(2), archive.draw(0).Sigma, size=2000
            )
            if (
                ks_2samp(u[:, 0], direct[:, 0]).pvalue > 0.01
                and ks_2samp(u[:, 1], direct[:, 1]).pvalue > 0.01
            ):
                passes += 1
        assert passes == 3

    def test_zero_association_survival_factor_cancels(self):
        archive, spec = constant_hazard_archive(M=200)
        request = PredictionRequest(
            covariates={"x1": 1.0, "x2": 40.0},
            visits=(Visit(0.0, {"y1": 10.0, "y2": 3, "y3": 4}),),
            landmark=6.0,
            horizons=(12.0,),
            seed=11,
        )
        with_survival = sample_subject_effects(request, archive, include_survival=True)
        without = sample_subject_effects(request, archive, include_survival=False)
        np.testing.assert_array_equal(with_survival, without)

    def test_duplicated_visits_sharpen_posterior(self):
        archive, spec = constant_hazard_archive(M=600)
        single = (Visit(1.0, {"y1": 18.0, "y2": 3, "y3": 4}),)
        repeated = tuple(
            Visit(float(t), {"y1": 18.0, "y2": 3, "y3": 4}) for t in (1.0, 1.0001, 1.0002, 1.0003)
        )
        tighter = 0
        for seed in range(5):
            u1 = sample_subject_effects(
                PredictionRequest({"x1": 0.0, "x2": 50.0}, single, 6.0, (12.0,), seed=seed), archive
            )
            u4 = sample_subject_effects(
                PredictionRequest({"x1": 0.0, "x2": 50.0}, repeated, 6.0, (12.0,), seed=seed), archive
            )
            if u4[:, 0].var() < u1[:, 0].var():
                tighter += 1
        assert tighter == 5

    def test_missing_covariate_rejected(self):
        archive, spec = constant_hazard_archive(M=10)
        request = PredictionRequest(covariates={"x1": 0.0}, visits=(), landmark=0.0, horizons=(6.0,))
        with pytest.raises(ConfigurationError, match="x2"):
            sample_subject_effects(request, archive)


class TestPredictRisk:
    def test_constant_hazard_closed_form(self):
        archive, spec = constant_hazard_archive(M=200)
        request = PredictionRequest(
            covariates={"x1": 0.0, "x2": 50.0},
            visits=(Visit(3.0, {"y1": 12.0}),),
            landmark=6.0,
            horizons=(12.0,),
            seed=0,
        )
        effects = sample_subject_effects(request, archive)
        curve = predict_risk(request, archive, effects)
        assert curve.mean[0] == pytest.approx(1 - math.exp(-0.6), abs=1e-12)
        assert curve.skipped_fraction == 0.0

    def test_horizon_at_landmark_is_zero(self):
        archive, spec = constant_hazard_archive(M=50)
        request = PredictionRequest(
            covariates={"x1": 0.0, "x2": 50.0}, visits=(), landmark=6.0, horizons=(6.0, 9.0), seed=0
        )
        effects = sample_subject_effects(request, archive)
        curve = predict_risk(request, archive, effects)
        assert curve.mean[0] == 0.0
        assert curve.mean[1] > 0.0

    def test_monotone_and_bounded(self):
        spec = sim_spec(theta_knots=(2.0, 7.0))
        rng = np.random.default_rng(3)
        from _helpers import random_draw

        draws = [random_draw(rng, spec) for _ in range(150)]
        archive = synthetic_archive(spec, draws)
        request = PredictionRequest(
            covariates={"x1": 1.0, "x2": 45.0},
            visits=(Visit(0.0, {"y1": 8.0, "y2": 2, "y3": 3}),),
            landmark=3.0,
            horizons=(6.0, 9.0, 12.0, 15.0, 18.0),
            seed=5,
        )
        effects = sample_subject_effects(request, archive)
        curve = predict_risk(request, archive, effects)
        assert np.all(np.diff(curve.mean) >= -1e-15)
        assert np.all((curve.mean >= 0) & (curve.mean <= 1))
        assert np.all(curve.lower <= curve.upper + 1e-15)

    def test_matches_quadrature_per_draw(self):
        spec = sim_spec(theta_knots=(2.0, 7.0))
        rng = np.random.default_rng(9)
        from _helpers import random_draw
        from jointrait.model import SubjectEffects
        from jointrait.survival import log_hazard

        draws = [random_draw(rng, spec) for _ in range(20)]
        archive = synthetic_archive(spec, draws)
        request = PredictionRequest(
            covariates={"x1": 1.0, "x2": 45.0}, visits=(), landmark=3.0, horizons=(11.0,), seed=2
        )
        effects = sample_subject_effects(request, archive)
        curve = predict_risk(request, archive, effects)
        record = request.as_record()
        pis = []
        for m, draw in enumerate(draws):
            integrand = lambda s: math.exp(
                log_hazard(record, s, draw, SubjectEffects(effects[m]), spec)
            )
            H, _ = quad(integrand, 3.0, 11.0, points=[7.0], limit=200)
            pis.append(1 - math.exp(-H))
        assert curve.mean[0] == pytest.approx(np.mean(pis), rel=1e-9)

    def test_landmark_conditioning_under_constant_hazard(self):
        # same horizon, later landmark: analytic 1 - exp(-h0 (t' - t)); never increases
        archive, spec = constant_hazard_archive(M=100)
        values = []
        for landmark in (3.0, 6.0, 9.0):
            request = PredictionRequest(
                covariates={"x1": 0.0, "x2": 50.0}, visits=(), landmark=landmark,
                horizons=(12.0,), seed=1,
            )
            effects = sample_subject_effects(request, archive)
            curve = predict_risk(request, archive, effects)
            assert curve.mean[0] == pytest.approx(1 - math.exp(-0.1 * (12.0 - landmark)), abs=1e-12)
            values.append(curve.mean[0])
        assert values[0] > values[1] > values[2]


class TestPredictTrajectory:
    def test_degenerate_posterior_collapses_band(self):
        spec = default_spec()
        draw = true_draw(spec, sigma_eps={"y1": 1e-12}, assoc=np.zeros(1), gamma=np.zeros(1))
        archive = synthetic_archive(spec, [draw] * 300)
        request = PredictionRequest(
            covariates={"x1": 0.0, "x2": 50.0}, visits=(), landmark=0.0, horizons=(6.0,), seed=3
        )
        effects = np.tile([0.3, 0.05], (300, 1))
        band = predict_trajectory(request, archive, effects)
        y1 = band.outcomes["y1"]
        theta = -1.0 + 0.8 * 6.0 + 0.3 + 0.05 * 6.0
        expected = 15.0 + 7.0 * theta
        assert y1.mean[0] == pytest.approx(expected, abs=1e-6)
        assert y1.upper[0] - y1.lower[0] < 1e-6

    def test_ordinal_probs_sum_to_one(self):
        spec = default_spec()
        rng = np.random.default_rng(4)
        from _helpers import random_draw

        archive = synthetic_archive(spec, [random_draw(rng, spec) for _ in range(50)])
        request = PredictionRequest(
            covariates={"x1": 1.0, "x2": 60.0}, visits=(), landmark=0.0, horizons=(3.0, 9.0), seed=8
        )
        effects = sample_subject_effects(request, archive)
        band = predict_trajectory(request, archive, effects)
        for k in ("y2", "y3"):
            sums = band.outcomes[k].category_probs.sum(axis=1)
            np.testing.assert_allclose(sums, 1.0, atol=1e-12)

    def test_plugin_oracle_with_known_effects(self):
        # all draws at the truth, true u given: mean prediction within 2 MC SE
        spec = default_spec()
        truth = default_truth()
        M = 2000
        archive = synthetic_archive(spec, [truth] * M)
        u_true = np.array([0.8, -0.1])
        request = PredictionRequest(
            covariates={"x1": 1.0, "x2": 50.0}, visits=(), landmark=6.0, horizons=(9.0,), seed=21
        )
        effects = np.tile(u_true, (M, 1))
        band = predict_trajectory(request, archive, effects)
        theta = (-1.0 - 0.2) + (0.8 - 0.2) * 9.0 + u_true[0] + u_true[1] * 9.0
        target = 15.0 + 7.0 * theta
        mc_se = 5.0 / math.sqrt(M)
        assert abs(band.outcomes["y1"].mean[0] - target) < 2 * mc_se

    def test_retrodiction_flagged(self):
        archive, spec = constant_hazard_archive(M=20)
        request = PredictionRequest(
            covariates={"x1": 0.0, "x2": 50.0},
            visits=(Visit(0.0, {"y1": 10.0}), Visit(6.0, {"y1": 12.0})),
            landmark=6.0,
            horizons=(3.0, 9.0),
            seed=0,
        )
        effects = sample_subject_effects(request, archive)
        band = predict_trajectory(request, archive, effects)
        assert band.retrodiction_horizons == (3.0,)

    def test_deterministic_given_seed(self):
        archive, spec = constant_hazard_archive(M=100)
        request = PredictionRequest(
            covariates={"x1": 0.0, "x2": 50.0},
            visits=(Visit(3.0, {"y1": 14.0, "y2": 2, "y3": 3}),),
            landmark=3.0,
            horizons=(6.0, 12.0),
            seed=77,
        )
        r1 = predict(request, archive)
        r2 = predict(request, archive)
        np.testing.assert_array_equal(r1["risk"].mean, r2["risk"].mean)
        np.testing.assert_array_equal(
            r1["trajectory"].outcomes["y1"].mean, r2["trajectory"].outcomes["y1"].mean
        )
        np.testing.assert_array_equal(r1["effects"], r2["effects"])
