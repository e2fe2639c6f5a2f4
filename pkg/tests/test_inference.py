import math

import numpy as np
import pytest

from jointrait.engine import Workspace
from jointrait.errors import ConfigurationError
from jointrait.inference import (
    ChainConfig,
    PosteriorArchive,
    PriorSpec,
    _Chain,
    _prior_logpdf,
    fit,
    gelman_rubin,
    grad_log_posterior,
    log_posterior,
    log_posterior_unconstrained,
)
from jointrait.params import ParameterLayout
from jointrait.simulate import SimScenario, default_spec, generate_dataset

from _helpers import random_draw, random_subject, sim_spec, true_draw


class TestLogPosterior:
    def test_empty_dataset_is_priors_only(self):
        spec = sim_spec(theta_knots=(2.0, 5.0))
        draw = true_draw(spec, zeta=np.array([0.1, -0.2]))
        layout = ParameterLayout(spec)
        priors = PriorSpec()
        expected = sum(
            _prior_logpdf(c.prior, float(x), priors)
            for c, x in zip(layout.coords, layout.from_draw(draw))
        )
        R = 2
        for coefs, sigma in ((draw.zeta, draw.sigma_zeta), (draw.xi, draw.sigma_xi)):
            expected += -float(coefs @ coefs) / sigma**2 - R * math.log(sigma) - R / 2 * math.log(math.pi)
        got = log_posterior([], draw, np.zeros((0, 2)), priors, spec)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_zero_spline_coefficients_drop_quadratic_penalty(self):
        # on an empty dataset, the only term varying with zeta is -z'z/sigma^2
        spec = sim_spec(theta_knots=(2.0, 5.0))
        priors = PriorSpec()
        z = np.array([0.7, -0.4])
        at_z = log_posterior([], true_draw(spec, zeta=z), np.zeros((0, 2)), priors, spec)
        at_zero = log_posterior([], true_draw(spec, zeta=np.zeros(2)), np.zeros((0, 2)), priors, spec)
        assert at_z - at_zero == pytest.approx(-float(z @ z) / 1.0**2, rel=1e-12)

    def test_doubling_penalty_scale_matches_analytic_delta(self):
        spec = sim_spec(theta_knots=(2.0, 5.0))
        priors = PriorSpec()
        z = np.array([0.7, -0.4])
        s = 0.8
        lo = log_posterior([], true_draw(spec, zeta=z, sigma_zeta=s), np.zeros((0, 2)), priors, spec)
        hi = log_posterior([], true_draw(spec, zeta=z, sigma_zeta=2 * s), np.zeros((0, 2)), priors, spec)
        zz = float(z @ z)
        expected = (
            (-zz / (2 * s) ** 2 + zz / s**2)
            - 2 * math.log(2.0)  # normalization -R log sigma with R = 2
            + _prior_logpdf("invgamma", 2 * s, priors)
            - _prior_logpdf("invgamma", s, priors)
        )
        assert hi - lo == pytest.approx(expected, rel=1e-12)

    def test_out_of_support_is_minus_inf(self):
        spec = sim_spec()
        rng = np.random.default_rng(0)
        subjects = [random_subject(rng, spec, sid="a"), random_subject(rng, spec, sid="b")]
        u = np.zeros((2, 2))
        bad_b = true_draw(spec, b={"y1": 7.0, "y2": 1.0, "y3": 12.0})  # above Uniform(0,10)
        assert log_posterior(subjects, bad_b, u, PriorSpec(), spec) == -math.inf

    def test_finite_on_simulated_data(self):
        spec = default_spec()
        subjects, truths = generate_dataset(SimScenario(n_subjects=25, seed=5))
        u = np.array([t.u for t in truths])
        lp = log_posterior(subjects, true_draw(spec), u, PriorSpec(), spec)
        assert np.isfinite(lp)


class TestGradient:
    def test_quadratic_penalty_gradient(self):
        spec = sim_spec(theta_knots=(2.0, 5.0))
        z = np.array([0.7, -0.4])
        draw = true_draw(spec, zeta=z, sigma_zeta=0.9)
        grad = grad_log_posterior([], draw, np.zeros((0, 2)), PriorSpec(), spec)
        layout = ParameterLayout(spec)
        np.testing.assert_allclose(grad[layout.group("zeta")], -2 * z / 0.9**2, rtol=1e-12)

    def test_survival_free_parameters_ignore_survival_data_when_nu_zero(self):
        spec = sim_spec()
        rng = np.random.default_rng(3)
        subjects = [random_subject(rng, spec, sid=f"s{i}") for i in range(4)]
        shuffled = [
            type(s)(s.id, s.covariates, s.visits, s.observed_time + 1.5, 1 - s.event)
            for s in subjects
        ]
        draw = random_draw(rng, spec)
        draw = true_draw(spec, **{**draw.__dict__, "assoc": np.zeros(1)})
        u = rng.normal(0, 0.5, (4, 2))
        layout = ParameterLayout(spec)
        g1 = grad_log_posterior(subjects, draw, u, PriorSpec(), spec)
        g2 = grad_log_posterior(shuffled, draw, u, PriorSpec(), spec)
        for group in ("beta", "thresh:y2", "thresh:y3", "a:y1", "b:y1", "sd_u"):
            sl = layout.group(group)
            np.testing.assert_allclose(g1[sl], g2[sl], rtol=1e-10)

    def test_matches_finite_differences(self):
        priors = PriorSpec()
        seed = 0
        checked = 0
        while checked < 6:
            seed += 1
            rng = np.random.default_rng(seed)
            knots = ((), (2.0, 6.0))[seed % 2]
            spec = sim_spec(theta_knots=knots, association=("M1", "M2", "M3")[seed % 3])
            subjects = [random_subject(rng, spec, sid=f"s{i}") for i in range(5)]
            draw = random_draw(rng, spec)
            u = rng.normal(0, 0.5, (5, 2))
            ws = Workspace(subjects, spec)
            lp = log_posterior(subjects, draw, u, priors, spec, ws)
            if not abs(lp) < 1e5:
                continue
            checked += 1
            layout = ParameterLayout(spec)
            v0 = layout.to_unconstrained(layout.from_draw(draw))
            grad = grad_log_posterior(subjects, draw, u, priors, spec, ws)
            h = 1e-5
            fd = np.zeros(layout.size)
            for i in range(layout.size):
                vp, vm = v0.copy(), v0.copy()
                vp[i] += h
                vm[i] -= h
                fd[i] = (
                    log_posterior_unconstrained(subjects, vp, u, priors, spec, ws, layout)
                    - log_posterior_unconstrained(subjects, vm, u, priors, spec, ws, layout)
                ) / (2 * h)
            rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1.0)
            assert rel.max() < 1e-4, f"seed {seed}: {layout.names[int(np.argmax(rel))]}"


class TestGelmanRubin:
    def test_identical_chains(self):
        chains = np.array([[1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0]])
        assert gelman_rubin(chains) == pytest.approx(math.sqrt(0.75), abs=1e-12)

    def test_long_iid_chains_near_one(self):
        rng = np.random.default_rng(8)
        chains = rng.standard_normal((2, 100_000))
        assert 0.999 <= gelman_rubin(chains) <= 1.005

    def test_disjoint_chains_flagged(self):
        rng = np.random.default_rng(9)
        chains = np.vstack([rng.normal(0, 0.1, 500), rng.normal(50, 0.1, 500)])
        assert gelman_rubin(chains) > 1.1

    def test_zero_within_variance_reports_inf(self):
        chains = np.array([[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]])
        assert gelman_rubin(chains) == math.inf

    def test_shape_validation(self):
        with pytest.raises(ConfigurationError):
            gelman_rubin(np.array([[1.0, 2.0]]))


def _chain_for(subjects, spec, fixed, seed=0):
    ws = Workspace(subjects, spec)
    layout = ParameterLayout(spec)
    config = ChainConfig(n_iter=10, n_burnin=5, seed=seed, fixed_params=fixed)
    rng = np.random.Generator(np.random.PCG64(seed))
    return _Chain(ws, layout, PriorSpec(), config, rng), ws, layout


@pytest.mark.slow
class TestGibbsSubsteps:
    def test_intercept_conditional_moments(self):
        # repeated exact draws of a1 | rest reproduce N(sum(y - b*theta)/N, sigma^2/N)
        spec = default_spec()
        subjects, truths = generate_dataset(SimScenario(n_subjects=30, seed=11))
        fixed = {"b[y1]": 7.0, "sigma_eps[y1]": 5.0}
        chain, ws, layout = _chain_for(subjects, spec, fixed, seed=123)
        outcome = spec.outcome("y1")
        idx = layout.group("a:y1").start
        draws = np.empty(10_000)
        for m in range(draws.size):
            chain._conjugate_continuous(outcome)
            draws[m] = chain.natural[idx]
        mask = ws.masks["y1"]
        n_obs = mask.sum()
        theta = chain.theta
        target_mean = float((ws.values["y1"] - 7.0 * theta)[mask].sum()) / n_obs
        target_sd = 5.0 / math.sqrt(n_obs)
        mc_sd_of_mean = target_sd / math.sqrt(draws.size)
        assert abs(draws.mean() - target_mean) < 3 * mc_sd_of_mean
        # variance of iid normals: var estimator sd ~ sd^2 sqrt(2/m)
        assert abs(draws.var() - target_sd**2) < 3 * target_sd**2 * math.sqrt(2 / draws.size)

    def test_reduced_model_posterior_mean_matches_normal_closed_form(self):
        # continuous outcome, fixed loading/scale/theta: posterior mean of a1
        # under the flat prior is exactly mean(y - b*theta)
        spec = default_spec()
        subjects, _ = generate_dataset(SimScenario(n_subjects=40, seed=17))
        fixed = {"b[y1]": 7.0, "sigma_eps[y1]": 5.0}
        chain, ws, layout = _chain_for(subjects, spec, fixed, seed=52)
        outcome = spec.outcome("y1")
        idx = layout.group("a:y1").start
        draws = np.empty(20_000)
        for m in range(draws.size):
            chain._conjugate_continuous(outcome)
            draws[m] = chain.natural[idx]
        mask = ws.masks["y1"]
        closed_form = float((ws.values["y1"] - 7.0 * chain.theta)[mask].sum()) / mask.sum()
        mc_err = (5.0 / math.sqrt(mask.sum())) / math.sqrt(draws.size)
        assert abs(draws.mean() - closed_form) < 4 * mc_err


@pytest.mark.slow
class TestFit:
    def make_small(self, seed=1, n=30):
        subjects, _ = generate_dataset(SimScenario(n_subjects=n, seed=seed))
        return default_spec(), subjects

    def test_seeded_rerun_is_bit_identical(self):
        spec, subjects = self.make_small()
        config = ChainConfig(n_iter=120, n_burnin=60, seed=5)
        a = fit(subjects, spec, PriorSpec(), config)
        b = fit(subjects, spec, PriorSpec(), config)
        assert np.array_equal(a.draws, b.draws)
        assert np.array_equal(a.u_draws, b.u_draws)
        assert a.diagnostics["rhat"] == b.diagnostics["rhat"]

    def test_retained_draws_satisfy_invariants(self):
        spec, subjects = self.make_small(seed=2)
        archive = fit(subjects, spec, PriorSpec(), ChainConfig(n_iter=150, n_burnin=70, seed=9))
        ws = Workspace(subjects, spec)
        priors = PriorSpec()
        for m in range(0, archive.n_draws, 17):
            draw = archive.draw(m)
            draw.validate(spec)
            lp = log_posterior(subjects, draw, archive.u_draws[m], priors, spec, ws)
            assert np.isfinite(lp)

    def test_anchor_required_in_data(self):
        spec, subjects = self.make_small(seed=3)
        stripped = [
            type(s)(
                s.id,
                s.covariates,
                tuple(type(v)(v.time, {k: val for k, val in v.values.items() if k != "y2"}) for v in s.visits),
                s.observed_time,
                s.event,
            )
            for s in subjects
        ]
        with pytest.raises(ConfigurationError, match="anchor"):
            fit(stripped, spec, PriorSpec(), ChainConfig(n_iter=40, n_burnin=20, seed=1))

    def test_all_censored_warns_but_fits(self):
        spec, subjects = self.make_small(seed=4, n=12)
        censored = [type(s)(s.id, s.covariates, s.visits, s.observed_time, 0) for s in subjects]
        with pytest.warns(UserWarning, match="censored"):
            archive = fit(censored, spec, PriorSpec(), ChainConfig(n_iter=60, n_burnin=30, seed=2))
        assert archive.n_draws > 0

    def test_fixed_parameters_stay_fixed(self):
        spec, subjects = self.make_small(seed=6, n=20)
        config = ChainConfig(n_iter=80, n_burnin=40, seed=3, fixed_params={"assoc[0]": 0.0})
        archive = fit(subjects, spec, PriorSpec(), config)
        idx = archive.layout.names.index("assoc[0]")
        assert np.all(archive.draws[:, idx] == 0.0)

    def test_survival_permutation_leaves_longitudinal_posterior_unchanged(self):
        # with the association fixed at zero, survival data cannot inform
        # the longitudinal block; KS on thinned draws across 5 seeds
        spec = default_spec()
        subjects, _ = generate_dataset(SimScenario(n_subjects=40, seed=31))
        from scipy.stats import ks_2samp

        passes = 0
        for seed in range(5):
            rng = np.random.default_rng(seed)
            perm = rng.permutation(len(subjects))
            permuted = []
            for s, j in zip(subjects, perm):
                other = subjects[j]
                t_new = max(other.observed_time, s.visits[-1].time if s.visits else 0.01)
                permuted.append(type(s)(s.id, s.covariates, s.visits, t_new, other.event))
            config = ChainConfig(n_iter=700, n_burnin=350, seed=100 + seed, fixed_params={"assoc[0]": 0.0})
            base = fit(subjects, spec, PriorSpec(), config)
            alt = fit(permuted, spec, PriorSpec(), config)
            idx = base.layout.names.index("beta[2]")
            x = base.draws[::20, idx]
            y = alt.draws[::20, idx]
            if ks_2samp(x, y).pvalue > 0.01:
                passes += 1
        assert passes >= 4
