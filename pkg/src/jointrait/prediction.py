"""Dynamic subject-level prediction from a fitted archive.

For each retained posterior draw m, a short random-walk Metropolis chain
targets the new subject's random-effect posterior
p(y_hist | u) * P(T > t | u) * N(u; 0, Sigma^(m)), started at zero with
proposal covariance (2.38^2/q) * Sigma^(m); the final state is kept.
Trajectories and conditional risks then plug each (draw, u) pair in, and
summaries are empirical percentiles across draws.  All computations are
vectorized across the M draws; results are deterministic given
(archive, request, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigurationError, DataError
from .inference import PosteriorArchive
from .model import ModelSpec, SubjectRecord, Visit

_EXP_OVERFLOW = 700.0
_FLAT_SLOPE = 1e-8
DEFAULT_MH_ITERATIONS = 50


@dataclass(frozen=True)
class PredictionRequest:
    """A new subject's history up to the landmark plus query horizons."""

    covariates: Mapping[str, float]
    visits: tuple[Visit, ...]
    landmark: float
    horizons: tuple[float, ...]
    m_use: int | None = None
    seed: int = 0
    mh_iterations: int = DEFAULT_MH_ITERATIONS

    def __post_init__(self):
        if self.landmark < 0:
            raise DataError("landmark must be >= 0")
        times = [v.time for v in self.visits]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DataError("visit times must be strictly increasing")
        if times and times[-1] > self.landmark:
            raise DataError(
                f"visit at t={times[-1]} is after the landmark {self.landmark}"
            )
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise DataError("horizons must be strictly increasing")
        if self.m_use is not None and self.m_use < 1:
            raise DataError("m_use must be a positive draw count")
        if self.mh_iterations < 1:
            raise DataError("mh_iterations must be >= 1")

    def as_record(self, record_id: str = "query") -> SubjectRecord:
        """View the history as a censored record observed at the landmark."""
        return SubjectRecord(
            id=record_id,
            covariates=self.covariates,
            visits=self.visits,
            observed_time=max(self.landmark, 1e-9),
            event=0,
        )


@dataclass(frozen=True)
class RiskCurve:
    horizons: tuple[float, ...]
    mean: np.ndarray
    lower: np.ndarray  # 2.5th percentile across draws
    upper: np.ndarray  # 97.5th percentile
    skipped_fraction: float
    high_skip_warning: bool


@dataclass(frozen=True)
class OutcomeBand:
    horizons: tuple[float, ...]
    mean: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    category_probs: np.ndarray | None = None  # (n_horizons, n_categories) means
    category_lower: np.ndarray | None = None
    category_upper: np.ndarray | None = None


@dataclass(frozen=True)
class TrajectoryBand:
    outcomes: Mapping[str, OutcomeBand]
    retrodiction_horizons: tuple[float, ...] = field(default_factory=tuple)


class _DrawArrays:
    """Columns of the archive draw matrix, unpacked for vectorized math."""

    def __init__(self, archive: PosteriorArchive, m_use: int | None):
        layout = archive.layout
        matrix = archive.draws if m_use is None else archive.draws[:m_use]
        if matrix.shape[0] == 0:
            raise ConfigurationError("archive holds no draws")
        self.M = matrix.shape[0]
        self.layout = layout
        spec = archive.spec
        self.spec = spec

        def col(group):
            return matrix[:, layout.group(group)] if layout.has_group(group) else np.zeros((self.M, 0))

        self.beta = col("beta")
        self.zeta = col("zeta")
        self.gamma = col("gamma")
        self.assoc = col("assoc")
        self.eta0 = col("eta0")[:, 0]
        self.eta1 = col("eta1")[:, 0]
        self.xi = col("xi")
        self.sd_u = col("sd_u")
        self.corr_u = col("corr_u")
        self.a = {}
        self.b = {}
        self.sigma_eps = {}
        for outcome in spec.outcomes:
            k = outcome.name
            if outcome.kind == "ordinal":
                self.a[k] = layout.thresholds_matrix(matrix, k)
            else:
                self.a[k] = col(f"a:{k}")
            self.b[k] = layout.loading_matrix(matrix, k)
            if outcome.kind == "continuous":
                self.sigma_eps[k] = col(f"sigma_eps:{k}")[:, 0]

    def Sigma_stack(self) -> np.ndarray:
        """(M, q, q) covariance matrices."""
        q = self.sd_u.shape[1]
        corr = np.broadcast_to(np.eye(q), (self.M, q, q)).copy()
        idx = 0
        for i in range(q):
            for j in range(i + 1, q):
                corr[:, i, j] = corr[:, j, i] = self.corr_u[:, idx]
                idx += 1
        return corr * self.sd_u[:, :, None] * self.sd_u[:, None, :]


def _term_values(spec: ModelSpec, covariates, times: np.ndarray):
    """Design matrices at the given times for one subject."""
    design = spec.design
    X = np.column_stack(
        [term.constant(covariates) + term.slope(covariates) * times for term in design.fixed_terms]
    ) if len(times) else np.zeros((0, design.p))
    Z = np.column_stack(
        [term.constant(covariates) + term.slope(covariates) * times for term in design.random_terms]
    ) if len(times) else np.zeros((0, design.q))
    knots = np.asarray(design.theta_knots)
    V = np.maximum(times[:, None] - knots[None, :], 0.0) if knots.size else np.zeros((len(times), 0))
    return X, Z, V


def _check_covariates(spec: ModelSpec, covariates):
    needed = set(spec.survival_covariates)
    for term in (*spec.design.fixed_terms, *spec.design.random_terms):
        if term.covariate is not None:
            needed.add(term.covariate)
    missing = sorted(n for n in needed if n not in covariates)
    if missing:
        raise ConfigurationError(f"request is missing covariates required by the model: {missing}")


def _ordinal_logmass_draws(codes, theta, a_k, b_k):
    """log P(y_j = code_j) per (visit j, draw m); theta is (J, M)."""
    n_thresh = a_k.shape[1]
    up_idx = np.minimum(codes - 1, n_thresh - 1)
    lo_idx = np.maximum(codes - 2, 0)
    up = a_k[:, up_idx].T - b_k[None, :] * theta  # (J, M)
    lo = a_k[:, lo_idx].T - b_k[None, :] * theta
    has_up = (codes <= n_thresh)[:, None]
    has_lo = (codes >= 2)[:, None]
    softplus_neg_up = np.logaddexp(0.0, -up)
    softplus_lo = np.logaddexp(0.0, lo)
    gap = np.where(has_up & has_lo, up - lo, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_gap = np.log(-np.expm1(-gap))
    log_p = np.where(
        has_lo,
        np.where(has_up, log_gap - softplus_neg_up - softplus_lo, -softplus_lo),
        -softplus_neg_up,
    )
    return np.maximum(log_p, math.log(1e-300))


class _SubjectEngine:
    """Vectorized likelihood pieces for one subject across all draws."""

    def __init__(self, spec: ModelSpec, draws: _DrawArrays, covariates, visits):
        self.spec = spec
        self.draws = draws
        self.covariates = covariates
        times = np.array([v.time for v in visits])
        self.X, self.Z, self.V = _term_values(spec, covariates, times)
        self.values = {}
        self.masks = {}
        for outcome in spec.outcomes:
            y = np.array([
                np.nan if v.values.get(outcome.name) is None else float(v.values[outcome.name])
                for v in visits
            ])
            self.masks[outcome.name] = ~np.isnan(y)
            self.values[outcome.name] = np.where(np.isnan(y), 0.0, y)
        self.theta_base = self.X @ draws.beta.T + (
            self.V @ draws.zeta.T if draws.zeta.shape[1] else 0.0
        )  # (J, M), u part added separately
        self.W_dot = (
            sum(draws.gamma[:, j] * covariates[w] for j, w in enumerate(spec.survival_covariates))
            if spec.survival_covariates
            else np.zeros(draws.M)
        )
        # theta(s) = c + d*s decomposition per draw (u added at call time)
        design = spec.design
        self.cx = np.array([t.constant(covariates) for t in design.fixed_terms])
        self.dx = np.array([t.slope(covariates) for t in design.fixed_terms])
        self.cz = np.array([t.constant(covariates) for t in design.random_terms])
        self.dz = np.array([t.slope(covariates) for t in design.random_terms])

    def longitudinal(self, u: np.ndarray) -> np.ndarray:
        """Sum of visit log-densities per draw; u is (M, q)."""
        if self.X.shape[0] == 0:
            return np.zeros(self.draws.M)
        theta = self.theta_base + self.Z @ u.T  # (J, M)
        total = np.zeros(self.draws.M)
        for outcome in self.spec.outcomes:
            k = outcome.name
            mask = self.masks[k]
            if not mask.any():
                continue
            y = self.values[k][mask][:, None]
            th = theta[mask]
            if outcome.kind == "continuous":
                sd = self.draws.sigma_eps[k][None, :]
                r = (y - self.draws.a[k][:, 0][None, :] - self.draws.b[k][None, :] * th) / sd
                total += (-0.5 * r * r - np.log(sd) - 0.5 * math.log(2 * math.pi)).sum(axis=0)
            elif outcome.kind == "binary":
                s = self.draws.a[k][:, 0][None, :] + self.draws.b[k][None, :] * th
                total += np.where(y == 1.0, -np.logaddexp(0.0, -s), -np.logaddexp(0.0, s)).sum(axis=0)
            else:
                codes = self.values[k][mask].astype(int)
                total += _ordinal_logmass_draws(codes, th, self.draws.a[k], self.draws.b[k]).sum(axis=0)
        return total

    def theta_linear(self, u, active_theta):
        """(c, d) of theta(s) = c + d*s per draw for a hinge activation row."""
        d_arr = self.draws
        c = d_arr.beta @ self.cx + u @ self.cz
        d = d_arr.beta @ self.dx + u @ self.dz
        if d_arr.zeta.shape[1]:
            knots = np.asarray(self.spec.design.theta_knots)
            c = c - (d_arr.zeta * (active_theta * knots)[None, :]).sum(axis=1)
            d = d + (d_arr.zeta * active_theta[None, :]).sum(axis=1)
        return c, d

    def hazard_AB(self, u, lo):
        """(A, B) of log hazard on the segment starting at lo, per draw."""
        spec = self.spec
        d_arr = self.draws
        theta_knots = np.asarray(spec.design.theta_knots)
        hazard_knots = np.asarray(spec.design.effective_hazard_knots)
        act_t = (lo >= theta_knots).astype(float) if theta_knots.size else np.zeros(0)
        act_h = (lo >= hazard_knots).astype(float) if hazard_knots.size else np.zeros(0)
        A = d_arr.eta0 + self.W_dot
        B = d_arr.eta1.copy()
        if d_arr.xi.shape[1]:
            A = A - (d_arr.xi * (act_h * hazard_knots)[None, :]).sum(axis=1)
            B = B + (d_arr.xi * act_h[None, :]).sum(axis=1)
        if spec.association == "M3":
            A = A + (d_arr.assoc * u).sum(axis=1)
        else:
            c, d = self.theta_linear(u, act_t)
            if spec.association == "M1":
                A = A + d_arr.assoc[:, 0] * c
                B = B + d_arr.assoc[:, 0] * d
            else:
                A = A + d_arr.assoc[:, 0] * c + d_arr.assoc[:, 1] * d
                B = B + d_arr.assoc[:, 0] * d
        return A, B

    def cumulative_hazard(self, u, start, stop):
        """H(start -> stop) per draw; +inf rows mark exp() overflow."""
        if stop <= start:
            return np.zeros(self.draws.M)
        knots = sorted(
            {
                *(k for k in self.spec.design.theta_knots if start < k < stop),
                *(k for k in self.spec.design.effective_hazard_knots if start < k < stop),
            }
        )
        breaks = [start, *knots, stop]
        H = np.zeros(self.draws.M)
        for lo, hi in zip(breaks, breaks[1:]):
            A, B = self.hazard_AB(u, lo)
            top = A + B * np.where(B > 0, hi, lo)
            bad = top > _EXP_OVERFLOW
            A_safe = np.where(bad, 0.0, A)
            B_safe = np.where(bad, 0.0, B)
            flat = np.abs(B_safe) < _FLAT_SLOPE
            B_div = np.where(flat, 1.0, B_safe)
            piece = np.where(
                flat,
                np.exp(A_safe + B_safe * 0.5 * (lo + hi)) * (hi - lo),
                (np.exp(A_safe + B_safe * hi) - np.exp(A_safe + B_safe * lo)) / B_div,
            )
            H = H + np.where(bad, np.inf, piece)
        return H

    def theta_at(self, u, times):
        """theta per (time, draw): (len(times), M)."""
        X, Z, V = _term_values(self.spec, self.covariates, np.asarray(times, dtype=float))
        theta = X @ self.draws.beta.T + Z @ u.T
        if self.draws.zeta.shape[1]:
            theta = theta + V @ self.draws.zeta.T
        return theta


def sample_subject_effects(
    request: PredictionRequest,
    archive: PosteriorArchive,
    include_survival: bool = True,
) -> np.ndarray:
    """One retained u per archive draw, shape (M, q).

    ``include_survival=False`` drops the P(T > t | u) factor (used by
    tests that verify the factor cancels when the association is zero).
    """
    spec = archive.spec
    _check_covariates(spec, request.covariates)
    draws = _DrawArrays(archive, request.m_use)
    engine = _SubjectEngine(spec, draws, request.covariates, request.visits)
    q = spec.design.q
    rng = np.random.default_rng(request.seed)

    Sigma = draws.Sigma_stack()
    chol = np.linalg.cholesky(Sigma)  # (M, q, q)
    prec = np.linalg.inv(Sigma)
    step_scale = 2.38 / math.sqrt(q)

    def log_target(u):
        quad = np.einsum("mi,mij,mj->m", u, prec, u)
        total = engine.longitudinal(u) - 0.5 * quad
        if include_survival and request.landmark > 0:
            H = engine.cumulative_hazard(u, 0.0, request.landmark)
            total = total - np.where(np.isfinite(H), H, np.inf)
        return total

    u = np.zeros((draws.M, q))
    current = log_target(u)
    for _ in range(request.mh_iterations):
        z = rng.standard_normal((draws.M, q))
        prop = u + step_scale * np.einsum("mij,mj->mi", chol, z)
        cand = log_target(prop)
        accept = np.log(rng.uniform(size=draws.M)) < cand - current
        u[accept] = prop[accept]
        current = np.where(accept, cand, current)
    return u


def predict_risk(
    request: PredictionRequest,
    archive: PosteriorArchive,
    effects: np.ndarray,
) -> RiskCurve:
    """Conditional event probabilities pi(horizon | landmark) with bands.

    Horizons at or before the landmark yield exactly zero (empty
    interval); per-draw curves are monotone by cumulative construction.
    """
    spec = archive.spec
    draws = _DrawArrays(archive, request.m_use)
    if effects.shape != (draws.M, spec.design.q):
        raise ConfigurationError("effects draws do not align with the archive draws")
    engine = _SubjectEngine(spec, draws, request.covariates, request.visits)

    H = np.zeros((len(request.horizons), draws.M))
    prev = request.landmark
    acc = np.zeros(draws.M)
    for i, horizon in enumerate(request.horizons):
        stop = max(horizon, request.landmark)
        acc = acc + engine.cumulative_hazard(effects, prev, stop)
        H[i] = acc
        prev = stop
    valid = np.all(np.isfinite(H), axis=0)
    skipped = 1.0 - valid.mean()
    if not valid.any():
        raise ConfigurationError("every posterior draw overflowed the hazard integral")
    pi = 1.0 - np.exp(-H[:, valid])
    lower, upper = np.percentile(pi, [2.5, 97.5], axis=1)
    return RiskCurve(
        horizons=tuple(request.horizons),
        mean=pi.mean(axis=1),
        lower=lower,
        upper=upper,
        skipped_fraction=float(skipped),
        high_skip_warning=bool(skipped > 0.01),
    )


def predict_trajectory(
    request: PredictionRequest,
    archive: PosteriorArchive,
    effects: np.ndarray,
) -> TrajectoryBand:
    """Predicted outcome values at each horizon with 95% bands.

    Continuous outcomes include fresh residual noise per draw; ordinal
    outcomes summarize the per-draw expected category and per-category
    probabilities.  Horizons before the last visit are allowed
    (retrodiction) and flagged.
    """
    spec = archive.spec
    draws = _DrawArrays(archive, request.m_use)
    if effects.shape != (draws.M, spec.design.q):
        raise ConfigurationError("effects draws do not align with the archive draws")
    engine = _SubjectEngine(spec, draws, request.covariates, request.visits)
    rng = np.random.default_rng(np.random.SeedSequence([request.seed, 1]))
    theta = engine.theta_at(effects, request.horizons)  # (n_h, M)

    outcomes = {}
    for outcome in spec.outcomes:
        k = outcome.name
        b = draws.b[k][None, :]
        if outcome.kind == "continuous":
            noise = rng.standard_normal(theta.shape) * draws.sigma_eps[k][None, :]
            y = draws.a[k][:, 0][None, :] + b * theta + noise
            lower, med, upper = np.percentile(y, [2.5, 50.0, 97.5], axis=1)
            outcomes[k] = OutcomeBand(
                horizons=tuple(request.horizons),
                mean=y.mean(axis=1), median=med, lower=lower, upper=upper,
            )
        elif outcome.kind == "binary":
            from scipy.special import expit

            p = expit(draws.a[k][:, 0][None, :] + b * theta)
            lower, med, upper = np.percentile(p, [2.5, 50.0, 97.5], axis=1)
            outcomes[k] = OutcomeBand(
                horizons=tuple(request.horizons),
                mean=p.mean(axis=1), median=med, lower=lower, upper=upper,
            )
        else:
            a_k = draws.a[k]  # (M, n_thresh)
            from scipy.special import expit

            cum = expit(a_k[None, :, :] - (b * theta)[:, :, None])  # (n_h, M, n_thresh)
            full = np.concatenate(
                [np.zeros((*cum.shape[:2], 1)), cum, np.ones((*cum.shape[:2], 1))], axis=2
            )
            probs = np.maximum(np.diff(full, axis=2), 0.0)  # (n_h, M, n_cat)
            categories = np.arange(1, outcome.n_categories + 1)
            expected = (probs * categories[None, None, :]).sum(axis=2)  # (n_h, M)
            lower, med, upper = np.percentile(expected, [2.5, 50.0, 97.5], axis=1)
            p_lower, p_upper = np.percentile(probs, [2.5, 97.5], axis=1)
            outcomes[k] = OutcomeBand(
                horizons=tuple(request.horizons),
                mean=expected.mean(axis=1), median=med, lower=lower, upper=upper,
                category_probs=probs.mean(axis=1),
                category_lower=p_lower,
                category_upper=p_upper,
            )
    last_visit = request.visits[-1].time if request.visits else 0.0
    retro = tuple(h for h in request.horizons if h < last_visit)
    return TrajectoryBand(outcomes=outcomes, retrodiction_horizons=retro)


def predict(request: PredictionRequest, archive: PosteriorArchive) -> dict:
    """Full prediction pipeline; the shared backend of the CLI and service."""
    effects = sample_subject_effects(request, archive)
    risk = predict_risk(request, archive, effects)
    trajectory = predict_trajectory(request, archive, effects)
    return {"risk": risk, "trajectory": trajectory, "effects": effects}
