"""Priors, penalized joint posterior, gradient, and MCMC fitting.

The sampler is Metropolis-within-Gibbs: exact conjugate draws for the
continuous-outcome intercept, loading, and residual precision (their
full conditionals are normal / truncated-normal / gamma under the vague
flat priors used for those three), and componentwise adaptive
random-walk Metropolis for everything else, on transformed scales (log
for positive parameters, atanh for correlations) with the matching
Jacobian terms.  Proposal scales adapt toward 0.44 acceptance during
burn-in only and are frozen afterwards.

Block order per sweep: outcome parameters -> beta -> spline block
(zeta, sigma_zeta) -> survival block (gamma, assoc, eta, xi, sigma_xi)
-> per-subject random effects -> random-effect covariance.

Spline coefficients enter the target through the penalty written as
-zeta'zeta / sigma_zeta^2 (plus its sigma-dependent normalization
-R log sigma_zeta), i.e. zeta ~ N(0, sigma_zeta^2 / 2 * I); likewise xi.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit, gammaln, ndtr, ndtri

from .engine import DrawValues, Workspace, segment_integral_pieces
from .errors import ConfigurationError
from .model import ModelSpec, ParameterDraw, SubjectEffects, SubjectRecord
from .params import ParameterLayout

TARGET_ACCEPTANCE = 0.44


@dataclass(frozen=True)
class PriorSpec:
    """Vague priors: N(0, 100) locations, Uniform(0, 10) loadings,
    half-normal(100) threshold increments, Uniform[-1, 1] correlations,
    Inverse-Gamma(0.01, 0.01) variances.

    Continuous-outcome intercepts, loadings, and residual scales use the
    flat priors implied by their exact conjugate updates (flat on the
    intercept and the positive loading, flat on the residual precision).
    """

    normal_variance: float = 100.0
    b_upper: float = 10.0
    threshold_variance: float = 100.0
    ig_shape: float = 0.01
    ig_rate: float = 0.01

    def __post_init__(self):
        for name in ("normal_variance", "b_upper", "threshold_variance", "ig_shape", "ig_rate"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"prior scale '{name}' must be positive")


@dataclass(frozen=True)
class ChainConfig:
    n_chains: int = 2
    n_iter: int = 2000
    n_burnin: int = 1000
    seed: int = 0
    thinning: int = 1
    adapt_window: int = 25
    init_jitter: float = 1.0
    fixed_params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_burnin >= self.n_iter:
            raise ConfigurationError("n_burnin must be smaller than n_iter")
        if self.n_chains < 2:
            raise ConfigurationError("at least 2 chains are required for R-hat")
        if self.thinning < 1 or self.adapt_window < 1:
            raise ConfigurationError("thinning and adapt_window must be >= 1")


@dataclass
class PosteriorArchive:
    """Fitted model: posterior draws plus spec, diagnostics, provenance."""

    spec: ModelSpec
    draws: np.ndarray  # (M, n_params) natural values, layout order
    u_draws: np.ndarray  # (M, n_subjects, q) training random effects
    training_ids: list[str]
    diagnostics: dict
    config: ChainConfig
    priors: PriorSpec = field(default_factory=PriorSpec)

    def __post_init__(self):
        self.layout = ParameterLayout(self.spec)
        if self.draws.ndim != 2 or self.draws.shape[1] != self.layout.size:
            raise ConfigurationError("draw matrix does not match the model's parameter layout")
        if self.n_draws < 1:
            raise ConfigurationError("archive must contain at least one draw")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def draw(self, m: int) -> ParameterDraw:
        return self.layout.to_draw(self.draws[m])

    def parameter_names(self) -> tuple[str, ...]:
        return self.layout.names

    def posterior_mean(self, name: str) -> float:
        idx = self.layout.names.index(name)
        return float(self.draws[:, idx].mean())

    def credible_interval(self, name: str, level: float = 0.95) -> tuple[float, float]:
        idx = self.layout.names.index(name)
        lo, hi = np.percentile(self.draws[:, idx], [50 * (1 - level), 100 - 50 * (1 - level)])
        return float(lo), float(hi)


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------

def _prior_logpdf(tag: str, x: float, priors: PriorSpec) -> float:
    """Natural-scale log prior density for one coordinate."""
    if tag == "normal":
        v = priors.normal_variance
        return -0.5 * x * x / v - 0.5 * math.log(2 * math.pi * v)
    if tag == "flat":
        return 0.0
    if tag == "flat_pos":
        return 0.0 if x > 0 else -math.inf
    if tag == "uniform_b":
        return -math.log(priors.b_upper) if 0 < x < priors.b_upper else -math.inf
    if tag == "half_normal":
        if x <= 0:
            return -math.inf
        v = priors.threshold_variance
        return -0.5 * x * x / v + math.log(2.0) - 0.5 * math.log(2 * math.pi * v)
    if tag == "invgamma":
        # IG(shape, rate) on the variance, expressed over the SD x
        if x <= 0:
            return -math.inf
        a, b = priors.ig_shape, priors.ig_rate
        return a * math.log(b) - gammaln(a) - (2 * a + 1) * math.log(x) - b / (x * x) + math.log(2.0)
    if tag == "flat_precision":
        # flat prior on 1/sigma^2, expressed over the SD x
        return math.log(2.0) - 3.0 * math.log(x) if x > 0 else -math.inf
    if tag == "uniform_rho":
        return -math.log(2.0) if -1 < x < 1 else -math.inf
    if tag == "spline_coef":
        return 0.0  # handled by the joint penalty term
    raise ConfigurationError(f"unknown prior tag '{tag}'")


def _prior_grad_unconstrained(tag: str, w: float, x: float, priors: PriorSpec) -> float:
    """d/dw of [natural log prior + log Jacobian] for one coordinate."""
    if tag == "normal":
        return -x / priors.normal_variance
    if tag == "flat":
        return 0.0
    if tag in ("flat_pos", "uniform_b"):
        return 1.0  # Jacobian of the log transform; priors are flat inside support
    if tag == "half_normal":
        return -x * x / priors.threshold_variance + 1.0
    if tag == "invgamma":
        return -2.0 * priors.ig_shape + 2.0 * priors.ig_rate / (x * x)
    if tag == "flat_precision":
        return -2.0
    if tag == "uniform_rho":
        return -2.0 * x
    if tag == "spline_coef":
        return 0.0
    raise ConfigurationError(f"unknown prior tag '{tag}'")


def _penalty(coefs: np.ndarray, sigma: float) -> float:
    """-c'c/sigma^2 with its sigma-dependent normalization (c ~ N(0, sigma^2/2))."""
    R = coefs.size
    if R == 0:
        return 0.0
    return float(-(coefs @ coefs) / sigma**2 - R * math.log(sigma) - 0.5 * R * math.log(math.pi))


def _effects_matrix(effects, n: int, q: int) -> np.ndarray:
    if isinstance(effects, np.ndarray):
        u = np.asarray(effects, dtype=float)
    else:
        u = np.array([e.u if isinstance(e, SubjectEffects) else e for e in effects], dtype=float)
    if u.shape != (n, q):
        raise ConfigurationError(f"effects must have shape ({n}, {q}), got {u.shape}")
    return u


# ---------------------------------------------------------------------------
# posterior
# ---------------------------------------------------------------------------

def log_posterior(
    dataset: Sequence[SubjectRecord],
    draw: ParameterDraw,
    effects,
    priors: PriorSpec,
    spec: ModelSpec,
    workspace: Workspace | None = None,
) -> float:
    """Penalized joint log posterior at natural-scale parameter values.

    Returns -inf for draws outside the support (unordered thresholds,
    loadings outside (0, b_upper), non-PD covariance) and for draws
    whose hazard integral overflows.
    """
    ws = workspace if workspace is not None else Workspace(dataset, spec)
    layout = ParameterLayout(spec)
    values = DrawValues(draw)
    u = _effects_matrix(effects, ws.n_subjects, spec.design.q)

    natural = layout.from_draw(draw)
    prior_total = 0.0
    for coord, x in zip(layout.coords, natural):
        lp = _prior_logpdf(coord.prior, float(x), priors)
        if lp == -math.inf:
            return -math.inf
        prior_total += lp
    for outcome in spec.outcomes:
        if outcome.kind == "ordinal" and np.any(np.diff(values.a[outcome.name]) <= 0):
            return -math.inf

    u_logpdf = ws.u_logpdf_subjects(u, values.Sigma())
    if u_logpdf is None:
        return -math.inf

    theta = ws.theta_obs(values.beta, values.zeta, u)
    longit = sum(v.sum() for v in ws.longitudinal_obs(values, theta).values())
    surv = ws.survival_loglik_subjects(values, u)
    if np.any(np.isneginf(surv)):
        return -math.inf
    total = (
        float(longit)
        + float(surv.sum())
        + _penalty(values.zeta, values.sigma_zeta)
        + _penalty(values.xi, values.sigma_xi)
        + float(u_logpdf.sum())
        + prior_total
    )
    return total if np.isfinite(total) else -math.inf


def log_posterior_unconstrained(
    dataset, v: np.ndarray, effects, priors: PriorSpec, spec: ModelSpec,
    workspace: Workspace | None = None, layout: ParameterLayout | None = None,
) -> float:
    """log_posterior at unpack(v) plus the transform log-Jacobian."""
    layout = layout or ParameterLayout(spec)
    draw = layout.to_draw(layout.to_natural(np.asarray(v, dtype=float)))
    value = log_posterior(dataset, draw, effects, priors, spec, workspace)
    if value == -math.inf:
        return value
    return value + layout.log_jacobian(np.asarray(v, dtype=float))


# ---------------------------------------------------------------------------
# gradient
# ---------------------------------------------------------------------------

def grad_log_posterior(
    dataset: Sequence[SubjectRecord],
    draw: ParameterDraw,
    effects,
    priors: PriorSpec | None = None,
    spec: ModelSpec | None = None,
    workspace: Workspace | None = None,
) -> np.ndarray:
    """Gradient of the unconstrained-scale posterior (matches
    log_posterior_unconstrained under central finite differences).

    Coordinates follow ParameterLayout order.
    """
    if spec is None:
        raise ConfigurationError("grad_log_posterior requires the model spec")
    priors = priors or PriorSpec()
    ws = workspace if workspace is not None else Workspace(dataset, spec)
    layout = ParameterLayout(spec)
    values = DrawValues(draw)
    u = _effects_matrix(effects, ws.n_subjects, spec.design.q)
    natural = layout.from_draw(draw)
    grad_nat = np.zeros(layout.size)

    theta = ws.theta_obs(values.beta, values.zeta, u)
    g_theta = np.zeros(ws.n_obs)

    # --- longitudinal ---
    for outcome in spec.outcomes:
        k = outcome.name
        mask = ws.masks[k]
        y = ws.values[k]
        a_k = values.a[k]
        b_k = values.b[k]
        if outcome.kind == "continuous":
            sig = values.sigma_eps[k]
            r = np.where(mask, y - a_k[0] - b_k * theta, 0.0)
            grad_nat[layout.group(f"a:{k}")] += r.sum() / sig**2
            grad_nat[layout.group(f"b:{k}")] += (r * theta)[mask].sum() / sig**2
            grad_nat[layout.group(f"sigma_eps:{k}")] += (-mask.sum() + (r * r).sum() / sig**2) / sig
            g_theta += b_k * r / sig**2
        elif outcome.kind == "binary":
            s = a_k[0] + b_k * theta
            e = np.where(mask, y - expit(s), 0.0)
            grad_nat[layout.group(f"a:{k}")] += e.sum()
            grad_nat[layout.group(f"b:{k}")] += (e * theta)[mask].sum()
            g_theta += b_k * e
        else:
            from .engine import ordinal_logmass

            n_thresh = len(a_k)
            code = np.clip(y.astype(int), 1, n_thresh + 1)
            up_idx = np.minimum(code - 1, n_thresh - 1)
            lo_idx = np.maximum(code - 2, 0)
            _, d_up, d_lo = ordinal_logmass(y, theta, a_k, b_k)
            d_up = np.where(mask, d_up, 0.0)
            d_lo = np.where(mask, d_lo, 0.0)
            dA = np.bincount(up_idx, weights=d_up, minlength=n_thresh) + np.bincount(
                lo_idx, weights=d_lo, minlength=n_thresh
            )
            g_theta += -b_k * (d_up + d_lo)
            if not outcome.is_anchor:
                grad_nat[layout.group(f"b:{k}")] += (-theta * (d_up + d_lo)).sum()
            rev = np.cumsum(dA[::-1])[::-1]  # rev[j] = sum_{m >= j} dA[m]
            sl = layout.group(f"thresh:{k}")
            grad_nat[sl] += rev if not outcome.is_anchor else rev[1:]

    grad_nat[layout.group("beta")] += ws.X_obs.T @ g_theta
    if layout.has_group("zeta"):
        grad_nat[layout.group("zeta")] += ws.V_obs.T @ g_theta

    # --- survival ---
    A_seg, B_seg = ws.segment_AB(values, u)
    H_seg, dHdB = segment_integral_pieces(A_seg, B_seg, ws.seg_lo, ws.seg_hi)
    rows = np.concatenate([ws.seg_subj, np.arange(ws.n_subjects)])
    gA = np.concatenate([-H_seg, ws.delta])
    gB = np.concatenate([-dHdB, ws.delta * ws.t_obs])
    act_theta = np.vstack([ws.seg_theta_active, ws.t_theta_active]) if ws.theta_knots.size else np.zeros((len(rows), 0))
    act_haz = np.vstack([ws.seg_hazard_active, ws.t_hazard_active]) if ws.hazard_knots.size else np.zeros((len(rows), 0))

    grad_nat[layout.group("eta0")] += gA.sum()
    grad_nat[layout.group("eta1")] += gB.sum()
    if layout.has_group("xi"):
        grad_nat[layout.group("xi")] += (gB[:, None] * act_haz).sum(axis=0) - (
            (gA[:, None] * act_haz) * ws.hazard_knots[None, :]
        ).sum(axis=0)
    if ws.W.shape[1]:
        grad_nat[layout.group("gamma")] += gA @ ws.W[rows]

    if spec.association == "M3":
        grad_nat[layout.group("assoc")] += gA @ u[rows]
    else:
        theta_c, theta_d = ws.theta_linear(values.beta, values.zeta, u, act_theta, rows)
        nu = values.assoc
        if spec.association == "M1":
            grad_nat[layout.group("assoc")] += gA @ theta_c + gB @ theta_d
            wA, wB = nu[0] * gA, nu[0] * gB
        else:
            sl = layout.group("assoc")
            grad_nat[sl.start] += gA @ theta_c + gB @ theta_d
            grad_nat[sl.start + 1] += gA @ theta_d
            wA, wB = nu[0] * gA + 0.0, nu[0] * gB
            wA2 = nu[1] * gA  # weight hitting theta_d through A only
        # chain into beta / zeta via theta_c = cx@beta - act(kappa*zeta), theta_d = dx@beta + act@zeta
        grad_nat[layout.group("beta")] += wA @ ws.cx[rows] + wB @ ws.dx[rows]
        if spec.association == "M2":
            grad_nat[layout.group("beta")] += wA2 @ ws.dx[rows]
        if layout.has_group("zeta"):
            kappa = ws.theta_knots
            grad_nat[layout.group("zeta")] += (wB[:, None] * act_theta).sum(axis=0) - (
                (wA[:, None] * act_theta) * kappa[None, :]
            ).sum(axis=0)
            if spec.association == "M2":
                grad_nat[layout.group("zeta")] += (wA2[:, None] * act_theta).sum(axis=0)

    # --- penalties ---
    if layout.has_group("zeta"):
        grad_nat[layout.group("zeta")] += -2.0 * values.zeta / values.sigma_zeta**2
        grad_nat[layout.group("sigma_zeta")] += (
            2.0 * (values.zeta @ values.zeta) / values.sigma_zeta**3
            - values.zeta.size / values.sigma_zeta
        )
    if layout.has_group("xi"):
        grad_nat[layout.group("xi")] += -2.0 * values.xi / values.sigma_xi**2
        grad_nat[layout.group("sigma_xi")] += (
            2.0 * (values.xi @ values.xi) / values.sigma_xi**3 - values.xi.size / values.sigma_xi
        )

    # --- random-effect covariance ---
    Sigma = values.Sigma()
    P = np.linalg.inv(Sigma)
    S = u.T @ u
    dLdSigma = 0.5 * (P @ S @ P - ws.n_subjects * P)
    q = spec.design.q
    sd = values.sd_u
    for m in range(q):
        sel = np.zeros((q, q))
        sel[m, :] += 1.0
        sel[:, m] += 1.0
        # d Sigma / d sigma_m = Sigma * (1{i=m} + 1{j=m}) / sigma_m
        grad_nat[layout.group("sd_u").start + m] += np.sum(dLdSigma * Sigma * sel) / sd[m]
    idx = 0
    sl = layout.group("corr_u")
    for i in range(q):
        for j in range(i + 1, q):
            grad_nat[sl.start + idx] += 2.0 * dLdSigma[i, j] * sd[i] * sd[j]
            idx += 1

    # --- transform chain + priors (on the unconstrained scale) ---
    grad = np.zeros(layout.size)
    for i, coord in enumerate(layout.coords):
        x = natural[i]
        if coord.transform == "log":
            chain = x
            w = math.log(x)
        elif coord.transform == "atanh":
            chain = 1.0 - x * x
            w = math.atanh(x)
        else:
            chain = 1.0
            w = x
        grad[i] = grad_nat[i] * chain + _prior_grad_unconstrained(coord.prior, w, x, priors)
    return grad


# ---------------------------------------------------------------------------
# sampler
# ---------------------------------------------------------------------------

def _coord_target(coord, w: float, x: float, priors: PriorSpec) -> float:
    """Prior plus transform-Jacobian contribution of one coordinate."""
    lp = _prior_logpdf(coord.prior, x, priors)
    if lp == -math.inf:
        return -math.inf
    if coord.transform == "log":
        return lp + w
    if coord.transform == "atanh":
        return lp + math.log1p(-x * x)
    return lp


class _Chain:
    """One MCMC chain: mutable state, caches, and the block updates."""

    def __init__(self, ws: Workspace, layout: ParameterLayout, priors: PriorSpec,
                 config: ChainConfig, rng: np.random.Generator):
        self.ws = ws
        self.spec = ws.spec
        self.layout = layout
        self.priors = priors
        self.config = config
        self.rng = rng
        d = layout.size
        n, q = ws.n_subjects, ws.spec.design.q

        self.free = np.ones(d, dtype=bool)
        fixed_natural = {}
        for name, value in config.fixed_params.items():
            if name not in layout.names:
                raise ConfigurationError(f"fixed parameter '{name}' is not a sampled coordinate")
            idx = layout.names.index(name)
            self.free[idx] = False
            fixed_natural[idx] = float(value)

        for attempt in range(12):
            jitter = config.init_jitter * 0.5**attempt
            self.unc = jitter * rng.uniform(-1.0, 1.0, d)
            for idx, value in fixed_natural.items():
                transform = layout.transforms[idx]
                if transform == "log":
                    self.unc[idx] = math.log(value)
                elif transform == "atanh":
                    self.unc[idx] = math.atanh(value)
                else:
                    self.unc[idx] = value
            self.natural = layout.to_natural(self.unc)
            self.u = np.zeros((n, q))
            if self._rebuild_caches():
                break
        else:
            raise ConfigurationError("could not find a finite starting state")

        self.log_scale = np.full(d, math.log(0.1))
        self.log_scale_u = np.full((n, q), math.log(0.5))
        self.accepts = np.zeros(d)
        self.proposals = np.zeros(d)
        self.accepts_u = np.zeros((n, q))
        self.proposals_u = np.zeros((n, q))
        self.window_count = 0
        self.total_accepts = np.zeros(d)
        self.total_proposals = np.zeros(d)
        self.recenter_pairs = self._recenter_pairs()
        n_iw = len(self.recenter_pairs) + q + 2  # translations, rescales, global scale+shift
        self.log_scale_iw = np.full(n_iw, math.log(0.2))
        self.accepts_iw = np.zeros(n_iw)
        self.proposals_iw = np.zeros(n_iw)

        # joint adaptive proposal over the (correlated) survival block
        surv_idx = []
        for group in ("gamma", "assoc", "eta0", "eta1", "xi", "sigma_xi"):
            if layout.has_group(group):
                sl = layout.group(group)
                surv_idx.extend(i for i in range(sl.start, sl.stop) if self.free[i])
        self.surv_idx = np.array(surv_idx, dtype=np.intp)
        self.surv_history: list[np.ndarray] = []
        self.surv_cov = None
        self.log_scale_joint = 0.0
        self.accepts_joint = 0
        self.proposals_joint = 0

    # -- cache management ---------------------------------------------------

    def _values(self, natural=None) -> DrawValues:
        natural = self.natural if natural is None else natural
        return DrawValues(self.layout.to_draw(natural))

    def _values_with(self, cand_nat: np.ndarray, group: str) -> DrawValues:
        """Current values with one layout group replaced (hot path)."""
        cand = self.values.clone()
        cand.apply_group(self.layout, group, cand_nat)
        return cand

    def _rebuild_caches(self) -> bool:
        """Recompute every cached quantity; False if the state is not finite."""
        ws = self.ws
        self.values = self._values()
        self.theta = ws.theta_obs(self.values.beta, self.values.zeta, self.u)
        self.longit_obs = ws.longitudinal_obs(self.values, self.theta)
        self.longit_sum = {k: float(v.sum()) for k, v in self.longit_obs.items()}
        self.surv_subj = ws.survival_loglik_subjects(self.values, self.u)
        u_logpdf = ws.u_logpdf_subjects(self.u, self.values.Sigma())
        if u_logpdf is None or np.any(np.isneginf(self.surv_subj)):
            return False
        self.u_logpdf_subj = u_logpdf
        return True

    def _longit_subject_totals(self) -> np.ndarray:
        total_obs = sum(self.longit_obs.values())
        return self.ws.subject_sums(total_obs)

    # -- scalar Metropolis step ----------------------------------------------

    def _propose(self, i: int):
        w_old = self.unc[i]
        w_new = w_old + math.exp(self.log_scale[i]) * self.rng.standard_normal()
        coord = self.layout.coords[i]
        if coord.transform == "log":
            x_new = math.exp(w_new)
        elif coord.transform == "atanh":
            x_new = math.tanh(w_new)
        else:
            x_new = w_new
        x_old = self.natural[i]
        dprior = _coord_target(coord, w_new, x_new, self.priors)
        if dprior != -math.inf:
            dprior -= _coord_target(coord, w_old, x_old, self.priors)
        return w_new, x_new, dprior

    def _finish(self, i, accept, w_new, x_new):
        self.proposals[i] += 1
        self.total_proposals[i] += 1
        if accept:
            self.accepts[i] += 1
            self.total_accepts[i] += 1
            self.unc[i] = w_new
            self.natural[i] = x_new
        return accept

    def _mh_outcome_coord(self, i, outcome):
        w_new, x_new, dprior = self._propose(i)
        if dprior == -math.inf:
            return self._finish(i, False, w_new, x_new)
        cand_nat = self.natural.copy()
        cand_nat[i] = x_new
        cand = self._values_with(cand_nat, self.layout.coords[i].group)
        k = outcome.name
        if outcome.kind == "ordinal" and np.any(np.diff(cand.a[k]) <= 0):
            return self._finish(i, False, w_new, x_new)
        new_obs = self.ws.outcome_loglik_obs(k, self.theta, cand.a[k], cand.b[k], cand.sigma_eps.get(k))
        delta = float(new_obs.sum()) - self.longit_sum[k] + dprior
        if math.log(self.rng.uniform()) < delta:
            self._finish(i, True, w_new, x_new)
            self.values = cand
            self.longit_obs[k] = new_obs
            self.longit_sum[k] = float(new_obs.sum())
            return True
        return self._finish(i, False, w_new, x_new)

    def _mh_theta_coord(self, i, column):
        """beta[j] or zeta[r]: latent severity shifts by delta_coef * column."""
        w_new, x_new, dprior = self._propose(i)
        if dprior == -math.inf:
            return self._finish(i, False, w_new, x_new)
        cand_nat = self.natural.copy()
        cand_nat[i] = x_new
        cand = self._values_with(cand_nat, self.layout.coords[i].group)
        theta_new = self.theta + (x_new - self.natural[i]) * column
        new_obs = {}
        delta = dprior
        for outcome in self.spec.outcomes:
            k = outcome.name
            new_obs[k] = self.ws.outcome_loglik_obs(
                k, theta_new, cand.a[k], cand.b[k], cand.sigma_eps.get(k)
            )
            delta += float(new_obs[k].sum()) - self.longit_sum[k]
        surv_new = self.ws.survival_loglik_subjects(cand, self.u)
        s_new = float(surv_new.sum())
        if not np.isfinite(s_new):
            return self._finish(i, False, w_new, x_new)
        delta += s_new - float(self.surv_subj.sum())
        coord = self.layout.coords[i]
        if coord.group == "zeta":
            delta += _penalty(cand.zeta, cand.sigma_zeta) - _penalty(self.values.zeta, self.values.sigma_zeta)
        if math.log(self.rng.uniform()) < delta:
            self._finish(i, True, w_new, x_new)
            self.values = cand
            self.theta = theta_new
            self.longit_obs = new_obs
            self.longit_sum = {k: float(v.sum()) for k, v in new_obs.items()}
            self.surv_subj = surv_new
            return True
        return self._finish(i, False, w_new, x_new)

    def _mh_survival_coord(self, i):
        w_new, x_new, dprior = self._propose(i)
        if dprior == -math.inf:
            return self._finish(i, False, w_new, x_new)
        cand_nat = self.natural.copy()
        cand_nat[i] = x_new
        cand = self._values_with(cand_nat, self.layout.coords[i].group)
        surv_new = self.ws.survival_loglik_subjects(cand, self.u)
        s_new = float(surv_new.sum())
        if not np.isfinite(s_new):
            return self._finish(i, False, w_new, x_new)
        delta = dprior + s_new - float(self.surv_subj.sum())
        if self.layout.coords[i].group == "xi":
            delta += _penalty(cand.xi, cand.sigma_xi) - _penalty(self.values.xi, self.values.sigma_xi)
        if math.log(self.rng.uniform()) < delta:
            self._finish(i, True, w_new, x_new)
            self.values = cand
            self.surv_subj = surv_new
            return True
        return self._finish(i, False, w_new, x_new)

    def _mh_penalty_scale(self, i, which):
        w_new, x_new, dprior = self._propose(i)
        if dprior == -math.inf:
            return self._finish(i, False, w_new, x_new)
        coefs = self.values.zeta if which == "zeta" else self.values.xi
        old_sigma = self.values.sigma_zeta if which == "zeta" else self.values.sigma_xi
        delta = dprior + _penalty(coefs, x_new) - _penalty(coefs, old_sigma)
        if math.log(self.rng.uniform()) < delta:
            self._finish(i, True, w_new, x_new)
            self.values = self._values_with(self.natural, self.layout.coords[i].group)
            return True
        return self._finish(i, False, w_new, x_new)

    def _mh_sigma_coord(self, i):
        w_new, x_new, dprior = self._propose(i)
        if dprior == -math.inf:
            return self._finish(i, False, w_new, x_new)
        cand_nat = self.natural.copy()
        cand_nat[i] = x_new
        cand = self._values_with(cand_nat, self.layout.coords[i].group)
        new_logpdf = self.ws.u_logpdf_subjects(self.u, cand.Sigma())
        if new_logpdf is None:  # non-PD candidate (possible for q > 2)
            return self._finish(i, False, w_new, x_new)
        delta = dprior + float(new_logpdf.sum()) - float(self.u_logpdf_subj.sum())
        if math.log(self.rng.uniform()) < delta:
            self._finish(i, True, w_new, x_new)
            self.values = cand
            self.u_logpdf_subj = new_logpdf
            return True
        return self._finish(i, False, w_new, x_new)

    # -- exact conjugate updates (appendix full conditionals) -----------------

    def _conjugate_continuous(self, outcome):
        ws = self.ws
        k = outcome.name
        layout = self.layout
        mask = ws.masks[k]
        n_k = int(mask.sum())
        if n_k == 0:
            return
        y = ws.values[k]
        theta = self.theta
        idx_a = layout.group(f"a:{k}").start
        idx_b = layout.group(f"b:{k}").start
        idx_s = layout.group(f"sigma_eps:{k}").start
        a_k = self.natural[idx_a]
        b_k = self.natural[idx_b]
        sigma = self.natural[idx_s]

        # a | rest ~ N(sum(y - b*theta)/N, sigma^2/N)
        if self.free[idx_a]:
            mean = float((y - b_k * theta)[mask].sum()) / n_k
            a_k = mean + sigma / math.sqrt(n_k) * self.rng.standard_normal()
            self.natural[idx_a] = a_k
            self.unc[idx_a] = a_k

        # b | rest ~ N(sum((y-a)theta)/sum(theta^2), sigma^2/sum(theta^2)), truncated > 0
        if self.free[idx_b]:
            den = float((theta * theta)[mask].sum())
            if den > 1e-300:
                mean = float(((y - a_k) * theta)[mask].sum()) / den
                sd = sigma / math.sqrt(den)
                lo = ndtr(-mean / sd)
                unif = self.rng.uniform(lo, 1.0)
                b_new = mean + sd * ndtri(min(unif, 1.0 - 1e-16))
                if b_new > 0:
                    b_k = b_new
                    self.natural[idx_b] = b_k
                    self.unc[idx_b] = math.log(b_k)

        # 1/sigma^2 | rest ~ Gamma(N/2 + 1, SS/2)
        if self.free[idx_s]:
            resid = (y - a_k - b_k * theta)[mask]
            ss = float(resid @ resid)
            if ss > 1e-300:
                tau = self.rng.gamma(shape=0.5 * n_k + 1.0, scale=2.0 / ss)
                sigma = 1.0 / math.sqrt(tau)
                self.natural[idx_s] = sigma
                self.unc[idx_s] = math.log(sigma)

        cand = self.values.clone()
        for group in (f"a:{k}", f"b:{k}", f"sigma_eps:{k}"):
            cand.apply_group(layout, group, self.natural)
        self.values = cand
        new_obs = ws.outcome_loglik_obs(k, theta, self.values.a[k], self.values.b[k], self.values.sigma_eps.get(k))
        self.longit_obs[k] = new_obs
        self.longit_sum[k] = float(new_obs.sum())

    # -- interweaving moves ----------------------------------------------------
    #
    # Componentwise walks mix slowly along the exact trade-off between a
    # fixed effect and the mean of its matching random effect (and between
    # a random-effect scale and the spread of its effects).  Two cheap
    # likelihood-aware moves break these couplings:
    #   translation: beta_j += delta, u_r -= kappa_i * delta leaves every
    #     theta_i(t) unchanged, so only the u-density and the beta prior move;
    #   rescale: sd_u[r] and the u_.r column scale together (non-centered
    #     parameterization), with Jacobian n*log(factor).

    def _recenter_pairs(self):
        pairs = []
        design = self.spec.design
        for j, ft in enumerate(design.fixed_terms):
            for r, rt in enumerate(design.random_terms):
                if ft.with_time != rt.with_time:
                    continue
                if rt.covariate is None:
                    kappa = np.array([1.0 if ft.covariate is None else s.covariates[ft.covariate]
                                      for s in self.ws.dataset])
                elif ft.covariate == rt.covariate:
                    kappa = np.ones(self.ws.n_subjects)
                else:
                    continue
                pairs.append((j, r, kappa))
        return pairs

    def _translate_move(self, pair_idx):
        j, r, kappa = self.recenter_pairs[pair_idx]
        i_beta = self.layout.group("beta").start + j
        if not self.free[i_beta]:
            return
        self.proposals_iw[pair_idx] += 1
        delta = math.exp(self.log_scale_iw[pair_idx]) * self.rng.standard_normal()
        u_new = self.u.copy()
        u_new[:, r] -= kappa * delta
        beta_new = self.natural[i_beta] + delta
        updf_new = self.ws.u_logpdf_subjects(u_new, self.values.Sigma())
        log_ratio = float(updf_new.sum() - self.u_logpdf_subj.sum())
        log_ratio += _prior_logpdf("normal", beta_new, self.priors) - _prior_logpdf(
            "normal", self.natural[i_beta], self.priors
        )
        surv_new = None
        if self.spec.association == "M3":
            surv_new = self.ws.survival_loglik_subjects(self.values, u_new)
            s_new = float(surv_new.sum())
            if not np.isfinite(s_new):
                return
            log_ratio += s_new - float(self.surv_subj.sum())
        if math.log(self.rng.uniform()) < log_ratio:
            self.accepts_iw[pair_idx] += 1
            self.u = u_new
            self.natural[i_beta] = beta_new
            self.unc[i_beta] = beta_new
            self.values = self._values_with(self.natural, "beta")
            self.u_logpdf_subj = updf_new
            if surv_new is not None:
                self.surv_subj = surv_new

    def _rescale_move(self, r):
        i_sd = self.layout.group("sd_u").start + r
        if not self.free[i_sd]:
            return
        idx = len(self.recenter_pairs) + r
        self.proposals_iw[idx] += 1
        step = math.exp(self.log_scale_iw[idx]) * self.rng.standard_normal()
        sd_old = self.natural[i_sd]
        sd_new = sd_old * math.exp(step)
        factor = sd_new / sd_old
        cand_nat = self.natural.copy()
        cand_nat[i_sd] = sd_new
        cand = self._values_with(cand_nat, "sd_u")
        u_new = self.u.copy()
        u_new[:, r] *= factor
        theta_new = self.ws.theta_obs(cand.beta, cand.zeta, u_new)
        new_obs = {}
        log_ratio = 0.0
        for outcome in self.spec.outcomes:
            k = outcome.name
            new_obs[k] = self.ws.outcome_loglik_obs(
                k, theta_new, cand.a[k], cand.b[k], cand.sigma_eps.get(k)
            )
            log_ratio += float(new_obs[k].sum()) - self.longit_sum[k]
        surv_new = self.ws.survival_loglik_subjects(cand, u_new)
        s_new = float(surv_new.sum())
        if not np.isfinite(s_new):
            return
        log_ratio += s_new - float(self.surv_subj.sum())
        updf_new = self.ws.u_logpdf_subjects(u_new, cand.Sigma())
        log_ratio += float(updf_new.sum() - self.u_logpdf_subj.sum())
        coord = self.layout.coords[i_sd]
        log_ratio += _coord_target(coord, math.log(sd_new), sd_new, self.priors)
        log_ratio -= _coord_target(coord, math.log(sd_old), sd_old, self.priors)
        log_ratio += self.ws.n_subjects * step  # Jacobian of scaling the u column
        if math.log(self.rng.uniform()) < log_ratio:
            self.accepts_iw[idx] += 1
            self.u = u_new
            self.natural[i_sd] = sd_new
            self.unc[i_sd] = math.log(sd_new)
            self.values = cand
            self.theta = theta_new
            self.longit_obs = new_obs
            self.longit_sum = {k: float(v.sum()) for k, v in new_obs.items()}
            self.surv_subj = surv_new
            self.u_logpdf_subj = updf_new

    def _global_scale_move(self):
        """Rescale the latent severity by phi = e^eps: beta, zeta, u, sd_u and
        the anchor thresholds scale by phi; free loadings and the association
        scale by 1/phi.  Everything but the anchor outcome's likelihood is
        exactly invariant, so the move walks the loading/scale ridge cheaply.
        """
        idx = len(self.recenter_pairs) + self.spec.design.q
        self.proposals_iw[idx] += 1
        eps = math.exp(self.log_scale_iw[idx]) * self.rng.standard_normal()
        phi = math.exp(eps)
        layout = self.layout
        unc_new = self.unc.copy()
        scale_jacobian = 0.0

        def scale_identity(sl, factor):
            nonlocal scale_jacobian
            unc_new[sl] = unc_new[sl] * factor
            width = sl.stop - sl.start
            scale_jacobian += width * (math.log(factor))

        scale_identity(layout.group("beta"), phi)
        if layout.has_group("zeta"):
            scale_identity(layout.group("zeta"), phi)
            unc_new[layout.group("sigma_zeta")] += eps
        scale_identity(layout.group("assoc"), 1.0 / phi)
        unc_new[layout.group("sd_u")] += eps
        anchor = self.spec.anchor
        unc_new[layout.group(f"thresh:{anchor.name}")] += eps
        for outcome in self.spec.outcomes:
            if not outcome.is_anchor:
                unc_new[layout.group(f"b:{outcome.name}")] -= eps

        if np.any(unc_new[~self.free] != self.unc[~self.free]):
            return  # the move would change a pinned coordinate
        nat_new = layout.to_natural(unc_new)
        unchanged = unc_new == self.unc
        nat_new[unchanged] = self.natural[unchanged]  # avoid exp/log round-trip drift
        dcoord = 0.0
        changed = np.flatnonzero(~unchanged)
        for i in changed:
            coord = layout.coords[i]
            t_new = _coord_target(coord, unc_new[i], nat_new[i], self.priors)
            if t_new == -math.inf:
                return
            dcoord += t_new - _coord_target(coord, self.unc[i], self.natural[i], self.priors)
        cand = self._values(nat_new)
        u_new = self.u * phi
        k = anchor.name
        new_anchor_obs = self.ws.outcome_loglik_obs(k, self.theta * phi, cand.a[k], cand.b[k], None)
        updf_new = self.ws.u_logpdf_subjects(u_new, cand.Sigma())
        n, q = self.u.shape
        log_ratio = (
            float(new_anchor_obs.sum()) - self.longit_sum[k]
            + dcoord
            + _penalty(cand.zeta, cand.sigma_zeta) - _penalty(self.values.zeta, self.values.sigma_zeta)
            + float(updf_new.sum() - self.u_logpdf_subj.sum())
            + scale_jacobian
            + n * q * eps
        )
        if math.log(self.rng.uniform()) < log_ratio:
            self.accepts_iw[idx] += 1
            self.unc = unc_new
            self.natural = nat_new
            self.values = cand
            self.u = u_new
            self.theta = self.theta * phi
            self.longit_obs[k] = new_anchor_obs
            self.longit_sum[k] = float(new_anchor_obs.sum())
            self.u_logpdf_subj = updf_new

    def _global_location_move(self):
        """Shift the latent severity by delta: the theta intercept rises,
        outcome intercepts absorb b_k * delta, and eta0 absorbs the
        association term.  Only the anchor outcome's likelihood (whose
        first threshold is pinned at zero) changes."""
        intercept_j = next(
            (j for j, t in enumerate(self.spec.design.fixed_terms)
             if t.covariate is None and not t.with_time),
            None,
        )
        if intercept_j is None:
            return
        layout = self.layout
        i_beta = layout.group("beta").start + intercept_j
        if not self.free[i_beta]:
            return
        idx = len(self.recenter_pairs) + self.spec.design.q + 1
        self.proposals_iw[idx] += 1
        delta = math.exp(self.log_scale_iw[idx]) * self.rng.standard_normal()
        unc_new = self.unc.copy()
        unc_new[i_beta] += delta
        for outcome in self.spec.outcomes:
            k = outcome.name
            b_k = self.values.b[k]
            if outcome.kind == "ordinal":
                if outcome.is_anchor:
                    continue
                unc_new[layout.group(f"thresh:{k}").start] += b_k * delta
            else:
                unc_new[layout.group(f"a:{k}").start] -= b_k * delta
        if self.spec.association in ("M1", "M2"):
            unc_new[layout.group("eta0").start] -= self.values.assoc[0] * delta
        if np.any(unc_new[~self.free] != self.unc[~self.free]):
            return
        nat_new = layout.to_natural(unc_new)
        unchanged = unc_new == self.unc
        nat_new[unchanged] = self.natural[unchanged]  # avoid exp/log round-trip drift
        dcoord = 0.0
        for i in np.flatnonzero(~unchanged):
            coord = layout.coords[i]
            t_new = _coord_target(coord, unc_new[i], nat_new[i], self.priors)
            if t_new == -math.inf:
                return
            dcoord += t_new - _coord_target(coord, self.unc[i], self.natural[i], self.priors)
        cand = self._values(nat_new)
        k = self.spec.anchor.name
        new_anchor_obs = self.ws.outcome_loglik_obs(k, self.theta + delta, cand.a[k], cand.b[k], None)
        log_ratio = float(new_anchor_obs.sum()) - self.longit_sum[k] + dcoord
        if math.log(self.rng.uniform()) < log_ratio:
            self.accepts_iw[idx] += 1
            self.unc = unc_new
            self.natural = nat_new
            self.values = cand
            self.theta = self.theta + delta
            self.longit_obs[k] = new_anchor_obs
            self.longit_sum[k] = float(new_anchor_obs.sum())

    def _joint_survival_move(self):
        """Multivariate proposal over the survival block using the
        burn-in-estimated covariance (Haario-style adaptive Metropolis)."""
        idx = self.surv_idx
        if idx.size < 2 or self.surv_cov is None:
            return
        self.proposals_joint += 1
        step = self.surv_chol @ self.rng.standard_normal(idx.size) * math.exp(self.log_scale_joint)
        unc_new = self.unc.copy()
        unc_new[idx] += step
        nat_new = self.layout.to_natural(unc_new)
        keep = np.ones(self.layout.size, dtype=bool)
        keep[idx] = False
        nat_new[keep] = self.natural[keep]  # untouched coords stay bit-identical
        dprior = 0.0
        for i in idx:
            coord = self.layout.coords[i]
            t_new = _coord_target(coord, unc_new[i], nat_new[i], self.priors)
            if t_new == -math.inf:
                return
            dprior += t_new - _coord_target(coord, self.unc[i], self.natural[i], self.priors)
        cand = self._values(nat_new)
        surv_new = self.ws.survival_loglik_subjects(cand, self.u)
        s_new = float(surv_new.sum())
        if not np.isfinite(s_new):
            return
        delta = dprior + s_new - float(self.surv_subj.sum())
        delta += _penalty(cand.xi, cand.sigma_xi) - _penalty(self.values.xi, self.values.sigma_xi)
        if math.log(self.rng.uniform()) < delta:
            self.accepts_joint += 1
            self.unc = unc_new
            self.natural = nat_new
            self.values = cand
            self.surv_subj = surv_new

    def _update_joint_proposal(self):
        if len(self.surv_history) < 8 * max(self.surv_idx.size, 1):
            return
        history = np.array(self.surv_history[-2000:])
        cov = np.cov(history.T)
        cov = np.atleast_2d(cov) + 1e-8 * np.eye(self.surv_idx.size)
        try:
            self.surv_chol = np.linalg.cholesky((2.38**2 / self.surv_idx.size) * cov)
            self.surv_cov = cov
        except np.linalg.LinAlgError:
            pass

    # -- vectorized random-effects sweep --------------------------------------

    def _update_effects(self):
        ws = self.ws
        n, q = self.u.shape
        longit_subj = self._longit_subject_totals()
        for j in range(q):
            z = self.rng.standard_normal(n)
            step = np.exp(self.log_scale_u[:, j]) * z
            u_cand = self.u.copy()
            u_cand[:, j] = self.u[:, j] + step
            if ws.n_obs:
                theta_cand = self.theta + step[ws.obs_subj] * ws.Z_obs[:, j]
            else:
                theta_cand = self.theta
            new_obs = {}
            total_new = np.zeros(ws.n_obs)
            for outcome in self.spec.outcomes:
                k = outcome.name
                new_obs[k] = ws.outcome_loglik_obs(
                    k, theta_cand, self.values.a[k], self.values.b[k], self.values.sigma_eps.get(k)
                )
                total_new += new_obs[k]
            longit_cand = ws.subject_sums(total_new)
            surv_cand = ws.survival_loglik_subjects(self.values, u_cand)
            updf_cand = ws.u_logpdf_subjects(u_cand, self.values.Sigma())
            delta = (longit_cand - longit_subj) + (surv_cand - self.surv_subj) + (updf_cand - self.u_logpdf_subj)
            accept = np.log(self.rng.uniform(size=n)) < delta
            self.proposals_u[:, j] += 1
            self.accepts_u[accept, j] += 1
            if accept.any():
                self.u[accept, j] = u_cand[accept, j]
                acc_obs = accept[ws.obs_subj] if ws.n_obs else np.zeros(0, dtype=bool)
                self.theta = np.where(acc_obs, theta_cand, self.theta)
                for k in new_obs:
                    self.longit_obs[k] = np.where(acc_obs, new_obs[k], self.longit_obs[k])
                    self.longit_sum[k] = float(self.longit_obs[k].sum())
                self.surv_subj = np.where(accept, surv_cand, self.surv_subj)
                self.u_logpdf_subj = np.where(accept, updf_cand, self.u_logpdf_subj)
                longit_subj = np.where(accept, longit_cand, longit_subj)

    # -- one full sweep --------------------------------------------------------

    def sweep(self):
        layout = self.layout
        for outcome in self.spec.outcomes:
            k = outcome.name
            if outcome.kind == "continuous":
                self._conjugate_continuous(outcome)
            else:
                groups = [f"thresh:{k}"] if outcome.is_anchor else [f"a:{k}", f"thresh:{k}", f"b:{k}"]
                if outcome.kind == "binary":
                    groups = [f"a:{k}", f"b:{k}"]
                for group in groups:
                    if not layout.has_group(group):
                        continue
                    sl = layout.group(group)
                    for i in range(sl.start, sl.stop):
                        if self.free[i]:
                            self._mh_outcome_coord(i, outcome)
        sl = layout.group("beta")
        for j, i in enumerate(range(sl.start, sl.stop)):
            if self.free[i]:
                self._mh_theta_coord(i, self.ws.X_obs[:, j])
        if layout.has_group("zeta"):
            sl = layout.group("zeta")
            for r, i in enumerate(range(sl.start, sl.stop)):
                if self.free[i]:
                    self._mh_theta_coord(i, self.ws.V_obs[:, r])
            i = layout.group("sigma_zeta").start
            if self.free[i]:
                self._mh_penalty_scale(i, "zeta")
        for group in ("gamma", "assoc", "eta0", "eta1", "xi"):
            if not layout.has_group(group):
                continue
            sl = layout.group(group)
            for i in range(sl.start, sl.stop):
                if self.free[i]:
                    self._mh_survival_coord(i)
        if layout.has_group("sigma_xi"):
            i = layout.group("sigma_xi").start
            if self.free[i]:
                self._mh_penalty_scale(i, "xi")
        for _ in range(8):  # the survival block is cheap and highly correlated
            self._joint_survival_move()
        if self.surv_idx.size:
            self.surv_history.append(self.unc[self.surv_idx].copy())
        self._update_effects()
        for pair_idx in range(len(self.recenter_pairs)):
            self._translate_move(pair_idx)
        for r in range(self.spec.design.q):
            self._rescale_move(r)
        self._global_scale_move()
        self._global_location_move()
        for group in ("sd_u", "corr_u"):
            sl = layout.group(group)
            for i in range(sl.start, sl.stop):
                if self.free[i]:
                    self._mh_sigma_coord(i)

    def adapt(self):
        self.window_count += 1
        step = min(0.25, 1.0 / math.sqrt(self.window_count))
        with np.errstate(invalid="ignore", divide="ignore"):
            rate = np.where(self.proposals > 0, self.accepts / np.maximum(self.proposals, 1), TARGET_ACCEPTANCE)
            self.log_scale += step * (rate - TARGET_ACCEPTANCE)
            rate_u = np.where(self.proposals_u > 0, self.accepts_u / np.maximum(self.proposals_u, 1), TARGET_ACCEPTANCE)
            self.log_scale_u += step * (rate_u - TARGET_ACCEPTANCE)
            rate_iw = np.where(self.proposals_iw > 0, self.accepts_iw / np.maximum(self.proposals_iw, 1), TARGET_ACCEPTANCE)
            self.log_scale_iw += step * (rate_iw - TARGET_ACCEPTANCE)
        if self.proposals_joint:
            rate_joint = self.accepts_joint / self.proposals_joint
            self.log_scale_joint += step * (rate_joint - 0.234)  # multivariate target
        self._update_joint_proposal()
        self.accepts[:] = 0
        self.proposals[:] = 0
        self.accepts_u[:] = 0
        self.proposals_u[:] = 0
        self.accepts_iw[:] = 0
        self.proposals_iw[:] = 0
        self.accepts_joint = 0
        self.proposals_joint = 0


def fit(
    dataset: Sequence[SubjectRecord],
    spec: ModelSpec,
    priors: PriorSpec | None = None,
    config: ChainConfig | None = None,
) -> PosteriorArchive:
    """Fit the joint model by MCMC and return the posterior archive.

    Runs ``config.n_chains`` independent chains from overdispersed
    starting points; retains post-burn-in draws of all parameters and
    all subject random effects; reports per-parameter R-hat and
    acceptance rates.  Reruns with the same seed are bit-identical.
    """
    priors = priors or PriorSpec()
    config = config or ChainConfig()
    dataset = list(dataset)
    if sum(1 for s in dataset if s.visits) < 2:
        raise ConfigurationError("fit needs at least 2 subjects with at least one visit")
    for subject in dataset:
        subject.validate_against(spec)
    anchor = spec.anchor.name
    if not any(v.values.get(anchor) is not None for s in dataset for v in s.visits):
        raise ConfigurationError(f"dataset has no observed values for anchor outcome '{anchor}'")
    if not any(s.event for s in dataset):
        warnings.warn("all subjects are censored; survival parameters are weakly identified")

    ws = Workspace(dataset, spec)
    layout = ParameterLayout(spec)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    kept = (config.n_iter - config.n_burnin + config.thinning - 1) // config.thinning

    chain_draws = []
    chain_u = []
    acceptance = {}
    for c in range(config.n_chains):
        rng = np.random.Generator(np.random.PCG64(seeds[c]))
        chain = _Chain(ws, layout, priors, config, rng)
        draws = np.empty((kept, layout.size))
        u_draws = np.empty((kept, ws.n_subjects, spec.design.q))
        kept_i = 0
        for it in range(config.n_iter):
            chain.sweep()
            burnin = it < config.n_burnin
            if burnin and (it + 1) % config.adapt_window == 0:
                chain.adapt()
            if not burnin and (it - config.n_burnin) % config.thinning == 0:
                draws[kept_i] = chain.natural
                u_draws[kept_i] = chain.u
                kept_i += 1
        chain_draws.append(draws[:kept_i])
        chain_u.append(u_draws[:kept_i])
        with np.errstate(invalid="ignore"):
            rates = chain.total_accepts / np.maximum(chain.total_proposals, 1)
        for name, rate, nprop in zip(layout.names, rates, chain.total_proposals):
            if nprop > 0:
                acceptance.setdefault(name, []).append(float(rate))

    rhat = {}
    for idx, name in enumerate(layout.names):
        series = np.stack([d[:, idx] for d in chain_draws])
        rhat[name] = gelman_rubin(series)
    rhat_u = []
    for i in range(ws.n_subjects):
        for j in range(spec.design.q):
            series = np.stack([cu[:, i, j] for cu in chain_u])
            rhat_u.append(gelman_rubin(series))
    finite_rhats = [v for v in rhat.values() if not math.isnan(v)]
    finite_rhats_u = [v for v in rhat_u if not math.isnan(v)]
    diagnostics = {
        "rhat": rhat,
        "max_rhat_parameters": max(finite_rhats) if finite_rhats else math.nan,
        "max_rhat_effects": max(finite_rhats_u) if finite_rhats_u else math.nan,
        "max_rhat": max(finite_rhats + finite_rhats_u) if finite_rhats + finite_rhats_u else math.nan,
        "acceptance": {k: float(np.mean(v)) for k, v in acceptance.items()},
        "n_chains": config.n_chains,
        "kept_per_chain": int(chain_draws[0].shape[0]),
    }
    return PosteriorArchive(
        spec=spec,
        draws=np.concatenate(chain_draws, axis=0),
        u_draws=np.concatenate(chain_u, axis=0),
        training_ids=ws.ids,
        diagnostics=diagnostics,
        config=config,
        priors=priors,
    )


# ---------------------------------------------------------------------------
# Gelman-Rubin
# ---------------------------------------------------------------------------

def gelman_rubin(chains) -> float:
    """Classic potential scale reduction factor (no chain splitting).

    With m chains of length n, within-chain variance W = mean_j s_j^2
    (s_j^2 the unbiased per-chain variance), between-chain variance
    B = n * var_j(chain means) (unbiased over chains), and

        R-hat = sqrt( (n-1)/n + (m+1) * B / (m * n * W) ).

    Identical chains give sqrt((n-1)/n); zero within-chain variance with
    nonzero between-chain variance reports +inf rather than raising.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2 or chains.shape[0] < 2 or chains.shape[1] < 2:
        raise ConfigurationError("gelman_rubin needs >= 2 chains of equal length >= 2")
    m, n = chains.shape
    W = float(np.mean(np.var(chains, axis=1, ddof=1)))
    means = chains.mean(axis=1)
    B = n * float(np.var(means, ddof=1))
    if W == 0.0:
        return math.inf if B > 0 else math.nan
    return math.sqrt((n - 1) / n + (m + 1) * B / (m * n * W))
