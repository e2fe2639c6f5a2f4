"""Vectorized likelihood evaluation over a whole dataset.

The workspace flattens visits into one observation table and hazard
integration into one segment table, both built once per dataset.  The
segment table exploits that every design term is c + d*t in time, so on
each inter-knot piece the log hazard is A + B*s with A and B linear in
the parameters.  All likelihood math in the sampler and the gradient
goes through these arrays; the per-subject functions in model.py and
survival.py stay the (slow) reference implementations.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import expit

from .model import ORDINAL_PROB_FLOOR, ModelSpec, SubjectRecord

_EXP_OVERFLOW = 700.0
_FLAT_SLOPE = 1e-8
_SERIES_SLOPE = 1e-5  # below this, d/dB of the segment integral uses a Taylor series


class Workspace:
    """Precomputed design arrays for one dataset under one model."""

    def __init__(self, dataset: Sequence[SubjectRecord], spec: ModelSpec):
        self.spec = spec
        self.dataset = list(dataset)
        design = spec.design
        n = len(self.dataset)
        self.n_subjects = n
        self.ids = [s.id for s in self.dataset]

        # --- longitudinal observation table ---
        obs_subj = []
        obs_time = []
        for i, subject in enumerate(self.dataset):
            for visit in subject.visits:
                obs_subj.append(i)
                obs_time.append(visit.time)
        self.obs_subj = np.array(obs_subj, dtype=np.intp)
        self.obs_time = np.array(obs_time, dtype=float)
        self.n_obs = len(obs_subj)

        covs = [s.covariates for s in self.dataset]
        t = self.obs_time
        sub = self.obs_subj
        if self.n_obs:
            self.X_obs = np.column_stack(
                [
                    np.array([term.constant(covs[i]) for i in sub])
                    + np.array([term.slope(covs[i]) for i in sub]) * t
                    for term in design.fixed_terms
                ]
            )
            self.Z_obs = np.column_stack(
                [
                    np.array([term.constant(covs[i]) for i in sub])
                    + np.array([term.slope(covs[i]) for i in sub]) * t
                    for term in design.random_terms
                ]
            )
        else:
            self.X_obs = np.zeros((0, design.p))
            self.Z_obs = np.zeros((0, design.q))
        knots = np.asarray(design.theta_knots, dtype=float)
        self.V_obs = np.maximum(t[:, None] - knots[None, :], 0.0) if knots.size else np.zeros((self.n_obs, 0))

        # per-outcome values: float y + missing mask; ordinal codes as ints
        self.values = {}
        self.masks = {}
        for outcome in spec.outcomes:
            y = np.full(self.n_obs, np.nan)
            j = 0
            for subject in self.dataset:
                for visit in subject.visits:
                    value = visit.values.get(outcome.name)
                    if value is not None:
                        y[j] = float(value)
                    j += 1
            mask = ~np.isnan(y)
            self.masks[outcome.name] = mask
            self.values[outcome.name] = np.where(mask, y, 0.0)

        # --- survival arrays ---
        self.t_obs = np.array([s.observed_time for s in self.dataset])
        self.delta = np.array([float(s.event) for s in self.dataset])
        self.W = (
            np.column_stack([[s.covariates[w] for s in self.dataset] for w in spec.survival_covariates])
            if spec.survival_covariates and n
            else np.zeros((n, 0 if not spec.survival_covariates else len(spec.survival_covariates)))
        )
        # constant and slope of each design term per subject
        self.cx = np.array([[term.constant(c) for term in design.fixed_terms] for c in covs]).reshape(n, design.p)
        self.dx = np.array([[term.slope(c) for term in design.fixed_terms] for c in covs]).reshape(n, design.p)
        self.cz = np.array([[term.constant(c) for term in design.random_terms] for c in covs]).reshape(n, design.q)
        self.dz = np.array([[term.slope(c) for term in design.random_terms] for c in covs]).reshape(n, design.q)

        theta_knots = np.asarray(design.theta_knots, dtype=float)
        hazard_knots = np.asarray(design.effective_hazard_knots, dtype=float)
        self.theta_knots = theta_knots
        self.hazard_knots = hazard_knots

        seg_subj = []
        seg_lo = []
        seg_hi = []
        for i, subject in enumerate(self.dataset):
            upto = subject.observed_time
            breaks = sorted({0.0, upto, *(k for k in (*theta_knots, *hazard_knots) if 0.0 < k < upto)})
            for lo, hi in zip(breaks, breaks[1:]):
                seg_subj.append(i)
                seg_lo.append(lo)
                seg_hi.append(hi)
        self.seg_subj = np.array(seg_subj, dtype=np.intp)
        self.seg_lo = np.array(seg_lo)
        self.seg_hi = np.array(seg_hi)
        self.n_seg = len(seg_subj)
        # hinge active on the segment interior / at the observed time
        self.seg_theta_active = (self.seg_lo[:, None] >= theta_knots[None, :]) if theta_knots.size else np.zeros((self.n_seg, 0))
        self.seg_hazard_active = (self.seg_lo[:, None] >= hazard_knots[None, :]) if hazard_knots.size else np.zeros((self.n_seg, 0))
        self.t_theta_active = (self.t_obs[:, None] > theta_knots[None, :]) if theta_knots.size else np.zeros((n, 0))
        self.t_hazard_active = (self.t_obs[:, None] > hazard_knots[None, :]) if hazard_knots.size else np.zeros((n, 0))

    # ------------------------------------------------------------------
    # longitudinal pieces
    # ------------------------------------------------------------------

    def theta_obs(self, beta, zeta, u) -> np.ndarray:
        """Latent severity at every observation row; u is (n_subjects, q)."""
        theta = self.X_obs @ beta
        if self.n_obs:
            theta = theta + np.einsum("ij,ij->i", self.Z_obs, u[self.obs_subj])
            if zeta.size:
                theta = theta + self.V_obs @ zeta
        return theta

    def outcome_loglik_obs(self, outcome_name, theta, a_k, b_k, sigma_k=None) -> np.ndarray:
        """Per-observation log density of one outcome (0 where missing)."""
        outcome = self.spec.outcome(outcome_name)
        mask = self.masks[outcome_name]
        y = self.values[outcome_name]
        out = np.zeros(self.n_obs)
        if not mask.any():
            return out
        if outcome.kind == "continuous":
            r = y - a_k[0] - b_k * theta
            out = -0.5 * (r / sigma_k) ** 2 - np.log(sigma_k) - 0.5 * np.log(2.0 * np.pi)
        elif outcome.kind == "binary":
            s = a_k[0] + b_k * theta
            # log expit(s) and log(1 - expit(s)) via logaddexp for stability
            out = np.where(y == 1.0, -np.logaddexp(0.0, -s), -np.logaddexp(0.0, s))
        else:
            out, _, _ = ordinal_logmass(y, theta, a_k, b_k, with_grad=False)
        return np.where(mask, out, 0.0)

    def longitudinal_obs(self, draw_values, theta) -> dict[str, np.ndarray]:
        """Per-observation log densities for every outcome."""
        out = {}
        for outcome in self.spec.outcomes:
            k = outcome.name
            out[k] = self.outcome_loglik_obs(
                k, theta, draw_values.a[k], draw_values.b[k], draw_values.sigma_eps.get(k)
            )
        return out

    def subject_sums(self, obs_values: np.ndarray) -> np.ndarray:
        return np.bincount(self.obs_subj, weights=obs_values, minlength=self.n_subjects)

    # ------------------------------------------------------------------
    # survival pieces
    # ------------------------------------------------------------------

    def theta_linear(self, beta, zeta, u, active_theta, subj_idx):
        """(c, d) with theta(s) = c + d*s on rows selected by subj_idx/active mask."""
        c = self.cx[subj_idx] @ beta + np.einsum("ij,ij->i", self.cz[subj_idx], u[subj_idx])
        d = self.dx[subj_idx] @ beta + np.einsum("ij,ij->i", self.dz[subj_idx], u[subj_idx])
        if zeta.size:
            c = c - active_theta @ (zeta * self.theta_knots)
            d = d + active_theta @ zeta
        return c, d

    def hazard_linear(self, draw_values, u, active_theta, active_hazard, subj_idx):
        """(A, B) with log h(s) = A + B*s on the selected rows."""
        spec = self.spec
        A = np.full(len(subj_idx), draw_values.eta0)
        B = np.full(len(subj_idx), draw_values.eta1)
        if draw_values.xi.size:
            A = A - active_hazard @ (draw_values.xi * self.hazard_knots)
            B = B + active_hazard @ draw_values.xi
        if self.W.shape[1]:
            A = A + self.W[subj_idx] @ draw_values.gamma
        assoc = draw_values.assoc
        if spec.association == "M3":
            A = A + u[subj_idx] @ assoc
        else:
            c, d = self.theta_linear(draw_values.beta, draw_values.zeta, u, active_theta, subj_idx)
            if spec.association == "M1":
                A = A + assoc[0] * c
                B = B + assoc[0] * d
            else:  # M2
                A = A + assoc[0] * c + assoc[1] * d
                B = B + assoc[0] * d
        return A, B

    def segment_AB(self, draw_values, u):
        return self.hazard_linear(draw_values, u, self.seg_theta_active, self.seg_hazard_active, self.seg_subj)

    def event_AB(self, draw_values, u):
        all_idx = np.arange(self.n_subjects)
        return self.hazard_linear(draw_values, u, self.t_theta_active, self.t_hazard_active, all_idx)

    def survival_loglik_subjects(self, draw_values, u):
        """Per-subject survival log-likelihood; -inf where exp() would overflow."""
        A, B = self.segment_AB(draw_values, u)
        top = A + B * np.where(B > 0, self.seg_hi, self.seg_lo)
        bad = top > _EXP_OVERFLOW
        A = np.where(bad, 0.0, A)
        B = np.where(bad, 0.0, B)
        flat = np.abs(B) < _FLAT_SLOPE
        B_safe = np.where(flat, 1.0, B)
        e_hi = np.exp(A + B * self.seg_hi)
        e_lo = np.exp(A + B * self.seg_lo)
        H_seg = np.where(
            flat,
            np.exp(A + B * 0.5 * (self.seg_lo + self.seg_hi)) * (self.seg_hi - self.seg_lo),
            (e_hi - e_lo) / B_safe,
        )
        H = np.bincount(self.seg_subj, weights=H_seg, minlength=self.n_subjects)
        A_ev, B_ev = self.event_AB(draw_values, u)
        out = self.delta * (A_ev + B_ev * self.t_obs) - H
        if bad.any():
            bad_subjects = np.bincount(self.seg_subj, weights=bad.astype(float), minlength=self.n_subjects) > 0
            out = np.where(bad_subjects, -np.inf, out)
        return out

    # ------------------------------------------------------------------
    # random-effect density
    # ------------------------------------------------------------------

    def u_logpdf_subjects(self, u, Sigma):
        """log N(u_i; 0, Sigma) per subject; None if Sigma is not PD."""
        try:
            chol = np.linalg.cholesky(Sigma)
        except np.linalg.LinAlgError:
            return None
        sol = np.linalg.solve(chol, u.T)
        quad = np.sum(sol * sol, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        q = Sigma.shape[0]
        return -0.5 * (quad + logdet + q * np.log(2.0 * np.pi))


class DrawValues:
    """Natural parameter values unpacked once for vectorized evaluation."""

    __slots__ = ("a", "b", "sigma_eps", "beta", "zeta", "sigma_zeta", "gamma",
                 "assoc", "eta0", "eta1", "xi", "sigma_xi", "sd_u", "corr_u")

    def __init__(self, draw):
        self.a = {k: np.asarray(v, dtype=float) for k, v in draw.a.items()}
        self.b = dict(draw.b)
        self.sigma_eps = dict(draw.sigma_eps)
        self.beta = np.asarray(draw.beta, dtype=float)
        self.zeta = np.asarray(draw.zeta, dtype=float)
        self.sigma_zeta = float(draw.sigma_zeta)
        self.gamma = np.asarray(draw.gamma, dtype=float)
        self.assoc = np.asarray(draw.assoc, dtype=float)
        self.eta0 = float(draw.eta0)
        self.eta1 = float(draw.eta1)
        self.xi = np.asarray(draw.xi, dtype=float)
        self.sigma_xi = float(draw.sigma_xi)
        self.sd_u = np.asarray(draw.sd_u, dtype=float)
        self.corr_u = np.asarray(draw.corr_u, dtype=float)

    def Sigma(self):
        q = len(self.sd_u)
        corr = np.eye(q)
        idx = 0
        for i in range(q):
            for j in range(i + 1, q):
                corr[i, j] = corr[j, i] = self.corr_u[idx]
                idx += 1
        return corr * np.outer(self.sd_u, self.sd_u)

    def clone(self) -> "DrawValues":
        other = object.__new__(DrawValues)
        for name in self.__slots__:
            setattr(other, name, getattr(self, name))
        return other

    def apply_group(self, layout, group: str, natural: np.ndarray) -> None:
        """Overwrite the parameters of one layout group from the natural vector."""
        vals = natural[layout.group(group)]
        if group.startswith("thresh:"):
            name = group.split(":", 1)[1]
            outcome = layout.spec.outcome(name)
            if outcome.is_anchor:
                first, deltas = 0.0, vals
            else:
                first, deltas = vals[0], vals[1:]
            self.a = {**self.a, name: first + np.concatenate(([0.0], np.cumsum(deltas)))}
        elif group.startswith("a:"):
            name = group.split(":", 1)[1]
            self.a = {**self.a, name: np.array([vals[0]])}
        elif group.startswith("b:"):
            name = group.split(":", 1)[1]
            self.b = {**self.b, name: float(vals[0])}
        elif group.startswith("sigma_eps:"):
            name = group.split(":", 1)[1]
            self.sigma_eps = {**self.sigma_eps, name: float(vals[0])}
        elif group in ("beta", "zeta", "gamma", "assoc", "xi", "sd_u", "corr_u"):
            setattr(self, group, np.array(vals))
        elif group in ("eta0", "eta1", "sigma_zeta", "sigma_xi"):
            setattr(self, group, float(vals[0]))
        else:
            raise KeyError(group)


def ordinal_logmass(y, theta, thresholds, b, with_grad=True):
    """Stable log P(y = code), optionally with d(log p)/d(upper logit) and
    /d(lower logit).

    The mass expit(up) - expit(lo) is evaluated without cancellation as
    exp(-lo) * (1 - e^{-(up-lo)}) / ((1+e^{-up})(1+e^{-lo})), in logs.
    The result is floored at log(1e-300) to match the reference path;
    gradients are zeroed on floored observations.
    """
    n_thresh = len(thresholds)
    code = np.clip(y.astype(int), 1, n_thresh + 1)
    up_idx = np.minimum(code - 1, n_thresh - 1)
    lo_idx = np.maximum(code - 2, 0)
    up = thresholds[up_idx] - b * theta
    lo = thresholds[lo_idx] - b * theta
    has_up = code <= n_thresh
    has_lo = code >= 2
    log_floor = np.log(ORDINAL_PROB_FLOOR)

    softplus_neg_up = np.logaddexp(0.0, -up)
    softplus_lo = np.logaddexp(0.0, lo)
    # interior: both logits present
    gap = np.where(has_up & has_lo, up - lo, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_gap = np.log(-np.expm1(-gap))
    log_p_interior = log_gap - softplus_neg_up - softplus_lo
    log_p = np.where(
        has_lo,
        np.where(has_up, log_p_interior, -softplus_lo),  # top category: 1 - expit(lo)
        -softplus_neg_up,  # bottom category: expit(up)
    )
    floored = log_p < log_floor
    log_p = np.maximum(log_p, log_floor)
    if not with_grad:
        return log_p, None, None

    # d log p / d up = expit(up) expit(-up) / p ; analogous for lo (negated)
    log_fp_up = -np.logaddexp(0.0, up) - softplus_neg_up
    log_fp_lo = -softplus_lo - np.logaddexp(0.0, -lo)
    d_up = np.where(has_up & ~floored, np.exp(log_fp_up - log_p), 0.0)
    d_lo = np.where(has_lo & ~floored, -np.exp(log_fp_lo - log_p), 0.0)
    return log_p, d_up, d_lo


def segment_integral_pieces(A, B, lo, hi):
    """H_seg = int_lo^hi e^{A+Bs} ds and dH/dB, with small-slope branches.

    For |B| < 1e-8 the value uses the midpoint rectangle (matching
    cumulative_hazard); the B-derivative switches to a Taylor series
    below 1e-5 to avoid cancellation.  Assumes the caller has verified
    the draw does not overflow exp().
    """
    flat = np.abs(B) < _FLAT_SLOPE
    series = np.abs(B) < _SERIES_SLOPE
    B_safe = np.where(flat, 1.0, B)
    B_safe2 = np.where(series, 1.0, B)
    width = hi - lo
    mid = 0.5 * (lo + hi)
    e_hi = np.exp(A + B * hi)
    e_lo = np.exp(A + B * lo)
    H = np.where(flat, np.exp(A + B * mid) * width, (e_hi - e_lo) / B_safe)
    g_prime_series = np.exp(A) * width * (mid + B * (hi * hi + hi * lo + lo * lo) / 3.0)
    g_prime_exact = (hi * e_hi - lo * e_lo) / B_safe2 - (e_hi - e_lo) / (B_safe2 * B_safe2)
    dH_dB = np.where(series, g_prime_series, g_prime_exact)
    return H, dH_dB
