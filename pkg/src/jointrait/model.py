"""Domain types, spline basis, latent-trait evaluation, and the
longitudinal likelihood for mixed continuous/binary/ordinal outcomes.

The latent disease severity for a subject at time t is

    theta(t) = X(t) @ beta + Z(t) @ u + sum_r zeta_r * (t - kappa_r)_+

where X and Z are built term-by-term from the subject's baseline
covariates (optionally interacted with time) and the last sum is a
truncated-power spline in time.  Each observed outcome is linked to
theta(t) through outcome-specific intercepts/thresholds and a positive
loading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, DataError

ORDINAL_PROB_FLOOR = 1e-300  # floor applied to ordinal masses before log


# ---------------------------------------------------------------------------
# design terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Term:
    """One column of a fixed- or random-effect design.

    ``covariate=None`` means a pure time term: the intercept when
    ``with_time`` is False, plain time when True.  With a covariate name
    the column is the covariate value, times t when ``with_time``.
    """

    covariate: str | None = None
    with_time: bool = False

    @classmethod
    def parse(cls, text: str) -> "Term":
        text = text.strip()
        if text in ("1", "intercept"):
            return cls(None, False)
        if text in ("t", "time"):
            return cls(None, True)
        if text.endswith(":time"):
            return cls(text[: -len(":time")], True)
        if text.endswith(":t"):
            return cls(text[: -len(":t")], True)
        return cls(text, False)

    def label(self) -> str:
        if self.covariate is None:
            return "time" if self.with_time else "1"
        return f"{self.covariate}:time" if self.with_time else self.covariate

    def _covariate_value(self, covariates: Mapping[str, float]) -> float:
        if self.covariate is None:
            return 1.0
        try:
            return float(covariates[self.covariate])
        except KeyError:
            raise DataError(f"covariate '{self.covariate}' missing from subject record") from None

    def constant(self, covariates: Mapping[str, float]) -> float:
        """Coefficient of 1 in the term value c + d*t."""
        return 0.0 if self.with_time else self._covariate_value(covariates)

    def slope(self, covariates: Mapping[str, float]) -> float:
        """Coefficient of t in the term value c + d*t (also the time derivative)."""
        return self._covariate_value(covariates) if self.with_time else 0.0

    def value(self, covariates: Mapping[str, float], t: float) -> float:
        return self.constant(covariates) + self.slope(covariates) * t


# ---------------------------------------------------------------------------
# model declaration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OutcomeSpec:
    """Declaration of one longitudinal outcome.

    Exactly one ordinal outcome per model is the anchor: its first
    threshold is pinned at 0 and its loading at 1 so the latent scale is
    identified.
    """

    name: str
    kind: str  # "continuous" | "binary" | "ordinal"
    n_categories: int | None = None
    is_anchor: bool = False

    def __post_init__(self):
        if self.kind not in ("continuous", "binary", "ordinal"):
            raise ConfigurationError(f"outcome '{self.name}': unknown kind '{self.kind}'")
        if self.kind == "ordinal":
            if self.n_categories is None or self.n_categories < 3:
                raise ConfigurationError(
                    f"outcome '{self.name}': ordinal outcomes need n_categories >= 3 "
                    "(use kind='binary' for two categories)"
                )
        elif self.n_categories is not None:
            raise ConfigurationError(f"outcome '{self.name}': n_categories only applies to ordinal outcomes")
        if self.is_anchor and self.kind != "ordinal":
            raise ConfigurationError(f"outcome '{self.name}': only an ordinal outcome can be the anchor")


@dataclass(frozen=True)
class DesignSpec:
    """Symbolic design for the latent-trait and baseline-hazard models.

    ``theta_knots`` are the truncated-power knots of the smooth time trend
    in theta; ``hazard_knots`` those of the log baseline hazard (default:
    same as theta_knots).
    """

    fixed_terms: tuple[Term, ...]
    random_terms: tuple[Term, ...]
    theta_knots: tuple[float, ...] = ()
    hazard_knots: tuple[float, ...] | None = None

    def __post_init__(self):
        for label, knots in (("theta_knots", self.theta_knots), ("hazard_knots", self.hazard_knots)):
            if knots is not None and any(b <= a for a, b in zip(knots, knots[1:])):
                raise ConfigurationError(f"{label} must be strictly increasing")

    @property
    def effective_hazard_knots(self) -> tuple[float, ...]:
        return self.theta_knots if self.hazard_knots is None else self.hazard_knots

    @property
    def p(self) -> int:
        return len(self.fixed_terms)

    @property
    def q(self) -> int:
        return len(self.random_terms)

    @property
    def n_theta_knots(self) -> int:
        return len(self.theta_knots)

    @property
    def n_hazard_knots(self) -> int:
        return len(self.effective_hazard_knots)


@dataclass(frozen=True)
class ModelSpec:
    """Full model declaration: outcomes, designs, survival covariates, association form."""

    outcomes: tuple[OutcomeSpec, ...]
    design: DesignSpec
    survival_covariates: tuple[str, ...] = ()
    association: str = "M1"  # "M1" shared latent value, "M2" value+slope, "M3" shared random effects

    def __post_init__(self):
        if self.association not in ("M1", "M2", "M3"):
            raise ConfigurationError(f"unknown association form '{self.association}'")
        anchors = [o for o in self.outcomes if o.is_anchor]
        if len(anchors) != 1:
            raise ConfigurationError(
                f"exactly one ordinal outcome must be the anchor, found {len(anchors)}"
            )
        names = [o.name for o in self.outcomes]
        if len(set(names)) != len(names):
            raise ConfigurationError("outcome names must be unique")

    @property
    def anchor(self) -> OutcomeSpec:
        return next(o for o in self.outcomes if o.is_anchor)

    def outcome(self, name: str) -> OutcomeSpec:
        for o in self.outcomes:
            if o.name == name:
                return o
        raise ConfigurationError(f"unknown outcome '{name}'")

    @property
    def assoc_dim(self) -> int:
        if self.association == "M1":
            return 1
        if self.association == "M2":
            return 2
        return self.design.q

    @property
    def continuous_outcomes(self) -> tuple[OutcomeSpec, ...]:
        return tuple(o for o in self.outcomes if o.kind == "continuous")


# ---------------------------------------------------------------------------
# data records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Visit:
    """One visit: time in months plus per-outcome values (None/missing = skipped)."""

    time: float
    values: Mapping[str, float | None] = field(default_factory=dict)


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: baseline covariates, visit history, observed event time and indicator."""

    id: str
    covariates: Mapping[str, float]
    visits: tuple[Visit, ...]
    observed_time: float
    event: int

    def __post_init__(self):
        if self.observed_time <= 0:
            raise DataError(f"subject '{self.id}': observed_time must be > 0")
        if self.event not in (0, 1):
            raise DataError(f"subject '{self.id}': event indicator must be 0 or 1")
        times = [v.time for v in self.visits]
        if any(t < 0 for t in times):
            raise DataError(f"subject '{self.id}': visit times must be >= 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DataError(f"subject '{self.id}': visit times must be strictly increasing")
        if times and times[-1] > self.observed_time:
            raise DataError(
                f"subject '{self.id}': visit at t={times[-1]} is after observed_time={self.observed_time}"
            )

    def validate_against(self, spec: ModelSpec) -> None:
        """Check outcome values against the model declaration."""
        for visit in self.visits:
            for name, value in visit.values.items():
                if value is None:
                    continue
                outcome = spec.outcome(name)
                if outcome.kind == "ordinal":
                    if not (float(value).is_integer() and 1 <= value <= outcome.n_categories):
                        raise DataError(
                            f"subject '{self.id}': ordinal outcome '{name}' value {value} "
                            f"not in 1..{outcome.n_categories}"
                        )
                elif outcome.kind == "binary" and value not in (0, 1):
                    raise DataError(
                        f"subject '{self.id}': binary outcome '{name}' value {value} not in {{0,1}}"
                    )


@dataclass(frozen=True)
class SubjectEffects:
    """Random-effect vector u for one subject."""

    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        if not np.all(np.isfinite(self.u)):
            raise DataError("subject effects must be finite")


@dataclass(frozen=True)
class LatentState:
    """Latent severity and its time derivative at one time point."""

    theta: float
    theta_prime: float


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParameterDraw:
    """One posterior sample of every model parameter.

    ``a`` maps outcome name to its intercept (length-1 array for
    continuous/binary) or increasing threshold vector (ordinal);
    ``b`` the positive loadings; ``sigma_eps`` the residual SDs of the
    continuous outcomes.  ``sd_u``/``corr_u`` parameterize the random
    effect covariance as standard deviations plus the upper-triangle
    correlations (row-major).  ``assoc`` is the association coefficient:
    scalar nu for M1, (nu1, nu2) for M2, one per random effect for M3.
    """

    a: Mapping[str, np.ndarray]
    b: Mapping[str, float]
    beta: np.ndarray
    sd_u: np.ndarray
    corr_u: np.ndarray
    sigma_eps: Mapping[str, float]
    zeta: np.ndarray
    sigma_zeta: float
    gamma: np.ndarray
    assoc: np.ndarray
    eta0: float
    eta1: float
    xi: np.ndarray
    sigma_xi: float

    def __post_init__(self):
        object.__setattr__(self, "a", {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in self.a.items()})
        for name in ("beta", "sd_u", "corr_u", "zeta", "gamma", "assoc", "xi"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))

    @property
    def Sigma(self) -> np.ndarray:
        """Random-effect covariance matrix implied by sd_u and corr_u."""
        q = len(self.sd_u)
        corr = np.eye(q)
        idx = 0
        for i in range(q):
            for j in range(i + 1, q):
                corr[i, j] = corr[j, i] = self.corr_u[idx]
                idx += 1
        return corr * np.outer(self.sd_u, self.sd_u)

    def validate(self, spec: ModelSpec) -> None:
        for outcome in spec.outcomes:
            a_k = self.a[outcome.name]
            if outcome.kind == "ordinal":
                if len(a_k) != outcome.n_categories - 1:
                    raise ConfigurationError(
                        f"outcome '{outcome.name}': expected {outcome.n_categories - 1} thresholds"
                    )
                if np.any(np.diff(a_k) <= 0):
                    raise ConfigurationError(f"outcome '{outcome.name}': thresholds must be increasing")
                if outcome.is_anchor and (a_k[0] != 0.0 or self.b[outcome.name] != 1.0):
                    raise ConfigurationError(
                        f"anchor outcome '{outcome.name}' requires a[0]=0 and b=1 exactly"
                    )
            if self.b[outcome.name] <= 0:
                raise ConfigurationError(f"outcome '{outcome.name}': loading must be positive")
            if outcome.kind == "continuous" and self.sigma_eps[outcome.name] <= 0:
                raise ConfigurationError(f"outcome '{outcome.name}': sigma_eps must be positive")
        if np.any(self.sd_u <= 0) or self.sigma_zeta <= 0 or self.sigma_xi <= 0:
            raise ConfigurationError("variance parameters must be positive")
        if len(self.assoc) != spec.assoc_dim:
            raise ConfigurationError(
                f"association form {spec.association} needs {spec.assoc_dim} coefficient(s), "
                f"got {len(self.assoc)}"
            )
        try:
            np.linalg.cholesky(self.Sigma)
        except np.linalg.LinAlgError:
            raise ConfigurationError("random-effect covariance is not positive definite") from None


# ---------------------------------------------------------------------------
# distributions returned by outcome_distribution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalOutcome:
    mean: float
    sd: float

    def log_density(self, y: float) -> float:
        z = (y - self.mean) / self.sd
        return -0.5 * z * z - math.log(self.sd) - 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class BernoulliOutcome:
    p: float

    def log_density(self, y: float) -> float:
        p = min(max(self.p, ORDINAL_PROB_FLOOR), 1.0 - 1e-16)
        return math.log(p) if y == 1 else math.log1p(-p)


@dataclass(frozen=True)
class OrdinalOutcome:
    probs: np.ndarray
    log_probs: np.ndarray

    def log_density(self, y: float) -> float:
        return max(float(self.log_probs[int(y) - 1]), math.log(ORDINAL_PROB_FLOOR))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def spline_basis(t: float, knots) -> np.ndarray:
    """Truncated power basis ((t - kappa_1)_+, ..., (t - kappa_R)_+)."""
    knots = np.asarray(knots, dtype=float)
    if knots.size and np.any(np.diff(knots) <= 0):
        raise ConfigurationError("spline knots must be strictly increasing")
    return np.maximum(t - knots, 0.0)


def latent_trait(
    covariates: Mapping[str, float],
    t: float,
    draw: ParameterDraw,
    effects: SubjectEffects,
    design: DesignSpec,
) -> LatentState:
    """Evaluate theta(t) and its derivative theta'(t) for one subject.

    The derivative of each hinge (t - kappa)_+ is taken as the indicator
    t > kappa, so at a knot the left derivative is returned.
    """
    theta = 0.0
    theta_prime = 0.0
    for coef, term in zip(draw.beta, design.fixed_terms):
        theta += coef * term.value(covariates, t)
        theta_prime += coef * term.slope(covariates)
    for coef, term in zip(effects.u, design.random_terms):
        theta += coef * term.value(covariates, t)
        theta_prime += coef * term.slope(covariates)
    for coef, knot in zip(draw.zeta, design.theta_knots):
        if t > knot:
            theta += coef * (t - knot)
            theta_prime += coef
    return LatentState(theta=float(theta), theta_prime=float(theta_prime))


def ordinal_category_probs(thresholds: np.ndarray, b: float, theta: float) -> np.ndarray:
    """Category masses P(y = l) from cumulative logits a_l - b*theta."""
    cum = expit(np.asarray(thresholds, dtype=float) - b * theta)
    full = np.concatenate(([0.0], cum, [1.0]))
    return np.maximum(np.diff(full), 0.0)


def ordinal_category_log_probs(thresholds: np.ndarray, b: float, theta: float) -> np.ndarray:
    """log of the same category masses, stable far into the tails.

    The mass expit(up) - expit(lo) is evaluated without cancellation as
    e^{-lo}(1 - e^{-(up-lo)}) / ((1 + e^{-up})(1 + e^{-lo})), in logs.
    """
    logits = np.asarray(thresholds, dtype=float) - b * theta
    softplus_neg = np.logaddexp(0.0, -logits)  # log(1 + e^{-x})
    softplus_pos = np.logaddexp(0.0, logits)
    out = np.empty(len(logits) + 1)
    out[0] = -softplus_neg[0]  # log expit(first logit)
    out[-1] = -softplus_pos[-1]  # log(1 - expit(last logit))
    if len(logits) > 1:
        gap = logits[1:] - logits[:-1]
        with np.errstate(divide="ignore"):
            log_gap = np.log(-np.expm1(-gap))
        out[1:-1] = log_gap - softplus_neg[1:] - softplus_pos[:-1]
    return out


def outcome_distribution(outcome: OutcomeSpec, theta: float, draw: ParameterDraw):
    """Conditional distribution of one outcome given the latent severity."""
    a_k = draw.a[outcome.name]
    b_k = draw.b[outcome.name]
    if outcome.kind == "continuous":
        return NormalOutcome(mean=float(a_k[0] + b_k * theta), sd=float(draw.sigma_eps[outcome.name]))
    if outcome.kind == "binary":
        return BernoulliOutcome(p=float(expit(a_k[0] + b_k * theta)))
    return OrdinalOutcome(
        probs=ordinal_category_probs(a_k, b_k, theta),
        log_probs=ordinal_category_log_probs(a_k, b_k, theta),
    )


def longitudinal_loglik(
    subject: SubjectRecord,
    draw: ParameterDraw,
    effects: SubjectEffects,
    spec: ModelSpec,
) -> float:
    """Conditional log-likelihood of a subject's visit data given u.

    Missing outcome values contribute nothing (missing-at-random skip).
    Ordinal masses are floored at 1e-300 before the log so an early
    divergent draw yields a very negative, finite value.
    """
    total = 0.0
    for visit in subject.visits:
        state = latent_trait(subject.covariates, visit.time, draw, effects, spec.design)
        for outcome in spec.outcomes:
            y = visit.values.get(outcome.name)
            if y is None:
                continue
            total += outcome_distribution(outcome, state.theta, draw).log_density(y)
    return total
