"""Synthetic data generator mirroring the simulation design used for
tests, benchmarks, and the acceptance suite.

One continuous and two 7-category ordinal outcomes are driven by
theta(t) = b0 + b1*x1 + (b2 + b3*x1)*t + u0 + u1*t; the event hazard is
h0 * exp(gamma*x2 + nu*theta(t)), which is log-linear in t per subject,
so event times invert in closed form.  Censoring is Uniform(10, 24)
with an administrative cap at month 24.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ModelSpec, ParameterDraw, SubjectRecord, Visit, ordinal_category_probs
from .errors import ConfigurationError

DEFAULT_VISIT_GRID = (0.0, 3.0, 6.0, 12.0, 18.0, 24.0)


def default_spec(association: str = "M1") -> ModelSpec:
    """Model declaration matching the simulation design."""
    from .model import DesignSpec, OutcomeSpec, Term

    return ModelSpec(
        outcomes=(
            OutcomeSpec("y1", "continuous"),
            OutcomeSpec("y2", "ordinal", n_categories=7, is_anchor=True),
            OutcomeSpec("y3", "ordinal", n_categories=7),
        ),
        design=DesignSpec(
            fixed_terms=(Term(), Term("x1"), Term(None, True), Term("x1", True)),
            random_terms=(Term(), Term(None, True)),
        ),
        survival_covariates=("x2",),
        association=association,
    )


def default_truth(spec: ModelSpec | None = None) -> ParameterDraw:
    """The generating parameter values."""
    spec = spec or default_spec()
    return ParameterDraw(
        a={"y1": np.array([15.0]), "y2": np.array([0.0, 1, 2, 4, 5, 6]), "y3": np.array([-1.0, 1, 3, 4, 6, 8])},
        b={"y1": 7.0, "y2": 1.0, "y3": 1.2},
        beta=np.array([-1.0, -0.2, 0.8, -0.2]),
        sd_u=np.array([1.5, 0.15]),
        corr_u=np.array([0.4]),
        sigma_eps={"y1": 5.0},
        zeta=np.zeros(0),
        sigma_zeta=1.0,
        gamma=np.array([-0.12]),
        assoc=np.array([0.75]),
        eta0=math.log(0.1),
        eta1=0.0,
        xi=np.zeros(0),
        sigma_xi=1.0,
    )


@dataclass(frozen=True)
class SimScenario:
    n_subjects: int = 800
    visit_grid: tuple[float, ...] = DEFAULT_VISIT_GRID
    truth: ParameterDraw = field(default_factory=default_truth)
    censor_low: float = 10.0
    censor_high: float = 24.0
    admin_cap: float = 24.0
    seed: int = 0

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.visit_grid, self.visit_grid[1:])):
            raise ConfigurationError("visit grid must be strictly increasing")
        if len(self.truth.beta) != 4 or len(self.truth.assoc) != 1:
            raise ConfigurationError("scenario truth must match the 4-term shared-value design")


def inverse_survival_sample(c: float, dslope: float, unit_exp: float) -> float:
    """Event time T with hazard exp(c + dslope*t) and H(T) = unit_exp.

    Solves exp(c)(e^{dslope*T} - 1)/dslope = unit_exp.  A negative slope
    caps the total hazard at e^c/(-dslope); draws beyond it never fail
    and return +inf.
    """
    if abs(dslope) < 1e-12:
        return unit_exp * math.exp(-c)
    arg = dslope * unit_exp * math.exp(-c)
    if arg <= -1.0:
        return math.inf
    return math.log1p(arg) / dslope


@dataclass(frozen=True)
class SubjectTruth:
    """Per-subject generating state kept alongside the dataset."""

    id: str
    u: np.ndarray
    event_time: float
    hazard_intercept: float  # c in log h(t) = c + d*t
    hazard_slope: float

    def true_risk(self, landmark: float, horizon: float) -> float:
        """P(T <= horizon | T > landmark) under the generating hazard."""
        c, d = self.hazard_intercept, self.hazard_slope
        if abs(d) < 1e-12:
            H = math.exp(c) * (horizon - landmark)
        else:
            H = math.exp(c) * (math.exp(d * horizon) - math.exp(d * landmark)) / d
        return 1.0 - math.exp(-H)


def generate_dataset(scenario: SimScenario) -> tuple[list[SubjectRecord], list[SubjectTruth]]:
    """Draw a dataset plus its ground-truth record, deterministically by seed."""
    truth = scenario.truth
    rng = np.random.default_rng(scenario.seed)
    # scale standard normals through the correlation factor so that
    # degenerate scenarios (zero random-effect SDs) stay valid
    rho = float(truth.corr_u[0])
    corr_chol = np.linalg.cholesky(np.array([[1.0, rho], [rho, 1.0]]))
    chol = np.asarray(truth.sd_u)[:, None] * corr_chol
    grid = np.asarray(scenario.visit_grid)
    subjects = []
    truths = []
    for i in range(scenario.n_subjects):
        sid = f"sim{i:05d}"
        x1 = float(rng.integers(0, 2))
        x2 = float(rng.integers(30, 81))
        u = chol @ rng.standard_normal(2)
        intercept = truth.beta[0] + truth.beta[1] * x1 + u[0]
        slope = truth.beta[2] + truth.beta[3] * x1 + u[1]
        c = truth.eta0 + truth.gamma[0] * x2 + truth.assoc[0] * intercept
        d = truth.eta1 + truth.assoc[0] * slope
        event_time = inverse_survival_sample(c, d, rng.exponential())
        censor = rng.uniform(scenario.censor_low, scenario.censor_high)
        observed = min(event_time, censor, scenario.admin_cap)
        delta = int(event_time <= min(censor, scenario.admin_cap))
        visits = []
        for t in grid[grid <= observed]:
            theta_t = intercept + slope * t
            y1 = truth.a["y1"][0] + truth.b["y1"] * theta_t + rng.normal(0.0, truth.sigma_eps["y1"])
            p2 = ordinal_category_probs(truth.a["y2"], truth.b["y2"], theta_t)
            p3 = ordinal_category_probs(truth.a["y3"], truth.b["y3"], theta_t)
            y2 = int(rng.choice(7, p=p2 / p2.sum())) + 1
            y3 = int(rng.choice(7, p=p3 / p3.sum())) + 1
            visits.append(Visit(float(t), {"y1": float(y1), "y2": y2, "y3": y3}))
        subjects.append(
            SubjectRecord(sid, {"x1": x1, "x2": x2}, tuple(visits), float(observed), delta)
        )
        truths.append(
            SubjectTruth(sid, u=u, event_time=float(event_time), hazard_intercept=float(c), hazard_slope=float(d))
        )
    return subjects, truths
