"""Hazard evaluation and closed-form piecewise survival likelihood.

Because theta(t) and the log baseline hazard are both piecewise-linear
in t (truncated power basis of degree one), the subject log hazard is
piecewise-linear: log h(s) = A + B*s between consecutive knots.  The
cumulative hazard on each piece is then exp(A)(e^{B t_hi} - e^{B t_lo})/B
in closed form, which this module exploits everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, HazardOverflowError
from .model import ModelSpec, ParameterDraw, SubjectEffects, SubjectRecord

_EXP_OVERFLOW = 700.0  # log-scale bound before exp() overflows double precision
_FLAT_SLOPE = 1e-8  # |B| below this integrates as a midpoint rectangle


@dataclass(frozen=True)
class HazardSegment:
    """log h(s) = intercept + slope * s on [t_lo, t_hi]."""

    t_lo: float
    t_hi: float
    intercept: float
    slope: float


def _assoc_coeffs(spec: ModelSpec, draw: ParameterDraw, form: str) -> None:
    if form not in ("M1", "M2", "M3"):
        raise ConfigurationError(f"unknown association form '{form}'")
    expected = {"M1": 1, "M2": 2, "M3": spec.design.q}[form]
    if len(draw.assoc) != expected:
        raise ConfigurationError(
            f"association form {form} needs {expected} coefficient(s), got {len(draw.assoc)}"
        )


def _theta_linear_pieces(subject, draw, effects, design, active_theta):
    """Constant and slope of theta(s) = c + d*s given which theta-knots are active."""
    c = 0.0
    d = 0.0
    for coef, term in zip(draw.beta, design.fixed_terms):
        c += coef * term.constant(subject.covariates)
        d += coef * term.slope(subject.covariates)
    for coef, term in zip(effects.u, design.random_terms):
        c += coef * term.constant(subject.covariates)
        d += coef * term.slope(subject.covariates)
    for coef, knot, active in zip(draw.zeta, design.theta_knots, active_theta):
        if active:
            c -= coef * knot
            d += coef
    return c, d


def _segment_pieces(subject, draw, effects, spec, form, active_theta, active_hazard):
    """(A, B) of log h(s) = A + B*s for a fixed set of active hinges."""
    design = spec.design
    A = draw.eta0
    B = draw.eta1
    for coef, knot, active in zip(draw.xi, design.effective_hazard_knots, active_hazard):
        if active:
            A -= coef * knot
            B += coef
    for coef, name in zip(draw.gamma, spec.survival_covariates):
        A += coef * subject.covariates[name]
    theta_c, theta_d = _theta_linear_pieces(subject, draw, effects, design, active_theta)
    if form == "M1":
        A += draw.assoc[0] * theta_c
        B += draw.assoc[0] * theta_d
    elif form == "M2":
        A += draw.assoc[0] * theta_c + draw.assoc[1] * theta_d
        B += draw.assoc[0] * theta_d
    else:  # M3: raw random effects, constant in s
        A += float(np.dot(draw.assoc, effects.u))
    return A, B


def log_hazard(
    subject: SubjectRecord,
    t: float,
    draw: ParameterDraw,
    effects: SubjectEffects,
    spec: ModelSpec,
    form: str | None = None,
) -> float:
    """Subject log hazard at time t under the given association form."""
    form = spec.association if form is None else form
    _assoc_coeffs(spec, draw, form)
    design = spec.design
    active_theta = [t > k for k in design.theta_knots]
    active_hazard = [t > k for k in design.effective_hazard_knots]
    A, B = _segment_pieces(subject, draw, effects, spec, form, active_theta, active_hazard)
    return A + B * t


def segmentize(
    subject: SubjectRecord,
    upto: float,
    draw: ParameterDraw,
    effects: SubjectEffects,
    spec: ModelSpec,
    form: str | None = None,
    start: float = 0.0,
) -> list[HazardSegment]:
    """Partition [start, upto] at every knot in between; log h is linear on each piece."""
    form = spec.association if form is None else form
    _assoc_coeffs(spec, draw, form)
    design = spec.design
    theta_knots = design.theta_knots
    hazard_knots = design.effective_hazard_knots
    breaks = sorted(
        {start, upto, *(k for k in (*theta_knots, *hazard_knots) if start < k < upto)}
    )
    segments = []
    for lo, hi in zip(breaks, breaks[1:]):
        # a hinge at kappa is active on (kappa, hi]; test at any interior point
        active_theta = [lo >= k for k in theta_knots]
        active_hazard = [lo >= k for k in hazard_knots]
        A, B = _segment_pieces(subject, draw, effects, spec, form, active_theta, active_hazard)
        segments.append(HazardSegment(t_lo=lo, t_hi=hi, intercept=A, slope=B))
    return segments


def cumulative_hazard(segments: list[HazardSegment]) -> float:
    """Integral of the hazard over the segment list, in closed form per piece."""
    total = 0.0
    for seg in segments:
        A, B, lo, hi = seg.intercept, seg.slope, seg.t_lo, seg.t_hi
        if max(A + B * lo, A + B * hi) > _EXP_OVERFLOW:
            raise HazardOverflowError(
                f"hazard overflow on [{lo}, {hi}] (log h up to {max(A + B * lo, A + B * hi):.1f})",
                segment=seg,
            )
        if abs(B) < _FLAT_SLOPE:
            total += np.exp(A + B * 0.5 * (lo + hi)) * (hi - lo)
        else:
            total += np.exp(A) * (np.exp(B * hi) - np.exp(B * lo)) / B
    return float(total)


def survival_loglik(
    subject: SubjectRecord,
    draw: ParameterDraw,
    effects: SubjectEffects,
    spec: ModelSpec,
    form: str | None = None,
) -> float:
    """delta * log h(t_obs) - H(t_obs); overflow from divergent draws propagates."""
    t = subject.observed_time
    H = cumulative_hazard(segmentize(subject, t, draw, effects, spec, form))
    out = -H
    if subject.event:
        out += log_hazard(subject, t, draw, effects, spec, form)
    return out
