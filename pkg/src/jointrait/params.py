"""Flat parameter layout: natural values, unconstrained transforms, priors.

The sampler and the gradient work on an unconstrained vector; the
archive and all public operations use natural (constrained) values.
Per coordinate the layout records the transform (identity, log, atanh)
and a prior tag evaluated by the inference module.

Coordinates, in packing order:
  per outcome        a / b / sigma_eps (continuous), a / b (binary),
                     a1 (non-anchor), threshold increments, b (non-anchor ordinal)
  latent trait       beta, zeta, sigma_zeta (only with knots)
  survival           gamma, assoc, eta0, eta1, xi, sigma_xi (only with knots)
  random effects     sd_u, corr_u (upper triangle, row-major)

Anchored coordinates (first threshold and loading of the anchor outcome)
are fixed, not sampled, and therefore absent from the layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, ParameterDraw


@dataclass(frozen=True)
class Coord:
    name: str
    transform: str  # "identity" | "log" | "atanh"
    prior: str
    group: str
    offset: int  # index within the group


class ParameterLayout:
    """Bidirectional map between ParameterDraw and a flat natural vector."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        coords: list[Coord] = []
        self._group_slices: dict[str, slice] = {}

        def add_group(group, entries):
            start = len(coords)
            for i, (name, transform, prior) in enumerate(entries):
                coords.append(Coord(name, transform, prior, group, i))
            self._group_slices[group] = slice(start, len(coords))

        for outcome in spec.outcomes:
            k = outcome.name
            if outcome.kind == "continuous":
                add_group(f"a:{k}", [(f"a[{k}]", "identity", "flat")])
                add_group(f"b:{k}", [(f"b[{k}]", "log", "flat_pos")])
                add_group(f"sigma_eps:{k}", [(f"sigma_eps[{k}]", "log", "flat_precision")])
            elif outcome.kind == "binary":
                add_group(f"a:{k}", [(f"a[{k}]", "identity", "normal")])
                add_group(f"b:{k}", [(f"b[{k}]", "log", "uniform_b")])
            else:
                entries = []
                if not outcome.is_anchor:
                    entries.append((f"a[{k},1]", "identity", "normal"))
                entries += [
                    (f"delta[{k},{l}]", "log", "half_normal")
                    for l in range(2, outcome.n_categories)
                ]
                add_group(f"thresh:{k}", entries)
                if not outcome.is_anchor:
                    add_group(f"b:{k}", [(f"b[{k}]", "log", "uniform_b")])

        design = spec.design
        add_group("beta", [(f"beta[{j}]", "identity", "normal") for j in range(design.p)])
        if design.n_theta_knots:
            add_group("zeta", [(f"zeta[{r}]", "identity", "spline_coef") for r in range(design.n_theta_knots)])
            add_group("sigma_zeta", [("sigma_zeta", "log", "invgamma")])
        add_group("gamma", [(f"gamma[{w}]", "identity", "normal") for w in spec.survival_covariates])
        add_group("assoc", [(f"assoc[{j}]", "identity", "normal") for j in range(spec.assoc_dim)])
        add_group("eta0", [("eta0", "identity", "normal")])
        add_group("eta1", [("eta1", "identity", "normal")])
        if design.n_hazard_knots:
            add_group("xi", [(f"xi[{r}]", "identity", "spline_coef") for r in range(design.n_hazard_knots)])
            add_group("sigma_xi", [("sigma_xi", "log", "invgamma")])
        q = design.q
        add_group("sd_u", [(f"sd_u[{m}]", "log", "invgamma") for m in range(q)])
        add_group(
            "corr_u",
            [
                (f"corr_u[{i},{j}]", "atanh", "uniform_rho")
                for i in range(q)
                for j in range(i + 1, q)
            ],
        )

        self.coords = tuple(coords)
        self.size = len(coords)
        self.names = tuple(c.name for c in coords)
        self.transforms = np.array([c.transform for c in coords])
        self._is_log = self.transforms == "log"
        self._is_atanh = self.transforms == "atanh"

    def group(self, name: str) -> slice:
        return self._group_slices[name]

    def has_group(self, name: str) -> bool:
        return name in self._group_slices

    # -- natural <-> unconstrained ------------------------------------------

    def to_unconstrained(self, natural: np.ndarray) -> np.ndarray:
        v = np.array(natural, dtype=float)
        v[self._is_log] = np.log(v[self._is_log])
        v[self._is_atanh] = np.arctanh(v[self._is_atanh])
        return v

    def to_natural(self, v: np.ndarray) -> np.ndarray:
        natural = np.array(v, dtype=float)
        natural[self._is_log] = np.exp(natural[self._is_log])
        natural[self._is_atanh] = np.tanh(natural[self._is_atanh])
        return natural

    def log_jacobian(self, v: np.ndarray) -> float:
        """log |d natural / d unconstrained| of the coordinate-wise transform."""
        total = float(np.sum(v[self._is_log]))
        if np.any(self._is_atanh):
            rho = np.tanh(v[self._is_atanh])
            total += float(np.sum(np.log1p(-rho * rho)))
        return total

    # -- natural vector <-> ParameterDraw ------------------------------------

    def from_draw(self, draw: ParameterDraw) -> np.ndarray:
        spec = self.spec
        natural = np.empty(self.size)

        def put(group, values):
            if self.has_group(group):
                natural[self.group(group)] = np.atleast_1d(values)

        for outcome in spec.outcomes:
            k = outcome.name
            if outcome.kind == "ordinal":
                thresholds = draw.a[k]
                pieces = [] if outcome.is_anchor else [thresholds[0]]
                pieces += list(np.diff(thresholds))
                put(f"thresh:{k}", np.array(pieces))
                if not outcome.is_anchor:
                    put(f"b:{k}", draw.b[k])
            else:
                put(f"a:{k}", draw.a[k][0])
                put(f"b:{k}", draw.b[k])
                if outcome.kind == "continuous":
                    put(f"sigma_eps:{k}", draw.sigma_eps[k])
        put("beta", draw.beta)
        put("zeta", draw.zeta)
        put("sigma_zeta", draw.sigma_zeta)
        put("gamma", draw.gamma)
        put("assoc", draw.assoc)
        put("eta0", draw.eta0)
        put("eta1", draw.eta1)
        put("xi", draw.xi)
        put("sigma_xi", draw.sigma_xi)
        put("sd_u", draw.sd_u)
        put("corr_u", draw.corr_u)
        return natural

    def to_draw(self, natural: np.ndarray) -> ParameterDraw:
        spec = self.spec

        def get(group, default=None):
            if self.has_group(group):
                return np.array(natural[self.group(group)])
            return default

        a = {}
        b = {}
        sigma_eps = {}
        for outcome in spec.outcomes:
            k = outcome.name
            if outcome.kind == "ordinal":
                vals = get(f"thresh:{k}")
                if outcome.is_anchor:
                    first, deltas = 0.0, vals
                    b[k] = 1.0
                else:
                    first, deltas = vals[0], vals[1:]
                    b[k] = float(get(f"b:{k}")[0])
                a[k] = first + np.concatenate(([0.0], np.cumsum(deltas)))
            else:
                a[k] = get(f"a:{k}")
                b[k] = float(get(f"b:{k}")[0])
                if outcome.kind == "continuous":
                    sigma_eps[k] = float(get(f"sigma_eps:{k}")[0])
        return ParameterDraw(
            a=a,
            b=b,
            beta=get("beta"),
            sd_u=get("sd_u"),
            corr_u=get("corr_u", np.zeros(0)),
            sigma_eps=sigma_eps,
            zeta=get("zeta", np.zeros(0)),
            sigma_zeta=float(get("sigma_zeta", [1.0])[0]),
            gamma=get("gamma", np.zeros(0)),
            assoc=get("assoc"),
            eta0=float(get("eta0")[0]),
            eta1=float(get("eta1")[0]),
            xi=get("xi", np.zeros(0)),
            sigma_xi=float(get("sigma_xi", [1.0])[0]),
        )

    # -- vectorized extraction from an (M, size) natural matrix ---------------

    def thresholds_matrix(self, matrix: np.ndarray, outcome_name: str) -> np.ndarray:
        """Per-draw ordinal thresholds (M, n_k - 1) from increments."""
        outcome = self.spec.outcome(outcome_name)
        vals = matrix[:, self.group(f"thresh:{outcome_name}")]
        if outcome.is_anchor:
            first = np.zeros(vals.shape[0])
            deltas = vals
        else:
            first, deltas = vals[:, 0], vals[:, 1:]
        return first[:, None] + np.concatenate(
            [np.zeros((vals.shape[0], 1)), np.cumsum(deltas, axis=1)], axis=1
        )

    def loading_matrix(self, matrix: np.ndarray, outcome_name: str) -> np.ndarray:
        """Per-draw loading b_k (M,), handling the anchored outcome."""
        if self.has_group(f"b:{outcome_name}"):
            return matrix[:, self.group(f"b:{outcome_name}")][:, 0]
        return np.ones(matrix.shape[0])
