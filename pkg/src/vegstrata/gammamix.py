"""Two-component Gamma mixture fitted to point elevations.

The mixture separates ground-level returns (soil, grass) from vegetation
returns (bushes, tree crowns).  Fitting uses expectation / conditional
maximization: responsibilities in the E-step, then the mixture weights,
shapes (via a Newton solve of the profile likelihood equation) and rates
in turn.  Components use the shape-rate parameterization, i.e. the rate
update is the conditional MLE ``rate = shape * sum(w) / sum(w * z)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DegeneracyError, DomainError, FittingError

# Elevations of exact ground hits are clamped to this floor (meters) so the
# Gamma density stays finite in log space.
Z_FLOOR = 1e-4

# Upper bound substituted for the shape when a component concentrates on a
# single elevation value (e.g. the clamped-zero atom) and the profile
# equation has no finite root.
SHAPE_CAP = 1e6


@dataclass(frozen=True)
class GammaComponent:
    """One Gamma distribution in shape-rate form."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0.0 and self.rate > 0.0):
            raise DomainError(
                f"Gamma component needs shape > 0 and rate > 0, "
                f"got shape={self.shape}, rate={self.rate}"
            )

    @property
    def mean(self) -> float:
        return self.shape / self.rate


@dataclass(frozen=True)
class GammaMixture:
    """Ground / non-ground elevation mixture."""

    ground: GammaComponent
    nonground: GammaComponent
    weight_ground: float
    weight_nonground: float

    def __post_init__(self):
        if not (self.weight_ground > 0.0 and self.weight_nonground > 0.0):
            raise DomainError("mixture weights must be strictly positive")
        if abs(self.weight_ground + self.weight_nonground - 1.0) > 1e-12:
            raise DomainError(
                f"mixture weights must sum to 1, got "
                f"{self.weight_ground} + {self.weight_nonground}"
            )

    def to_json(self) -> str:
        return json.dumps(
            {
                "ground": {"shape": self.ground.shape, "rate": self.ground.rate},
                "nonground": {
                    "shape": self.nonground.shape,
                    "rate": self.nonground.rate,
                },
                "weights": [self.weight_ground, self.weight_nonground],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "GammaMixture":
        d = json.loads(text)
        return cls(
            ground=GammaComponent(d["ground"]["shape"], d["ground"]["rate"]),
            nonground=GammaComponent(d["nonground"]["shape"], d["nonground"]["rate"]),
            weight_ground=d["weights"][0],
            weight_nonground=d["weights"][1],
        )


def gamma_logpdf(z, component: GammaComponent):
    """Log density of a Gamma(shape, rate) at elevations ``z`` (meters, >= 0).

    Evaluated fully in log space; ``z == 0`` yields ``-inf`` for shape > 1,
    ``+inf`` would only occur for shape < 1 at exactly 0 (callers clamp).
    """
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise DomainError("elevations must be non-negative")
    a, b = component.shape, component.rate
    const = a * np.log(b) - gammaln(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        logz = np.log(z)
        out = np.where(z > 0, const + (a - 1.0) * logz - b * z, 0.0)
    if np.any(z == 0):
        # Limit at the origin: density 0 above shape 1, rate at shape 1,
        # divergent below shape 1.
        at0 = -np.inf if a > 1 else (np.log(b) if a == 1 else np.inf)
        out = np.where(z == 0, at0, out)
    return out


def gamma_pdf(z, component: GammaComponent):
    """Gamma density; returns 0 at z=0 when shape > 1."""
    out = np.exp(gamma_logpdf(z, component))
    return out


# Bernoulli-number coefficients of the asymptotic expansion of digamma.
_PSI_COEFFS = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
)
_PSI_SHIFT = 10.0


def digamma(x):
    """Digamma psi(x) for x > 0.

    Uses the recurrence psi(x) = psi(x + 1) - 1/x to shift the argument
    above 10, then the asymptotic series.  Relative error below 1e-10 on
    the positive axis.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("digamma requires x > 0")
    scalar = x.ndim == 0
    x = np.atleast_1d(x).copy()
    acc = np.zeros_like(x)
    while True:
        small = x < _PSI_SHIFT
        if not small.any():
            break
        acc[small] -= 1.0 / x[small]
        x[small] += 1.0
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    term = inv2.copy()
    for c in _PSI_COEFFS:
        series += c * term
        term *= inv2
    out = acc + np.log(x) - 0.5 / x - series
    return out[0] if scalar else out


_TRIGAMMA_COEFFS = (1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0, 5.0 / 66.0)


def trigamma(x):
    """First derivative of digamma, x > 0 (used by the Newton shape solve)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("trigamma requires x > 0")
    scalar = x.ndim == 0
    x = np.atleast_1d(x).copy()
    acc = np.zeros_like(x)
    while True:
        small = x < _PSI_SHIFT
        if not small.any():
            break
        acc[small] += 1.0 / (x[small] * x[small])
        x[small] += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = np.zeros_like(x)
    term = inv * inv2
    for c in _TRIGAMMA_COEFFS:
        series += c * term
        term *= inv2
    out = acc + inv + 0.5 * inv2 + series
    return out[0] if scalar else out


def solve_shape(
    weighted_log_mean: float,
    weighted_mean: float,
    weight_sum: float,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> float:
    """Solve log(a) - psi(a) = log(weighted_mean) - weighted_log_mean for a.

    This is the profile equation for the Gamma shape once the rate is
    substituted by its conditional MLE.  Newton iterations on log(a) with a
    bisection fallback; the residual at the returned root is below ``tol``.
    """
    if weight_sum <= 0:
        raise DegeneracyError("weight_sum must be positive")
    if weighted_mean <= 0:
        raise DegeneracyError("weighted mean elevation must be positive")
    s = float(np.log(weighted_mean) - weighted_log_mean)
    if s <= 0:
        raise DegeneracyError(
            "log(mean) - mean(log) is non-positive: all mass at one value"
        )

    def f(a):
        return np.log(a) - digamma(a) - s

    # Standard closed-form starting point for the Gamma shape MLE.
    a = (3.0 - s + np.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    lo, hi = None, None
    for _ in range(max_iter):
        fa = f(a)
        if abs(fa) <= tol:
            return float(a)
        if fa > 0:  # a too small (f is decreasing in a)
            lo = a
        else:
            hi = a
        fprime = 1.0 / a - trigamma(a)
        a_new = a - fa / fprime
        bracketed = lo is not None and hi is not None
        if (
            not np.isfinite(a_new)
            or a_new <= 0
            or (bracketed and not lo < a_new < hi)
        ):
            if bracketed:
                a_new = 0.5 * (lo + hi)
            elif hi is None:
                a_new = 2.0 * a
            else:
                a_new = 0.5 * a
        if a_new > 1e12:
            raise DegeneracyError("shape solve diverged (rhs too close to 0)")
        a = a_new
    raise DegeneracyError("shape solve did not converge")


def quantile_init(elevations, q: float = 0.5) -> GammaMixture:
    """Moment-match the two components below/above the ``q`` quantile."""
    z = np.asarray(elevations, dtype=float)
    z = np.where(z == 0.0, Z_FLOOR, z)
    thr = np.quantile(z, q)
    parts = [z[z <= thr], z[z > thr]]
    comps = []
    for part in parts:
        if part.size < 2:
            part = z
        m = part.mean()
        v = max(part.var(), 1e-8)
        shape = max(m * m / v, 1e-3)
        rate = max(m / v, 1e-3)
        comps.append(GammaComponent(shape, rate))
    return GammaMixture(
        ground=comps[0], nonground=comps[1], weight_ground=q, weight_nonground=1.0 - q
    )


def moment_init(elevations) -> GammaMixture:
    """Reproducible default initialization: moment match below/above the median."""
    return quantile_init(elevations, 0.5)


# Default multi-start: quantile splits tried when no explicit init is given.
INIT_QUANTILES = (0.25, 0.5, 0.75)


def _estep(z, mixture):
    """Responsibilities and log-likelihood for the current parameters."""
    lg = np.log(mixture.weight_ground) + gamma_logpdf(z, mixture.ground)
    lng = np.log(mixture.weight_nonground) + gamma_logpdf(z, mixture.nonground)
    m = np.maximum(lg, lng)
    lse = m + np.log(np.exp(lg - m) + np.exp(lng - m))
    e_g = np.exp(lg - lse)
    return e_g, 1.0 - e_g, float(lse.sum())


def ecm_fit(
    elevations,
    init: GammaMixture | None = None,
    max_iter: int = 200,
    tol: float = 1e-6,
):
    """Fit the two-component mixture by ECM.

    Parameters
    ----------
    elevations : array of meters >= 0; exact zeros are clamped to 1e-4 m.
    init : starting mixture; defaults to a median moment split.
    max_iter : iteration cap.
    tol : stop when the relative log-likelihood change falls below this.

    Returns
    -------
    (mixture, trace) where trace is the per-iteration log-likelihood, a
    non-decreasing sequence (within 1e-9 per step).

    Without an explicit ``init``, ECM runs once from each quantile-split
    starting point and the run with the best final log-likelihood wins;
    the mixture likelihood is multi-modal and a single moment-matched
    start can settle in a poor basin.
    """
    z = np.asarray(elevations, dtype=float)
    if z.ndim != 1 or z.size < 2:
        raise FittingError("need at least two elevations")
    if np.any(z < 0):
        raise DomainError("elevations must be non-negative")
    z = np.where(z == 0.0, Z_FLOOR, z)
    if np.unique(z).size < 2:
        raise FittingError("need at least two distinct positive elevations")
    if init is not None:
        return _ecm_run(z, init, max_iter, tol)
    best = None
    for q in INIT_QUANTILES:
        mix, trace = _ecm_run(z, quantile_init(z, q), max_iter, tol)
        if best is None or trace[-1] > best[1][-1]:
            best = (mix, trace)
    return best


def _ecm_run(z, init, max_iter, tol):
    logz = np.log(z)
    mix = init

    trace = []
    n = z.size
    for _ in range(max_iter):
        e_g, e_ng, ll = _estep(z, mix)
        trace.append(ll)
        comps = {}
        weights = {}
        for name, e in (("ground", e_g), ("nonground", e_ng)):
            w_sum = e.sum()
            rho = w_sum / n
            if rho < 1e-6:
                raise DegeneracyError(f"mixture weight of the {name} component collapsed")
            wm = float(e @ z) / w_sum
            wlm = float(e @ logz) / w_sum
            try:
                shape = solve_shape(wlm, wm, w_sum)
            except DegeneracyError:
                # All the component's mass sits on (numerically) one value;
                # pin the shape at the cap so the component approximates a
                # point mass at its weighted mean instead of aborting.
                shape = SHAPE_CAP
            rate = shape * w_sum / float(e @ z)
            comps[name] = GammaComponent(shape, rate)
            weights[name] = rho
        mix = GammaMixture(
            ground=comps["ground"],
            nonground=comps["nonground"],
            weight_ground=weights["ground"],
            weight_nonground=weights["nonground"],
        )
        if len(trace) >= 2:
            prev, cur = trace[-2], trace[-1]
            if abs(cur - prev) <= tol * abs(prev):
                break
    # Final log-likelihood under the last parameter update.
    _, _, ll = _estep(z, mix)
    trace.append(ll)
    return mix, np.asarray(trace)
