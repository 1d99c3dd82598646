"""Integral solvability criteria on rotationally symmetric manifolds.

All improper integrals are evaluated in the variable ``x = log t`` on
``[0, log horizon]`` with composite Simpson panels accumulated in log space
(so hyperbolic warps never overflow), and the part beyond the horizon is
classified by fitting the ``x``-integrand to ``A exp(-s x) x^(-m)``, i.e. the
``t``-integrand to ``A t^(-q) (log t)^(-m)`` with ``q = 1 + s``.

Tail rule: ``q > 1`` or ``(q = 1, m > 1)`` converges; otherwise diverges.
Exponents with ``|q - 1| <= Q_TOL`` are treated as ``q = 1`` and ``m`` is
refitted with ``q`` fixed; ``m`` within ``M_TOL`` above 1 counts as the
divergent borderline (the ``1/(t log t)`` family is the critical
case and the tail fit cannot resolve ``m`` more finely at desk horizons).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.special import logsumexp

from .manifold import WarpedMetric, sphere_area

__all__ = [
    "ConvergenceVerdict",
    "CriterionError",
    "CriterionInputError",
    "NestedIntegral",
    "PExponents",
    "j_integral",
    "nested_integral",
    "p_exponents",
    "p_integral",
    "parabolicity_check",
    "threshold_scan",
    "verdict_rows_csv",
    "verdict_report",
]

DEFAULT_HORIZON = 1e6
DEFAULT_PANELS = 2 ** 13
Q_TOL = 0.1
M_TOL = 0.05
_LOG_TINY = -700.0


class CriterionError(ValueError):
    """Bad input or an unstable tail fit (``horizon-too-small``)."""


class CriterionInputError(CriterionError):
    """Parameters outside the scope of a criterion (p range, horizon, form)."""


@dataclass(frozen=True)
class ConvergenceVerdict:
    status: str  # convergent | divergent | inconclusive
    value: float | None
    tail_rate: str
    horizon: float
    q: float = math.nan
    m: float = math.nan
    partial: float = math.nan
    tail_estimate: float = math.nan
    conclusion: str | None = None

    @property
    def convergent(self) -> bool:
        return self.status == "convergent"


@dataclass(frozen=True)
class PExponents:
    p: float
    alpha: float
    beta: float


def p_exponents(n: int, p: float) -> PExponents:
    """Barrier exponents for the p-Laplacian; ``alpha + beta = -2``."""
    if not 2 < p < n:
        raise CriterionInputError(f"p must lie in (2, n) = (2, {n}), got {p}")
    alpha = -(n - 1) / (p - 1)
    # beta written as -2 - alpha keeps the identity exact in floating point
    beta = -2.0 - alpha
    return PExponents(float(p), alpha, beta)


# --- log-space quadrature -------------------------------------------------

def _simpson_panels(logg, h):
    """Log of Simpson panel integrals over consecutive node pairs."""
    a, b, c = logg[:-2:2], logg[1:-1:2], logg[2::2]
    return logsumexp(np.stack([a, b + math.log(4.0), c]), axis=0) + math.log(h / 3.0)


def _log_cumulative(logg, h):
    panels = _simpson_panels(logg, h)
    return np.concatenate([[-np.inf], np.logaddexp.accumulate(panels)])


def _log_reverse_cumulative(logg, h):
    panels = _simpson_panels(logg, h)
    rev = np.logaddexp.accumulate(panels[::-1])[::-1]
    return np.concatenate([rev, [-np.inf]])


def _exp(v):
    return float(np.exp(v)) if v > _LOG_TINY else 0.0


# --- tail fitting ---------------------------------------------------------

@dataclass(frozen=True)
class _TailFit:
    s: float
    m: float
    log_a: float
    status: str

    def log_model(self, x):
        return self.log_a - self.s * x - self.m * np.log(x)

    def integral(self, X):
        """Integral of the fitted x-integrand over ``[X, inf)``."""
        if self.status != "convergent":
            return math.inf
        L0 = float(self.log_model(X))
        if L0 < _LOG_TINY:
            return 0.0
        g = lambda x: math.exp(float(self.log_model(x)) - L0)
        val, _ = integrate.quad(g, X, np.inf, limit=200)
        return val * math.exp(L0)


def _lstsq(cols, L):
    A = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(A, L, rcond=None)
    return coef


def _fit_window(x, L, corrections=0):
    ok = np.isfinite(L)
    x, L = x[ok], L[ok]
    if x.size < 8:
        return None
    if L[-1] < _LOG_TINY:
        # integrand has underflowed: faster than any power
        return _TailFit(math.inf, 0.0, -math.inf, "convergent")
    log_a, s, m = _lstsq([np.ones_like(x), -x, -np.log(x)], L)
    if s > Q_TOL:
        return _TailFit(s, m, log_a, "convergent")
    if s < -Q_TOL:
        return _TailFit(s, m, log_a, "divergent")
    coef = _lstsq([np.ones_like(x), -np.log(x)]
                  + [x ** -j for j in range(1, corrections + 1)], L)
    log_a, m = coef[0], coef[1]
    if corrections:
        # keep the pure power model for tail integration, matched at the end
        log_a = L[-1] + m * math.log(x[-1])
    status = "convergent" if m > 1 + M_TOL else "divergent"
    return _TailFit(0.0, m, log_a, status)


def _classify(x, L, X, corrections=0):
    """Fit the tail on the two halves of ``[X/2, X]``; they must agree."""
    w1 = (x >= 0.5 * X) & (x <= 0.75 * X)
    w2 = (x >= 0.75 * X) & (x <= X)
    wide = (x >= 0.5 * X) & (x <= X)
    fits = [_fit_window(x[w], L[w], corrections) for w in (w1, w2, wide)]
    if any(f is None for f in fits):
        raise CriterionError("horizon-too-small: not enough finite samples for a tail fit")
    f1, f2, fw = fits
    if f1.status != f2.status:
        return _TailFit(fw.s, fw.m, fw.log_a, "inconclusive")
    return _TailFit(fw.s, fw.m, fw.log_a, f2.status)


def _rate_text(fit):
    if math.isinf(fit.s):
        return "super-polynomial decay"
    return f"t^({-(1 + fit.s):.3f}) (log t)^({-fit.m:.3f})"


# --- nested integrals -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class NestedIntegral:
    """Precomputed pieces of ``int_1^inf f^outer(s) int_s^inf f^inner(t) dt ds``.

    Arrays live on the node grid ``x = log t``.  ``log_I`` is the cumulative
    ``int_1^t f^outer``; ``log_G`` the swapped integrand ``t f^inner(t) I(t)``
    in ``x``; ``log_rev`` its integral from ``t`` to the horizon.
    """

    metric: WarpedMetric
    outer_exp: float
    inner_exp: float
    horizon: float
    x: np.ndarray = field(repr=False)
    log_f: np.ndarray = field(repr=False)
    log_I: np.ndarray = field(repr=False)
    log_G: np.ndarray = field(repr=False)
    log_rev: np.ndarray = field(repr=False)
    swapped_body: float = math.nan
    nested_body: float = math.nan
    region_tail: float = math.nan
    swapped_fit: _TailFit | None = None
    nested_fit: _TailFit | None = None

    @property
    def x_rev(self):
        """Nodes carrying ``log_rev`` (every other node of ``x``)."""
        return self.x[::2]

    @cached_property
    def _log_eta(self):
        tail = math.log(self.region_tail) if self.region_tail > 0 else -np.inf
        total = np.logaddexp(self.log_rev, tail)
        keep = np.isfinite(total)
        return CubicSpline(self.x_rev[keep], total[keep]), float(self.x_rev[keep][-1])

    def eta(self, r):
        """``int_r^inf f^inner(t) I(t) dt`` for ``1 <= r <= horizon``."""
        xr = np.log(np.asarray(r, dtype=float))
        spline, x_last = self._log_eta
        return np.where(xr <= x_last, np.exp(spline(np.minimum(xr, x_last))), 0.0)


def nested_integral(metric: WarpedMetric, outer_exp: float, inner_exp: float,
                    horizon: float = DEFAULT_HORIZON,
                    panels: int = DEFAULT_PANELS) -> NestedIntegral:
    if horizon <= math.e or horizon > metric.r_max:
        raise CriterionInputError(f"horizon {horizon} outside (e, r_max={metric.r_max}]")
    X = math.log(horizon)
    xf = np.linspace(0.0, X, 4 * panels + 1)
    h = xf[1] - xf[0]
    lf = metric.logf(np.exp(xf))
    # inner cumulative on the half grid, outer Simpson over its pairs
    log_I = _log_cumulative(xf + outer_exp * lf, h)
    x, lfx = xf[::2], lf[::2]
    log_G = x + inner_exp * lfx + log_I
    log_rev = _log_reverse_cumulative(log_G, 2 * h)
    swapped_body = _exp(log_rev[0])

    # nested route: inner integral from s up to the horizon, then the outer
    log_inner_rev = _log_reverse_cumulative(x + inner_exp * lfx, 2 * h)
    xo, lfo = x[::2], lfx[::2]
    log_outer = xo + outer_exp * lfo + log_inner_rev
    nested_body = _exp(_log_cumulative(log_outer, 4 * h)[-1])

    swapped_fit = _classify(x, log_G, X)
    region_tail = swapped_fit.integral(X)

    # the nested integrand needs the inner integral continued past the horizon
    inner_fit = _classify(x, x + inner_exp * lfx, X)
    if inner_fit.status == "convergent":
        inner_tail = inner_fit.integral(X)
        log_T = np.logaddexp(log_inner_rev, math.log(inner_tail)) if inner_tail > 0 \
            else log_inner_rev
        nested_fit = _classify(xo, xo + outer_exp * lfo + log_T, X, corrections=1)
    else:
        nested_fit = _TailFit(inner_fit.s, inner_fit.m, inner_fit.log_a, "divergent")
    return NestedIntegral(metric, outer_exp, inner_exp, horizon, x, lfx, log_I, log_G,
                          log_rev, swapped_body, nested_body, region_tail,
                          swapped_fit, nested_fit)


def _verdict(fit, body, tail, horizon, conclusion=None):
    value = body + tail if fit.status == "convergent" else None
    return ConvergenceVerdict(fit.status, value, _rate_text(fit), horizon,
                              1 + fit.s, fit.m, body, tail, conclusion)


def _single_integral(metric, log_integrand_x, horizon, panels, conclusion=None):
    """Classify ``int_1^horizon g(t) dt`` given ``log(t g(t))`` as a function of x."""
    X = math.log(horizon)
    x = np.linspace(0.0, X, 2 * panels + 1)
    L = log_integrand_x(x)
    body = _exp(_log_cumulative(L, x[1] - x[0])[-1])
    fit = _classify(x, L, X)
    tail = fit.integral(X) if fit.status == "convergent" else math.nan
    return _verdict(fit, body, tail, horizon, conclusion)


def j_integral(metric: WarpedMetric, form: str = "nested",
               horizon: float = DEFAULT_HORIZON,
               panels: int = DEFAULT_PANELS) -> ConvergenceVerdict:
    """March's criterion ``J(f) = int_1^inf f^(n-3)(r) int_r^inf f^(1-n)``.

    ``form="swapped"`` integrates ``int_1^t f^(n-3) / f^(n-1)(t)`` instead.
    Both share the tail beyond the horizon (it is the same region of the
    ``(r, t)`` plane).  For ``n = 2`` the integrand is symmetric and
    ``J = (int_1^inf 1/f)^2 / 2`` exactly; that single integral is classified.
    """
    if form not in ("nested", "swapped"):
        raise CriterionInputError(f"unknown form {form!r}")
    n = metric.n
    if n == 2:
        v = _single_integral(metric, lambda x: x - metric.logf(np.exp(x)), horizon, panels)
        if v.convergent:
            v = ConvergenceVerdict(v.status, 0.5 * v.value ** 2, v.tail_rate, horizon,
                                   v.q, v.m, 0.5 * v.partial ** 2,
                                   0.5 * v.value ** 2 - 0.5 * v.partial ** 2)
        return v
    ni = nested_integral(metric, n - 3, 1 - n, horizon, panels)
    return _nested_verdict(ni, form)


def _nested_verdict(ni: NestedIntegral, form: str) -> ConvergenceVerdict:
    if form == "swapped":
        return _verdict(ni.swapped_fit, ni.swapped_body, ni.region_tail, ni.horizon)
    fit = ni.nested_fit
    if fit.status == "convergent" and ni.swapped_fit.status != "convergent":
        # tails must agree to produce a value; otherwise the routes disagree
        fit = _TailFit(fit.s, fit.m, fit.log_a, "inconclusive")
    return _verdict(fit, ni.nested_body, ni.region_tail, ni.horizon)


def p_integral(metric: WarpedMetric, p: float, horizon: float = DEFAULT_HORIZON,
               form: str = "nested", panels: int = DEFAULT_PANELS) -> ConvergenceVerdict:
    """``int_1^inf f^beta(s) int_s^inf f^alpha(t) dt ds`` with exponents from :func:`p_exponents`."""
    ex = p_exponents(metric.n, p)
    ni = nested_integral(metric, ex.beta, ex.alpha, horizon, panels)
    return _nested_verdict(ni, form)


def parabolicity_check(metric: WarpedMetric, p: float,
                       horizon: float = DEFAULT_HORIZON,
                       panels: int = DEFAULT_PANELS) -> ConvergenceVerdict:
    """Volume-growth test: ``int^inf (t / V(t))^(1/(p-1)) dt = inf`` implies p-parabolic.

    The test is sufficient only, so a convergent integral is reported as
    inconclusive and never as non-parabolic.
    """
    if not p > 1:
        raise CriterionInputError("p must exceed 1")
    n = metric.n
    X = math.log(horizon)
    xf = np.linspace(0.0, X, 4 * panels + 1)
    h = xf[1] - xf[0]
    v1, _ = integrate.quad(lambda t: metric.f(t) ** (n - 1), 0.0, 1.0, epsrel=1e-12)
    log_vol = np.logaddexp(math.log(v1), _log_cumulative(
        xf + (n - 1) * metric.logf(np.exp(xf)), h)) + math.log(sphere_area(n))
    xe = xf[::2]
    L = xe + (xe - log_vol) / (p - 1)
    body = _exp(_log_cumulative(L, 2 * h)[-1])
    fit = _classify(xe, L, X)
    tail = fit.integral(X) if fit.status == "convergent" else math.nan
    conclusion = ("p-parabolic (criterion met)" if fit.status == "divergent"
                  else "criterion inconclusive")
    return _verdict(fit, body, tail, horizon, conclusion)


def threshold_scan(family: Callable[[float], WarpedMetric], criterion: str,
                   c_range: tuple[float, float], tolerance: float,
                   p: float | None = None, horizon: float = DEFAULT_HORIZON) -> float:
    """Bisect for the parameter where the criterion verdict flips.

    ``family`` maps a parameter ``c`` to a metric; ``criterion`` is ``"J"`` or
    ``"p-integral"``.  Returns the midpoint of the final bracket.
    """
    def convergent(c):
        metric = family(c)
        if criterion == "J":
            v = j_integral(metric, "swapped", horizon)
        elif criterion == "p-integral":
            v = p_integral(metric, p, horizon, form="swapped")
        else:
            raise CriterionInputError(f"unknown criterion {criterion!r}")
        return v.convergent

    lo, hi = map(float, c_range)
    v_lo, v_hi = convergent(lo), convergent(hi)
    if v_lo == v_hi:
        raise CriterionError("non-monotone-endpoints: both endpoints classify identically")
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        if convergent(mid) == v_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --- export ---------------------------------------------------------------

VERDICT_FIELDS = ["family", "n", "p", "c", "criterion", "status", "value",
                  "tail_rate", "horizon", "conclusion"]


def verdict_row(verdict: ConvergenceVerdict, family: str, n: int, criterion: str,
                p=None, c=None) -> dict:
    return {"family": family, "n": n, "p": "" if p is None else p,
            "c": "" if c is None else c, "criterion": criterion,
            "status": verdict.status,
            "value": "" if verdict.value is None else repr(verdict.value),
            "tail_rate": verdict.tail_rate, "horizon": repr(verdict.horizon),
            "conclusion": verdict.conclusion or ""}


def verdict_rows_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=VERDICT_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def verdict_report(rows: list[dict]) -> str:
    lines = []
    for r in rows:
        lines.append("; ".join(f"{k}={r[k]}" for k in VERDICT_FIELDS if r[k] != ""))
    return "\n".join(lines) + "\n"
