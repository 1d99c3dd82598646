"""Radial barriers ``eta +- B`` and the interior gradient bound for minimal graphs.

Boundary data are zonal: ``b`` depends only on the polar angle, so the
spherical gradient, Laplacian and Hessian reduce to closed forms in ``b'``
and ``b''``.  The supersolution check evaluates the expanded sign-determining
expressions directly in terms of ``f``, ``eta`` and those derivatives, which
leaves no discretization error in the verdict.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .criteria import CriterionError, NestedIntegral, nested_integral, p_exponents
from .manifold import WarpedMetric

__all__ = [
    "BarrierProfile",
    "BoundaryData",
    "Certificate",
    "CriterionDivergent",
    "GradientBoundInputs",
    "HessianPrecondition",
    "SearchExhausted",
    "barrier_profile",
    "boundary_from_dict",
    "choose_k_and_r0",
    "constant_boundary",
    "cos_boundary",
    "gradient_bound",
    "psi",
    "scaled_cos_boundary",
    "supersolution_residual",
    "uniform_gradient_bound",
    "uniform_gradient_constants",
]


class CriterionDivergent(CriterionError):
    """The integral defining ``eta`` diverges; no barrier exists."""


class HessianPrecondition(ValueError):
    """``sup |Hess b|`` too large for the p-Laplace barrier; see ``rescale``."""

    def __init__(self, msg, rescale):
        super().__init__(msg)
        self.rescale = rescale


class SearchExhausted(RuntimeError):
    pass


class DegenerateGradient(ValueError):
    pass


# --- boundary data --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Zonal boundary function ``b(theta)`` on ``S^{n-1}`` with two derivatives."""

    n: int
    b: Callable = field(repr=False)
    db: Callable = field(repr=False)
    d2b: Callable = field(repr=False)
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def grad_norm(self, theta):
        return np.abs(self.db(np.asarray(theta, dtype=float)))

    def laplacian(self, theta):
        """``b'' + (n-2) cot(theta) b'`` with the pole limit ``(n-1) b''``."""
        th = np.asarray(theta, dtype=float)
        s = np.sin(th)
        pole = np.abs(s) < 1e-8
        safe = np.where(pole, 1.0, s)
        out = self.d2b(th) + (self.n - 2) * np.cos(th) / safe * self.db(th)
        return np.where(pole, (self.n - 1) * self.d2b(th), out)

    def hess_norm(self, theta):
        th = np.asarray(theta, dtype=float)
        s = np.sin(th)
        pole = np.abs(s) < 1e-8
        safe = np.where(pole, 1.0, s)
        tang = np.abs(self.db(th) * np.cos(th) / safe)
        return np.where(pole, np.abs(self.d2b(th)), np.maximum(np.abs(self.d2b(th)), tang))

    def hess_grad_grad(self, theta):
        """``Hess b(grad b, grad b)``; the gradient points along ``d/dtheta``."""
        th = np.asarray(theta, dtype=float)
        return self.d2b(th) * self.db(th) ** 2

    def _sample(self):
        return np.linspace(0.0, math.pi, 4001)

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.b(self._sample()))))

    @property
    def hess_sup(self) -> float:
        return float(np.max(self.hess_norm(self._sample())))

    @property
    def c2_norm(self) -> float:
        th = self._sample()
        return self.sup + float(np.max(self.grad_norm(th))) + self.hess_sup

    def to_dict(self) -> dict:
        return {"preset": self.name, **self.params}


def constant_boundary(v: float, n: int) -> BoundaryData:
    return BoundaryData(n, lambda t: np.full_like(np.asarray(t, dtype=float), v),
                        lambda t: np.zeros_like(np.asarray(t, dtype=float)),
                        lambda t: np.zeros_like(np.asarray(t, dtype=float)),
                        "constant", {"v": float(v)})


def scaled_cos_boundary(eps: float, n: int) -> BoundaryData:
    return BoundaryData(n, lambda t: eps * np.cos(t), lambda t: -eps * np.sin(t),
                        lambda t: -eps * np.cos(t), "scaled-cos", {"eps": float(eps)})


def cos_boundary(n: int) -> BoundaryData:
    bd = scaled_cos_boundary(1.0, n)
    return BoundaryData(n, bd.b, bd.db, bd.d2b, "cos", {})


def boundary_from_dict(d: dict, n: int) -> BoundaryData:
    preset = d["preset"]
    if preset == "constant":
        return constant_boundary(d["v"], n)
    if preset == "cos":
        return cos_boundary(n)
    if preset == "scaled-cos":
        return scaled_cos_boundary(d["eps"], n)
    raise ValueError(f"unknown boundary preset {preset!r}")


# --- barrier profile ------------------------------------------------------

def _equation(equation):
    """Normalize ``"minimal"`` / ``("p-laplace", p)`` / ``{"type":..., "p":...}``."""
    if isinstance(equation, dict):
        equation = (equation["type"], equation.get("p"))
    if equation == "minimal" or (isinstance(equation, tuple) and equation[0] == "minimal"):
        return "minimal", None
    kind, p = equation
    if kind != "p-laplace":
        raise ValueError(f"unknown equation {equation!r}")
    return "p-laplace", float(p)


@dataclass(frozen=True, eq=False)
class BarrierProfile:
    """``eta(r) = k int_r^inf f^inner(t) int_1^t f^outer(s) ds dt``.

    Minimal graphs use ``(outer, inner) = (n-3, 1-n)``; the p-Laplacian uses
    the exponents ``(beta, alpha)`` with ``alpha + beta = -2``.
    """

    metric: WarpedMetric
    equation: str
    p: float | None
    k: float
    integral: NestedIntegral = field(repr=False)
    _log_eta: CubicSpline = field(repr=False)
    x_last: float = math.inf

    @property
    def horizon(self):
        return self.integral.horizon

    def log_inner_cumulative(self, r):
        """``log int_1^r f^outer`` by adaptive quadrature.

        For a positive exponent the integrand is scaled by ``f(r)^-outer`` so
        that exponentially growing ``f`` does not overflow.
        """
        m, e = self.metric, self.integral.outer_exp
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        for i, ri in enumerate(r):
            if ri <= 1.0:
                out[i] = -np.inf
                continue
            shift = e * float(m.logf(ri)) if e > 0 else 0.0
            q = integrate.quad(lambda t: math.exp(e * float(m.logf(t)) - shift), 1.0, ri,
                               epsrel=1e-12, epsabs=0.0, limit=200)[0]
            out[i] = shift + math.log(q)
        return out

    def inner_cumulative(self, r):
        """``int_1^r f^outer``."""
        return np.exp(self.log_inner_cumulative(r))

    def _log_slope(self, r, log_I):
        """``log |eta'| = log k + inner log f + log I``."""
        return math.log(self.k) + self.integral.inner_exp * self.metric.logf(r) + log_I

    def eta(self, r):
        r = np.asarray(r, dtype=float)
        x = np.log(r)
        out = np.where(x <= self.x_last, np.exp(self._log_eta(np.minimum(x, self.x_last))), 0.0)
        return self.k * out

    def deta(self, r):
        r = np.asarray(r, dtype=float)
        log_I = self.log_inner_cumulative(r).reshape(r.shape)
        return -np.exp(self._log_slope(r, log_I))

    def d2eta(self, r):
        r = np.asarray(r, dtype=float)
        log_I = self.log_inner_cumulative(r).reshape(r.shape)
        E = np.exp(self._log_slope(r, log_I))
        lf = self.metric.logf(r)
        a, b = self.integral.inner_exp, self.integral.outer_exp
        return -(a * log_derivative(self.metric, r) * E + self.k * np.exp((a + b) * lf))

    def scaled(self, k: float) -> "BarrierProfile":
        return BarrierProfile(self.metric, self.equation, self.p, k, self.integral,
                              self._log_eta, self.x_last)


def barrier_profile(metric: WarpedMetric, equation, k: float = 1.0,
                    horizon: float = 1e6) -> BarrierProfile:
    """Build ``eta`` for the minimal graph or p-Laplace equation.

    Raises :class:`CriterionDivergent` if the defining integral does not converge.
    """
    kind, p = _equation(equation)
    n = metric.n
    if not k > 0:
        raise ValueError("k must be positive")
    if kind == "minimal":
        outer, inner = n - 3, 1 - n
    else:
        ex = p_exponents(n, p)
        outer, inner = ex.beta, ex.alpha
    ni = nested_integral(metric, outer, inner, horizon)
    if ni.swapped_fit.status != "convergent":
        raise CriterionDivergent(f"criterion-divergent: barrier integral is "
                                 f"{ni.swapped_fit.status} for {metric.kind} n={n}")
    tail = ni.region_tail
    log_eta = np.logaddexp(ni.log_rev, math.log(tail)) if tail > 0 else ni.log_rev
    ok = np.isfinite(log_eta) & (log_eta > -700)
    last = int(np.nonzero(ok)[0][-1])
    xr = ni.x_rev
    spline = CubicSpline(xr[: last + 1], log_eta[: last + 1])
    return BarrierProfile(metric, kind, p, float(k), ni, spline, float(xr[last]))


def supersolution_residual(metric: WarpedMetric, equation, b: BoundaryData, k: float,
                           r, theta, profile: BarrierProfile | None = None) -> np.ndarray:
    """Sign-determining expression of the operator applied to ``k eta + B``.

    Minimal graphs: the bracket multiplying ``(1 + |grad(eta+B)|^2)^(-3/2)``.
    p-Laplace: ``Delta_p(eta+B) / |grad(eta+B)|^(p-4)``.  Returns an array of
    shape ``(len(r), len(theta))``.
    """
    kind, p = _equation(equation)
    if profile is None:
        profile = barrier_profile(metric, equation, 1.0)
    prof = profile.scaled(k)
    r = np.asarray(r, dtype=float)[:, None]
    th = np.asarray(theta, dtype=float)[None, :]
    n = metric.n
    # everything in terms of log f and rho = f'/f so huge f underflows cleanly to 0
    log_I = prof.log_inner_cumulative(r.ravel())[:, None]
    lf = metric.logf(r)
    rho = log_derivative(metric, r)
    le = prof._log_slope(r, log_I)
    E = np.exp(le)  # |eta'|; eta' itself is negative
    inv2, inv4 = np.exp(-2 * lf), np.exp(-4 * lf)
    g2 = b.grad_norm(th) ** 2
    lap = b.laplacian(th)
    hgg = b.hess_grad_grad(th)
    if kind == "minimal":
        return (inv2 * (-k + lap) + np.exp(2 * le - 2 * lf) * lap
                + inv4 * (-k * g2 + g2 * lap - hgg)
                - k * (n - 1) * rho * np.exp(2 * le + (1 - n) * lf + log_I)
                - rho * g2 * np.exp(le - 2 * lf))
    if np.any(np.isneginf(le) & (g2 == 0)):
        raise DegenerateGradient("degenerate-gradient: |grad(eta+B)| = 0 at a sample")
    err = -(prof.integral.inner_exp * rho * E + k * inv2)
    grad2 = E ** 2 + g2 * inv2
    return (grad2 * (err - (n - 1) * rho * E + lap * inv2)
            + (p - 2) * (E ** 2 * err + E * rho * g2 * inv2 + hgg * inv4))


def log_derivative(metric: WarpedMetric, r):
    """``f'/f``, falling back to a difference of ``log f`` where ``f`` overflows."""
    r = np.asarray(r, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        f, df = metric.f(r), metric.df(r)
        ratio = df / f
    bad = ~np.isfinite(ratio)
    if np.any(bad):
        rb = r[bad]
        h = 1e-6 * rb
        ratio = np.array(ratio, dtype=float)
        ratio[bad] = (metric.logf(rb + h) - metric.logf(rb - h)) / (2 * h)
    return ratio


@dataclass(frozen=True, eq=False)
class Certificate:
    """Admissible barrier scale ``k``, onset ``r0`` and clamp levels ``a``, ``d``."""

    k: float
    r0: float
    a_cap: float
    d_cap: float
    profile: BarrierProfile = field(repr=False)
    boundary: BoundaryData = field(repr=False)
    max_residual: float = math.nan
    rescale: float = 1.0

    def upper(self, r, theta):
        """Global upper barrier ``w``: ``min(eta + B, a)`` outside ``B(o, r0)``, ``a`` inside."""
        r, th = np.broadcast_arrays(np.asarray(r, float), np.asarray(theta, float))
        out = np.full(r.shape, self.a_cap)
        o = r >= self.r0
        out[o] = np.minimum(self.profile.eta(r[o]) + self.boundary.b(th[o]), self.a_cap)
        return out

    def lower(self, r, theta):
        r, th = np.broadcast_arrays(np.asarray(r, float), np.asarray(theta, float))
        out = np.full(r.shape, self.d_cap)
        o = r >= self.r0
        out[o] = np.maximum(-self.profile.eta(r[o]) + self.boundary.b(th[o]), self.d_cap)
        return out

    def to_record(self) -> str:
        rec = {"equation": self.profile.equation, "p": self.profile.p,
               "metric": self.profile.metric.to_dict(), "boundary": self.boundary.to_dict(),
               "k": self.k, "r0": self.r0, "a": self.a_cap, "d": self.d_cap,
               "max_residual": self.max_residual, "rescale": self.rescale}
        return json.dumps(rec, indent=2, sort_keys=True)


def p_hessian_bound(n: int, p: float) -> float:
    return min((p - 1) / (n - 1), 1 / (n + p - 3))


def choose_k_and_r0(metric: WarpedMetric, equation, b: BoundaryData,
                    r_nodes=None, theta_nodes=None, r_check: float = 1e3,
                    max_doublings: int = 40, allow_rescale: bool = False,
                    horizon: float = 1e6) -> Certificate:
    """Doubling search for the first ``(k, r0)`` that certifies the barrier.

    ``r0`` is the first radial node with nonpositive residual on every node
    from ``r0`` to ``r_check`` and ``k eta(r0) > 2 sup|b|``.
    """
    kind, p = _equation(equation)
    n = metric.n
    if r_nodes is None:
        r_nodes = 1.0 + np.geomspace(1e-2, r_check - 1.0, 200)
    if theta_nodes is None:
        theta_nodes = np.linspace(0.0, math.pi, 64)
    r_nodes = np.asarray(r_nodes, dtype=float)
    k = max(1.0, b.c2_norm) if kind == "minimal" else 1.0
    rescale = 1.0
    if kind == "p-laplace":
        bound = p_hessian_bound(n, p)
        hs = b.hess_sup
        if hs >= bound:
            rescale = 2.0 * hs / bound
            if not allow_rescale:
                raise HessianPrecondition(
                    f"sup|Hess b| = {hs:g} >= {bound:g}; rescale b by 1/{rescale:g}", rescale)
            k = rescale
    profile = barrier_profile(metric, equation, 1.0, horizon)
    sup_b = b.sup
    eta1 = profile.eta(r_nodes)
    for _ in range(max_doublings + 1):
        res = supersolution_residual(metric, equation, b, k, r_nodes, theta_nodes, profile)
        row_ok = np.all(res <= 0, axis=1)
        # suffix_ok[i]: every row from i on is admissible
        suffix_ok = np.flip(np.logical_and.accumulate(np.flip(row_ok)))
        cand = np.nonzero(suffix_ok & (k * eta1 > 2 * sup_b))[0]
        if cand.size:
            i = int(cand[0])
            r0 = float(r_nodes[i])
            e0 = k * float(eta1[i])
            bvals = b.b(np.linspace(0.0, math.pi, 4001))
            return Certificate(k, r0, e0 + float(bvals.min()), -e0 + float(bvals.max()),
                               profile.scaled(k), b, float(res[i:].max()), rescale)
        k *= 2.0
    raise SearchExhausted(f"search-exhausted after {max_doublings} doublings of k")


# --- gradient bound -------------------------------------------------------

@dataclass(frozen=True)
class GradientBoundInputs:
    u_p: float
    R: float
    K0: float
    n: int

    def __post_init__(self):
        if not (self.u_p > 0 and self.R > 0 and self.K0 >= 0 and self.n >= 2):
            raise ValueError("need u_p > 0, R > 0, K0 >= 0, n >= 2")


def psi(R: float, K0: float, n: int) -> float:
    """``(n-1) K0 R coth(K0 R) + 1``, equal to ``n`` at ``K0 = 0``."""
    x = K0 * R
    if x < 1e-4:
        # x coth x = 1 + x^2/3 - x^4/45 + ...
        xcoth = 1.0 + x * x / 3.0 - x ** 4 / 45.0
    else:
        xcoth = x / math.tanh(x)
    return (n - 1) * xcoth + 1.0


def _bound_from(u_over_R, u_sq, psi_over_R2, uK_sq, n):
    exponent = 64.0 * (2.0 * u_sq * psi_over_R2
                       + math.sqrt(4.0 * u_sq ** 2 * psi_over_R2 ** 2
                                   + (n - 1) * uK_sq / 64.0))
    pre = 2.0 / math.sqrt(3.0) + 32.0 * u_over_R
    if exponent > 709.0:
        warnings.warn("gradient bound overflows; reported as +inf", RuntimeWarning,
                      stacklevel=3)
        return math.inf
    return pre * (math.exp(exponent) + 1.0)


def gradient_bound(inputs: GradientBoundInputs) -> float:
    """Interior gradient bound at the centre of ``B(p, R)`` for a positive solution.

    The exponent is ``64 u^2 (2 psi/R^2 + sqrt(4 psi^2/R^4 + (n-1) K0^2 / (64 u^2)))``;
    the result is ``+inf`` (with a ``RuntimeWarning``) when ``exp`` overflows.
    """
    u, R, K0, n = inputs.u_p, inputs.R, inputs.K0, inputs.n
    ps = psi(R, K0, n)
    # written with u^2 K0^2 so the u -> 0 limit is regular
    return _bound_from(u / R, u * u, ps / R ** 2, (u * K0) ** 2, n)


def uniform_gradient_constants(c: float, n: int) -> tuple[float, float, float]:
    """Bounds on ``u/R``, ``psi(R)`` and ``u^2 K0^2`` under ``u <= c d`` and ``K >= -c/d^2``."""
    if not c > 0:
        raise ValueError("c must be positive")
    return 2.0 * c, (n - 1) * c / math.tanh(c) + 1.0, 4.0 * c ** 3


def uniform_gradient_bound(c: float, n: int) -> float:
    """Gradient bound with the uniform constants substituted; independent of ``R``."""
    u_over_R, psi_b, uK_sq = uniform_gradient_constants(c, n)
    # u^2 psi / R^2 = (u/R)^2 psi, so pass u/R in place of u and psi in place of psi/R^2
    return _bound_from(u_over_R, u_over_R ** 2, psi_b, uK_sq, n)
