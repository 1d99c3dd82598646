"""Rotationally symmetric model manifolds ``ds^2 = dr^2 + f(r)^2 dtheta^2``.

A :class:`WarpedMetric` carries the dimension ``n`` and the warping function
``f`` together with ``f'``, ``f''`` and ``log f``.  Closed-form models
(Euclidean, hyperbolic), the March family ``r (log r)^c`` and warps
recovered from a radial curvature profile through the Jacobi equation are
provided.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import gamma

__all__ = [
    "CurvatureProfile",
    "IntegrationFailure",
    "WarpedMetric",
    "ansc_profile",
    "constant_profile",
    "curvature_at",
    "make_closed_form_metric",
    "march_metric",
    "metric_from_curvature",
    "metric_from_dict",
    "power_log_profile",
    "sphere_area",
    "volume",
    "zero_profile",
]

ArrayFn = Callable[[np.ndarray], np.ndarray]


class IntegrationFailure(RuntimeError):
    """Raised when an ODE or quadrature cannot meet its tolerance."""


@dataclass(frozen=True, eq=False)
class WarpedMetric:
    """Warped product metric of dimension ``n``.

    ``f``, ``df``, ``d2f`` and ``logf`` accept scalars or arrays.  ``logf``
    stays finite where ``f`` itself would overflow (hyperbolic models at
    large radii), which the improper-integral machinery relies on.
    """

    n: int
    kind: str
    params: dict
    r_max: float
    _f: ArrayFn = field(repr=False)
    _df: ArrayFn = field(repr=False)
    _d2f: ArrayFn = field(repr=False)
    _logf: ArrayFn = field(repr=False)

    def _check(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0) or np.any(r > self.r_max * (1 + 1e-12)):
            raise ValueError(f"radius outside (0, {self.r_max}]")
        return r

    def f(self, r):
        return self._f(self._check(r))

    def df(self, r):
        return self._df(self._check(r))

    def d2f(self, r):
        return self._d2f(self._check(r))

    def logf(self, r):
        return self._logf(self._check(r))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n, "params": dict(self.params),
                "r_max": self.r_max}


def _validate_n(n):
    if int(n) != n or n < 2:
        raise ValueError(f"dimension must be an integer >= 2, got {n}")
    return int(n)


def make_closed_form_metric(kind: str, n: int, kappa: float = 1.0) -> WarpedMetric:
    """Euclidean (``f = r``) or hyperbolic (``f = sinh(kappa r)/kappa``) model."""
    n = _validate_n(n)
    if kind == "euclidean":
        return WarpedMetric(
            n, "euclidean", {}, math.inf,
            lambda r: r * 1.0,
            lambda r: np.ones_like(r),
            lambda r: np.zeros_like(r),
            np.log,
        )
    if kind == "hyperbolic":
        k = float(kappa)
        if not k > 0:
            raise ValueError("hyperbolic model needs kappa > 0")

        def logf(r):
            kr = k * r
            # sinh(x) = e^x (1 - e^{-2x}) / 2, stable for large x
            return kr + np.log(-np.expm1(-2.0 * kr)) - math.log(2.0 * k)

        return WarpedMetric(
            n, "hyperbolic", {"kappa": k}, math.inf,
            lambda r: np.sinh(k * r) / k,
            lambda r: np.cosh(k * r),
            lambda r: k * np.sinh(k * r),
            logf,
        )
    raise ValueError(f"unknown closed-form kind {kind!r}")


def _march_phi(c):
    def phi(r):
        return r * np.log(r) ** c

    def dphi(r):
        L = np.log(r)
        return L ** c + c * L ** (c - 1)

    def d2phi(r):
        L = np.log(r)
        return c * L ** (c - 2) * (L + c - 1) / r

    return phi, dphi, d2phi


def march_metric(c: float, n: int, a_grid=None) -> WarpedMetric:
    """Shifted March warp ``g(r) = (phi(r+a) - phi(a)) / phi'(a)``, ``phi = r (log r)^c``.

    ``a`` is the first point of a geometric grid above 1 where ``phi'`` and
    ``phi''`` are both positive; then ``g(0)=0``, ``g'(0)=1`` and ``g'' >= 0``.
    The radial curvature behaves like ``-c / (r^2 log r)`` at infinity.
    """
    n = _validate_n(n)
    c = float(c)
    if not c > 0:
        raise ValueError("March exponent c must be positive")
    phi, dphi, d2phi = _march_phi(c)
    if a_grid is None:
        a_grid = 1.001 * 1.05 ** np.arange(200)
    a = next((float(x) for x in a_grid
              if x > 1 and dphi(x) > 0 and d2phi(x) > 0), None)
    if a is None:
        raise ValueError("no admissible shift a found in the search grid")
    pa, dpa = float(phi(a)), float(dphi(a))
    log_dpa = math.log(dpa)

    def f(r):
        return (phi(r + a) - pa) / dpa

    def logf(r):
        r = np.asarray(r, dtype=float)
        big = r > 1e3
        out = np.empty_like(r)
        out[~big] = np.log(phi(r[~big] + a) - pa) - log_dpa
        rb = r[big]
        # log(phi(r+a) - phi(a)) without forming the difference
        lp = np.log(rb + a) + c * np.log(np.log(rb + a))
        out[big] = lp + np.log1p(-pa * np.exp(-lp)) - log_dpa
        return out if out.ndim else float(out)

    return WarpedMetric(
        n, "march", {"c": c, "a": a}, math.inf,
        f,
        lambda r: dphi(r + a) / dpa,
        lambda r: d2phi(r + a) / dpa,
        logf,
    )


# --- curvature profiles ---------------------------------------------------

def _smoothstep(s):
    """C^2 blend weight: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10 - 15 * s + 6 * s ** 2)


@dataclass(frozen=True, eq=False)
class CurvatureProfile:
    """Radial curvature ``K(r) <= 0`` with a declared tail law.

    ``tail`` is one of ``"power-log"`` (``-c/(r^2 log r)``), ``"ansc"``
    (``-C/(r^2 (log r)^(1+eps))``), ``"constant"`` (``-K0^2``) or ``"zero"``.
    Below the onset radius ``R0`` the tail laws are blended (C^2) into a
    constant on ``[0, R0 - 1]`` so the profile is smooth at the pole.
    """

    K: ArrayFn = field(repr=False)
    tail: str
    constants: dict
    R0: float

    def tail_law(self, r):
        r = np.asarray(r, dtype=float)
        t, cs = self.tail, self.constants
        if t == "power-log":
            return -cs["c"] / (r ** 2 * np.log(r))
        if t == "ansc":
            return -cs["C"] / (r ** 2 * np.log(r) ** (1 + cs["eps"]))
        if t == "constant":
            return np.full_like(r, -cs["K0"] ** 2)
        return np.zeros_like(r)

    def to_dict(self) -> dict:
        return {"tail": self.tail, "constants": dict(self.constants), "R0": self.R0}


def _blended(tail_fn, R0):
    if R0 <= 2:
        raise ValueError("onset radius R0 must exceed 2 (log r > 0 on the blend)")
    k0 = float(tail_fn(np.float64(R0)))

    def K(r):
        r = np.asarray(r, dtype=float)
        w = _smoothstep(r - (R0 - 1.0))
        rt = np.maximum(r, R0 - 1.0)
        out = (1 - w) * k0 + w * tail_fn(rt)
        return out if out.ndim else float(out)

    return K


def power_log_profile(c: float, R0: float = 3.0) -> CurvatureProfile:
    tail = lambda r: -c / (r ** 2 * np.log(r))
    return CurvatureProfile(_blended(tail, R0), "power-log", {"c": float(c)}, float(R0))


def ansc_profile(C: float = 1.0, eps: float = 0.5, R0: float = 3.0) -> CurvatureProfile:
    tail = lambda r: -C / (r ** 2 * np.log(r) ** (1 + eps))
    return CurvatureProfile(_blended(tail, R0), "ansc",
                            {"C": float(C), "eps": float(eps)}, float(R0))


def constant_profile(K0: float) -> CurvatureProfile:
    v = -float(K0) ** 2
    return CurvatureProfile(lambda r: np.full_like(np.asarray(r, dtype=float), v),
                            "constant", {"K0": float(K0)}, 0.0)


def zero_profile() -> CurvatureProfile:
    return CurvatureProfile(lambda r: np.zeros_like(np.asarray(r, dtype=float)),
                            "zero", {}, 0.0)


def profile_from_dict(d: dict) -> CurvatureProfile:
    tail, cs = d["tail"], d.get("constants", {})
    if tail == "power-log":
        return power_log_profile(cs["c"], d.get("R0", 3.0))
    if tail == "ansc":
        return ansc_profile(cs.get("C", 1.0), cs.get("eps", 0.5), d.get("R0", 3.0))
    if tail == "constant":
        return constant_profile(cs["K0"])
    if tail == "zero":
        return zero_profile()
    raise ValueError(f"unknown tail law {tail!r}")


def metric_from_curvature(profile: CurvatureProfile, n: int, r_max: float,
                          rtol: float = 1e-12, r_start: float = 1e-6) -> WarpedMetric:
    """Solve ``f'' = -K f``, ``f(0)=0``, ``f'(0)=1`` and keep the dense solution.

    The first step uses the series ``f = r - K(0) r^3 / 6`` to leave the
    trivial solution; ``f''`` is returned as ``-K f``.
    """
    n = _validate_n(n)
    K = profile.K
    k0 = float(K(0.0))
    if k0 > 0:
        raise ValueError("curvature must be nonpositive")
    y0 = [r_start - k0 * r_start ** 3 / 6, 1.0 - k0 * r_start ** 2 / 2]

    def rhs(r, y):
        return [y[1], -float(K(r)) * y[0]]

    breaks = [r_start]
    if profile.R0 > 0:
        breaks += [x for x in (profile.R0 - 1.0, profile.R0) if r_start < x < r_max]
    breaks.append(float(r_max))
    pieces = []
    y = y0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        sol = integrate.solve_ivp(rhs, (lo, hi), y, method="DOP853", rtol=rtol,
                                  atol=1e-14, dense_output=True)
        if not sol.success:
            raise IntegrationFailure(f"Jacobi equation failed on [{lo}, {hi}]: {sol.message}")
        pieces.append((lo, hi, sol.sol))
        y = sol.y[:, -1]
    edges = np.array([p[1] for p in pieces])

    def state(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.empty((2, r.size))
        small = r < r_start
        rs = r[small]
        out[0, small] = rs - k0 * rs ** 3 / 6
        out[1, small] = 1.0 - k0 * rs ** 2 / 2
        idx = np.searchsorted(edges, r, side="left")
        idx = np.minimum(idx, len(pieces) - 1)
        for i in np.unique(idx[~small]):
            sel = (idx == i) & ~small
            out[:, sel] = pieces[i][2](r[sel])
        return out

    def scal(fn):
        def g(r):
            arr = np.asarray(r, dtype=float)
            v = fn(arr.ravel())
            return v.reshape(arr.shape) if arr.ndim else float(v[0])
        return g

    f = scal(lambda r: state(r)[0])
    df = scal(lambda r: state(r)[1])
    d2f = scal(lambda r: -np.asarray(K(np.atleast_1d(r)), dtype=float) * state(r)[0])
    logf = scal(lambda r: np.log(state(r)[0]))
    params = {"profile": profile.to_dict()}
    return WarpedMetric(n, "curvature", params, float(r_max), f, df, d2f, logf)


def metric_from_dict(d: dict) -> WarpedMetric:
    """Inverse of :meth:`WarpedMetric.to_dict`."""
    kind, n, params = d["kind"], d["n"], d.get("params", {})
    if kind == "euclidean":
        return make_closed_form_metric("euclidean", n)
    if kind == "hyperbolic":
        return make_closed_form_metric("hyperbolic", n, params.get("kappa", 1.0))
    if kind == "march":
        return march_metric(params["c"], n, params.get("a_grid"))
    if kind == "curvature":
        return metric_from_curvature(profile_from_dict(params["profile"]), n,
                                     d.get("r_max", 1e6), d.get("rtol", 1e-12),
                                     d.get("r_start", 1e-6))
    raise ValueError(f"unknown metric kind {kind!r}")


def curvature_at(metric: WarpedMetric, r):
    """Radial sectional curvature ``-f''(r)/f(r)``."""
    return -metric.d2f(r) / metric.f(r)


def sphere_area(n: int) -> float:
    """Area of the unit sphere ``S^{n-1}``."""
    return 2 * math.pi ** (n / 2) / gamma(n / 2)


def volume(metric: WarpedMetric, r: float, rtol: float = 1e-9) -> float:
    """Volume of the geodesic ball ``B(o, r)``: ``|S^{n-1}| int_0^r f^{n-1}``."""
    r = float(r)
    metric._check(r)
    n = metric.n
    # geometric panels keep quad's subdivision budget small at large r
    edges = [0.0] + [x for x in np.geomspace(1.0, r, max(2, int(math.log2(max(r, 2))) + 1))
                     if x < r] + [r] if r > 1 else [0.0, r]
    edges = sorted(set(edges))
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, err = integrate.quad(lambda t: metric.f(t) ** (n - 1), lo, hi,
                                  epsrel=rtol, epsabs=0.0, limit=200)
        if err > max(rtol * abs(val) * 10, 1e-300):
            raise IntegrationFailure(f"volume quadrature error {err:g} on [{lo}, {hi}]")
        total += val
    return sphere_area(n) * total
