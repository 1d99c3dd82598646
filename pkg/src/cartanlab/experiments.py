"""Harnack/Hölder oscillation chain and desk-scale Liouville experiments."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .barriers import BoundaryData, uniform_gradient_bound
from .manifold import WarpedMetric
from .solver import ScalarField, SolverConfig, boundary_convergence_experiment

__all__ = [
    "DecayCheck",
    "HarnackRecord",
    "LiouvilleReport",
    "MissingSample",
    "WeightReport",
    "config_hash",
    "empirical_harnack_constant",
    "harnack_samples",
    "holder_exponent",
    "liouville_experiment",
    "oscillation_decay_check",
    "weight_field",
]


class MissingSample(KeyError):
    pass


def config_hash(obj) -> str:
    """sha256 of the canonical JSON form (sorted keys, no whitespace)."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


# --- Harnack chain ------------------------------------------------------------

@dataclass(frozen=True)
class HarnackRecord:
    C0: float
    Lambda: float
    kappa_raw: float
    kappa: float
    t: tuple = ()
    M: tuple = ()
    m: tuple = ()

    def with_samples(self, t, M, m) -> "HarnackRecord":
        """Attach sup/inf samples over increasing radii ``t``; checks their invariants."""
        t, M, m = (np.asarray(v, dtype=float) for v in (t, M, m))
        if not (t.shape == M.shape == m.shape):
            raise ValueError("t, M, m must have equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("radii must be increasing")
        if np.any(M < m):
            raise ValueError("need M(t) >= m(t)")
        if np.any(np.diff(M) < 0) or np.any(np.diff(m) > 0):
            raise ValueError("M must be nondecreasing and m nonincreasing")
        return replace(self, t=tuple(t), M=tuple(M), m=tuple(m))

    def osc(self, t: float) -> float:
        ts = np.asarray(self.t)
        hit = np.nonzero(np.isclose(ts, t, rtol=1e-12, atol=0.0))[0]
        if hit.size == 0:
            raise MissingSample(f"missing-sample: no oscillation sample at t={t}")
        i = int(hit[0])
        return self.M[i] - self.m[i]


def holder_exponent(C0: float) -> HarnackRecord:
    """``Lambda = (C0-1)/C0`` and ``kappa = min(1, -log(Lambda)/log 2)``."""
    if not C0 > 1:
        raise ValueError("Harnack constant must exceed 1")
    lam = (C0 - 1.0) / C0
    # -log(1 - 1/C0) stays accurate for huge C0
    raw = -math.log1p(-1.0 / C0) / math.log(2.0)
    return HarnackRecord(float(C0), lam, raw, min(1.0, raw))


@dataclass(frozen=True)
class DecayCheck:
    passed: bool
    chain_ok: bool
    offending: list
    lhs: float
    rhs: float

    def __bool__(self):
        return self.passed


def _leq(a, b, slack=1e-12):
    return a <= b * (1.0 + slack) + 1e-300


def oscillation_decay_check(record: HarnackRecord, r: float, R: float) -> DecayCheck:
    """Check ``osc(r) <= 2^k (r/R)^k osc(R)`` and each dyadic step ``osc(t) <= Lambda osc(2t)``.

    Single steps are checked for every dyad ``t, 2t`` between ``r`` and ``R``
    present in the record; failures are listed in ``offending``.
    """
    if r > R:
        raise ValueError("need r <= R")
    lhs, oR = record.osc(r), record.osc(R)
    k = record.kappa
    rhs = 2.0 ** k * (r / R) ** k * oR
    chain_ok = _leq(lhs, rhs)
    offending = []
    t = r
    while 2 * t <= R * (1 + 1e-12):
        if not _leq(record.osc(t), record.Lambda * record.osc(2 * t)):
            offending.append(t)
        t *= 2
    return DecayCheck(chain_ok and not offending, chain_ok, offending, lhs, rhs)


def harnack_samples(fld: ScalarField, radii):
    """``M(t) = sup_{B(o,t)} u`` and ``m(t) = inf_{B(o,t)} u`` from the cells of a solve."""
    g = fld.grid
    t = np.asarray(radii, dtype=float)
    if np.any(t <= g.r[0]) or np.any(t > g.R_max):
        raise ValueError("sample radii must lie in (r_1, R_max]")
    M = np.array([fld.u[g.r <= ti].max() for ti in t])
    m = np.array([fld.u[g.r <= ti].min() for ti in t])
    return t, M, m


def empirical_harnack_constant(fld: ScalarField, radii) -> float:
    """Largest ``sup_{B(t)} v / inf_{B(t)} v`` over ``t`` with ``v = u - inf_{B(2t)} u``.

    A diagnostic estimate of the Harnack constant from one solve, not a
    verified bound; radii with ``2t > R_max`` are skipped.
    """
    g = fld.grid
    worst = 1.0
    for t in np.asarray(radii, dtype=float):
        if 2 * t > g.R_max or t <= g.r[0]:
            continue
        v = fld.u - fld.u[g.r <= 2 * t].min()
        inner = v[g.r <= t]
        lo, hi = float(inner.min()), float(inner.max())
        if hi == 0:
            continue
        worst = max(worst, hi / lo if lo > 0 else math.inf)
    return worst


# --- Liouville experiment --------------------------------------------------------

def _is_ansc(metric: WarpedMetric) -> bool:
    """Flat space, or a curvature-defined metric with a declared ANSC tail."""
    if metric.kind == "euclidean":
        return True
    if metric.kind == "curvature":
        return metric.params["profile"]["tail"] in ("ansc", "zero")
    return False


@dataclass(frozen=True)
class LiouvilleReport:
    metric: dict
    boundary: dict
    config: dict
    radii: list
    osc: list
    values: list
    sup_diff: list
    max_grad: list
    errors: list
    decay_exponent: float
    decay_factors: list
    gradient_bound: float
    gradient_c: float
    below_bound: bool
    regime: str
    ansc_declared: bool
    config_hash: str
    notes: str = ("bounded boundary data stand in for the linear-growth class; "
                  "oscillations are measured on the circle r=1")
    tags: tuple = ("harnack-holder-chain", "uniform-gradient-bound", "liouville-regime")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["R", "osc", "u_pole", "sup_diff", "max_grad", "error"])
        for row in zip(self.radii, self.osc, self.values, self.sup_diff, self.max_grad,
                       self.errors):
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()


def _fit_decay(radii, osc):
    """Least-squares slope of ``-log osc`` against ``log R`` over the last three radii."""
    R, o = np.asarray(radii[-3:], float), np.asarray(osc[-3:], float)
    if R.size < 2 or not np.all(np.isfinite(o)) or np.any(o <= 0):
        return math.nan
    return float(-np.polyfit(np.log(R), np.log(o), 1)[0])


def _regime(osc, factors):
    o = np.asarray(osc, float)
    if np.all(o == 0):
        return "constant"
    if np.any(~np.isfinite(o)):
        return "undetermined"
    steps = np.abs(np.diff(o))
    if o[-1] > 0 and steps.size and steps[-1] < 0.1 * o[-1]:
        return "existence regime"
    if factors and all(f >= 1.5 for f in factors):
        return "liouville regime"
    return "undetermined"


def liouville_experiment(metric: WarpedMetric, b: BoundaryData, radii, config: SolverConfig,
                         c: float = 1.0, Nr: int = 128, Ntheta: int = 64,
                         workers: int = 1) -> LiouvilleReport:
    """Oscillation of ``u_R`` on ``r = 1`` as the ball grows, against the uniform gradient bound.

    ``c`` is the constant of the linear-growth and curvature hypotheses feeding
    the uniform gradient bound.
    """
    rows, _ = boundary_convergence_experiment(metric, b, radii, config, Nr, Ntheta,
                                              workers=workers)
    osc = [row.osc for row in rows]
    factors = [a / b2 if b2 > 0 else math.inf for a, b2 in zip(osc, osc[1:])]
    bound = uniform_gradient_bound(c, metric.n)
    grads = [row.max_grad for row in rows]
    finite = [g for g in grads if np.isfinite(g)]
    inputs = {"metric": metric.to_dict(), "boundary": b.to_dict(), "config": config.to_dict(),
              "radii": [float(R) for R in radii], "c": c, "Nr": Nr, "Ntheta": Ntheta}
    return LiouvilleReport(
        metric=metric.to_dict(), boundary=b.to_dict(), config=config.to_dict(),
        radii=[row.R for row in rows], osc=osc, values=[row.value_at_pole for row in rows],
        sup_diff=[row.sup_diff for row in rows], max_grad=grads,
        errors=[row.error for row in rows], decay_exponent=_fit_decay(radii, osc),
        decay_factors=factors, gradient_bound=bound, gradient_c=float(c),
        below_bound=all(g <= bound for g in finite), regime=_regime(osc, factors),
        ansc_declared=_is_ansc(metric), config_hash=config_hash(inputs))


# --- weighted-operator diagnostics --------------------------------------------

@dataclass(frozen=True, eq=False)
class WeightReport:
    sigma: np.ndarray = field(repr=False)
    min_sigma: float = 1.0
    max_sigma: float = 1.0
    grad_bound: float = 0.0
    implied_c: float = 1.0
    meets_bound: bool = True


def weight_field(fld: ScalarField, grad_bound: float | None = None) -> WeightReport:
    """``sigma = (1 + |grad u|^2)^(-1/4)`` and the lower bound implied by a gradient bound.

    Without ``grad_bound`` the measured ``sup |grad u|`` is used.
    """
    g = fld.grad_norm
    sigma = (1.0 + g ** 2) ** -0.25
    G = float(np.max(g)) if grad_bound is None else float(grad_bound)
    c = (1.0 + G * G) ** -0.25 if np.isfinite(G) else 0.0
    smin = float(np.min(sigma))
    return WeightReport(sigma, smin, float(np.max(sigma)), G, c, smin >= c - 1e-12)
