"""Finite-volume solver for zonal Dirichlet problems on geodesic balls.

The operator ``div(a grad u)`` is discretized in flux form on a cell-centred
polar grid with ``a = 1/W`` (minimal graphs), ``(|grad u|^2 + delta^2)^((p-2)/2)``
(p-Laplace) or ``1`` (Laplace).  With positive face coefficients each lagged
linear system is an M-matrix, so the discrete maximum principle holds.
Dimension enters only through the Jacobian ``f^(n-1) sin^(n-2)``.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import newton_krylov, NoConvergence
from scipy.sparse.linalg import spsolve

from .barriers import BoundaryData, Certificate
from .manifold import WarpedMetric

__all__ = [
    "DegenerateSystem",
    "NoConvergenceError",
    "PolarGrid",
    "SandwichReport",
    "ScalarField",
    "SolverConfig",
    "boundary_convergence_experiment",
    "build_grid",
    "read_field_binary",
    "residual_norm",
    "sandwich_check",
    "solve_dirichlet",
]

MAX_STRETCH = 1.2
MAGIC = b"ADLB1"
MIN_DAMPING = 1.0 / 16
_GAUSS = np.polynomial.legendre.leggauss(6)


class NoConvergenceError(RuntimeError):
    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


class DegenerateSystem(RuntimeError):
    pass


def _cell_integrals(g, faces):
    """Gauss-Legendre integral of ``g`` over each interval between ``faces``."""
    xg, wg = _GAUSS
    lo, hi = faces[:-1, None], faces[1:, None]
    pts = 0.5 * (hi - lo) * xg[None, :] + 0.5 * (hi + lo)
    return (0.5 * (hi - lo)[:, 0]) * (g(pts) @ wg)


@dataclass(frozen=True, eq=False)
class PolarGrid:
    """Cell-centred grid on ``B(o, R_max)`` in (r, theta).

    Radial faces follow ``R (e^{beta s} - 1)/(e^beta - 1)`` for uniform ``s``
    (uniform when ``beta = 0``); theta cells are uniform on ``(0, pi)``.
    """

    metric: WarpedMetric
    R_max: float
    r_faces: np.ndarray
    theta_faces: np.ndarray
    r: np.ndarray
    theta: np.ndarray
    area_r: np.ndarray        # f^(n-1) at radial faces (per unit angular measure)
    ang_meas: np.ndarray      # int sin^(n-2) over each theta cell
    ang_face: np.ndarray      # sin^(n-2) at theta faces
    rad_theta: np.ndarray     # int f^(n-3) dr over each radial cell
    rad_meas: np.ndarray      # int f^(n-1) dr over each radial cell
    f_center: np.ndarray
    f_face: np.ndarray

    @property
    def n(self):
        return self.metric.n

    @property
    def shape(self):
        return (self.r.size, self.theta.size)

    @property
    def volume(self):
        """Cell measures ``int J dr dtheta`` (without the sphere-factor constant)."""
        return np.outer(self.rad_meas, self.ang_meas)

    @property
    def jacobian(self):
        n = self.n
        return np.outer(self.f_center ** (n - 1), np.sin(self.theta) ** (n - 2))

    @property
    def stretch(self):
        w = np.diff(self.r_faces)
        return float(np.max(np.maximum(w[1:] / w[:-1], w[:-1] / w[1:]))) if w.size > 1 else 1.0


def build_grid(metric: WarpedMetric, R_max: float, Nr: int, Ntheta: int,
               beta: float = 0.0) -> PolarGrid:
    if Nr < 8 or Ntheta < 8:
        raise ValueError("need Nr, Ntheta >= 8")
    if not 0 < R_max <= metric.r_max:
        raise ValueError(f"R_max={R_max} outside (0, r_max={metric.r_max}]")
    s = np.linspace(0.0, 1.0, Nr + 1)
    faces = R_max * (np.expm1(beta * s) / math.expm1(beta) if beta != 0 else s)
    w = np.diff(faces)
    ratio = np.max(np.maximum(w[1:] / w[:-1], w[:-1] / w[1:]))
    if ratio > MAX_STRETCH + 1e-12:
        raise ValueError(f"stretch ratio {ratio:.4f} exceeds {MAX_STRETCH}")
    n = metric.n
    tf = np.linspace(0.0, math.pi, Ntheta + 1)

    def fpow(e):
        def g(r):
            return np.exp(e * metric.logf(r))
        return g

    r = 0.5 * (faces[1:] + faces[:-1])
    fr_faces = np.concatenate([[0.0], np.exp((n - 1) * metric.logf(faces[1:]))])
    return PolarGrid(
        metric, float(R_max), faces, tf, r, 0.5 * (tf[1:] + tf[:-1]),
        area_r=fr_faces,
        ang_meas=_cell_integrals(lambda t: np.sin(t) ** (n - 2), tf),
        ang_face=np.sin(tf) ** (n - 2) if n > 2 else np.ones_like(tf),
        rad_theta=_cell_integrals(fpow(n - 3), faces),
        rad_meas=_cell_integrals(fpow(n - 1), faces),
        f_center=metric.f(r),
        f_face=np.concatenate([[0.0], metric.f(faces[1:])]),
    )


# --- configuration and fields ---------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    equation: str = "minimal"          # "minimal", "p-laplace" or "laplace"
    p: float | None = None
    delta: float | None = None         # defaults to 1e-8 for p != 2
    method: str = "picard"             # or "damped-newton"
    tol: float = 1e-10
    max_iter: int = 500
    damping: float = 1.0               # Picard relaxation factor in (0, 1]
    initial: str | float = "boundary"  # "boundary", "min", "max" or a constant

    def __post_init__(self):
        if self.equation not in ("minimal", "p-laplace", "laplace"):
            raise ValueError(f"unknown equation {self.equation!r}")
        if self.equation == "p-laplace":
            if self.p is None or self.p <= 1:
                raise ValueError("p-laplace needs p > 1")
            if self.delta == 0 and self.p != 2:
                raise ValueError("delta = 0 is only allowed for the minimal equation")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.method not in ("picard", "damped-newton"):
            raise ValueError(f"unknown method {self.method!r}")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")

    @property
    def reg(self) -> float:
        if self.equation != "p-laplace" or self.p == 2:
            return 0.0
        return 1e-8 if self.delta is None else float(self.delta)

    def to_dict(self) -> dict:
        return {"equation": self.equation, "p": self.p, "delta": self.reg,
                "method": self.method, "tol": self.tol, "max_iter": self.max_iter,
                "damping": self.damping, "initial": self.initial}


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: PolarGrid
    u: np.ndarray
    boundary: np.ndarray = field(repr=False)
    iterations: int = 0
    residual: float = 0.0
    config: SolverConfig | None = None

    def gradient(self):
        """Cell-centred ``(u_r, u_theta / f)``."""
        g = self.grid
        ur, ut = _center_gradient(g, self.u, self.boundary)
        return ur, ut / g.f_center[:, None]

    @property
    def grad_norm(self):
        ur, ut = self.gradient()
        return np.hypot(ur, ut)

    @property
    def W(self):
        return np.sqrt(1.0 + self.grad_norm ** 2)

    @property
    def sigma(self):
        return self.W ** -0.5

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "theta", "u", "W", "sigma"])
        W, s = self.W, self.sigma
        for i, ri in enumerate(self.grid.r):
            for j, tj in enumerate(self.grid.theta):
                w.writerow([repr(float(ri)), repr(float(tj)), repr(float(self.u[i, j])),
                            repr(float(W[i, j])), repr(float(s[i, j]))])
        return buf.getvalue()

    def to_binary(self) -> bytes:
        """``ADLB1``, uint32 ``Nr``, uint32 ``Ntheta``, then r, theta, u (row-major), LE doubles."""
        Nr, Nt = self.grid.shape
        return (MAGIC + struct.pack("<II", Nr, Nt)
                + self.grid.r.astype("<f8").tobytes()
                + self.grid.theta.astype("<f8").tobytes()
                + np.ascontiguousarray(self.u).astype("<f8").tobytes())


def read_field_binary(data: bytes):
    """Inverse of :meth:`ScalarField.to_binary`; returns ``(r, theta, u)``."""
    if data[:5] != MAGIC:
        raise ValueError("not an ADLB1 field")
    Nr, Nt = struct.unpack("<II", data[5:13])
    a = np.frombuffer(data[13:], dtype="<f8")
    if a.size != Nr + Nt + Nr * Nt:
        raise ValueError("truncated field file")
    return a[:Nr].copy(), a[Nr:Nr + Nt].copy(), a[Nr + Nt:].reshape(Nr, Nt).copy()


# --- discretization --------------------------------------------------------

def _center_gradient(g: PolarGrid, u, ub):
    """Central differences with ghost cells: origin reflection, pole mirrors, Dirichlet rim."""
    Nr, Nt = u.shape
    rg = np.concatenate([[-g.r[0]], g.r, [g.R_max]])
    ug = np.vstack([u[0, ::-1][None, :], u, ub[None, :]])
    ur = (ug[2:] - ug[:-2]) / (rg[2:] - rg[:-2])[:, None]
    tg = np.concatenate([[-g.theta[0]], g.theta, [2 * math.pi - g.theta[-1]]])
    vg = np.hstack([u[:, :1], u, u[:, -1:]])
    ut = (vg[:, 2:] - vg[:, :-2]) / (tg[2:] - tg[:-2])[None, :]
    return ur, ut


def _face_coefficients(g: PolarGrid, u, ub, cfg: SolverConfig):
    """Coefficient ``a`` on interior radial faces (Nr, Nt; last = rim) and theta faces."""
    Nr, Nt = u.shape
    if cfg.equation == "laplace" or (cfg.equation == "p-laplace" and cfg.p == 2):
        return np.ones((Nr, Nt)), np.ones((Nr, Nt - 1))
    ur_c, ut_c = _center_gradient(g, u, ub)
    # radial faces i+1/2 for i = 0..Nr-1 (the last one is the rim)
    un = np.vstack([u[1:], ub[None, :]])
    rn = np.concatenate([g.r[1:], [g.R_max]])
    ur_f = (un - u) / (rn - g.r)[:, None]
    ut_next = np.vstack([ut_c[1:], ut_c[-1:]])
    ut_f = 0.5 * (ut_c + ut_next) / g.f_face[1:, None]
    grad2_r = ur_f ** 2 + ut_f ** 2
    # theta faces j+1/2 for j = 0..Nt-2
    dth = np.diff(g.theta)
    ut_t = (u[:, 1:] - u[:, :-1]) / dth[None, :] / g.f_center[:, None]
    ur_t = 0.5 * (ur_c[:, 1:] + ur_c[:, :-1])
    grad2_t = ur_t ** 2 + ut_t ** 2
    if cfg.equation == "minimal":
        return 1.0 / np.sqrt(1.0 + grad2_r), 1.0 / np.sqrt(1.0 + grad2_t)
    e = 0.5 * (cfg.p - 2)
    d2 = cfg.reg ** 2
    return (grad2_r + d2) ** e, (grad2_t + d2) ** e


def _transmissibilities(g: PolarGrid, a_r, a_t):
    """Face conductances: flux = T * (u_nbr - u)."""
    rn = np.concatenate([g.r[1:], [g.R_max]])
    Tr = a_r * (g.area_r[1:] / (rn - g.r))[:, None] * g.ang_meas[None, :]
    dth = np.diff(g.theta)
    Tt = a_t * g.rad_theta[:, None] * (g.ang_face[1:-1] / dth)[None, :]
    return Tr, Tt


def _flux_balance(g: PolarGrid, u, ub, Tr, Tt):
    """Net outward-positive flux per cell divided by its measure."""
    un = np.vstack([u[1:], ub[None, :]])
    Fr = Tr * (un - u)                      # through outer radial face of each cell
    Ft = Tt * (u[:, 1:] - u[:, :-1])        # through theta face j+1/2
    net = Fr.copy()
    net[1:] -= Fr[:-1]
    net[:, :-1] += Ft
    net[:, 1:] -= Ft
    return net / g.volume


def _assemble(g: PolarGrid, ub, Tr, Tt):
    """Sparse system ``A u = rhs`` equivalent to zero flux balance."""
    Nr, Nt = g.shape
    idx = np.arange(Nr * Nt).reshape(Nr, Nt)
    diag = np.zeros((Nr, Nt))
    rows, cols, vals = [], [], []
    # radial couplings between i and i+1
    T = Tr[:-1]
    a, b = idx[:-1].ravel(), idx[1:].ravel()
    rows += [a, b]
    cols += [b, a]
    vals += [-T.ravel(), -T.ravel()]
    diag[:-1] += T
    diag[1:] += T
    # rim: Dirichlet value on the outer face
    diag[-1] += Tr[-1]
    rhs = np.zeros((Nr, Nt))
    rhs[-1] = Tr[-1] * ub
    a, b = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    rows += [a, b]
    cols += [b, a]
    vals += [-Tt.ravel(), -Tt.ravel()]
    diag[:, :-1] += Tt
    diag[:, 1:] += Tt
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(Nr * Nt, Nr * Nt))
    return A, rhs.ravel()


def residual_field(metric: WarpedMetric, grid: PolarGrid, u, ub, cfg: SolverConfig):
    a_r, a_t = _face_coefficients(grid, u, ub, cfg)
    Tr, Tt = _transmissibilities(grid, a_r, a_t)
    return _flux_balance(grid, u, ub, Tr, Tt)


def residual_norm(metric: WarpedMetric, grid: PolarGrid, field, equation="minimal",
                  norm: str = "sup", boundary=None) -> float:
    """Discrete flux-balance residual of a field; ``norm`` is ``"sup"`` or ``"l2"``.

    ``"l2"`` is volume weighted, ``sqrt(sum V r^2 / sum V)``.
    """
    if isinstance(field, ScalarField):
        u, ub = field.u, field.boundary
        cfg = field.config if equation is None else _as_config(equation)
    else:
        u, ub = np.asarray(field, dtype=float), np.asarray(boundary, dtype=float)
        cfg = _as_config(equation)
    res = residual_field(metric, grid, u, ub, cfg)
    if norm == "sup":
        return float(np.max(np.abs(res)))
    V = grid.volume
    return float(np.sqrt(np.sum(V * res ** 2) / np.sum(V)))


def _as_config(equation) -> SolverConfig:
    if isinstance(equation, SolverConfig):
        return equation
    if isinstance(equation, tuple):
        return SolverConfig(equation=equation[0], p=equation[1])
    return SolverConfig(equation=equation)


def _initial(cfg: SolverConfig, g: PolarGrid, ub):
    Nr, _ = g.shape
    if cfg.initial == "boundary":
        return np.tile(ub, (Nr, 1))
    if cfg.initial == "min":
        return np.full(g.shape, ub.min())
    if cfg.initial == "max":
        return np.full(g.shape, ub.max())
    return np.full(g.shape, float(cfg.initial))


def solve_dirichlet(metric: WarpedMetric, grid: PolarGrid, config: SolverConfig,
                    b: BoundaryData) -> ScalarField:
    """Solve ``div(a grad u) = 0`` in ``B(o, R_max)`` with ``u = b`` on the rim."""
    if grid.metric is not metric and grid.metric.to_dict() != metric.to_dict():
        raise ValueError("grid was built on a different metric")
    ub = np.asarray(b.b(grid.theta), dtype=float)
    u = _initial(config, grid, ub)
    res = residual_field(metric, grid, u, ub, config)
    rn = float(np.max(np.abs(res)))
    it = 0
    if config.method == "damped-newton":
        u, rn, it = _newton(metric, grid, config, u, ub, rn)
    omega = config.damping
    while rn > config.tol:
        if it >= config.max_iter:
            raise NoConvergenceError(
                f"no-convergence after {it} iterations, residual {rn:.3e}", rn)
        a_r, a_t = _face_coefficients(grid, u, ub, config)
        Tr, Tt = _transmissibilities(grid, a_r, a_t)
        A, rhs = _assemble(grid, ub, Tr, Tt)
        with np.errstate(all="raise"):
            try:
                new = spsolve(A.tocsc(), rhs).reshape(grid.shape)
            except (FloatingPointError, RuntimeError) as exc:
                raise DegenerateSystem(f"degenerate-system: {exc}") from exc
        if not np.all(np.isfinite(new)):
            raise DegenerateSystem("degenerate-system: singular linearization")
        u = u + omega * (new - u)
        it += 1
        prev, rn = rn, float(np.max(np.abs(residual_field(metric, grid, u, ub, config))))
        if rn > prev and omega > MIN_DAMPING:
            # lagged-coefficient iteration overshoots (typical for p > 2): relax harder
            omega *= 0.5
    return ScalarField(grid, u, ub, it, rn, config)


def _newton(metric, grid, config, u, ub, rn):
    """Jacobian-free damped Newton (Armijo line search); falls back to Picard on failure."""
    if rn <= config.tol:
        return u, rn, 0
    shape = grid.shape
    V = grid.volume

    def F(v):
        # residual scaled by the cell measure keeps the system well conditioned
        return (residual_field(metric, grid, v.reshape(shape), ub, config) * V).ravel()

    try:
        sol = newton_krylov(F, u.ravel(), f_tol=config.tol * float(np.min(V)),
                            maxiter=config.max_iter, line_search="armijo")
    except (NoConvergence, ValueError, FloatingPointError) as exc:
        sol = exc.args[0] if isinstance(exc, NoConvergence) and exc.args else u.ravel()
    u = np.asarray(sol).reshape(shape)
    rn = float(np.max(np.abs(residual_field(metric, grid, u, ub, config))))
    return u, rn, 1


# --- barrier sandwich and convergence sweeps --------------------------------

@dataclass(frozen=True)
class SandwichReport:
    violations: int
    worst: float
    tol: float
    locations: list

    @property
    def passed(self) -> bool:
        return self.violations == 0


def sandwich_check(field: ScalarField, certificate: Certificate,
                   tol: float | None = None) -> SandwichReport:
    """Check ``max(d, -eta+B) - tol <= u <= min(a, eta+B) + tol`` at every cell."""
    g = field.grid
    if tol is None:
        tol = 10.0 * (field.config.tol if field.config else 1e-10)
    R, T = np.meshgrid(g.r, g.theta, indexing="ij")
    upper = certificate.upper(R, T)
    lower = certificate.lower(R, T)
    excess = np.maximum(field.u - upper, lower - field.u)
    bad = excess > tol
    locs = [(float(g.r[i]), float(g.theta[j])) for i, j in zip(*np.nonzero(bad))]
    return SandwichReport(int(bad.sum()), float(max(excess.max(), 0.0)), tol, locs)


def _radial_interp(field: ScalarField, radii):
    """Values at the given radii for every theta node (linear in r, rim included)."""
    g = field.grid
    rr = np.concatenate([[0.0], g.r, [g.R_max]])
    # value at the origin: average of the two innermost rings' pole-symmetric mean
    u0 = np.full(g.shape[1], float(np.mean(field.u[0])))
    uu = np.vstack([u0[None, :], field.u, field.boundary[None, :]])
    return np.stack([np.interp(radii, rr, uu[:, j]) for j in range(g.shape[1])], axis=1)


def _pole_value(col):
    # even extension about theta = 0: u ~ c0 + c2 theta^2
    return (9.0 * col[..., 0] - col[..., 1]) / 8.0


@dataclass(frozen=True)
class ConvergenceRow:
    R: float
    osc: float
    value_at_pole: float
    sup_diff: float
    iterations: int
    residual: float
    max_grad: float
    error: str = ""


def boundary_convergence_experiment(metric: WarpedMetric, b: BoundaryData, radii,
                                    config: SolverConfig, Nr: int = 128, Ntheta: int = 64,
                                    beta: float | None = None, inner_radius: float = 1.0,
                                    grad_window=(2.0, 0.5), workers: int = 1):
    """Solve on ``B(o, R)`` for each radius and track the solution on ``B(o, 1)``.

    Returns ``(rows, fields)``.  ``max_grad`` is the sup of ``|grad u|`` over
    ``r`` in ``[2, R/2]`` (``grad_window``); errors are recorded per radius.
    Radii are solved independently (``workers`` threads) and assembled in order.
    """
    radii = [float(R) for R in radii]
    if any(b2 <= a for a, b2 in zip(radii, radii[1:])):
        raise ValueError("radii must be increasing")

    def one(R):
        bt = beta if beta is not None else _default_beta(R, Nr)
        try:
            return solve_dirichlet(metric, build_grid(metric, R, Nr, Ntheta, bt), config, b)
        except (NoConvergenceError, DegenerateSystem, ValueError) as exc:
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, radii))
    else:
        results = [one(R) for R in radii]

    probe = np.linspace(0.0, inner_radius, 65)
    rows, fields, prev = [], [], None
    for R, fld in zip(radii, results):
        if isinstance(fld, Exception):
            rows.append(ConvergenceRow(R, math.nan, math.nan, math.nan, 0, math.nan,
                                       math.nan, str(fld)))
            fields.append(None)
            prev = None
            continue
        grid = fld.grid
        ring = _radial_interp(fld, np.array([inner_radius]))[0]
        inner = _radial_interp(fld, probe)
        diff = float(np.max(np.abs(inner - prev))) if prev is not None else math.nan
        prev = inner
        lo, hi = grad_window[0], grad_window[1] * R
        sel = (grid.r >= lo) & (grid.r <= hi)
        gmax = float(np.max(fld.grad_norm[sel])) if np.any(sel) else 0.0
        rows.append(ConvergenceRow(R, float(ring.max() - ring.min()), float(_pole_value(ring)),
                                   diff, fld.iterations, fld.residual, gmax))
        fields.append(fld)
    return rows, fields


def _default_beta(R: float, Nr: int) -> float:
    # cluster cells toward the origin once the ball is much larger than the unit ring
    if R <= 2.0:
        return 0.0
    return min(math.log(R), 0.9 * Nr * math.log(MAX_STRETCH))
