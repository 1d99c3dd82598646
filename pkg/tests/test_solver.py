import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cartanlab.barriers import (
    BoundaryData,
    choose_k_and_r0,
    constant_boundary,
    cos_boundary,
    scaled_cos_boundary,
)
from cartanlab.manifold import (
    make_closed_form_metric,
    march_metric,
    metric_from_curvature,
    zero_profile,
)
from cartanlab.solver import (
    MAGIC,
    NoConvergenceError,
    ScalarField,
    SolverConfig,
    boundary_convergence_experiment,
    build_grid,
    read_field_binary,
    residual_norm,
    sandwich_check,
    solve_dirichlet,
)

EUC3 = make_closed_form_metric("euclidean", 3)
HYP3 = make_closed_form_metric("hyperbolic", 3)


def _mesh(grid):
    return np.meshgrid(grid.r, grid.theta, indexing="ij")


# --- grid -----------------------------------------------------------------------------

def test_grid_cell_count_and_jacobian():
    g = build_grid(make_closed_form_metric("euclidean", 2), 1.0, 16, 16)
    assert g.shape == (16, 16) and g.r.size * g.theta.size == 256
    assert np.all(g.jacobian > 0) and np.all(g.volume > 0)
    # staggered off the pole and the angular poles
    assert g.r[0] == pytest.approx(0.5 * (g.r_faces[1] - g.r_faces[0]))
    assert 0 < g.theta[0] and g.theta[-1] < math.pi


def test_grid_volume_matches_ball_volume():
    g = build_grid(EUC3, 2.0, 32, 16)
    # angular measure integrates sin over (0, pi) = 2; times 2 pi for the azimuth
    assert 2 * math.pi * g.volume.sum() == pytest.approx(4 * math.pi / 3 * 8, rel=1e-12)


def test_stretched_grid_respects_ratio():
    g = build_grid(HYP3, 8.0, 128, 64, beta=math.log(8.0))
    assert g.stretch <= 1.2
    assert build_grid(HYP3, 8.0, 128, 64).stretch == pytest.approx(1.0)


def test_grid_rejects_excess_stretch_and_small_sizes():
    with pytest.raises(ValueError, match="stretch"):
        build_grid(HYP3, 8.0, 16, 16, beta=5.0)
    with pytest.raises(ValueError):
        build_grid(HYP3, 8.0, 4, 16)
    with pytest.raises(ValueError):
        build_grid(metric_from_curvature(zero_profile(), 3, 50.0), 100.0, 16, 16)


@pytest.mark.parametrize("beta", [0.0, 1.0, 2.0])
def test_doubling_nr_halves_widths(beta):
    coarse = build_grid(HYP3, 4.0, 32, 16, beta=beta)
    fine = build_grid(HYP3, 4.0, 64, 16, beta=beta)
    wc = np.diff(coarse.r_faces)
    wf = np.diff(fine.r_faces)
    pairs = wf[0::2] + wf[1::2]
    assert np.allclose(pairs, wc, rtol=1e-12)
    assert np.allclose(wf[0::2] / wc, 0.5, rtol=0.05)


# --- configuration ----------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(tol=0.0), dict(equation="p-laplace", p=3.0, delta=0.0),
                                dict(equation="p-laplace"), dict(equation="heat"),
                                dict(method="multigrid"), dict(damping=0.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_config_regularization_defaults():
    assert SolverConfig().reg == 0.0
    assert SolverConfig("p-laplace", p=3.0).reg == 1e-8
    assert SolverConfig("p-laplace", p=2.0, delta=0.0).reg == 0.0


# --- solves -----------------------------------------------------------------------------

@pytest.mark.parametrize("cfg", [SolverConfig(), SolverConfig("p-laplace", p=3.0),
                                 SolverConfig("laplace")])
def test_constant_boundary_is_exact(cfg):
    g = build_grid(HYP3, 3.0, 16, 16)
    fld = solve_dirichlet(HYP3, g, cfg, constant_boundary(0.7, 3))
    assert np.all(fld.u == 0.7)
    assert fld.iterations <= 1
    assert residual_norm(HYP3, g, fld, None) == 0.0


def test_small_amplitude_minimal_matches_harmonic_oracle():
    g = build_grid(EUC3, 1.0, 128, 64)
    fld = solve_dirichlet(EUC3, g, SolverConfig(), scaled_cos_boundary(0.01, 3))
    R, T = _mesh(g)
    assert np.max(np.abs(fld.u - 0.01 * R * np.cos(T))) <= 1e-5
    assert fld.residual <= 1e-10


def test_p2_matches_laplace():
    g = build_grid(EUC3, 1.0, 64, 32)
    b = cos_boundary(3)
    harm = solve_dirichlet(EUC3, g, SolverConfig("laplace"), b)
    p2 = solve_dirichlet(EUC3, g, SolverConfig("p-laplace", p=2.0, delta=0.0), b)
    assert np.max(np.abs(p2.u - harm.u)) <= 1e-8


def test_residual_of_constant_is_zero():
    g = build_grid(HYP3, 2.0, 16, 16)
    u = np.full(g.shape, -0.3)
    for eq in ["minimal", ("p-laplace", 3.0), "laplace"]:
        assert residual_norm(HYP3, g, u, eq, boundary=np.full(16, -0.3)) == 0.0


@pytest.mark.parametrize("equation", ["laplace", "minimal"])
def test_mesh_convergence_order(equation):
    errs = []
    for Nr, Nt in [(32, 16), (64, 32), (128, 64)]:
        g = build_grid(EUC3, 1.0, Nr, Nt)
        R, T = _mesh(g)
        u = 0.01 * R * np.cos(T)
        errs.append(residual_norm(EUC3, g, u, equation, norm="l2",
                                  boundary=0.01 * np.cos(g.theta)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8)


def test_oracle_residual_sup_norm_is_first_order_at_the_corner():
    # the zero-flux closures at the origin and the poles cost one order in sup norm
    sups = []
    for Nr, Nt in [(32, 16), (64, 32), (128, 64)]:
        g = build_grid(EUC3, 1.0, Nr, Nt)
        R, T = _mesh(g)
        sups.append(residual_norm(EUC3, g, 0.01 * R * np.cos(T), "minimal",
                                  boundary=0.01 * np.cos(g.theta)))
    orders = np.log2(np.array(sups[:-1]) / np.array(sups[1:]))
    assert np.all(orders >= 0.9)


@pytest.mark.parametrize("metric, cfg", [
    (EUC3, SolverConfig()),
    (HYP3, SolverConfig()),
    (march_metric(0.75, 3), SolverConfig()),
    (EUC3, SolverConfig("p-laplace", p=3.0)),
    (make_closed_form_metric("hyperbolic", 4), SolverConfig("p-laplace", p=1.5)),
])
def test_discrete_maximum_principle(metric, cfg):
    g = build_grid(metric, 2.0, 32, 16)
    fld = solve_dirichlet(metric, g, cfg, cos_boundary(metric.n))
    assert fld.residual <= cfg.tol
    assert fld.u.min() >= fld.boundary.min() - 1e-8
    assert fld.u.max() <= fld.boundary.max() + 1e-8
    assert np.all(fld.W >= 1) and np.all((fld.sigma > 0) & (fld.sigma <= 1))


@settings(max_examples=8, deadline=None)
@given(a=st.floats(-1, 1), c=st.floats(-1, 1))
def test_mirror_equivariance(a, c):
    # b(theta) = a cos(theta) + c cos(2 theta) and its reflection
    b = BoundaryData(3, lambda t: a * np.cos(t) + c * np.cos(2 * t),
                     lambda t: -a * np.sin(t) - 2 * c * np.sin(2 * t),
                     lambda t: -a * np.cos(t) - 4 * c * np.cos(2 * t))
    bm = BoundaryData(3, lambda t: -a * np.cos(t) + c * np.cos(2 * t),
                      lambda t: a * np.sin(t) - 2 * c * np.sin(2 * t),
                      lambda t: a * np.cos(t) - 4 * c * np.cos(2 * t))
    g = build_grid(HYP3, 2.0, 16, 16)
    cfg = SolverConfig(tol=1e-11)
    u = solve_dirichlet(HYP3, g, cfg, b).u
    um = solve_dirichlet(HYP3, g, cfg, bm).u
    assert np.max(np.abs(u - um[:, ::-1])) <= 10 * cfg.tol


@pytest.mark.parametrize("cfg", [SolverConfig(initial="min"), SolverConfig("p-laplace", p=3.0,
                                                                            initial="min")])
def test_uniqueness_probe(cfg):
    g = build_grid(HYP3, 2.0, 32, 16)
    b = cos_boundary(3)
    lo = solve_dirichlet(HYP3, g, cfg, b)
    hi_cfg = SolverConfig(cfg.equation, cfg.p, initial="max")
    hi = solve_dirichlet(HYP3, g, hi_cfg, b)
    assert np.max(np.abs(lo.u - hi.u)) <= 10 * cfg.tol


def test_no_convergence_reports_residual():
    g = build_grid(EUC3, 1.0, 16, 16)
    with pytest.raises(NoConvergenceError) as err:
        solve_dirichlet(EUC3, g, SolverConfig("p-laplace", p=4.0, max_iter=1), cos_boundary(3))
    assert err.value.residual > 0


def test_grid_metric_mismatch():
    g = build_grid(EUC3, 1.0, 16, 16)
    with pytest.raises(ValueError):
        solve_dirichlet(HYP3, g, SolverConfig(), cos_boundary(3))


# --- export ----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_field():
    g = build_grid(HYP3, 2.0, 12, 10)
    return solve_dirichlet(HYP3, g, SolverConfig(), scaled_cos_boundary(0.5, 3))


def test_binary_round_trip(small_field):
    data = small_field.to_binary()
    assert data[:5] == MAGIC
    r, th, u = read_field_binary(data)
    assert np.array_equal(r, small_field.grid.r)
    assert np.array_equal(th, small_field.grid.theta)
    assert np.array_equal(u, small_field.u)
    with pytest.raises(ValueError):
        read_field_binary(b"XXXXX" + data[5:])
    with pytest.raises(ValueError):
        read_field_binary(data[:-8])


def test_csv_round_trip(small_field):
    rows = list(csv.DictReader(io.StringIO(small_field.to_csv())))
    assert list(rows[0]) == ["r", "theta", "u", "W", "sigma"]
    u = np.array([float(row["u"]) for row in rows]).reshape(small_field.grid.shape)
    assert np.array_equal(u, small_field.u)
    W = np.array([float(row["W"]) for row in rows]).reshape(small_field.grid.shape)
    assert np.array_equal(W, small_field.W)


# --- sandwich ---------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def hyperbolic_run():
    b = scaled_cos_boundary(0.1, 3)
    cert = choose_k_and_r0(HYP3, "minimal", b)
    g = build_grid(HYP3, 3.0, 128, 64)
    return cert, solve_dirichlet(HYP3, g, SolverConfig(), b)


def test_sandwich_hyperbolic(hyperbolic_run):
    cert, fld = hyperbolic_run
    assert fld.grid.R_max > cert.r0
    rep = sandwich_check(fld, cert)
    assert rep.passed and rep.violations == 0
    assert rep.tol == 10 * fld.config.tol


def test_sandwich_negative_control(hyperbolic_run):
    cert, fld = hyperbolic_run
    bad = ScalarField(fld.grid, fld.u + 2 * abs(cert.a_cap), fld.boundary, config=fld.config)
    rep = sandwich_check(bad, cert)
    assert not rep.passed
    # every cell, in particular the boundary-adjacent ring, is flagged
    assert rep.violations == fld.u.size
    rim = {(float(fld.grid.r[-1]), float(t)) for t in fld.grid.theta}
    assert rim <= set(rep.locations)


def test_sandwich_zero_boundary():
    m = march_metric(0.75, 3)
    b = constant_boundary(0.0, 3)
    cert = choose_k_and_r0(m, "minimal", b)
    fld = solve_dirichlet(m, build_grid(m, 4.0, 32, 16), SolverConfig(), b)
    assert np.all(fld.u == 0)
    assert sandwich_check(fld, cert).passed


# --- convergence experiment -------------------------------------------------------------------

def test_convergence_experiment_constant_boundary():
    rows, fields = boundary_convergence_experiment(HYP3, constant_boundary(0.4, 3), [2.0, 4.0],
                                                   SolverConfig(), Nr=16, Ntheta=16)
    assert [row.osc for row in rows] == [0.0, 0.0]
    assert rows[0].value_at_pole == pytest.approx(0.4)
    assert math.isnan(rows[0].sup_diff) and rows[1].sup_diff == 0.0


def test_convergence_experiment_records_errors_and_continues():
    cfg = SolverConfig("p-laplace", p=4.0, max_iter=1)
    rows, fields = boundary_convergence_experiment(EUC3, cos_boundary(3), [2.0, 3.0], cfg,
                                                   Nr=16, Ntheta=16)
    assert all("no-convergence" in row.error for row in rows)
    assert fields == [None, None]


def test_convergence_experiment_threads_are_deterministic():
    args = (march_metric(0.75, 3), cos_boundary(3), [2.0, 4.0, 8.0], SolverConfig())
    a, _ = boundary_convergence_experiment(*args, Nr=24, Ntheta=16, workers=1)
    b, _ = boundary_convergence_experiment(*args, Nr=24, Ntheta=16, workers=3)
    assert a == b


def test_convergence_experiment_rejects_unsorted_radii():
    with pytest.raises(ValueError):
        boundary_convergence_experiment(EUC3, cos_boundary(3), [3.0, 2.0], SolverConfig())
