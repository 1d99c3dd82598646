import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from cartanlab.criteria import (
    VERDICT_FIELDS,
    CriterionError,
    j_integral,
    nested_integral,
    p_exponents,
    p_integral,
    parabolicity_check,
    threshold_scan,
    verdict_report,
    verdict_row,
    verdict_rows_csv,
)
from cartanlab.manifold import (
    make_closed_form_metric,
    march_metric,
    metric_from_curvature,
    power_log_profile,
)

EUC3 = make_closed_form_metric("euclidean", 3)
HYP3 = make_closed_form_metric("hyperbolic", 3)
J_HYP3 = 1.0 - math.log(2.0) - math.log(math.sinh(1.0))


@pytest.fixture(scope="module")
def power_log_metric():
    # tail K = -1/(r^2 log r): the borderline alpha = 1 case
    return metric_from_curvature(power_log_profile(1.0), 3, 1e6)


@pytest.mark.parametrize("form", ["nested", "swapped"])
def test_euclidean_j_diverges(form):
    v = j_integral(EUC3, form)
    assert v.status == "divergent"
    assert v.value is None


@pytest.mark.parametrize("form", ["nested", "swapped"])
def test_hyperbolic_j_value(form):
    v = j_integral(HYP3, form)
    assert v.status == "convergent"
    assert v.value == pytest.approx(0.14542, abs=1e-5)
    assert v.value == pytest.approx(J_HYP3, rel=1e-9)


def test_hyperbolic_j_against_quadrature():
    # swapped integrand (t - 1)/sinh(t)^2, written to avoid overflow
    oracle = integrate.quad(lambda t: (t - 1) * 4 * math.exp(-2 * t) / math.expm1(-2 * t) ** 2,
                            1, np.inf, epsabs=0, epsrel=1e-13)[0]
    assert j_integral(HYP3, "swapped").value == pytest.approx(oracle, rel=1e-10)


@pytest.mark.parametrize("c, status", [(0.6, "convergent"), (0.4, "divergent"),
                                       (0.75, "convergent"), (0.3, "divergent")])
def test_march_j_threshold_half(c, status):
    assert j_integral(march_metric(c, 3)).status == status


@pytest.mark.parametrize("c, status", [(1.2, "convergent"), (0.8, "divergent")])
def test_march_j_n2(c, status):
    assert j_integral(march_metric(c, 2)).status == status


def test_n2_j_is_half_square_of_single_integral():
    m = make_closed_form_metric("hyperbolic", 2)
    single = integrate.quad(lambda t: 2 * math.exp(-t) / -math.expm1(-2 * t), 1, np.inf,
                            epsabs=0, epsrel=1e-13)[0]
    assert j_integral(m).value == pytest.approx(0.5 * single ** 2, rel=1e-9)


@pytest.mark.parametrize("metric", [
    HYP3,
    make_closed_form_metric("hyperbolic", 4, kappa=0.7),
    march_metric(0.75, 3),
    march_metric(0.6, 3),
    march_metric(0.9, 4),
])
def test_fubini(metric):
    a = j_integral(metric, "nested")
    b = j_integral(metric, "swapped")
    assert a.status == b.status == "convergent"
    assert abs(a.value - b.value) <= 1e-6 * (1 + b.value)


SUITE = [EUC3, HYP3, march_metric(0.6, 3), march_metric(0.4, 3), march_metric(1.2, 2),
         march_metric(0.8, 2)]


@pytest.mark.parametrize("metric", SUITE, ids=lambda m: f"{m.kind}-{m.n}-{m.params.get('c', '')}")
@pytest.mark.parametrize("horizon", [1e4, 1e5, 1e6])
def test_verdict_stable_under_horizon_doubling(metric, horizon):
    a = j_integral(metric, "swapped", horizon).status
    b = j_integral(metric, "swapped", 2 * horizon).status
    if "inconclusive" not in (a, b):
        assert a == b


def test_convergent_verdict_fields():
    v = j_integral(march_metric(0.75, 3))
    assert math.isfinite(v.value)
    assert v.value == pytest.approx(v.partial + v.tail_estimate)
    assert v.horizon == 1e6
    assert v.tail_rate.startswith("t^(")


def test_divergent_verdict_slope():
    # the fitted log-power tail is no better than 1/(t (log t)^(1+M_TOL))
    v = j_integral(EUC3)
    assert v.q <= 1.1 and v.m <= 1.05


def test_horizon_too_small():
    with pytest.raises(CriterionError):
        j_integral(HYP3, horizon=2.0)
    with pytest.raises(CriterionError):
        j_integral(HYP3, form="sideways")


def test_eta_matches_reverse_integral():
    ni = nested_integral(HYP3, 0, -2)
    # eta(r) = int_r^inf (t - 1)/sinh^2 t
    oracle = integrate.quad(lambda t: (t - 1) * 4 * math.exp(-2 * t) / math.expm1(-2 * t) ** 2,
                            3.0, np.inf, epsabs=0, epsrel=1e-13)[0]
    assert ni.eta(3.0) == pytest.approx(oracle, rel=1e-6)


@pytest.mark.parametrize("n, p, alpha, beta", [(4, 3, -1.5, -0.5), (3, 2.5, -4 / 3, -2 / 3)])
def test_p_exponents_examples(n, p, alpha, beta):
    ex = p_exponents(n, p)
    assert ex.alpha == pytest.approx(alpha, rel=1e-15)
    assert ex.beta == pytest.approx(beta, rel=1e-15)


@settings(max_examples=1000, deadline=None)
@given(n=st.integers(3, 200), u=st.floats(1e-9, 1 - 1e-9))
def test_p_exponent_identity_exact(n, u):
    p = 2 + u * (n - 2)
    if not 2 < p < n:
        return
    ex = p_exponents(n, p)
    assert ex.alpha + ex.beta == -2.0
    assert ex.beta == pytest.approx((n - 2 * p + 1) / (p - 1), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("n, p", [(4, 2.0), (4, 4.0), (4, 1.5), (3, 5.0)])
def test_p_exponents_reject_out_of_range(n, p):
    with pytest.raises(CriterionError):
        p_exponents(n, p)


@pytest.mark.parametrize("metric, status", [
    (make_closed_form_metric("euclidean", 4), "divergent"),
    (make_closed_form_metric("hyperbolic", 4), "convergent"),
    (march_metric(0.6, 4), "convergent"),
    (march_metric(0.4, 4), "divergent"),
])
def test_p_integral(metric, status):
    assert p_integral(metric, 3).status == status


def test_p_integral_fubini():
    m = march_metric(0.8, 4)
    a, b = p_integral(m, 3, form="nested"), p_integral(m, 3, form="swapped")
    assert abs(a.value - b.value) <= 1e-6 * (1 + b.value)


def test_parabolicity_euclidean():
    v = parabolicity_check(EUC3, 3)
    assert v.status == "divergent" and v.conclusion == "p-parabolic (criterion met)"
    v = parabolicity_check(EUC3, 2)
    assert v.status == "convergent" and v.conclusion == "criterion inconclusive"


@pytest.mark.parametrize("p", [3, 4])
def test_parabolicity_power_log_tail(power_log_metric, p):
    v = parabolicity_check(power_log_metric, p)
    assert v.conclusion == "p-parabolic (criterion met)"


@settings(max_examples=20, deadline=None)
@given(c=st.floats(0.3, 2.0), p=st.floats(1.2, 6.0), n=st.integers(2, 5))
def test_parabolicity_sufficiency_semantics(c, p, n):
    v = parabolicity_check(march_metric(c, n), p, horizon=1e5)
    assert v.conclusion in ("p-parabolic (criterion met)", "criterion inconclusive")
    assert "non-parabolic" not in v.conclusion


def test_parabolicity_rejects_p_le_1():
    with pytest.raises(CriterionError):
        parabolicity_check(EUC3, 1.0)


@pytest.mark.parametrize("n, criterion, p, c_range, tol, lo, hi", [
    (3, "J", None, (0.2, 1.0), 0.1, 0.4, 0.6),
    (2, "J", None, (0.5, 1.5), 0.15, 0.85, 1.15),
    (4, "p-integral", 3, (0.2, 1.0), 0.1, 0.4, 0.6),
])
def test_threshold_scan(n, criterion, p, c_range, tol, lo, hi):
    c = threshold_scan(lambda c: march_metric(c, n), criterion, c_range, tol, p=p)
    assert lo <= c <= hi


def test_threshold_scan_fine_tolerance():
    c = threshold_scan(lambda c: march_metric(c, 3), "J", (0.2, 1.0), 0.005)
    assert abs(c - 0.5) <= 0.05


def test_threshold_scan_non_monotone_endpoints():
    with pytest.raises(CriterionError, match="non-monotone-endpoints"):
        threshold_scan(lambda c: march_metric(c, 3), "J", (0.7, 1.0), 0.1)


def test_verdict_export():
    rows = [verdict_row(j_integral(march_metric(0.6, 3)), "march", 3, "J", c=0.6),
            verdict_row(p_integral(march_metric(0.4, 4), 3), "march", 4, "p-integral", p=3, c=0.4)]
    text = verdict_rows_csv(rows)
    parsed = list(csv.DictReader(io.StringIO(text)))
    assert list(parsed[0]) == VERDICT_FIELDS
    assert parsed[0]["status"] == "convergent" and float(parsed[0]["value"]) > 0
    assert parsed[1]["status"] == "divergent" and parsed[1]["value"] == ""
    report = verdict_report(rows)
    assert report.count("\n") == 2 and "status=divergent" in report
