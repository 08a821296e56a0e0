import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import simpson

from tunnelqrng.device import (EV, M_E, DcrBreakdown, avalanche_p0, avalanche_probability, dark_count_rate,
                               format_device_profile, mean_multiplication, parse_device_profile, silicon_like,
                               thermal_generation, tunneling_currents, tunneling_generation)
from tunnelqrng.errors import BreakdownRegime, DomainError, FormatError, NonFinite, UnknownLayer

# P_p(0) of the silicon-like profile from an independent bisection solve
# (Simpson on 2e5 points, 200 halvings); see _bisect_p0 below
P0_SILICON_BISECTION = 0.5528493930530938
# M(1e-6) for alpha_e=2e5, alpha_h=1e5, L=2e-6 from a 1e6-point trapezoid
M_TRAPEZOID = 1.4194385218526127


def below_breakdown(**kw):
    base = dict(alpha_e=2e5, alpha_h=1e5)
    base.update(kw)
    return silicon_like(**base)


def test_equal_coefficients_closed_form():
    a = 1e5
    p = silicon_like(alpha_e=a, alpha_h=a)
    for x in (0.0, 0.5e-6, 1.3e-6, 2e-6):
        assert abs(mean_multiplication(p, x) - 1.0 / (1.0 - a * 2e-6)) < 1e-12


def test_no_ionization_gives_unity():
    p = silicon_like(alpha_e=0.0, alpha_h=0.0)
    for x in np.linspace(0, 2e-6, 7):
        assert mean_multiplication(p, x) == pytest.approx(1.0, abs=1e-12)


def test_multiplication_against_dense_trapezoid():
    p = below_breakdown()
    s = np.linspace(0, 2e-6, 10**6)
    d = p.alpha_e - p.alpha_h
    den = 1 - np.trapezoid(p.alpha_e * np.exp(-d * (2e-6 - s)), s)
    oracle = math.exp(-d * 1e-6) / den
    assert oracle == pytest.approx(M_TRAPEZOID, rel=1e-12)
    assert mean_multiplication(p, 1e-6) == pytest.approx(oracle, rel=1e-8)


@pytest.mark.parametrize("x", [0.0, 3e-7, 1e-6, 1.9e-6, 2e-6])
def test_quadrature_and_closed_form_agree(x):
    p = below_breakdown(alpha_e=3e5, alpha_h=2.2e5)
    assert mean_multiplication(p, x, "quad") == pytest.approx(mean_multiplication(p, x, "closed"), rel=1e-6)


def test_breakdown_and_domain_errors():
    with pytest.raises(BreakdownRegime):
        mean_multiplication(silicon_like(), 1e-6)
    with pytest.raises(DomainError):
        mean_multiplication(below_breakdown(), 3e-6)
    with pytest.raises(DomainError):
        avalanche_probability(below_breakdown(), -1e-9)


@settings(max_examples=40, deadline=None)
@given(ae=st.floats(0, 4e5), ratio=st.floats(0, 1), x=st.floats(0, 1))
def test_multiplication_at_least_one(ae, ratio, x):
    p = silicon_like(alpha_e=ae, alpha_h=ae * ratio)
    try:
        m = mean_multiplication(p, x * 2e-6)
    except BreakdownRegime:
        return
    assert m >= 1.0 - 1e-12


def test_zero_hole_ionization_never_triggers():
    p = silicon_like(alpha_h=0.0)
    assert avalanche_p0(p) == 0.0
    assert avalanche_probability(p, 1e-6) == 0.0


def test_equal_coefficients_flat_probability():
    p = silicon_like(alpha_e=9e5, alpha_h=9e5)
    p0 = avalanche_probability(p, 0.0)
    assert 0 < p0 < 1
    for x in (5e-7, 2e-6):
        assert avalanche_probability(p, x) == pytest.approx(p0, abs=1e-15)


def _bisect_p0(ae, ah, L, lo, hi):
    def g(p):
        xx = np.linspace(0, L, 200001)
        f = np.exp(-(ae - ah) * xx)
        return p - (1 - math.exp(-ah * simpson(p * f / (p * f + 1 - p), x=xx)))
    for _ in range(200):
        m = 0.5 * (lo + hi)
        if g(m) > 0:
            hi = m
        else:
            lo = m
    return 0.5 * (lo + hi), g


def test_p0_against_bisection_above_breakdown():
    root, _ = _bisect_p0(1e6, 8e5, 2e-6, 1e-3, 1.0)
    assert root == pytest.approx(P0_SILICON_BISECTION, abs=1e-12)
    assert avalanche_p0(silicon_like()) == pytest.approx(root, abs=1e-8)


def test_p0_against_bisection_below_breakdown():
    # the fixed-point map has no root in (0, 1]: g > 0 there, so P_p(0) = 0
    _, g = _bisect_p0(2e5, 1.5e5, 2e-6, 0.0, 1.0)
    assert min(g(p) for p in np.linspace(1e-6, 1, 50)) > 0
    assert avalanche_p0(silicon_like(alpha_e=2e5, alpha_h=1.5e5)) == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(ae=st.floats(1e5, 1.5e6), ratio=st.floats(0.05, 0.99))
def test_avalanche_probability_bounded_and_monotone(ae, ratio):
    p = silicon_like(alpha_e=ae, alpha_h=ae * ratio)
    vals = [avalanche_probability(p, x) for x in np.linspace(0, 2e-6, 9)]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))


def test_thermal_generation():
    p = silicon_like(n_i={"depletion": 1e16, "absorption": 0.0}, tau_i={"depletion": 1e-6, "absorption": 1e-6})
    assert thermal_generation(p, "depletion") == pytest.approx(1e22, rel=1e-15)
    assert thermal_generation(p, "absorption") == 0.0
    with pytest.raises(UnknownLayer):
        thermal_generation(p, "cap")


@given(tau=st.floats(1e-9, 1e-3), n=st.floats(0, 1e18))
def test_thermal_generation_homogeneous_in_lifetime(tau, n):
    a = silicon_like(n_i={"depletion": n, "absorption": n}, tau_i={"depletion": tau, "absorption": tau})
    b = silicon_like(n_i={"depletion": n, "absorption": n}, tau_i={"depletion": 2 * tau, "absorption": 2 * tau})
    assert thermal_generation(b, "depletion") == pytest.approx(thermal_generation(a, "depletion") / 2, rel=1e-15)


def test_tunneling_limits():
    p = silicon_like()
    assert tunneling_generation(p, 0.0) == 0.0
    no_traps = silicon_like(N_trap=0.0)
    jb, jt = tunneling_currents(no_traps, 3e7)
    assert jt == 0.0
    assert tunneling_generation(no_traps, 3e7) == pytest.approx(jb / no_traps.q, rel=1e-15)
    with pytest.raises(DomainError):
        tunneling_generation(p, -1.0)
    assert tunneling_generation(p, 1.0) == 0.0   # exponent far below the double range


def test_tunneling_overflow_signalled():
    with pytest.raises(NonFinite):
        tunneling_generation(silicon_like(), 1e300)


def _bbt_mp(F):
    mp.mp.dps = 50
    q = mp.mpf("1.602176634e-19")
    hb = mp.mpf("1.054571817e-34")
    h = mp.mpf("6.62607015e-34")
    me = mp.mpf("9.1093837015e-31")
    Eg = mp.mpf("1.12") * q
    mr = mp.mpf("0.16") * me
    F = mp.mpf(F)
    pre = mp.sqrt(2 * mr / Eg) * q ** 2 * F ** 2 / (4 * mp.pi ** 3 * h ** 2)
    return pre * mp.exp(-mp.pi * mp.sqrt(mr * Eg ** 3) / (2 * mp.sqrt(2) * q * hb * F))


def test_band_to_band_against_high_precision():
    p = silicon_like(E_g=1.12 * EV, m_r=0.16 * M_E)
    jb, _ = tunneling_currents(p, 5e7)
    oracle = _bbt_mp("5e7")
    assert float(abs(jb - oracle) / oracle) < 1e-12


def _dcr_simpson(p, p0, n=100_001):
    # independent fixed-grid evaluation of the four integrals
    q, hb, h = p.q, p.hbar, p.h
    xs_prof = np.array([x for x, _ in p.field_profile])
    fs_prof = np.array([f for _, f in p.field_profile])

    def gen(F):
        F = np.asarray(F, float)
        out = np.zeros_like(F)
        nz = F > 0
        Fz = F[nz]
        pre = np.sqrt(2 * p.m_r / p.E_g) * q ** 2 * Fz ** 2 / (4 * np.pi ** 3 * h ** 2)
        k = 2 * np.sqrt(2) * q * hb * Fz
        bbt = pre * np.exp(-np.pi * np.sqrt(p.m_r * p.E_g ** 3) / k)
        e1 = np.pi * np.sqrt(p.m_lh * p.E_B1 ** 3) / k
        e2 = np.pi * np.sqrt(p.m_c * p.E_B2 ** 3) / k
        with np.errstate(over="ignore", under="ignore"):
            bbt = pre * np.exp(-np.pi * np.sqrt(p.m_r * p.E_g ** 3) / k)
            tat = pre * p.N_trap / (p.N_v * np.exp(e2) + p.N_c * np.exp(e1))
        out[nz] = (bbt + tat) / q
        return out

    x = np.linspace(0, p.L_dep, n)
    f = np.exp(-(p.alpha_e - p.alpha_h) * x)
    pp = p0 * f / (p0 * f + 1 - p0)
    F = np.interp(x, xs_prof, fs_prof, left=0, right=0)
    th_dep = p.n_i["depletion"] / p.tau_i["depletion"] * simpson(pp, x=x)
    tu_dep = simpson(gen(F) * pp, x=x)
    xa = np.linspace(p.L_dep, p.L_dep + p.L_ab, n)
    Fa = np.interp(xa, xs_prof, fs_prof, left=0, right=0)
    th_ab = p0 * p.n_i["absorption"] / p.tau_i["absorption"] * p.L_ab
    tu_ab = p0 * simpson(gen(Fa), x=xa)
    return np.array([th_dep, tu_dep, th_ab, tu_ab]) * p.area


def test_dcr_against_simpson_oracle():
    p = silicon_like()
    got = dark_count_rate(p)
    oracle = _dcr_simpson(p, P0_SILICON_BISECTION)
    vals = np.array([got.thermal_dep, got.tunnel_dep, got.thermal_ab, got.tunnel_ab])
    assert np.all(oracle > 0)
    np.testing.assert_allclose(vals, oracle, rtol=1e-4)
    assert got.total == pytest.approx(oracle.sum(), rel=1e-4)


def test_dcr_quadrature_matches_finer_reference():
    # the adaptive result sits within 1e-6 of a twice-as-fine fixed grid
    p = silicon_like()
    got = dark_count_rate(p)
    fine = _dcr_simpson(p, avalanche_p0(p), 400_001)
    assert got.total == pytest.approx(fine.sum(), rel=1e-6)


def test_dcr_zero_generation():
    p = silicon_like(n_i={"depletion": 0.0, "absorption": 0.0},
                     field_profile=((0.0, 0.0), (12e-6, 0.0)))
    assert dark_count_rate(p).total == 0.0


def test_dcr_thermal_only_isolates_terms():
    p = silicon_like(N_trap=0.0, field_profile=((0.0, 0.0), (12e-6, 0.0)))
    b = dark_count_rate(p)
    assert b.tunnel_dep == 0.0 and b.tunnel_ab == 0.0
    p0 = avalanche_p0(p)
    x = np.linspace(0, p.L_dep, 100_001)
    f = np.exp(-p.delta * x)
    expect_dep = p.area * 1e14 / 1e-6 * simpson(p0 * f / (p0 * f + 1 - p0), x=x)
    expect_ab = p.area * p0 * 1e14 / 1e-6 * p.L_ab
    assert b.thermal_dep == pytest.approx(expect_dep, rel=1e-8)
    assert b.thermal_ab == pytest.approx(expect_ab, rel=1e-12)


def test_breakdown_total_and_nonnegative():
    b = dark_count_rate(silicon_like())
    parts = [b.thermal_dep, b.tunnel_dep, b.thermal_ab, b.tunnel_ab]
    assert all(v >= 0 for v in parts)
    assert b.total == pytest.approx(sum(parts), rel=1e-9)
    assert isinstance(b, DcrBreakdown)


def test_dcr_monotone_in_field_scale():
    p = silicon_like()
    totals = [dark_count_rate(p.scaled_field(s)).total for s in (0.5, 0.8, 1.0, 1.1, 1.2)]
    assert all(b >= a for a, b in zip(totals, totals[1:]))


def test_invalid_params_rejected():
    with pytest.raises(DomainError):
        silicon_like(L_dep=0.0)
    with pytest.raises(DomainError):
        silicon_like(field_profile=((0.0, -1.0), (1e-6, 1.0)))
    with pytest.raises(DomainError):
        silicon_like(field_profile=((0.0, 1.0),))


def test_profile_round_trip():
    p = silicon_like()
    assert parse_device_profile(format_device_profile(p)) == p
    with pytest.raises(FormatError):
        parse_device_profile("alpha_e=1\n")
