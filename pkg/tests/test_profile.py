import numpy as np
import pytest

from nlslab import grid as gm
from nlslab import linearization as lin
from nlslab import profile as prof
from nlslab.grid import Field
from nlslab.profile import ProfileError


def l2(arr, g):
    return float(np.linalg.norm(np.asarray(arr).ravel())) * g.dx ** (g.dim / 2.0)


# ---------------------------------------------------------------------------
# linear solution Y


def test_Y_at_zero_is_Y1(spec_p7):
    Y = prof.Y_array(spec_p7, 0.0)
    assert np.array_equal(Y, spec_p7.Zvec().real)


def test_linear_flow_identity(op_p7, spec_p7):
    rng = np.random.default_rng(5)
    for t in rng.uniform(0.1, 3.0, 10):
        assert prof.linear_flow_defect(op_p7, spec_p7, float(t)) <= 1e-5


def test_Y_periodicity_oscillatory_mode(internal_mode):
    op, mode = internal_mode
    assert mode.theta != 0.0
    period = 2 * np.pi / mode.theta
    for t in (0.3, 1.1, 2.4):
        n1 = np.exp(mode.rho * t) * gm.norm_h1(prof.build_Y(mode, t)[0])
        n2 = np.exp(mode.rho * (t + period)) * gm.norm_h1(
            prof.build_Y(mode, t + period)[0])
        assert abs(n1 - n2) <= 1e-10 * max(n1, 1.0)


def test_linear_flow_identity_oscillatory(internal_mode):
    op, mode = internal_mode
    for t in (0.2, 0.9, 1.7):
        assert prof.linear_flow_defect(op, mode, t) <= 1e-5


# ---------------------------------------------------------------------------
# Taylor tables


def test_taylor_valuation_at_least_two(nl7, state_p7):
    P, Q = prof.taylor_coeffs(nl7, state_p7, 3)
    for key in P:
        j, m = key
        assert m >= 2 and 0 <= j <= m


def test_taylor_against_fd_hessian(nl3, state_p3):
    # cubic, real Phi: d^2 f/dv+^2 at 0 has real part 6 Phi, so the (v+)^2
    # coefficient of f's expansion is 3 Phi; in M = i(...) it lands in the
    # second component
    P, Q = prof.taylor_coeffs(nl3, state_p3, 2)
    phi = state_p3.profile.values.real
    eps = 1e-4
    fpp = (nl3.f(phi + eps) - 2 * nl3.f(phi + 0j) + nl3.f(phi - eps)) / eps**2
    assert np.max(np.abs(0.5 * fpp.real - 3 * phi)) <= 1e-7
    assert np.max(np.abs(Q[(2, 2)] - 3 * phi)) <= 1e-12
    assert np.max(np.abs(P[(1, 2)] + 2 * phi)) <= 1e-12


def test_taylor_scaling_order(nl7, state_p7, grid_p7):
    # truncation at N0 = 2 leaves a remainder of observed order >= 3
    order = 2
    P, Q = prof.taylor_coeffs(nl7, state_p7, order)
    x = grid_p7.axis_coords()
    V = np.stack([0.4 * np.exp(-x**2 / 5), 0.3 * np.exp(-(x - 1) ** 2 / 7)])
    errs = []
    for s in (1e-1, 1e-2, 1e-3):
        direct = prof.direct_remainder(nl7, state_p7, s * V)
        poly = np.zeros_like(direct)
        for m in range(2, order + 1):
            for j in range(0, m + 1):
                mono = (s * V[0]) ** j * (s * V[1]) ** (m - j)
                poly[0] += P[(j, m)] * mono
                poly[1] += Q[(j, m)] * mono
        errs.append(np.max(np.abs(direct - poly)))
    order1 = np.log10(errs[0] / errs[1])
    order2 = np.log10(errs[1] / errs[2])
    assert order1 >= order + 0.8
    assert order2 >= order + 0.8


def test_taylor_order_cap(nl7, state_p7):
    with pytest.raises(ProfileError):
        prof.taylor_coeffs(nl7, state_p7, 7)


# ---------------------------------------------------------------------------
# trig expansion


def test_product_of_level_one_frequencies(profile_factory, nl7, state_p7):
    p = profile_factory(2, 0.5)
    taylor = prof.taylor_coeffs(nl7, state_p7, 2)
    seedA = {k: v for k, v in p.coeff_A.items() if k[1] == 1}
    seedB = {k: v for k, v in p.coeff_B.items() if k[1] == 1}
    buckets = prof.expand_nonlinear(seedA, seedB, taylor, max_level=1, order=2)
    freqs = set(buckets[2].terms)
    assert freqs <= {0, 2}


def test_cos_times_cos_linearization():
    one = {1: {1: [np.array([1.0]), np.array([0.0])]}}
    out = prof._dg_mul(one, one, cap=4)
    assert set(out) == {2}
    assert out[2][0][0][0] == pytest.approx(0.5)   # constant term
    assert out[2][2][0][0] == pytest.approx(0.5)   # cos(2 theta t)
    assert out[2][2][1][0] == pytest.approx(0.0)


def test_expansion_oracle_random_times(profile_factory, nl7, state_p7, spec_p7):
    p = profile_factory(2, 1.0)
    rho = spec_p7.rho
    rng = np.random.default_rng(9)
    ts = np.sort(rng.uniform(3.0 / rho, 6.0 / rho, 20))
    defects = np.array([prof.expansion_defect(p, state_p7, nl7, float(t)) for t in ts])
    slope, _, r2 = lin.fit_log_slope(ts, defects)
    assert -slope / rho >= 0.95 * (p.order + 1)
    assert r2 > 0.99


# ---------------------------------------------------------------------------
# level solves and the induction


def test_solve_level_zero_rhs(op_p7, spec_p7, grid_p7):
    tp = prof.TrigPoly(decay_order=2, terms={})
    out = prof.solve_level(op_p7, spec_p7, 2, tp)
    for (j, k), (A, B, res) in out.items():
        assert np.max(np.abs(A)) == 0.0 and np.max(np.abs(B)) == 0.0


def test_level_residuals_small(profile_factory):
    p = profile_factory(3, 1.0)
    assert max(p.level_residuals.values()) <= 1e-6


def test_reconstruction_identity(op_p7, spec_p7, nl7, state_p7, profile_factory):
    # L(C + iD) = (L C - k rho C + j theta D) + i (L D - j theta C - k rho D)
    p = profile_factory(2, 1.0)
    k = 2
    taylor = prof.taylor_coeffs(nl7, state_p7, 2)
    buckets = prof.expand_nonlinear(
        {kk: v for kk, v in p.coeff_A.items() if kk[1] <= 1},
        {kk: v for kk, v in p.coeff_B.items() if kk[1] <= 1},
        taylor, max_level=1, order=2)
    for j, (At, Bt) in buckets[2].terms.items():
        C = p.coeff_A[(j, 2)]
        D = p.coeff_B[(j, 2)]
        lhs_re = op_p7.apply(C) - k * spec_p7.rho * C + j * spec_p7.theta * D
        lhs_im = op_p7.apply(D) - j * spec_p7.theta * C - k * spec_p7.rho * D
        assert np.max(np.abs(lhs_re - At)) <= 1e-8
        assert np.max(np.abs(lhs_im - Bt)) <= 1e-8


def test_solve_level_rejects_level_one(op_p7, spec_p7):
    with pytest.raises(ProfileError):
        prof.solve_level(op_p7, spec_p7, 1, prof.TrigPoly(1, {}))


# ---------------------------------------------------------------------------
# full profile


def test_order_one_profile_is_linear_seed(profile_factory, spec_p7):
    a = 0.7
    p = profile_factory(1, a)
    Z = spec_p7.Zvec()
    assert np.array_equal(p.coeff_A[(1, 1)], a * Z.real)
    assert np.array_equal(p.coeff_B[(1, 1)], a * Z.imag)
    assert np.max(np.abs(p.coeff_A[(0, 1)])) == 0.0
    assert set(k for (_, k) in p.coeff_A) == {1}


def test_zero_seed_gives_zero_profile(profile_factory):
    p = profile_factory(3, 0.0)
    for arr in p.coeff_A.values():
        assert np.max(np.abs(arr)) == 0.0
    for arr in p.coeff_B.values():
        assert np.max(np.abs(arr)) == 0.0


def test_profile_minus_linear_decays_at_two_rho(profile_factory, spec_p7):
    p = profile_factory(2, 1.0)
    rho = spec_p7.rho
    ts = np.linspace(2.0 / rho, 5.0 / rho, 20)
    devs = np.array([prof.deviation_from_linear(p, spec_p7, float(t)) for t in ts])
    slope, _, _ = lin.fit_log_slope(ts, devs)
    assert -slope >= 0.95 * 2 * rho


def test_induction_reads_only_previous_levels(profile_factory):
    p = profile_factory(3, 1.0)
    for k, max_read in p.levels_read.items():
        assert max_read == k - 1


def test_frequency_bounded_by_grade(profile_factory):
    p = profile_factory(3, 1.0)
    for (j, k) in p.coeff_A:
        assert j <= k


def test_seed_parity(nl7, state_p7, op_p7, spec_p7):
    pa = prof.build_profile(nl7, state_p7, op_p7, spec_p7, 3, 0.4)
    pb = prof.build_profile(nl7, state_p7, op_p7, spec_p7, 3, -0.4)
    for (j, k), A in pa.coeff_A.items():
        sign = (-1.0) ** k
        assert np.allclose(pb.coeff_A[(j, k)], sign * A, atol=1e-12)


def test_rejects_stable_spectrum(nl3, state_p3, op_p3, spec_p3):
    with pytest.raises(ProfileError):
        prof.build_profile(nl3, state_p3, op_p3, spec_p3, 2, 0.1)


# ---------------------------------------------------------------------------
# residual of the approximate solution


def test_residual_a_zero_is_soliton_discretization(profile_factory, state_p7, nl7):
    p = profile_factory(1, 0.0)
    err = prof.residual_err(p, state_p7, nl7, 1.0)
    assert gm.norm_linf(err) <= 1e-8


def test_residual_decay_rate(profile_factory, state_p7, nl7, spec_p7):
    p = profile_factory(2, 1.0)
    rho = spec_p7.rho
    ts = np.linspace(2.0 / rho, 5.0 / rho, 20)
    errs = np.array([gm.norm_l2(prof.residual_err(p, state_p7, nl7, float(t)))
                     for t in ts])
    slope, _, _ = lin.fit_log_slope(ts, errs)
    assert -slope >= 0.9 * (p.order + 1) * rho


def test_analytic_time_derivative_matches_fd(profile_factory, spec_p7):
    p = profile_factory(2, 1.0)
    rng = np.random.default_rng(3)
    for t in rng.uniform(0.5, 2.0, 5):
        dt = 1e-4
        fd = (prof.profile_eval(p, t + dt) - prof.profile_eval(p, t - dt)) / (2 * dt)
        an = prof.profile_dt_eval(p, float(t))
        assert np.max(np.abs(fd - an)) <= 1e-6


def test_V_sobolev_decay(profile_factory, state_p7, spec_p7):
    # the H^s norms of V decay like e^{-rho t}; fit past the window where
    # the second-order component still interferes
    p = profile_factory(2, 1.0)
    rho = spec_p7.rho
    g = state_p7.grid
    ts = np.linspace(3.0 / rho, 6.0 / rho, 15)
    for s in (0.0, 1.0, 2.0):
        norms = []
        for t in ts:
            V = np.exp(1j * p.omega * t) * prof.profile_complex(p, float(t))
            norms.append(gm.norm_hs(Field(g, V), s))
        norms = np.array(norms)
        slope, _, _ = lin.fit_log_slope(ts, norms)
        assert -slope >= 0.95 * rho
        # the paper-level bound itself: ||V(t)||_{H^s} <= C e^{-rho t}
        C = np.max(norms * np.exp(rho * ts))
        assert np.all(norms <= C * np.exp(-rho * ts) * (1 + 1e-12))


def test_profile_serialization_roundtrip(profile_factory, tmp_path):
    p = profile_factory(2, 0.5)
    prof.save_profile(p, tmp_path / "prof")
    back = prof.load_profile(tmp_path / "prof")
    assert back.order == p.order and back.a == p.a
    assert back.rho == p.rho and back.theta == p.theta
    for key, arr in p.coeff_A.items():
        assert np.array_equal(back.coeff_A[key], arr)
    W1 = prof.profile_eval(p, 1.3)
    W2 = prof.profile_eval(back, 1.3)
    assert np.array_equal(W1, W2)
