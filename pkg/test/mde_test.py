import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from app.exceptions import OutOfRangeError
from app.mde import (SpectralPoint, build_M, m_prime_bound, m_prime_fd, mde_cubic, product_envelopes,
                     rho, rho_envelope, solve_eta_for_product, solve_eta_for_ratio, solve_mde,
                     stieltjes_bound)

z_abs = st.floats(min_value=0.0, max_value=1.5)
log_eta = st.floats(min_value=-8.0, max_value=np.log10(0.5))


def test_spectral_point_validation():
    '''SpectralPoint should reject eta <= 0 and |z| > 10'''
    with pytest.raises(OutOfRangeError):
        SpectralPoint(0.0, 0.0)
    with pytest.raises(OutOfRangeError):
        SpectralPoint(11.0, 0.1)


def test_solution_at_origin():
    '''At z = 0 the root is (-eta + sqrt(eta^2 + 4))/2'''
    for eta in (1e-6, 1e-2, 0.5, 3.0):
        sol = solve_mde(SpectralPoint(0.0, eta))
        assert sol.a == pytest.approx((-eta + np.sqrt(eta ** 2 + 4)) / 2, rel=1e-14)
        assert mde_cubic(sol.a, eta, 0.0) == pytest.approx(0.0, abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(r=z_abs, e=log_eta)
def test_residual_and_branch(r, e):
    '''The solution should satisfy the MDE to 1e-12 on the physical branch'''
    sol = solve_mde(SpectralPoint(r, 10.0 ** e))
    assert sol.residual <= 1e-12
    assert sol.a > 0
    assert 0 < sol.u < 1
    assert sol.consistency <= 1e-10


@settings(max_examples=60, deadline=None)
@given(r=z_abs, e=log_eta)
def test_m_prime_bounds(r, e):
    '''|<M'>| should sit below 1/(2 rho^2 + eta/rho) and below rho/eta'''
    sol = solve_mde(SpectralPoint(r, 10.0 ** e))
    assert abs(sol.m_prime_trace) <= m_prime_bound(sol) * (1 + 1e-9)
    assert abs(sol.m_prime_trace) <= stieltjes_bound(sol) * (1 + 1e-9)


@pytest.mark.parametrize('z, eta', [(0.0, 0.1), (0.5, 1e-3), (1.2, 1e-2), (1.0, 1e-4), (1.2, 1e-6)])
def test_m_prime_matches_finite_difference(z, eta):
    '''Closed-form <M'> should match the centered difference of rho in eta'''
    point = SpectralPoint(z, eta)
    sol = solve_mde(point)
    fd = m_prime_fd(point)
    assert abs(fd - sol.m_prime_trace) <= 1e-4 * max(abs(sol.m_prime_trace), 1.0)


@settings(max_examples=60, deadline=None)
@given(r=z_abs, e=log_eta)
def test_rho_inside_envelope(r, e):
    '''rho should stay within a factor 10 of the two-regime asymptotics'''
    point = SpectralPoint(r, 10.0 ** e)
    lo, hi = rho_envelope(point)
    assert lo <= solve_mde(point).rho <= hi


def test_rho_envelope_needs_small_eta():
    '''rho_envelope is only defined for eta < 1'''
    with pytest.raises(OutOfRangeError) as e:
        rho_envelope(SpectralPoint(0.0, 1.0))
    assert e.value.gate == 'eta<1'


def test_block_M():
    '''BlockM.apply and quad should agree with the dense 2N x 2N matrix'''
    N = 6
    sol = solve_mde(SpectralPoint(0.4 + 0.3j, 0.05))
    M = build_M(sol, N)
    dense = M.expand()
    v = np.arange(2 * N) + 1j * np.arange(2 * N)[::-1]
    assert np.allclose(M.apply(v), dense @ v)
    assert M.quad(v, v) == pytest.approx(np.vdot(v, dense @ v))
    assert np.allclose(np.diag(dense), sol.m)
    assert dense[0, N] == pytest.approx(-(0.4 + 0.3j) * sol.u)


@pytest.mark.parametrize('z, A', [(0.0, 1e-3), (0.5, 1e-3), (1.0, 1e-4), (1.2, 1e-4)])
def test_solve_eta_for_product(z, A):
    '''eta * rho = A should hold after inversion, inside the level-set envelopes'''
    eta = solve_eta_for_product(z, A)
    r = rho(z, eta)
    assert eta * r == pytest.approx(A, rel=1e-10)
    env = product_envelopes(z, A)
    assert env['eta'][0] <= eta <= env['eta'][1]
    assert env['ratio'][0] <= eta / r <= env['ratio'][1]
    assert env['rho'][0] <= r <= env['rho'][1]


def test_solve_eta_for_product_gate():
    '''A at or above A* should raise OutOfRangeError on the A<A* gate'''
    with pytest.raises(OutOfRangeError) as e:
        solve_eta_for_product(0.0, 0.5, a_star=1e-2)
    assert e.value.gate == 'A<A*'


def test_solve_eta_for_ratio():
    '''eta/rho = f should hold after inversion; f below the infimum is out of range'''
    eta = solve_eta_for_ratio(0.5, 0.2)
    assert eta / rho(0.5, eta) == pytest.approx(0.2, rel=1e-10)
    with pytest.raises(OutOfRangeError):
        solve_eta_for_ratio(1.5, 0.5)


@pytest.mark.parametrize('z, expected, factor', [(1.0, 1e-2, 2.0), (2.0, 1e-6, 4.0)])
def test_rho_asymptotics_at_tiny_eta(z, expected, factor):
    '''At eta = 1e-6 rho is eta^{1/3} on the unit circle and eta/(|z| - 1) outside'''
    r = solve_mde(SpectralPoint(z, 1e-6)).rho
    assert expected / factor <= r <= expected * factor


@pytest.mark.parametrize('z, A, expected, factor', [(0.0, 1e-4, 1e-4, 1.1), (1.0, 1e-8, 1e-6, 4.0)])
def test_solve_eta_for_product_scales(z, A, expected, factor):
    '''eta ~ A near the origin and eta ~ A^{3/4} on the unit circle'''
    eta = solve_eta_for_product(z, A)
    assert expected / factor <= eta <= expected * factor


@pytest.mark.parametrize('z', [0.0, 0.5, 1.0, 1.2])
def test_solve_eta_for_product_is_increasing(z):
    '''Doubling the target product raises eta'''
    for A in (1e-8, 1e-5, 1e-3):
        assert solve_eta_for_product(z, A) < solve_eta_for_product(z, 2 * A)
