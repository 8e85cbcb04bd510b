import numpy as np
import pytest
from app.characteristics import (check_lemma_chars, entry_time, eta_at, etarho_profile, integrate_backward,
                                 landmark_times, propagator, propagator_bounds)
from app.exceptions import ArgumentError, OutOfRangeError, PreconditionError
from app.mde import SpectralPoint, solve_eta_for_product, solve_eta_for_ratio

N_AUDIT = 1e6
XI = 0.005


def audit_char(z=0.9, c=200.0):
    A = c * np.log(N_AUDIT) / N_AUDIT
    eta = solve_eta_for_product(z, A)
    return integrate_backward(SpectralPoint(z, eta), N_AUDIT ** (-XI), steps=128)


def test_entry_time():
    '''Entry time is zero inside the disc and 2 log|z0| outside'''
    assert entry_time(0.5) == 0.0
    assert entry_time(np.e) == pytest.approx(2.0)
    delta = 1e-3
    assert entry_time(1 + delta) == pytest.approx(2 * delta, rel=0.1)


@pytest.mark.parametrize('z, eta', [(0.5, 1e-3), (1.05, 1e-2), (0.0, 1e-4)])
def test_conservation(z, eta):
    '''(eta/rho + 1) e^t should be conserved along the integrated characteristic'''
    char = integrate_backward(SpectralPoint(z, eta), 0.5, steps=64)
    assert char.conservation_defect() <= 1e-8
    assert np.all(np.diff(char.eta) < 0)
    assert np.allclose(char.z, z * np.exp((0.5 - char.t) / 2), rtol=1e-14)


def test_initial_eta_matches_closed_form():
    '''eta_0 should solve eta/rho = (eta_T/rho_T + 1) e^T - 1 at z_0'''
    end = SpectralPoint(0.7, 1e-3)
    char = integrate_backward(end, 0.3, steps=32)
    f = (char.eta[-1] / char.rho[-1] + 1) * np.exp(0.3) - 1
    assert char.eta[0] == pytest.approx(solve_eta_for_ratio(char.z0, f), rel=1e-6)


def test_end_point_is_exact():
    '''The last sample should be the requested end point'''
    end = SpectralPoint(0.2, 5e-3)
    char = integrate_backward(end, 0.1, steps=16)
    assert char.eta[-1] == end.eta
    assert char.z[-1] == end.z
    assert char.at(0.1)[1] == pytest.approx(end.eta, rel=1e-8)
    with pytest.raises(ArgumentError):
        char.at(0.2)


def test_integrate_backward_rejects_bad_input():
    '''Non-positive T is an argument error and a far z_0 is out of range'''
    with pytest.raises(ArgumentError):
        integrate_backward(SpectralPoint(0.2, 0.1), 0.0)
    with pytest.raises(OutOfRangeError):
        integrate_backward(SpectralPoint(9.0, 0.1), 1.0)


def test_propagator():
    '''p_{s,s} = 1, s > t is rejected and p_{s,t} <= 2.5 eta_s/eta_t'''
    char = integrate_backward(SpectralPoint(0.6, 1e-3), 0.4, steps=64)
    assert propagator(char, 0.1, 0.1) == 1.0
    with pytest.raises(ArgumentError):
        propagator(char, 0.3, 0.1)
    for s, t in [(0.0, 0.4), (0.1, 0.35), (0.2, 0.21), (0.0, 0.05)]:
        report = propagator_bounds(char, s, t)
        assert report['ok']
        assert report['p'] >= 1.0


def test_eta_rho_profile_is_finite():
    '''The eta*rho profile ratio is at least one and finite'''
    char = integrate_backward(SpectralPoint(0.5, 1e-3), 0.2, steps=32)
    ratio = etarho_profile(char)
    assert 1.0 <= ratio < np.inf


def test_landmarks_clamp_for_small_N():
    '''For small N the landmarks fall before zero and are clamped with a flag'''
    char = integrate_backward(SpectralPoint(0.5, 0.1), 0.1, steps=16)
    marks = landmark_times(char, 0.005, 100)
    assert marks.S2 == 0.0
    assert marks.S2_clamped


def test_lemma_items_hold():
    '''All three lemma items should hold for a long characteristic at N = 10^6'''
    char = audit_char()
    report = check_lemma_chars(char, XI, N_AUDIT)
    assert report['item_i']
    assert report['item_ii']
    assert report['item_iii']
    assert report['passed']
    # S2 lands before S1 at this N
    assert not report['ordering']
    assert eta_at(char, report['landmarks']['S1']) > char.eta[-1]


def test_lemma_preconditions():
    '''check_lemma_chars should name the failed hypothesis'''
    char = audit_char()
    with pytest.raises(PreconditionError) as e:
        check_lemma_chars(char, 0.02, N_AUDIT)
    assert e.value.hypothesis == '0<xi<0.01'
    short = integrate_backward(char.end, 0.5, steps=16)
    with pytest.raises(PreconditionError) as e:
        check_lemma_chars(short, XI, N_AUDIT)
    assert e.value.hypothesis == 'T=N^(-xi)'


def test_landmarks_follow_their_formulas():
    '''S1 and S2 sit N^{5 xi} and (log N)^3 over N rho_T^2 before T, and the report's ordering flag agrees'''
    char = audit_char()
    marks = landmark_times(char, XI, N_AUDIT)
    scale = N_AUDIT * char.rho[-1] ** 2
    assert marks.S1 == pytest.approx(char.T - N_AUDIT ** (5 * XI) / scale, rel=1e-12)
    assert marks.S2 == pytest.approx(char.T - np.log(N_AUDIT) ** 3 / scale, rel=1e-12)
    assert not marks.S1_clamped and not marks.S2_clamped
    assert marks.t_star == char.t_star and marks.kappa0 == char.kappa0
    report = check_lemma_chars(char, XI, N_AUDIT)
    assert report['ordering'] == (0 < marks.S1 < marks.S2 < char.T)
    assert char.S1 is None and 'before_S1' not in char.rows()[0]
    marked = char.with_landmarks(marks)
    assert (marked.S1, marked.S2) == (marks.S1, marks.S2)
    flags = [row['before_S2'] for row in marked.rows()]
    assert flags[0] and not flags[-1]
    assert flags == sorted(flags, reverse=True)


def test_lemma_gate_excludes_the_xi_endpoint():
    '''xi = 0.01 itself is outside the open range'''
    char = audit_char()
    with pytest.raises(PreconditionError) as e:
        check_lemma_chars(char, 0.01, N_AUDIT)
    assert e.value.hypothesis == '0<xi<0.01'
    with pytest.raises(ArgumentError):
        landmark_times(char, 0.01, N_AUDIT)
