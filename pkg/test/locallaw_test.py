import numpy as np
import pytest
from app.ensemble import EnsembleSpec, sample_iid
from app.exceptions import ArgumentError, ConfigurationError
from app.hermitization import Dense, hermitize, random_hermitian, resolvent
from app.locallaw import (DomainParams, EtaRule, coordinate_probe, grid_scan, in_domain, normalizers,
                          random_probe, sample_errors, schwarz_checks)
from app.mde import SpectralPoint, solve_eta_for_product


def test_domain_params_validation():
    '''DomainParams should reject C < 1, xi outside (0, 0.01) and N < 1'''
    with pytest.raises(ConfigurationError):
        DomainParams(C=0.5, xi=0.005, N=100)
    with pytest.raises(ConfigurationError):
        DomainParams(C=1, xi=0.05, N=100)
    with pytest.raises(ConfigurationError):
        DomainParams(C=1, xi=0.005, N=0)


def test_in_domain_gates():
    '''Each domain gate should be reported on its own'''
    N = 100000
    p = DomainParams(C=1, xi=0.005, N=N)
    inside = in_domain(SpectralPoint(0.0, 200 * np.log(N) / N), p)
    assert inside
    assert inside.failed() == []
    far = in_domain(SpectralPoint(1 + 2 * N ** (-0.005), 0.05), p)
    assert not far
    assert '|z|' in far.failed()
    small = DomainParams(C=1, xi=0.005, N=512)
    wide = in_domain(SpectralPoint(0.0, 200 * np.log(512) / 512), small)
    assert not wide
    assert 'eta/rho' in wide.failed()


def test_zero_observable_has_no_averaged_error(ginibre):
    '''B = 0 should give avg_err = 0 and Z1 = 0'''
    N = ginibre.N
    x = coordinate_probe(N)
    sample = sample_errors(ginibre, SpectralPoint(0.3, 0.2), Dense(np.zeros((2 * N, 2 * N))), x, x)
    assert sample.avg_err == 0
    assert sample.Z1 == 0


def test_normalization(ginibre):
    '''Z1/(N eta) and Z2/sqrt(N eta/rho) should give back the raw errors'''
    N = ginibre.N
    rng = np.random.default_rng(0)
    x, y = random_probe(N, rng), random_probe(N, rng)
    sample = sample_errors(ginibre, SpectralPoint(0.5, 0.1), 'I', x, y)
    s1, s2 = normalizers(N, 0.1, sample.rho)
    assert sample.Z1 / s1 == pytest.approx(sample.avg_err, rel=1e-14)
    assert sample.Z2 / s2 == pytest.approx(sample.iso_err, rel=1e-14)


def test_isotropic_errors_average_to_the_trace():
    '''Averaging <e_a,(G-M)e_a> over the standard basis gives <G-M>'''
    X = sample_iid(EnsembleSpec(N=8, seed=9))
    point = SpectralPoint(0.4, 0.2)
    total = 0
    for half in ('upper', 'lower'):
        for k in range(8):
            e = coordinate_probe(8, k, half)
            total += sample_errors(X, point, 'I', e, e).iso_err
    avg = sample_errors(X, point, 'I', e, e).avg_err
    assert total / 16 == pytest.approx(avg, abs=1e-12)


def test_local_law_errors_are_small():
    '''At macroscopic eta the errors should sit within their normalizations in 95% of trials'''
    N, eta = 64, 0.5
    point = SpectralPoint(0.0, eta)
    avg_ok = iso_ok = 0
    for trial in range(20):
        X = sample_iid(EnsembleSpec(N=N, seed=21), keys=(trial,))
        x = coordinate_probe(N, trial % N)
        sample = sample_errors(X, point, 'I', x, x)
        avg_ok += abs(sample.avg_err) <= 10 / (N * eta)
        iso_ok += abs(sample.iso_err) <= 10 * np.sqrt(sample.rho / (N * eta))
    assert avg_ok >= 19
    assert iso_ok >= 19


def test_eta_rule():
    '''Fixed rules return their list; product rules solve eta*rho = c log N/N'''
    assert EtaRule('fixed', (0.1, 0.2)).etas_at(0.0, 64) == [0.1, 0.2]
    (eta,) = EtaRule('product', c=0.5, a_star=0.5).etas_at(0.0, 64)
    assert eta > 0
    with pytest.raises(ConfigurationError):
        EtaRule('product')
    with pytest.raises(ConfigurationError):
        EtaRule('geometric', (0.1,))


def test_grid_scan_order(ginibre):
    '''Samples come back in (z, eta) grid order with the domain verdict attached'''
    p = DomainParams(C=1, xi=0.005, N=ginibre.N)
    samples = grid_scan(ginibre, p, [0.0, 0.5], EtaRule('fixed', (0.3, 0.1)), threads=2)
    assert [(s.point.z.real, s.point.eta) for s in samples] == [(0.0, 0.3), (0.0, 0.1), (0.5, 0.3), (0.5, 0.1)]
    assert all(isinstance(s.in_domain, bool) for s in samples)
    assert all(set(s.gates) == {'N*eta*rho', 'eta/rho', '|z|'} for s in samples)
    assert grid_scan(ginibre, p, [], EtaRule('fixed', (0.3,))) == []


def test_schwarz_off_event(zero_matrix):
    '''At X = 0 the averaged event fails and the power bounds hold with equality'''
    N = zero_matrix.shape[0]
    R = resolvent(hermitize(zero_matrix, 0.0), 0.1)
    x = coordinate_probe(N)
    report = schwarz_checks(R, 'I', x, x)
    assert not report['averaged_event']
    assert report['passed']
    powers = [row for row in report['rows'] if row['check'] in ('<G^2>', '<G^3>')]
    assert all(row['ratio'] == pytest.approx(1.0) for row in powers)
    assert all(row['ok'] is None for row in report['rows'] if not row['applicable'])


@pytest.mark.parametrize('p, q', [(1, 1), (1, 2), (2, 2), (1, 3)])
def test_schwarz_bounds_hold(ginibre, p, q):
    '''Every applicable Schwarz bound should hold for a Ginibre resolvent'''
    R = resolvent(hermitize(ginibre, 0.5), 0.5)
    rng = np.random.default_rng(p + 10 * q)
    B = random_hermitian(R.dim, rng)
    u, v = random_probe(ginibre.N, rng), random_probe(ginibre.N, rng)
    report = schwarz_checks(R, B, u, v, p=p, q=q)
    assert report['averaged_event']
    assert report['passed']


def test_schwarz_argument_checks(ginibre_resolvent):
    '''p + q above 4 and |B| above 1 are argument errors'''
    x = coordinate_probe(ginibre_resolvent.N)
    with pytest.raises(ArgumentError):
        schwarz_checks(ginibre_resolvent, 'I', x, x, p=3, q=2)
    with pytest.raises(ArgumentError):
        schwarz_checks(ginibre_resolvent, 2 * np.eye(ginibre_resolvent.dim), x, x)


def lower_unit(N, k=0):
    v = np.zeros(2 * N, dtype=complex)
    v[N + k] = 1.0
    return v


def test_errors_shrink_with_N():
    '''Median errors at a macroscopic point fall as N grows'''
    point = SpectralPoint(0.0, 0.5)
    medians = []
    for N in (16, 64, 256):
        samples = [sample_errors(sample_iid(EnsembleSpec(N=N, seed=13), keys=(trial,)), point, 'I',
                                 lower_unit(N), lower_unit(N)) for trial in range(20)]
        medians.append((np.median([abs(s.avg_err) for s in samples]),
                        np.median([abs(s.iso_err) for s in samples])))
    avg, iso = zip(*medians)
    assert avg[0] > avg[1] > avg[2]
    assert iso[0] > iso[2]


def test_lower_coordinate_Z2_is_order_one():
    '''Z2 for a lower-half coordinate vector stays below 10 sqrt(log N) near the domain boundary'''
    N = 128
    eta = solve_eta_for_product(0.0, 5 * np.log(N) / N, a_star=0.5)
    point = SpectralPoint(0.0, eta)
    ok = 0
    for trial in range(20):
        x = lower_unit(N, trial)
        sample = sample_errors(sample_iid(EnsembleSpec(N=N, seed=17), keys=(trial,)), point, 'I', x, x)
        assert sample.Z2 == pytest.approx(np.sqrt(N * eta / sample.rho) * sample.iso_err)
        ok += abs(sample.Z2) <= 10 * np.sqrt(np.log(N))
    assert ok >= 19
