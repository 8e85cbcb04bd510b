'''
Matrix Dyson Equation for the Hermitization at w = i*eta.

With m = i*a the equation -1/m = w + m - |z|^2/(w + m) clears to the real cubic

    a^3 + 2 eta a^2 + (eta^2 + |z|^2 - 1) a - eta = 0

whose unique positive root is the physical branch. Everything here depends on z only
through |z|.
'''
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect

from app.exceptions import NumericalError, OutOfRangeError

Z_MAX = 10.0
A_STAR = 1e-2
ENVELOPE_FACTOR = 10.0
SCAN_POINTS = 64
SINGULAR_DENOMINATOR = 1e-14

_RTOL = 4 * np.finfo(float).eps


@dataclass(frozen=True)
class SpectralPoint:
    z: complex
    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise OutOfRangeError(f"eta must be positive, got {self.eta!r}", gate='eta>0')
        if abs(self.z) > Z_MAX:
            raise OutOfRangeError(f"|z| = {abs(self.z):g} exceeds {Z_MAX:g}", gate='|z|<=10')

    @property
    def z2(self):
        return abs(self.z) ** 2


@dataclass(frozen=True)
class MdeSolution:
    point: SpectralPoint
    a: float
    u: float
    rho: float
    m_prime_trace: float
    residual: float

    @property
    def m(self):
        return 1j * self.a

    @property
    def consistency(self):
        '''Relative defect of -u = m^2 - |z|^2 u^2'''
        z2 = self.point.z2
        lhs = -self.u
        rhs = -self.a ** 2 - z2 * self.u ** 2
        return abs(lhs - rhs) / abs(lhs)

    def toDict(self):
        return {
            'z_abs': abs(self.point.z),
            'eta': self.point.eta,
            'a': self.a,
            'u': self.u,
            'rho': self.rho,
            'm_prime_trace': self.m_prime_trace,
            'residual': self.residual,
        }


@dataclass(frozen=True)
class BlockM:
    '''M = [[m I, -z u I], [-conj(z) u I, m I]] stored by its four scalars'''
    m: complex
    off_upper: complex
    off_lower: complex
    N: int

    def expand(self):
        I = np.eye(self.N)
        return np.block([[self.m * I, self.off_upper * I],
                         [self.off_lower * I, self.m * I]])

    def apply(self, v):
        N = self.N
        top, bottom = v[:N], v[N:]
        return np.concatenate([self.m * top + self.off_upper * bottom,
                               self.off_lower * top + self.m * bottom])

    def quad(self, x, y):
        '''<x, M y>'''
        return complex(np.vdot(x, self.apply(y)))

    def trace(self):
        '''normalized trace <M>'''
        return self.m

    def im_trace(self):
        return self.m.imag


def mde_cubic(a, eta, z2):
    return a ** 3 + 2 * eta * a ** 2 + (eta ** 2 + z2 - 1.0) * a - eta


def _cubic_prime(a, eta, z2):
    return 3 * a ** 2 + 4 * eta * a + (eta ** 2 + z2 - 1.0)


def positive_root(eta, z2):
    '''
    Positive root of the MDE cubic by bisection on [0, 2 + eta], polished by one Newton
    step when that stays in the bracket and lowers the cubic.
    '''
    hi = 2.0 + eta
    try:
        a = bisect(mde_cubic, 0.0, hi, args=(eta, z2), xtol=1e-300, rtol=_RTOL, maxiter=1100)
    except (ValueError, RuntimeError) as e:
        logging.error("MDE bisection failed at eta=%g |z|^2=%g: %s", eta, z2, e)
        raise NumericalError("no positive root of the MDE cubic in [0, 2+eta]", module='mde',
                             context={'eta': eta, 'z_abs': float(np.sqrt(z2))})
    slope = _cubic_prime(a, eta, z2)
    if slope > 0:
        polished = a - mde_cubic(a, eta, z2) / slope
        if 0 < polished < hi and abs(mde_cubic(polished, eta, z2)) < abs(mde_cubic(a, eta, z2)):
            a = polished
    if not a > 0:
        raise NumericalError("MDE root is not positive", module='mde', context={'eta': eta, 'a': a})
    return a


def _check_unique(eta, z2):
    grid = np.linspace(0.0, 2.0 + eta, SCAN_POINTS)
    values = mde_cubic(grid, eta, z2)
    changes = np.count_nonzero(np.diff(np.sign(values)) != 0)
    if changes > 1:
        raise NumericalError("MDE cubic has more than one positive root", module='mde',
                             context={'eta': eta, 'z_abs': float(np.sqrt(z2)), 'sign_changes': int(changes)})


def mde_residual(a, eta, z2):
    '''|Eq. of m multiplied by m|: |-1 + a(eta + a) + |z|^2 u|'''
    u = a / (eta + a)
    return abs(-1.0 + a * (eta + a) + z2 * u)


def rho(z, eta):
    '''rho^z(i eta) = Im m, without building a solution object'''
    return positive_root(eta, abs(z) ** 2)


def solve_mde(point):
    '''Unique solution m = i a of the MDE at (z, i eta) with u, rho, <M'> and residual'''
    eta, z2 = point.eta, point.z2
    a = positive_root(eta, z2)
    _check_unique(eta, z2)
    u = a / (eta + a)
    residual = mde_residual(a, eta, z2)
    return MdeSolution(point=point, a=a, u=u, rho=a,
                       m_prime_trace=m_prime_value(u, z2), residual=residual)


def build_M(sol, N):
    z, u = sol.point.z, sol.u
    return BlockM(m=sol.m, off_upper=-z * u, off_lower=-np.conj(z) * u, N=int(N))


def m_prime_value(u, z2):
    denom = 1.0 + u - 2.0 * z2 * u ** 2
    if abs(denom) < SINGULAR_DENOMINATOR:
        raise NumericalError("singular denominator in <M'>", module='mde',
                             context={'u': u, 'z_abs': float(np.sqrt(z2))})
    return -1.0 + 1.0 / denom


def m_prime_trace(sol):
    '''<M'> = -1 + 1/(1 + u - 2|z|^2 u^2), real'''
    return m_prime_value(sol.u, sol.point.z2)


def m_prime_fd(point, h=None):
    '''Centered difference of a(eta); equals <M'> since m'(i eta) = da/deta'''
    eta, z2 = point.eta, point.z2
    # 1e-3 eta rather than 1e-6 eta: roundoff of the bisected root over a 1e-6 step
    # reaches the M_PRIME_RTOL level, while the 1e-3 truncation error is O(1e-6)
    h = 1e-3 * eta if h is None else h
    return (positive_root(eta + h, z2) - positive_root(eta - h, z2)) / (2 * h)


def m_prime_bound(sol):
    '''1/(2 rho^2 + eta/rho): leading order of |<M'>| for eta/rho small'''
    r, eta = sol.rho, sol.point.eta
    return 1.0 / (2 * r ** 2 + eta / r)


def stieltjes_bound(sol):
    '''|<M'>| <= rho/eta for a Stieltjes transform'''
    return sol.rho / sol.point.eta


def rho_envelope(point, F=ENVELOPE_FACTOR):
    '''(center/F, center*F) around the two-regime asymptotics of rho'''
    eta, r = point.eta, abs(point.z)
    if not eta < 1:
        raise OutOfRangeError(f"rho envelope needs eta < 1, got {eta:g}", gate='eta<1')
    if r <= 1:
        center = eta ** (1 / 3) + np.sqrt(1.0 - r)
    else:
        center = eta / (r - 1.0 + eta ** (2 / 3))
    return center / F, center * F


def product_envelopes(z, A, F=ENVELOPE_FACTOR):
    '''
    Envelopes for eta, eta/rho and rho along the level set eta * rho = A.

    Returns:
        dict name -> (lower, upper)
    '''
    r = abs(z)
    if r <= 1:
        eta = A / (np.sqrt(1.0 - r) + A ** 0.25)
        ratio = A / ((1.0 - r) + np.sqrt(A))
        rho_c = A ** 0.25 + np.sqrt(1.0 - r)
    else:
        eta = np.sqrt(A) * (np.sqrt(r - 1.0) + A ** 0.25)
        ratio = r - 1.0 + np.sqrt(A)
        rho_c = np.sqrt(A) / (np.sqrt(r - 1.0) + A ** 0.25)
    return {name: (c / F, c * F) for name, c in (('eta', eta), ('ratio', ratio), ('rho', rho_c))}


def solve_eta_for_product(z, A, a_star=A_STAR):
    '''
    The unique eta in (0, 1) with eta * rho^z(i eta) = A, by bisection in log(eta) on the
    increasing map eta -> eta rho. Since rho <= 1, eta = A is a lower bracket.
    '''
    if abs(z) > Z_MAX:
        raise OutOfRangeError(f"|z| = {abs(z):g} exceeds {Z_MAX:g}", gate='|z|<=10')
    if not 0 < A < a_star:
        raise OutOfRangeError(f"A = {A:g} outside (0, A*={a_star:g})", gate='A<A*')
    z2 = abs(z) ** 2

    def gap(s):
        eta = np.exp(s)
        return np.log(eta * positive_root(eta, z2)) - np.log(A)

    lo, hi = np.log(A), 0.0
    g_lo, g_hi = gap(lo), gap(hi)
    if g_lo == 0:
        return A
    if g_lo > 0 or g_hi < 0:
        raise NumericalError("eta*rho = A has no bracket in (0, 1)", module='mde',
                             context={'A': A, 'z_abs': abs(z)})
    try:
        s = bisect(gap, lo, hi, xtol=1e-15, rtol=_RTOL, maxiter=400)
    except (ValueError, RuntimeError) as e:
        raise NumericalError(f"eta*rho inversion failed: {e}", module='mde', context={'A': A})
    return float(np.exp(s))


def solve_eta_for_ratio(z, f):
    '''
    The unique eta with eta/rho^z(i eta) = f. The map is increasing with infimum
    (|z|^2 - 1)_+, and eta/rho >= eta puts an upper bracket at eta = f.
    '''
    z2 = abs(z) ** 2
    floor = max(z2 - 1.0, 0.0)
    if not f > floor:
        raise OutOfRangeError(f"eta/rho = {f:g} is below its infimum {floor:g}", gate='eta/rho')

    def gap(s):
        eta = np.exp(s)
        return np.log(eta / positive_root(eta, z2)) - np.log(f)

    hi = np.log(f)
    if gap(hi) == 0:
        return f
    lo = hi
    for _ in range(60):
        lo -= np.log(1e3)
        if gap(lo) < 0:
            break
    else:
        raise NumericalError("eta/rho inversion has no lower bracket", module='mde', context={'f': f})
    s = bisect(gap, lo, hi, xtol=1e-15, rtol=_RTOL, maxiter=400)
    return float(np.exp(s))
