'''
Hermitization H^z = [[0, X - z], [(X - z)^*, 0]] and its resolvent G = (H - i eta)^{-1}.

A ResolventHandle holds one LU factorization of H - i eta and answers every probe at
that (z, eta) from it.
'''
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import LinAlgError, eigh, lu_factor, lu_solve

from app.exceptions import ArgumentError, NumericalError, OutOfRangeError

SPECTRUM_MAX_N = 2048
DENSE_OBSERVABLE_MAX_N = 512
OBSERVABLE_NORM_CAP = 1e3
UNIT_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class Hermitization:
    z: complex
    H: np.ndarray
    N: int

    def __post_init__(self):
        self.H.setflags(write=False)

    @property
    def dim(self):
        return 2 * self.N

    def norm(self):
        return float(np.linalg.norm(self.H, 2))


def hermitize(X, z):
    '''Exact block assembly; X may be a RandomMatrix or a square array'''
    entries = getattr(X, 'entries', X)
    entries = np.asarray(entries, dtype=complex)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise ArgumentError(f"X must be square, got shape {entries.shape}")
    N = entries.shape[0]
    Y = entries - z * np.eye(N)
    H = np.zeros((2 * N, 2 * N), dtype=complex)
    H[:N, N:] = Y
    H[N:, :N] = Y.conj().T
    return Hermitization(z=complex(z), H=H, N=N)


def selector(i, N):
    '''Diagonal of the 2N x 2N expansion of E_1 (i=1) or E_2 (i=2)'''
    if i not in (1, 2):
        raise ArgumentError(f"selector index must be 1 or 2, got {i!r}")
    d = np.zeros(2 * N)
    if i == 1:
        d[:N] = 1.0
    else:
        d[N:] = 1.0
    return d


def _block(i, N):
    return slice(0, N) if i == 1 else slice(N, 2 * N)


def selector_trace(A, C, i, j, N):
    '''<A E_i C E_j> = Tr(A E_i C E_j)/(2N) for dense 2N x 2N A and C'''
    bi, bj = _block(i, N), _block(j, N)
    return complex(np.sum(A[bj, bi] * C[bi, bj].T)) / (2 * N)


@dataclass(frozen=True, eq=False)
class ResolventHandle:
    hermitization: Hermitization
    eta: float
    factors: tuple

    @property
    def N(self):
        return self.hermitization.N

    @property
    def dim(self):
        return self.hermitization.dim

    def solve(self, y):
        '''G y'''
        return lu_solve(self.factors, y)

    def solve_adjoint(self, y):
        '''G^* y = (H + i eta)^{-1} y'''
        return lu_solve(self.factors, y, trans=2)

    @cached_property
    def dense(self):
        '''G as a dense matrix, solved column by column against the factorization'''
        return self.solve(np.eye(self.dim, dtype=complex))

    def trace(self):
        return complex(np.trace(self.dense)) / self.dim

    def im_trace(self):
        return self.trace().imag


def resolvent(h, eta):
    if not eta > 0:
        raise ArgumentError(f"eta must be positive, got {eta!r}")
    A = h.H - 1j * eta * np.eye(h.dim)
    try:
        factors = lu_factor(A, check_finite=True)
    except (LinAlgError, ValueError) as e:
        logging.error("resolvent factorization failed at z=%s eta=%g: %s", h.z, eta, e)
        raise NumericalError("factorization of H - i eta failed", module='hermitization',
                             context={'z': str(h.z), 'eta': eta})
    return ResolventHandle(hermitization=h, eta=float(eta), factors=factors)


def _check_unit(v, name):
    n = np.linalg.norm(v)
    if abs(n - 1.0) > UNIT_TOLERANCE:
        raise ArgumentError(f"{name} must be a unit vector, |{name}| = {n:.15g}")


def iso_entry(R, x, y):
    '''<x, G y>'''
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    if x.shape != (R.dim,) or y.shape != (R.dim,):
        raise ArgumentError(f"probe vectors must have length {R.dim}")
    _check_unit(x, 'x')
    _check_unit(y, 'y')
    return complex(np.vdot(x, R.solve(y)))


class Observable:
    '''Deterministic test matrix B for averaged traces <G B>'''
    descriptor = 'observable'

    def check(self, dim):
        pass

    def norm(self):
        raise NotImplementedError

    def trace_with(self, R):
        raise NotImplementedError

    def trace_with_M(self, M):
        raise NotImplementedError

    def matrix(self, dim):
        raise NotImplementedError


class Identity(Observable):
    descriptor = 'I'

    def norm(self):
        return 1.0

    def trace_with(self, R):
        return R.trace()

    def trace_with_M(self, M):
        return complex(M.m)

    def matrix(self, dim):
        return np.eye(dim)


class Selector(Observable):
    def __init__(self, i):
        if i not in (1, 2):
            raise ArgumentError(f"selector index must be 1 or 2, got {i!r}")
        self.i = i
        self.descriptor = f"E{i}"

    def norm(self):
        return 1.0

    def trace_with(self, R):
        d = selector(self.i, R.N)
        return complex(np.sum(np.diag(R.dense) * d)) / R.dim

    def trace_with_M(self, M):
        return complex(M.m) / 2.0

    def matrix(self, dim):
        return np.diag(selector(self.i, dim // 2))


class RankOne(Observable):
    '''B = x y^*, so <G B> = <y, G x>/(2N)'''
    descriptor = 'rank-one'

    def __init__(self, x, y):
        self.x = np.asarray(x, dtype=complex)
        self.y = np.asarray(y, dtype=complex)

    def check(self, dim):
        if self.x.shape != (dim,) or self.y.shape != (dim,):
            raise ArgumentError(f"rank-one factors must have length {dim}")

    def norm(self):
        return float(np.linalg.norm(self.x) * np.linalg.norm(self.y))

    def trace_with(self, R):
        return complex(np.vdot(self.y, R.solve(self.x))) / R.dim

    def trace_with_M(self, M):
        return M.quad(self.y, self.x) / (2 * M.N)

    def matrix(self, dim):
        return np.outer(self.x, self.y.conj())


class Dense(Observable):
    descriptor = 'dense'

    def __init__(self, B, descriptor=None):
        self.B = np.asarray(B, dtype=complex)
        if descriptor is not None:
            self.descriptor = descriptor

    def check(self, dim):
        if self.B.shape != (dim, dim):
            raise ArgumentError(f"B has shape {self.B.shape}, expected {(dim, dim)}")
        if dim // 2 > DENSE_OBSERVABLE_MAX_N:
            raise OutOfRangeError(f"dense observables are capped at N={DENSE_OBSERVABLE_MAX_N}", gate='N<=512')

    def norm(self):
        return float(np.linalg.norm(self.B, 2))

    def trace_with(self, R):
        return complex(np.sum(R.dense * self.B.T)) / R.dim

    def trace_with_M(self, M):
        N = M.N
        B = self.B
        total = M.m * np.trace(B) + M.off_upper * np.trace(B[N:, :N]) + M.off_lower * np.trace(B[:N, N:])
        return complex(total) / (2 * N)

    def matrix(self, dim):
        return self.B


def random_hermitian(dim, rng):
    '''Hermitian observable with operator norm 1'''
    A = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    B = (A + A.conj().T) / 2.0
    return Dense(B / np.linalg.norm(B, 2), descriptor='random-hermitian')


def observable(B):
    if isinstance(B, Observable):
        return B
    if isinstance(B, str):
        if B == 'I':
            return Identity()
        if B in ('E1', 'E2'):
            return Selector(int(B[1]))
        raise ArgumentError(f"unknown observable {B!r}")
    return Dense(B)


def averaged_trace(R, B):
    '''<G B> = Tr(G B)/(2N)'''
    B = observable(B)
    B.check(R.dim)
    if B.norm() > OBSERVABLE_NORM_CAP:
        raise ArgumentError(f"|B| = {B.norm():g} exceeds {OBSERVABLE_NORM_CAP:g}")
    return B.trace_with(R)


def ward_defect(R):
    '''Relative defect of <G G^*> = <Im G>/eta'''
    G = R.dense
    lhs = float(np.sum(np.abs(G) ** 2)) / R.dim
    rhs = R.im_trace() / R.eta
    return abs(lhs - rhs) / abs(rhs)


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray
    N: int
    pairing_defect: float

    @property
    def positive(self):
        '''lambda_1 <= ... <= lambda_N, the non-negative half'''
        return self.values[self.N:]

    def lam(self, i):
        '''lambda_i for i in {-N..-1, 1..N}, lambda_{-i} = -lambda_i'''
        if i == 0 or abs(i) > self.N:
            raise ArgumentError(f"eigenvalue label must be in +-[1, {self.N}], got {i}")
        return float(self.positive[i - 1]) if i > 0 else -float(self.positive[-i - 1])


def spectrum(h):
    if h.N > SPECTRUM_MAX_N:
        raise OutOfRangeError(f"dense spectrum capped at N={SPECTRUM_MAX_N}", gate='N<=2048')
    try:
        values = eigh(h.H, eigvals_only=True)
    except LinAlgError as e:
        raise NumericalError(f"Hermitian eigensolver failed: {e}", module='hermitization', context={'N': h.N})
    values = np.sort(values)
    scale = max(float(np.max(np.abs(values))), 1.0)
    defect = float(np.max(np.abs(values + values[::-1]))) / scale
    # fold the pairs so that lambda_{-i} = -lambda_i holds exactly
    folded = (values - values[::-1]) / 2.0
    return Spectrum(values=folded, N=h.N, pairing_defect=defect)
