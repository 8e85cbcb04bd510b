'''
Left/right eigenvectors of X, the delocalization statistic, the spectral-theorem
bound on eigenvector overlaps, and Z1/Z2 comparisons between ensembles.
'''
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, eig
from scipy.stats import ks_2samp

from app.ensemble import BASIS, map_trials, sample_gaussian_divisible, sample_iid, stream
from app.exceptions import ArgumentError, NumericalError, OutOfRangeError
from app.hermitization import hermitize, resolvent
from app.locallaw import coordinate_probe, sample_errors
from app.mde import A_STAR, ENVELOPE_FACTOR, SpectralPoint, solve_eta_for_product

DECOMPOSE_MAX_N = 1024
RESIDUAL_TOLERANCE = 1e-8
DEFECT_TOLERANCE = 1e-8
DEGENERATE_GAP = 1e-8
ORTHONORMAL_TOLERANCE = 1e-10
BOUND_TOLERANCE = 1e-9
STATISTIC_CAP = 5.0
KS_CAP = 0.2
PRODUCT_CONSTANT = 100.0


@dataclass(frozen=True, eq=False)
class EigenPair:
    sigma: complex
    r: np.ndarray
    l: np.ndarray
    right_residual: float
    left_residual: float
    index: int = 0
    # |<l, r>| below DEFECT_TOLERANCE
    defective: bool = False
    degenerate: bool = False

    @property
    def overlap(self):
        return abs(np.vdot(self.l, self.r))


def _entries(X):
    entries = np.asarray(getattr(X, 'entries', X), dtype=complex)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise ArgumentError(f"X must be square, got shape {entries.shape}")
    return entries


def eigen_decompose(X):
    '''
    All N eigenpairs sorted by |sigma|. Near-defective pairs are flagged, not
    dropped, and deloc_statistic leaves them out.

    Raises:
        NumericalError listing the indices whose residuals exceed 1e-8 |X|
    '''
    A = _entries(X)
    N = A.shape[0]
    if N > DECOMPOSE_MAX_N:
        raise OutOfRangeError(f"dense eigendecomposition capped at N={DECOMPOSE_MAX_N}", gate='N<=1024')
    try:
        w, vl, vr = eig(A, left=True, right=True)
    except LinAlgError as e:
        logging.error("eigensolver failed: %s", e)
        raise NumericalError(f"eigensolver did not converge: {e}", module='deloc', context={'N': N})
    norm = max(float(np.linalg.norm(A, 2)), np.finfo(float).tiny)
    order = np.argsort(np.abs(w), kind='stable')
    pairs, bad = [], []
    for rank, i in enumerate(order):
        sigma = complex(w[i])
        r = vr[:, i] / np.linalg.norm(vr[:, i])
        l = vl[:, i] / np.linalg.norm(vl[:, i])
        res_r = float(np.linalg.norm(A @ r - sigma * r))
        res_l = float(np.linalg.norm(A.conj().T @ l - np.conj(sigma) * l))
        if res_r > RESIDUAL_TOLERANCE * norm or res_l > RESIDUAL_TOLERANCE * norm:
            bad.append(int(rank))
        others = np.delete(w, i)
        gap = float(np.min(np.abs(others - sigma))) if len(others) else np.inf
        pairs.append(EigenPair(sigma=sigma, r=r, l=l, right_residual=res_r, left_residual=res_l, index=rank,
                               defective=abs(np.vdot(l, r)) < DEFECT_TOLERANCE,
                               degenerate=gap < DEGENERATE_GAP))
    if bad:
        raise NumericalError("eigenpair residuals exceed tolerance", module='deloc',
                             context={'indices': bad, 'N': N})
    flagged = sum(p.defective for p in pairs)
    if flagged:
        logging.warning("%d of %d eigenpairs are near-defective", flagged, N)
    return pairs


@dataclass(frozen=True, eq=False)
class ProbeBasis:
    '''Orthonormal probe vectors as columns; None stands for the coordinate basis'''
    descriptor: str
    Q: np.ndarray = None

    def check(self, N):
        if self.Q is None:
            return
        if self.Q.shape != (N, N):
            raise ArgumentError(f"basis has shape {self.Q.shape}, expected {(N, N)}")
        defect = float(np.max(np.abs(self.Q.conj().T @ self.Q - np.eye(N))))
        if defect > ORTHONORMAL_TOLERANCE:
            raise ArgumentError(f"basis is not orthonormal (defect {defect:.3g})")

    def maxima(self, v):
        '''max over probes x of |<x, v>|'''
        if self.Q is None:
            return float(np.max(np.abs(v)))
        return float(np.max(np.abs(self.Q.conj().T @ v)))


def coordinate_basis():
    return ProbeBasis('coordinate')


def random_basis(N, seed, keys=()):
    '''Haar-distributed unitary from a QR factorization with the phases of R removed'''
    rng = stream(seed, BASIS, *keys)
    Z = (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))) / np.sqrt(2.0)
    Q, R = np.linalg.qr(Z)
    d = np.diag(R)
    Q = Q * (d / np.abs(d))
    return ProbeBasis(f"random-orthonormal seed={seed} keys={tuple(keys)}", Q)


def user_basis(Q, descriptor='user'):
    return ProbeBasis(descriptor, np.asarray(Q, dtype=complex))


@dataclass(frozen=True)
class DelocReport:
    N: int
    basis: str
    r_max: tuple
    l_max: tuple
    statistic: float
    excluded: int = 0
    trial: dict = field(default_factory=dict)

    def recompute(self):
        return float(np.sqrt(self.N / np.log(self.N)) * max(r + l for r, l in zip(self.r_max, self.l_max)))

    def toDict(self):
        return {
            'N': self.N,
            'basis': self.basis,
            'statistic': self.statistic,
            'excluded': self.excluded,
            'worst_pair': int(np.argmax([r + l for r, l in zip(self.r_max, self.l_max)])),
            **self.trial,
        }


def deloc_statistic(pairs, basis, N, trial=None):
    '''sqrt(N/log N) max_i (max_x |<x, l_i>| + max_x |<x, r_i>|) over non-defective pairs'''
    basis.check(N)
    usable = [p for p in pairs if not p.defective]
    if not usable:
        raise ArgumentError("no non-defective eigenpairs to evaluate")
    r_max = tuple(basis.maxima(p.r) for p in usable)
    l_max = tuple(basis.maxima(p.l) for p in usable)
    statistic = float(np.sqrt(N / np.log(N)) * max(r + l for r, l in zip(r_max, l_max)))
    return DelocReport(N=N, basis=basis.descriptor, r_max=r_max, l_max=l_max, statistic=statistic,
                       excluded=len(pairs) - len(usable), trial=dict(trial or {}))


def eta_for_eigenvalue(sigma, N, C=1.0, c=PRODUCT_CONSTANT, a_star=A_STAR):
    '''eta with N eta rho^sigma(i eta) = c C^2 log N'''
    return solve_eta_for_product(sigma, c * C ** 2 * np.log(N) / N, a_star=a_star)


def _overlap_side(R, x, w):
    lhs = abs(np.vdot(x, w)) ** 2 / np.vdot(w, w).real
    rhs = R.eta * float(np.vdot(x, R.solve(x)).imag)
    return {'lhs': float(lhs), 'rhs': rhs, 'ok': bool(lhs <= rhs + BOUND_TOLERANCE)}


def spectral_bound_check(X, pair, x1, C=1.0, c=PRODUCT_CONSTANT, eta=None, a_star=A_STAR):
    '''
    |<x1, r>|^2/|r|^2 <= eta <x, Im G^sigma(i eta) x> with x = (0, x1), and the same
    for l with x = (x1, 0). Both hold deterministically because (0, r) and (l, 0)
    lie in the kernel of H^sigma.
    '''
    A = _entries(X)
    N = A.shape[0]
    x1 = np.asarray(x1, dtype=complex)
    if x1.shape != (N,) or abs(np.linalg.norm(x1) - 1.0) > 1e-12:
        raise ArgumentError(f"x1 must be a unit vector of length {N}")
    point_eta = eta if eta is not None else eta_for_eigenvalue(pair.sigma, N, C=C, c=c, a_star=a_star)
    point = SpectralPoint(pair.sigma, point_eta)
    R = resolvent(hermitize(A, point.z), point.eta)
    zero = np.zeros(N, dtype=complex)
    right = _overlap_side(R, np.concatenate([zero, x1]), np.concatenate([zero, pair.r]))
    left = _overlap_side(R, np.concatenate([x1, zero]), np.concatenate([pair.l, zero]))
    if not (right['ok'] and left['ok']):
        logging.error("spectral bound violated at sigma=%s eta=%g", pair.sigma, point.eta)
    return {'sigma': pair.sigma, 'eta': point.eta, 'right': right, 'left': left,
            'passed': right['ok'] and left['ok']}


def spectral_radius_check(pairs, N, F=ENVELOPE_FACTOR):
    '''max |sigma| <= 1 + F N^{-1/4}'''
    radius = max(abs(p.sigma) for p in pairs)
    bound = 1.0 + F * N ** -0.25
    return {'radius': radius, 'bound': bound, 'passed': bool(radius <= bound)}


def _z_samples(spec, side, trials, point, x, threads, divisible_T=None):
    def one(k):
        if divisible_T is None:
            X = sample_iid(spec, keys=(side, k))
        else:
            X = sample_gaussian_divisible(spec, divisible_T, keys=(side, k))
        s = sample_errors(X, point, 'I', x, x, descriptors=('probe', 'probe'))
        # at w = i eta both traces are purely imaginary
        return s.Z1.imag, s.Z2.imag

    values = map_trials(one, range(trials), threads)
    return np.array([v[0] for v in values]), np.array([v[1] for v in values])


def ensemble_comparison(specA, specB, trials, z=0.0, c=0.5, a_star=A_STAR, ks_cap=KS_CAP, threads=1,
                        divisible_T=None):
    '''
    Two-sample Kolmogorov-Smirnov distances between the Z1 (B = I) and Z2 (lower
    coordinate probe) laws of two ensembles at a common (z, eta) with
    eta rho = c log N / N. The ensembles draw from disjoint streams. With `divisible_T`
    side B is the Gaussian-divisible matrix e^{-T/2} Y + (1 - e^{-T})^{1/2} U built on specB.
    '''
    if specA.N != specB.N or specA.field != specB.field:
        raise ArgumentError("ensembles must share N and field")
    if trials < 2:
        raise ArgumentError(f"need at least 2 trials, got {trials}")
    N = specA.N
    eta = solve_eta_for_product(z, c * np.log(N) / N, a_star=a_star)
    point = SpectralPoint(complex(z), eta)
    x = coordinate_probe(N)
    Z1a, Z2a = _z_samples(specA, 0, trials, point, x, threads)
    Z1b, Z2b = _z_samples(specB, 1, trials, point, x, threads, divisible_T)
    ks1 = ks_2samp(Z1a, Z1b).statistic
    ks2 = ks_2samp(Z2a, Z2b).statistic
    logging.info("ensemble comparison N=%d trials=%d T=%s: KS(Z1)=%.3f KS(Z2)=%.3f",
                 N, trials, divisible_T, ks1, ks2)
    return {
        'N': N,
        'eta': eta,
        'trials': trials,
        'divisible_T': divisible_T,
        'ks_Z1': float(ks1),
        'ks_Z2': float(ks2),
        'mean_gap_Z1': float(Z1a.mean() - Z1b.mean()),
        'var_gap_Z1': float(Z1a.var(ddof=1) - Z1b.var(ddof=1)),
        'mean_gap_Z2': float(Z2a.mean() - Z2b.mean()),
        'var_gap_Z2': float(Z2a.var(ddof=1) - Z2b.var(ddof=1)),
        'samples': {'Z1_A': Z1a, 'Z1_B': Z1b, 'Z2_A': Z2a, 'Z2_B': Z2b},
        'passed': bool(max(ks1, ks2) <= ks_cap),
    }
