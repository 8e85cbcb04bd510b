'''
Characteristics of the resolvent flow:

    d eta/dt = -rho^{z_t}(i eta_t) - eta_t/2,    d z/dt = -z_t/2.

z is advanced in closed form; eta is integrated backward from the end point with an
adaptive Runge-Kutta 4(5) pair. Along every characteristic (eta/rho + 1) e^t is
conserved, which is the module's correctness oracle.
'''
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp, trapezoid

from app.exceptions import ArgumentError, NumericalError, OutOfRangeError, PreconditionError
from app.mde import ENVELOPE_FACTOR, Z_MAX, SpectralPoint, positive_root, m_prime_value

UNIFORM_SAMPLES = 512
RK_TOLERANCE = 1e-10
XI_MAX = 0.01


@dataclass(frozen=True, eq=False)
class Characteristic:
    t: np.ndarray
    z: np.ndarray
    eta: np.ndarray
    rho: np.ndarray
    T: float
    z0: complex
    t_star: float
    kappa0: float
    S1: float = None
    S2: float = None
    dense: object = field(default=None, repr=False)

    def __post_init__(self):
        for arr in (self.t, self.z, self.eta, self.rho):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.t)

    @property
    def end(self):
        return SpectralPoint(complex(self.z[-1]), float(self.eta[-1]))

    def z_at(self, t):
        return self.z0 * np.exp(-np.asarray(t) / 2.0)

    def at(self, t):
        '''(z_t, eta_t, rho_t) from the integrator's dense output'''
        if not -1e-12 <= t <= self.T + 1e-12:
            raise ArgumentError(f"t={t:g} outside [0, {self.T:g}]")
        eta = float(self.dense(t)[0]) if self.dense is not None else float(np.interp(t, self.t, self.eta))
        z = complex(self.z_at(t))
        return z, eta, positive_root(eta, abs(z) ** 2)

    def phi(self):
        '''Phi(t) = 1/2 + <M'_t> on the samples'''
        u = self.rho / (self.eta + self.rho)
        z2 = np.abs(self.z) ** 2
        return np.array([0.5 + m_prime_value(ui, zi) for ui, zi in zip(u, z2)])

    def conserved(self):
        return (self.eta / self.rho + 1.0) * np.exp(self.t)

    def conservation_defect(self):
        c = self.conserved()
        return float(np.max(np.abs(c - c[-1])) / c[-1])

    def with_landmarks(self, marks):
        '''A copy carrying S1 and S2 from `landmark_times`'''
        return replace(self, S1=marks.S1, S2=marks.S2)

    def rows(self):
        out = []
        for t, z, e, r in zip(self.t, self.z, self.eta, self.rho):
            row = {'t': t, 'z_re': z.real, 'z_im': z.imag, 'eta': e, 'rho': r, 'eta_rho': e * r}
            if self.S1 is not None:
                row['before_S1'] = bool(t <= self.S1)
                row['before_S2'] = bool(t <= self.S2)
            out.append(row)
        return out


@dataclass(frozen=True)
class Landmarks:
    t_star: float
    kappa0: float
    S1: float
    S2: float
    S1_clamped: bool
    S2_clamped: bool

    def toDict(self):
        return {
            't_star': self.t_star,
            'kappa0': self.kappa0,
            'S1': self.S1,
            'S2': self.S2,
            'S1_clamped': self.S1_clamped,
            'S2_clamped': self.S2_clamped,
        }


def entry_time(z0):
    '''First time |z0| e^{-t/2} <= 1, zero inside the disc'''
    r = abs(z0)
    return 0.0 if r <= 1 else float(2.0 * np.log(r))


def integrate_backward(end, T, steps=UNIFORM_SAMPLES, refine=()):
    '''
    Characteristic through `end` at time T, integrated back to t = 0.

    Samples are `steps` + 1 uniform times on [0, T], every accepted Runge-Kutta step
    and any `refine` times; rho is attached from the MDE at each.
    '''
    if not T > 0:
        raise ArgumentError(f"T must be positive, got {T!r}")
    z0 = complex(end.z) * np.exp(T / 2.0)
    if abs(z0) > Z_MAX:
        raise OutOfRangeError(f"|z_0| = {abs(z0):g} exceeds {Z_MAX:g}", gate='|z0|<=10')

    def rhs(t, y):
        eta = y[0]
        if not eta > 0:
            raise NumericalError("eta left (0, inf) during integration", module='characteristics',
                                 context={'t': float(t), 'eta': float(eta)})
        z2 = abs(z0) ** 2 * np.exp(-t)
        return [-positive_root(eta, z2) - eta / 2.0]

    sol = solve_ivp(rhs, (T, 0.0), [end.eta], method='RK45', rtol=RK_TOLERANCE,
                    atol=RK_TOLERANCE * end.eta * 1e-2, dense_output=True)
    if not sol.success:
        logging.error("characteristic integration failed: %s", sol.message)
        raise NumericalError(sol.message, module='characteristics', context={'T': T, 'eta_T': end.eta})

    times = np.union1d(np.linspace(0.0, T, steps + 1), np.clip(sol.t, 0.0, T))
    times = np.union1d(times, [r for r in refine if 0 <= r <= T])
    times = times[np.concatenate([[True], np.diff(times) > 1e-12 * T])]
    times[-1] = T
    eta = sol.sol(times)[0]
    # the end point is exact
    eta[-1] = end.eta
    if np.any(eta <= 0) or np.any(np.diff(eta) >= 0):
        raise NumericalError("eta_t is not positive and strictly decreasing", module='characteristics',
                             context={'T': T, 'eta_T': end.eta})
    z = z0 * np.exp(-times / 2.0)
    z[-1] = end.z
    rho = np.array([positive_root(e, abs(zt) ** 2) for e, zt in zip(eta, z)])
    eta0 = float(eta[0])
    kappa0 = max(abs(z0) - 1.0, 0.0) ** 1.5 + eta0
    logging.debug("characteristic: %d samples, eta_0=%g eta_T=%g", len(times), eta0, end.eta)
    return Characteristic(t=times, z=z, eta=eta, rho=rho, T=float(T), z0=z0,
                          t_star=entry_time(z0), kappa0=kappa0, dense=sol.sol)


def landmark_times(char, xi, N):
    '''
    t_*, kappa_0 and S_1 = T - N^{5 xi}/(N rho_T^2), S_2 = T - (log N)^3/(N rho_T^2),
    the latter two clamped to [0, T] with a flag.
    '''
    if not 0 < xi < XI_MAX:
        raise ArgumentError(f"xi must lie in (0, {XI_MAX}), got {xi!r}")
    rho_T = float(char.rho[-1])
    scale = N * rho_T ** 2
    raw1 = char.T - N ** (5 * xi) / scale
    raw2 = char.T - np.log(N) ** 3 / scale
    S1 = min(max(raw1, 0.0), char.T)
    S2 = min(max(raw2, 0.0), char.T)
    if S1 != raw1 or S2 != raw2:
        logging.warning("landmarks clamped: S1=%g S2=%g (T=%g)", raw1, raw2, char.T)
    return Landmarks(t_star=char.t_star, kappa0=char.kappa0, S1=float(S1), S2=float(S2),
                     S1_clamped=S1 != raw1, S2_clamped=S2 != raw2)


def _phi_at(char, t):
    z, eta, r = char.at(t)
    return 0.5 + m_prime_value(r / (eta + r), abs(z) ** 2)


def propagator(char, s, t):
    '''p_{s,t} = exp(int_s^t Phi), trapezoid rule over the stored samples'''
    if s > t:
        raise ArgumentError(f"propagator needs s <= t, got s={s:g} t={t:g}")
    if s == t:
        return 1.0
    inside = (char.t > s) & (char.t < t)
    grid = np.concatenate([[s], char.t[inside], [t]])
    values = np.concatenate([[_phi_at(char, s)], char.phi()[inside], [_phi_at(char, t)]])
    return float(np.exp(trapezoid(values, grid)))


def eta_at(char, t):
    return char.at(t)[1]


def propagator_bounds(char, s, t, C=ENVELOPE_FACTOR):
    '''
    The propagator against its two bounds:
        p_{s,t} <= 2.5 eta_s/eta_t                 (quadrature margin on the factor 2)
        p_{s,t} <= C eta_{s^t*}/eta_{t^t*}
    '''
    p = propagator(char, s, t)
    simple = 2.5 * eta_at(char, s) / eta_at(char, t)
    ts = min(char.t_star, char.T)
    refined = C * eta_at(char, min(s, ts)) / eta_at(char, min(t, ts))
    return {'s': s, 't': t, 'p': p, 'bound': simple, 'refined_bound': refined,
            'ok': p <= simple, 'refined_ok': p <= refined}


def etarho_profile(char):
    '''
    Worst two-sided ratio of eta_t rho_t against eta_T rho_T + (T - t) * rate with
    rate = A/(|z_T| - 1 + sqrt(A)) outside the disc and sqrt(A) + 1 - |z_T| inside.
    '''
    A = float(char.eta[-1] * char.rho[-1])
    r = abs(char.z[-1])
    rate = A / (r - 1.0 + np.sqrt(A)) if r > 1 else np.sqrt(A) + 1.0 - r
    model = A + (char.T - char.t) * rate
    ratio = char.eta * char.rho / model
    return float(np.max(np.maximum(ratio, 1.0 / ratio)))


def check_lemma_chars(char, xi, N, F=ENVELOPE_FACTOR):
    '''
    Audit the characteristic against the three items of the characteristics lemma with
    audit factor F. N is symbolic: nothing here touches a matrix.

    Raises:
        PreconditionError naming the first failed hypothesis
    '''
    A = float(char.eta[-1] * char.rho[-1])
    zT = abs(char.z[-1])
    if not 0 < xi < XI_MAX:
        raise PreconditionError(f"xi = {xi:g} outside (0, {XI_MAX})", hypothesis='0<xi<0.01')
    if zT > (1 + N ** (-10 * xi)) * (1 + 1e-12):
        raise PreconditionError(f"|z_T| = {zT:g} > 1 + N^(-10 xi)", hypothesis='|z|<=1+N^(-10xi)')
    if not 1.0 / N <= A <= N ** (-20 * xi):
        raise PreconditionError(f"A = {A:g} outside [1/N, N^(-20 xi)]", hypothesis='1/N<=A<=N^(-20xi)')
    if abs(char.T - N ** (-xi)) > 1e-9 * char.T:
        raise PreconditionError(f"T = {char.T:g} differs from N^(-xi)", hypothesis='T=N^(-xi)')

    marks = landmark_times(char, xi, N)
    char = char.with_landmarks(marks)
    logN = np.log(N)
    nxi = N ** (-xi)
    ratio0 = float(char.eta[0] / char.rho[0])
    item_i = nxi / F <= ratio0 <= F * nxi

    Nrho_eta = N * char.eta * char.rho
    before1 = char.t <= char.S1
    before2 = char.t <= char.S2
    floor1 = float(np.min(Nrho_eta[before1])) if before1.any() else np.inf
    floor2 = float(np.min(Nrho_eta[before2])) if before2.any() else np.inf
    item_ii = floor1 >= N ** (5 * xi) / F and floor2 >= logN ** 3 / F

    eta0, etaT = float(char.eta[0]), float(char.eta[-1])
    eta_S1, eta_S2 = eta_at(char, marks.S1), eta_at(char, marks.S2)
    r0T = eta0 / etaT
    rS2T = eta_S2 / etaT
    r0S1 = eta0 / eta_S1
    item_iii = r0T >= N ** (9 * xi) / F and rS2T <= F * logN ** 3 and r0S1 >= N ** (4 * xi) / F

    ordering = 0 < char.S1 < char.S2 < char.T
    if not ordering:
        logging.warning("S1 < S2 < T fails at N=%g xi=%g (S1=%g S2=%g)", N, xi, marks.S1, marks.S2)
    return {
        'N': N,
        'xi': xi,
        'A': A,
        'landmarks': marks.toDict(),
        'item_i': bool(item_i),
        'eta0_over_rho0': ratio0,
        'item_i_ratio': ratio0 / nxi,
        'item_ii': bool(item_ii),
        'min_Netarho_before_S1': floor1,
        'min_Netarho_before_S2': floor2,
        'item_iii': bool(item_iii),
        'eta0_over_etaT': r0T,
        'etaS2_over_etaT': rS2T,
        'eta0_over_etaS1': r0S1,
        'ordering': bool(ordering),
        'passed': bool(item_i and item_ii and item_iii),
    }
