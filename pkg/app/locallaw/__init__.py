'''
Averaged and isotropic local-law errors against M, the domain predicate and the
deterministic Schwarz bounds on products of resolvents.
'''
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from app.ensemble import map_trials
from app.exceptions import ArgumentError, ConfigurationError
from app.hermitization import (
    averaged_trace, hermitize, iso_entry, observable, resolvent, selector, selector_trace,
)
from app.mde import A_STAR, SpectralPoint, build_M, rho, solve_eta_for_product, solve_mde

XI_MAX = 0.01
PRODUCT_CONSTANT = 100.0
SCHWARZ_TOLERANCE = 1e-10
SELECTOR_PAIRS = ((1, 1), (1, 2), (2, 1), (2, 2))


@dataclass(frozen=True)
class DomainParams:
    C: float
    xi: float
    N: int
    # Nηρ >= product_constant * C^2 * log N
    product_constant: float = PRODUCT_CONSTANT

    def __post_init__(self):
        if not self.C >= 1:
            raise ConfigurationError(f"C must be >= 1, got {self.C!r}", payload={'field': 'C'})
        if not 0 < self.xi < XI_MAX:
            raise ConfigurationError(f"xi must lie in (0, {XI_MAX}), got {self.xi!r}", payload={'field': 'xi'})
        if int(self.N) != self.N or self.N < 1:
            raise ConfigurationError(f"N must be a positive integer, got {self.N!r}", payload={'field': 'N'})


@dataclass(frozen=True)
class DomainCheck:
    inside: bool
    gates: dict
    rho: float

    def __bool__(self):
        return self.inside

    def failed(self):
        return [name for name, ok in self.gates.items() if not ok]


def in_domain(point, p):
    '''Membership of (z, eta) in the local-law domain, with each gate reported'''
    r = rho(point.z, point.eta)
    N = p.N
    gates = {
        'N*eta*rho': N * point.eta * r >= p.product_constant * p.C ** 2 * np.log(N),
        'eta/rho': point.eta / r <= N ** (-p.xi),
        '|z|': abs(point.z) <= 1 + N ** (-p.xi),
    }
    return DomainCheck(inside=all(gates.values()), gates=gates, rho=r)


def coordinate_probe(N, index=0, half='lower'):
    '''Unit vector e_index embedded in the upper or lower half of C^{2N}'''
    if not 0 <= index < N:
        raise ArgumentError(f"probe index must lie in [0, {N}), got {index}")
    v = np.zeros(2 * N, dtype=complex)
    v[index if half == 'upper' else N + index] = 1.0
    return v


def random_probe(N, rng):
    v = rng.standard_normal(2 * N) + 1j * rng.standard_normal(2 * N)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class LocalLawSample:
    point: SpectralPoint
    N: int
    rho: float
    avg_err: complex
    iso_err: complex
    Z1: complex
    Z2: complex
    B_descriptor: str = 'I'
    x_descriptor: str = 'x'
    y_descriptor: str = 'y'
    in_domain: bool = None
    gates: dict = field(default_factory=dict)

    def toDict(self):
        return {
            'z_re': self.point.z.real,
            'z_im': self.point.z.imag,
            'eta': self.point.eta,
            'rho': self.rho,
            'avg_err_re': self.avg_err.real,
            'avg_err_im': self.avg_err.imag,
            'iso_err_re': self.iso_err.real,
            'iso_err_im': self.iso_err.imag,
            'Z1_re': self.Z1.real,
            'Z1_im': self.Z1.imag,
            'Z2_re': self.Z2.real,
            'Z2_im': self.Z2.imag,
            'B': self.B_descriptor,
            'x': self.x_descriptor,
            'y': self.y_descriptor,
            'in_domain': self.in_domain,
        }


def normalizers(N, eta, r):
    '''(N eta, sqrt(N eta / rho)), the scales of Z1 and Z2'''
    return N * eta, float(np.sqrt(N * eta / r))


def sample_errors(X, point, B, x, y, descriptors=('x', 'y')):
    '''<(G-M)B>, <x,(G-M)y> and their normalized forms Z1, Z2 at one spectral point'''
    R = resolvent(hermitize(X, point.z), point.eta)
    sol = solve_mde(point)
    M = build_M(sol, R.N)
    B = observable(B)
    avg = averaged_trace(R, B) - B.trace_with_M(M)
    iso = iso_entry(R, x, y) - M.quad(np.asarray(x, dtype=complex), np.asarray(y, dtype=complex))
    s1, s2 = normalizers(R.N, point.eta, sol.rho)
    return LocalLawSample(point=point, N=R.N, rho=sol.rho, avg_err=avg, iso_err=iso,
                          Z1=s1 * avg, Z2=s2 * iso, B_descriptor=B.descriptor,
                          x_descriptor=descriptors[0], y_descriptor=descriptors[1])


@dataclass(frozen=True)
class EtaRule:
    '''Either a fixed list of eta values or the product rule eta*rho = c log N / N'''
    kind: str = 'fixed'
    etas: tuple = ()
    c: float = None
    a_star: float = A_STAR

    def __post_init__(self):
        if self.kind not in ('fixed', 'product'):
            raise ConfigurationError(f"unknown eta rule {self.kind!r}", payload={'field': 'eta_rule'})
        if self.kind == 'product' and not (self.c and self.c > 0):
            raise ConfigurationError("product rule needs c > 0", payload={'field': 'c'})

    def etas_at(self, z, N):
        if self.kind == 'fixed':
            return list(self.etas)
        return [solve_eta_for_product(z, self.c * np.log(N) / N, a_star=self.a_star)]


def grid_scan(X, p, z_grid, eta_rule, B='I', x=None, y=None, threads=1):
    '''One LocalLawSample per (z, eta) in grid order, domain verdict attached'''
    N = X.N
    x = coordinate_probe(N) if x is None else x
    y = x if y is None else y
    points = [SpectralPoint(complex(z), float(eta)) for z in z_grid for eta in eta_rule.etas_at(z, N)]

    def measure(point):
        verdict = in_domain(point, p)
        sample = sample_errors(X, point, B, x, y, descriptors=('probe-x', 'probe-y'))
        return replace(sample, in_domain=verdict.inside, gates=verdict.gates)

    samples = map_trials(measure, points, threads)
    outside = sum(1 for s in samples if not s.in_domain)
    if outside:
        logging.info("grid scan: %d of %d points outside the domain", outside, len(samples))
    return samples


def _row(name, value, bound, applicable):
    ok = None if not applicable else bool(abs(value) <= bound * (1 + SCHWARZ_TOLERANCE))
    return {'check': name, 'value': abs(value), 'bound': bound, 'ratio': abs(value) / bound,
            'applicable': applicable, 'ok': ok}


def schwarz_checks(R, B, u, v, p=1, q=1):
    '''
    Deterministic Schwarz bounds on the event <Im G> <= 2 rho (averaged) and
    (Im G)_uu, (Im G)_vv <= 2 rho (isotropic); rows off their event are marked not
    applicable instead of failing.
    '''
    if not (int(p) == p and int(q) == q and p >= 1 and q >= 1):
        raise ArgumentError(f"p and q must be positive integers, got p={p!r} q={q!r}")
    if p + q > 4:
        raise ArgumentError(f"p + q is capped at 4, got {p + q}")
    B = observable(B)
    B.check(R.dim)
    if B.norm() > 1 + SCHWARZ_TOLERANCE:
        raise ArgumentError(f"|B| must be <= 1, got {B.norm():g}")
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)

    h, eta, N = R.hermitization, R.eta, R.N
    r = solve_mde(SpectralPoint(h.z, eta)).rho
    G = R.dense
    ImG = (G - G.conj().T) / 2j
    im_trace = float(np.trace(ImG).real) / R.dim
    avg_gate = im_trace <= 2 * r

    Gp = np.linalg.matrix_power(G, p)
    GqT = np.linalg.matrix_power(G, q).T
    GpB = Gp @ B.matrix(R.dim)
    rows = []
    for i, j in SELECTOR_PAIRS:
        value = selector_trace(GpB, GqT, i, j, N)
        rows.append(_row(f"<G^{p} B E{i} (G^{q})^t E{j}>", value, 2 * r / eta ** (p + q - 1), avg_gate))
    G2 = G @ G
    G3 = G2 @ G
    for l, Gl in ((2, G2), (3, G3)):
        value = complex(np.trace(Gl)) / R.dim
        # sharp form with the measured <Im G>, always applicable
        rows.append(_row(f"<G^{l}>", value, im_trace / eta ** (l - 1), True))

    def diag(w):
        return float(np.vdot(w, ImG @ w).real)

    iso_gate = diag(u) <= 2 * r and diag(v) <= 2 * r
    rows.append(_row('(G^2)_uv', np.vdot(u, G2 @ v), 2 * r / eta, iso_gate))
    Gv = G @ v
    for i, j in SELECTOR_PAIRS:
        di, dj = selector(i, N), selector(j, N)
        value = np.vdot(u, G @ (di * (G.T @ (dj * Gv))))
        rows.append(_row(f"(G E{i} G^t E{j} G)_uv", value, 2 * r / eta ** 2, iso_gate))
    conj_gate = diag(u) <= 2 * r and diag(v.conj()) <= 2 * r
    rows.append(_row('(G G^t)_uv', np.vdot(u, G @ (G.T @ v)), 2 * r / eta, conj_gate))

    applicable = [row for row in rows if row['applicable']]
    if not avg_gate or not iso_gate:
        logging.warning("schwarz checks gated at z=%s eta=%g: <Im G>=%g rho=%g", h.z, eta, im_trace, r)
    return {
        'z': h.z,
        'eta': eta,
        'rho': r,
        'p': p,
        'q': q,
        'im_trace': im_trace,
        'averaged_event': avg_gate,
        'isotropic_event': iso_gate,
        'rows': rows,
        'worst_ratio': max((row['ratio'] for row in applicable), default=0.0),
        'passed': all(row['ok'] for row in applicable),
    }
