'''
Ornstein-Uhlenbeck matrix flow coupled to a characteristic.

At every step the resolvent is evaluated at (z_t, i eta_t) read from the characteristic,
the errors <G - M>, <G^2 - M'> and (G - M)_xy are recorded, and the Brownian increment
that drives the matrix step is reused for the martingale increments

    dN  = -N^{-1/2} <G^2 dB>,   dN^ = -2 N^{-1/2} <G^3 dB>,   dN~ = -N^{-1/2} (G dB G)_xy

where dB is the 2N x 2N block [[0, dB], [dB^*, 0]]. The factor 2 in dN^ is the Ito form
of the martingale part of d<G^2>: -<G dH G^2 + G^2 dH G> = -2 <G^3 dH> by cyclicity.

Drift fits subtract the recorded first-order increment from each finite difference.
dN has mean zero, so the mean is unchanged while the dominant noise is removed.
'''
import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from app.ensemble import OU, ou_increment, ou_step, second_moment, stream
from app.exceptions import ArgumentError, ConfigurationError, NumericalError, OutOfRangeError
from app.hermitization import hermitize, resolvent, selector_trace
from app.locallaw import coordinate_probe
from app.mde import SpectralPoint, build_M, solve_mde

FLOW_MAX_N = 256
DT_MAX = 1e-3
QV_WINDOW = 32
QV_SLACK = 5.0
SUP_CONSTANT = 10.0
SE_LIMIT = 3.0
ALLOWANCE = 10.0

# the beta = 1 transpose terms run over the off-diagonal selector pairs
OFF_PAIRS = ((1, 2), (2, 1))

SERIES = (
    'X1ave', 'X2ave', 'Xiso', 'g1', 'g2', 'g3', 'm', 'm_prime', 'phi',
    'beta1', 'beta2', 'dN', 'dN_hat', 'dN_tilde', 'qv_rate', 'qv_hat_rate',
)


@dataclass(frozen=True, eq=False)
class FlowTrajectory:
    char: object
    times: np.ndarray
    z: np.ndarray
    eta: np.ndarray
    rho: np.ndarray
    series: dict
    second_moments: np.ndarray
    dt: float
    N: int
    beta: int
    seed: int
    stream_keys: tuple
    noise: bool

    @property
    def X1ave(self):
        return self.series['X1ave']

    @property
    def X2ave(self):
        return self.series['X2ave']

    @property
    def Xiso(self):
        return self.series['Xiso']

    def __len__(self):
        return len(self.times)

    @property
    def martingale_increments(self):
        return {'N': self.series['dN'], 'N_hat': self.series['dN_hat'], 'N_tilde': self.series['dN_tilde']}

    def gate(self):
        '''|<G - M>| <= rho at each step'''
        return np.abs(self.series['X1ave']) <= self.rho

    def rows(self):
        out = []
        for k, t in enumerate(self.times):
            row = {'t': t, 'eta': self.eta[k], 'rho': self.rho[k]}
            for name in ('X1ave', 'X2ave', 'Xiso', 'dN'):
                value = self.series[name][k]
                row[f"{name}_re"] = value.real
                row[f"{name}_im"] = value.imag
            row['qv_rate'] = self.series['qv_rate'][k]
            row['second_moment'] = self.second_moments[k]
            out.append(row)
        return out


def default_dt(char):
    '''min(1e-3, 10 min eta^2), shrunk so that it divides T'''
    target = min(DT_MAX, 10.0 * float(np.min(char.eta)) ** 2)
    return char.T / int(np.ceil(char.T / target))


def qv_rate(A, N, beta):
    '''
    Conditional quadratic-variation rate of -N^{-1/2} <A dB> for the block noise. The
    real case picks up the cross term between the two off-diagonal blocks.
    '''
    lower, upper = A[N:, :N], A[:N, N:]
    if beta == 1:
        total = float(np.sum(np.abs(lower + upper.T) ** 2))
    else:
        total = float(np.sum(np.abs(lower) ** 2) + np.sum(np.abs(upper) ** 2))
    return total / (4.0 * N ** 3)


def _block_trace(A, dB, N):
    '''Tr(A [[0, dB], [dB^*, 0]])'''
    return complex(np.sum(A[N:, :N] * dB.T) + np.sum(A[:N, N:] * dB.conj()))


def simulate_flow(X0, char, dt, noise=True, x=None, y=None):
    '''
    Euler-Maruyama steps of the OU flow from X0 along `char`, one resolvent
    factorization per step.

    Raises:
        NumericalError with the failing step index
    '''
    N = X0.N
    if N > FLOW_MAX_N:
        raise OutOfRangeError(f"flow simulation is capped at N={FLOW_MAX_N}", gate='N<=256')
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt!r}", payload={'field': 'dt'})
    steps = int(round(char.T / dt))
    if steps < 1 or abs(steps * dt - char.T) > 1e-9 * char.T:
        raise ConfigurationError(f"dt={dt:g} does not divide T={char.T:g}", payload={'field': 'dt'})
    x = coordinate_probe(N) if x is None else np.asarray(x, dtype=complex)
    y = x if y is None else np.asarray(y, dtype=complex)
    beta = X0.spec.beta

    times = np.arange(steps + 1) * dt
    times[-1] = char.T
    zs = np.empty(steps + 1, dtype=complex)
    etas = np.empty(steps + 1)
    rhos = np.empty(steps + 1)
    series = {name: np.zeros(steps + 1, dtype=float if name.startswith('qv') else complex) for name in SERIES}
    moments = np.empty(steps + 1)

    X = X0
    for k, t in enumerate(times):
        z, eta, r = char.at(t)
        zs[k], etas[k], rhos[k] = z, eta, r
        try:
            R = resolvent(hermitize(X, z), eta)
            sol = solve_mde(SpectralPoint(z, eta))
        except NumericalError as e:
            logging.error("flow step %d failed at t=%g: %s", k, t, e.message)
            raise NumericalError(e.message, module='flow', context={**e.context, 'step': k, 't': float(t)})
        M = build_M(sol, N)
        G = R.dense
        G2 = G @ G
        G3 = G2 @ G
        g1 = complex(np.trace(G)) / R.dim
        g2 = complex(np.trace(G2)) / R.dim
        g3 = complex(np.sum(G2 * G.T)) / R.dim
        s = series
        s['g1'][k], s['g2'][k], s['g3'][k] = g1, g2, g3
        s['m'][k], s['m_prime'][k] = sol.m, sol.m_prime_trace
        s['phi'][k] = 0.5 + sol.m_prime_trace
        s['X1ave'][k] = g1 - sol.m
        s['X2ave'][k] = g2 - sol.m_prime_trace
        s['Xiso'][k] = complex(np.vdot(x, G @ y)) - M.quad(x, y)
        # recorded for both fields; `drift` decides whether they enter
        GT, G2T = G.T, G2.T
        s['beta1'][k] = sum(selector_trace(G2, GT, i, j, N) for i, j in OFF_PAIRS) / N
        s['beta2'][k] = sum(2 * selector_trace(G3, GT, i, j, N) + selector_trace(G2, G2T, i, j, N)
                            for i, j in OFF_PAIRS) / N
        s['qv_rate'][k] = qv_rate(G2, N, beta)
        s['qv_hat_rate'][k] = qv_rate(2 * G3, N, beta)
        moments[k] = second_moment(X)
        if k == steps:
            break

        if not noise:
            X = ou_step(X, dt, noise=False)
            continue
        # one draw feeds both the matrix step and the recorded increments
        xi = ou_increment(N, X.spec.field, stream(X.spec.seed, OU, *X.stream_keys, X.steps))
        dB = np.sqrt(dt) * xi
        s['dN'][k] = -_block_trace(G2, dB, N) / (R.dim * np.sqrt(N))
        s['dN_hat'][k] = -2 * _block_trace(G3, dB, N) / (R.dim * np.sqrt(N))
        Gx, Gy = G.conj().T @ x, G @ y
        s['dN_tilde'][k] = -(np.vdot(Gx[:N], dB @ Gy[N:]) + np.vdot(Gx[N:], dB.conj().T @ Gy[:N])) / np.sqrt(N)
        X = ou_step(X, dt, increment=xi)

    logging.info("flow: N=%d steps=%d dt=%g noise=%s keys=%s", N, steps, dt, noise, X0.stream_keys)
    return FlowTrajectory(char=char, times=times, z=zs, eta=etas, rho=rhos, series=series,
                          second_moments=moments, dt=float(dt), N=N, beta=beta, seed=X0.spec.seed,
                          stream_keys=X0.stream_keys, noise=bool(noise))


def ito_terms(traj, include_beta_term):
    '''Second-order Ito contributions to d<G> and d<G^2>'''
    s = traj.series
    b1 = s['beta1'] if include_beta_term else 0.0
    b2 = s['beta2'] if include_beta_term else 0.0
    return s['g1'] * s['g2'] + b1, s['g2'] ** 2 + 2 * s['g1'] * s['g3'] + b2


def drift(traj, include_beta_term=None):
    '''
    Drift of X1ave and X2ave at each step. With noise the full Ito drift
        Phi X1 + X1 X2 + beta-term,    2 Phi X2 + X2^2 + 2 X1 <G^3> + beta-term
    without noise only the transport part, i.e. the Ito terms removed.
    '''
    if include_beta_term is None:
        include_beta_term = traj.beta == 1
    s = traj.series
    X1, X2, phi = s['X1ave'], s['X2ave'], s['phi'].real
    b1 = s['beta1'] if include_beta_term else 0.0
    b2 = s['beta2'] if include_beta_term else 0.0
    d1 = phi * X1 + X1 * X2 + b1
    d2 = 2 * phi * X2 + X2 ** 2 + 2 * X1 * s['g3'] + b2
    if not traj.noise:
        i1, i2 = ito_terms(traj, include_beta_term)
        d1, d2 = d1 - i1, d2 - i2
    return d1, d2


def finite_difference(traj, name='X1ave'):
    return np.diff(traj.series[name]) / traj.dt


def drift_residual(traj, include_beta_term=None):
    '''max_k |(X1(t+dt) - X1(t))/dt - drift(t)| for one trajectory'''
    d1, _ = drift(traj, include_beta_term)
    return float(np.max(np.abs(finite_difference(traj) - d1[:-1])))


def observed_order(coarse, fine, include_beta_term=None):
    '''log2 of the drift residual ratio under dt-halving'''
    if not np.isclose(coarse.dt, 2 * fine.dt):
        raise ArgumentError(f"fine dt must be half the coarse dt, got {coarse.dt:g} and {fine.dt:g}")
    return float(np.log2(drift_residual(coarse, include_beta_term) / drift_residual(fine, include_beta_term)))


def _check_ensemble(trajs, min_count):
    if not trajs:
        raise ArgumentError("empty trajectory ensemble")
    first = trajs[0]
    for traj in trajs:
        if traj.char is not first.char and (traj.char.T != first.char.T or traj.char.z0 != first.char.z0):
            raise ArgumentError("trajectories follow different characteristics")
        if traj.dt != first.dt or len(traj) != len(first) or traj.noise != first.noise:
            raise ArgumentError("trajectories differ in dt, length or noise mode")
    if first.noise and len(trajs) < min_count:
        raise ArgumentError(f"need at least {min_count} noisy trajectories, got {len(trajs)}")


def _drift_change(mean_drift, smooth):
    '''One-step change of the mean drift: the largest step, or a fitted slope when noisy'''
    if len(mean_drift) < 2:
        return 0.0
    if not smooth:
        return float(np.max(np.abs(np.diff(mean_drift))))
    k = np.arange(len(mean_drift))
    return float(abs(complex(np.polyfit(k, mean_drift.real, 1)[0], np.polyfit(k, mean_drift.imag, 1)[0])))


def _in_se(excess, se):
    excess, se = np.asarray(excess, dtype=float), np.asarray(se, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(se > 0, excess / se, np.where(excess > 0, np.inf, 0.0))


def _complex_se(values, axis=0):
    n = values.shape[axis]
    return np.hypot(values.real.std(axis=axis, ddof=1), values.imag.std(axis=axis, ddof=1)) / np.sqrt(n)


def _se_deviation(fd, dr):
    '''
    Per step: mean of fd - drift, its standard error and the O(dt) allowance
    10 * one-step change of the mean drift. The pooled row averages each
    trajectory over its steps first, so a small bias shared by every step shows up.
    '''
    diff = fd - dr[:, :-1]
    n = diff.shape[0]
    mean = diff.mean(axis=0)
    pooled = diff.mean(axis=1)
    if n > 1:
        se, pooled_se = _complex_se(diff), float(_complex_se(pooled))
    else:
        se, pooled_se = np.zeros(diff.shape[1]), 0.0
    allowance = ALLOWANCE * _drift_change(dr.mean(axis=0), smooth=n > 1)
    step_in_se = float(np.max(_in_se(np.maximum(np.abs(mean) - allowance, 0.0), se)))
    pooled_in_se = float(_in_se(max(abs(pooled.mean()) - allowance, 0.0), pooled_se))
    return {
        'max_abs_deviation': float(np.max(np.abs(mean))),
        'pooled_deviation': float(abs(pooled.mean())),
        'allowance': allowance,
        'deviation_se': step_in_se,
        'pooled_deviation_se': pooled_in_se,
        'passed': step_in_se <= SE_LIMIT and pooled_in_se <= SE_LIMIT,
    }


def drift_consistency(trajs, include_beta_term=None, min_count=100):
    '''
    Ensemble-mean finite differences of X1ave, less the recorded dN, against the
    drift in units of the ensemble standard error. Also reports the fit with the beta = 1 transpose term
    toggled, and the X2ave equation as a secondary row.
    '''
    trajs = list(trajs)
    _check_ensemble(trajs, min_count)
    beta = trajs[0].beta
    if include_beta_term is None:
        include_beta_term = beta == 1
    fd1 = np.array([finite_difference(t, 'X1ave') - t.series['dN'][:-1] / t.dt for t in trajs])
    fd2 = np.array([finite_difference(t, 'X2ave') - t.series['dN_hat'][:-1] / t.dt for t in trajs])

    def fit(flag):
        pairs = [drift(t, flag) for t in trajs]
        return (_se_deviation(fd1, np.array([p[0] for p in pairs])),
                _se_deviation(fd2, np.array([p[1] for p in pairs])))

    primary, secondary = fit(include_beta_term)
    alternative, _ = fit(not include_beta_term)
    return {
        'trajectories': len(trajs),
        'beta': beta,
        'noise': trajs[0].noise,
        'dt': trajs[0].dt,
        'beta_term_included': include_beta_term,
        'X1ave': primary,
        'X2ave': secondary,
        'toggled_beta_term': alternative,
        'passed': primary['passed'],
    }


def martingale_means(trajs):
    '''Ensemble mean of each recorded increment in standard-error units, worst step'''
    out = {}
    for name in ('dN', 'dN_hat', 'dN_tilde'):
        inc = np.array([t.series[name][:-1] for t in trajs])
        n = inc.shape[0]
        se = np.hypot(inc.real.std(axis=0, ddof=1), inc.imag.std(axis=0, ddof=1)) / np.sqrt(n)
        mean = np.abs(inc.mean(axis=0))
        with np.errstate(divide='ignore', invalid='ignore'):
            ratio = np.where(se > 0, mean / se, 0.0)
        out[name] = float(np.max(ratio))
    return out


def qv_bound_check(traj, window=QV_WINDOW, slack=QV_SLACK):
    '''
    Realized variation of N and N^ over windows of `window` steps against
        sum 8 rho dt/(N^2 eta^3)   and   sum 20 rho dt/(N^2 eta^5)
    times `slack`, with gated steps (|<G - M>| > rho) excluded. The per-step
    conditional rates are also checked against the same bounds with no slack.
    '''
    s, N, dt = traj.series, traj.N, traj.dt
    gate = traj.gate()[:-1]
    rho, eta = traj.rho[:-1], traj.eta[:-1]
    bound = 8 * rho * dt / (N ** 2 * eta ** 3)
    bound_hat = 20 * rho * dt / (N ** 2 * eta ** 5)
    realized = np.abs(s['dN'][:-1]) ** 2
    realized_hat = np.abs(s['dN_hat'][:-1]) ** 2

    rate_ok = (s['qv_rate'][:-1] * dt <= bound) & (s['qv_hat_rate'][:-1] * dt <= bound_hat)
    integrand_ok = bool(np.all(rate_ok[gate]))

    windows = []
    for start in range(0, len(gate), window):
        sel = slice(start, start + window)
        g = gate[sel]
        if not g.any():
            continue
        r, b = float(np.sum(realized[sel][g])), float(np.sum(bound[sel][g]))
        rh, bh = float(np.sum(realized_hat[sel][g])), float(np.sum(bound_hat[sel][g]))
        windows.append({'start': start, 'realized': r, 'bound': b, 'realized_hat': rh, 'bound_hat': bh,
                        'ok': r <= slack * b and rh <= slack * bh})
    fraction = sum(w['ok'] for w in windows) / len(windows) if windows else 1.0
    return {
        'gated_steps': int(np.count_nonzero(~gate)),
        'integrand_ok': integrand_ok,
        'worst_integrand_ratio': float(np.max(s['qv_rate'][:-1] * dt / bound)),
        'windows': windows,
        'window_pass_fraction': fraction,
        'passed': integrand_ok and fraction >= 0.95,
    }


def martingale_sup_check(traj, K=SUP_CONSTANT):
    '''
    sup_t |sum_{s<t} p_{s,t} dN_s| against K sqrt((1 + log(eta_0/eta_t)) log N)/(N eta_t),
    propagators from the recorded Phi.
    '''
    s, N = traj.series, traj.N
    I = cumulative_trapezoid(s['phi'].real, traj.times, initial=0.0)
    dN = s['dN']
    values = np.zeros(len(traj.times))
    for j in range(1, len(traj.times)):
        values[j] = abs(np.sum(np.exp(I[j] - I[:j]) * dN[:j]))
    bound = K * np.sqrt((1.0 + np.log(traj.eta[0] / traj.eta)) * np.log(N)) / (N * traj.eta)
    ratio = values / bound
    return {'worst_ratio': float(np.max(ratio)), 'worst_step': int(np.argmax(ratio)),
            'passed': bool(np.all(ratio <= 1.0))}
